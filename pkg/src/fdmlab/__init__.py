"""Toy-scale laboratory for momentum-accelerated diffusion models.

Modules: ``schedules`` (noise schedules, FDM scaling, sampler grid),
``process`` (momentum chain and perturbation kernels), ``sgd_lab``
(SGD vs heavy-ball on quadratics), ``damped_ode`` (critically damped
oscillator), ``denoiser`` (MLP denoiser and training), ``sampler``
(probability-flow ODE sampling), ``toybench`` (2D data and metrics) and
``cli`` (experiment runner).
"""

__version__ = "0.1.0"
