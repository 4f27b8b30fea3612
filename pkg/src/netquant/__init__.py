"""Dynamic network quantile regression estimated by instrumental-variable QR.

Modules
-------
distributions  special functions and seeded sampling
network        adjacency, row normalisation, random network generators
qr_core        interior-point linear quantile regression
dnqr_sim       random-coefficient network panel simulator
ivqr           stacked regression, profiled IVQR estimator, restricted models
inference      kernel sandwich covariance and confidence intervals
mc_harness     Monte Carlo RMSE / bias / coverage experiments
panel_io       dataset files, quantile sweeps, synthetic application fixture
cli            the ``netquant`` command
"""

__version__ = "0.1.0"
