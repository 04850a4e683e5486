"""Eigen-decomposition of non-stationary multi-user channels and precoding.

Modules
-------
kernels     channel synthesis and representation transforms
decompose   2-D / 4-D kernel decomposition, selection, ensemble KLT
precoder    eigen-domain precoding and interference measures
statistics  second-order channel statistics, closed form and Monte-Carlo
modem       constellations, AWGN, bit-error counting
baselines   zero-forcing and THP comparison arms
containers  binary file formats
config      experiment configuration
bench       seeded experiments and file outputs
cli         command-line entry point
"""

__version__ = "0.1.0"
