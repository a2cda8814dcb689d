"""Guided conditional flow matching for computational super-resolution.

Trains a conditional velocity field that transports Gaussian noise to
high-resolution micrographs guided by low-resolution inputs; supports
posterior sampling, MMSE estimation, tiled inference and uncertainty
calibration on synthetic paired data.
"""

__version__ = "0.1.0"
