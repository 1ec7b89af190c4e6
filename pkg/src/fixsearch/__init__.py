"""Fixation-candidate prediction for early visual search.

GLCM texture maps, a Gabor filter bank and Gaussian-mixture clustering,
combined into three candidate-selection pipelines and exercised on seeded
synthetic phantoms.
"""

__version__ = "0.1.0"
