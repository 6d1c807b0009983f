"""DMV pipeline: data processing, model training and validation for
CDC-shaped health-aging records, predicting a continuous risk score."""

__version__ = "0.1.0"
