"""bayes-sec-bench: privacy and robustness measurements for small image
classifiers, with and without dropout-based Bayesian inference."""

__version__ = "0.1.0"
