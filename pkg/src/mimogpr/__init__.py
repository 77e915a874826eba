"""Multi-series Gaussian process forecasting with a regularized linear
combiner, an LM-trained network benchmark, a rolling evaluation harness and a
forecast-accuracy statistics suite."""

__version__ = "0.1.0"

from ._core import BACKEND as core_backend  # noqa: F401
