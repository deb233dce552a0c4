"""Multi-temporal attention U-Net for semantic change detection in
satellite image time series, with its evaluation protocol."""

__version__ = "0.1.0"

__all__ = ["SitsChangeDetector", "__version__"]


def __getattr__(name):
    # scikit-learn is only imported when the estimator is asked for
    if name == "SitsChangeDetector":
        from .estimator import SitsChangeDetector

        return SitsChangeDetector
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
