"""Learned image codecs: training, real bitstreams, and RD benchmarking."""

__version__ = "0.1.0"

__all__ = ["LearnedImageCodec", "__version__"]


def __getattr__(name):
    # deferred so the CLI does not pay for importing scikit-learn
    if name == "LearnedImageCodec":
        from .estimator import LearnedImageCodec

        return LearnedImageCodec
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
