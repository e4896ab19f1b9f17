"""Scale-indexed series, Kolmogorov-Newton iterations and KAM normal forms."""

__version__ = "0.1.0"
