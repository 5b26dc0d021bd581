"""Monte Carlo laboratory for semilinear parabolic problems with measure data."""
__version__ = "0.1.0"
