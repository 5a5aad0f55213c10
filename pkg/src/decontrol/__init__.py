"""Learned per-individual control of differential evolution.

A small numpy research library: a 24-function synthetic landscape suite,
a differential-evolution engine with a 17-operator pool, an attention
feature extractor feeding per-individual operator/parameter heads, an
n-step clipped-surrogate trainer, and a benchmarking harness.
"""

__version__ = "0.1.0"

from . import de, encoding, harness, nd, policy, problems, training  # noqa: F401
