"""Psychophysical robustness evaluation toolkit for person re-identification.

Perturbs probe images along parameterized stimulus sweeps, scores black-box
embedding providers with rank-1/mAP against a fixed gallery, fits logistic
psychometric functions to the resulting item-response curves, and builds
track-based ReID dataset splits.
"""

__version__ = "0.1.0"
