"""Daala-style intra codec toolkit: lapped transforms, multi-symbol range
coding, PVQ, coefficient-domain prediction, in-loop deringing and rate
control."""

__version__ = "0.1.0"
