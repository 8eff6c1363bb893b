"""Confidence-gated active learning for pixel classification of multiband rasters.

The package assembles a full query loop: candidate pixels are ranked by an
uncertainty heuristic, a second binary classifier learns which pixels the
labeler can actually answer, and only candidates whose predicted labeling
confidence exceeds a threshold are presented. Simulated fallible oracles make
the loop runnable headlessly; an HTTP service exposes it to a human labeler.
"""

__version__ = "0.1.0"
