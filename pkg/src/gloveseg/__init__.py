"""Glove-based RGBD hand segmentation toolkit.

Turns color+depth recordings of users wearing colored gloves into pixel-level
three-class hand labels (threshold -> GrabCut -> per-image SVM), filters them
through a human range-triage review service, and trains/evaluates a real-time
depth random-forest segmenter.
"""

__version__ = "0.1.0"

from .imaging import BACKGROUND, LEFT, RIGHT, ColorFrame, DepthFrame  # noqa: F401
