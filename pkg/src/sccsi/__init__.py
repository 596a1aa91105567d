"""Superimposed-coding CSI feedback: link model, iterative MMSE receiver and unfolded network."""
__version__ = "0.1.0"
