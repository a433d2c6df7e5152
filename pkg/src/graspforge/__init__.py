"""Cable bin-picking toolkit: synthetic scenes, depth rendering, grasp
sampling, simulated labeling, and a small learned grasp-quality model."""

__version__ = "0.1.0"
