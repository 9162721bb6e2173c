"""Synthetic 6-DoF contact-grasp datasets, decoding and quasi-static evaluation."""

__version__ = "0.1.0"
