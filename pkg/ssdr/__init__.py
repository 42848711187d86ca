"""SSDR-MML - reconstruction-error semi-supervised learning over multiple views and tasks"""
__version__ = "1.0.0"
