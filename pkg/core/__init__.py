"""
CKAN super-resolution: spline-based patch convolutions in an SRGAN pipeline
"""
__version__ = "1.0.0"
