"""
DP-GMM Map - streaming Dirichlet-process Gaussian-mixture scene mapping
"""

__version__ = "0.1.0"
