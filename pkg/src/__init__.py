"""
Implied Weights Toolkit
Implied individual-level weights of regression estimators of causal effects
"""

__version__ = "1.0.0"
__author__ = "Implied Weights Toolkit Team"
