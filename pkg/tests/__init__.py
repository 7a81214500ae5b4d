"""
Test package for the Implied Weights Toolkit
"""
