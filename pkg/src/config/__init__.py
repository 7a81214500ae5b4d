"""
Configuration Package
Contains settings management and configuration utilities
"""

from .settings import Settings

__all__ = ['Settings']
