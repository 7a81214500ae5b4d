"""
CLI Package
Contains the command-line surface and report serialization
"""

from .app import RunConfig, build_parser, main, run
from .report import emit_report, read_weight_table, write_table, write_weight_table

__all__ = [
    'RunConfig',
    'build_parser',
    'main',
    'run',
    'emit_report',
    'read_weight_table',
    'write_table',
    'write_weight_table',
]
