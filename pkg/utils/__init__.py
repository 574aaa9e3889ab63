"""Utility modules for the safe imitation learning experiments."""
from .fileio import atomic_output, read_csv, write_csv
from .statistics import (
    SafetyStatistics,
    TraceStatistics,
    calculate_safety_stats,
    calculate_trace_stats,
    rmse_row,
)

__all__ = [
    'atomic_output', 'read_csv', 'write_csv',
    'SafetyStatistics', 'TraceStatistics',
    'calculate_safety_stats', 'calculate_trace_stats', 'rmse_row',
]
