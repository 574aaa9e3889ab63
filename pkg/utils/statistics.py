"""Trace and safety-benchmark statistics."""
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd


class TraceStatistics:
    """Compare a closed-loop trace against the expert recording it replays."""

    # Channels compared between expert and policy
    CHANNELS = ("vx", "offset")

    @classmethod
    def calculate(cls, paired: pd.DataFrame) -> Dict[str, Any]:
        """
        Calculate errors and smoothing statistics for a paired trace.

        Args:
            paired: Frame with ``expert_<channel>`` and ``policy_<channel>`` columns

        Returns:
            Dictionary containing all statistics
        """
        if paired is None or paired.empty:
            return cls._empty_stats()

        stats: Dict[str, Any] = {"samples": len(paired)}
        for channel in cls.CHANNELS:
            expert = paired[f"expert_{channel}"].to_numpy(dtype=float)
            policy = paired[f"policy_{channel}"].to_numpy(dtype=float)
            stats[f"{channel}_rmse"] = cls._rmse(expert, policy)
            stats[f"{channel}_variance_ratio"] = cls._variance_ratio(expert, policy)
            stats[f"{channel}_max_abs_error"] = float(np.max(np.abs(policy - expert)))
        stats["lane_departure"] = cls._first_flag_time(paired)
        return stats

    @staticmethod
    def _rmse(expert: np.ndarray, policy: np.ndarray) -> float:
        return float(np.sqrt(np.mean((policy - expert) ** 2)))

    @staticmethod
    def _variance_ratio(expert: np.ndarray, policy: np.ndarray) -> Optional[float]:
        """Policy variance over expert variance; None for a constant expert channel."""
        expert_var = float(np.var(expert))
        if expert_var <= 1e-12:
            return None
        return float(np.var(policy)) / expert_var

    @staticmethod
    def _first_flag_time(paired: pd.DataFrame) -> Optional[float]:
        if "policy_flag" not in paired.columns:
            return None
        flagged = paired.loc[paired["policy_flag"] != "none", "t"]
        return float(flagged.iloc[0]) if len(flagged) else None

    @staticmethod
    def _empty_stats() -> Dict[str, Any]:
        return {
            "samples": 0,
            "vx_rmse": None,
            "vx_variance_ratio": None,
            "vx_max_abs_error": None,
            "offset_rmse": None,
            "offset_variance_ratio": None,
            "offset_max_abs_error": None,
            "lane_departure": None,
        }


class SafetyStatistics:
    """Per-policy summary of a safety benchmark table."""

    @classmethod
    def calculate(cls, results: pd.DataFrame) -> Dict[str, Dict[str, Any]]:
        """
        Summarize completion and flags per policy.

        Args:
            results: Rows of ``scenario,policy,completion,flag,flag_time``

        Returns:
            Mapping policy -> statistics
        """
        summary = {}
        for policy, rows in results.groupby("policy", sort=True):
            completion = rows["completion"].to_numpy(dtype=float)
            flags = rows["flag"].value_counts().to_dict()
            summary[str(policy)] = {
                "scenarios": len(rows),
                "mean_completion": float(completion.mean()),
                "full_completions": int(np.sum(completion >= 1.0)),
                "lane_flags": int(flags.get("lane", 0)),
                "collision_flags": int(flags.get("collision", 0)),
                "other_flags": int(sum(v for k, v in flags.items() if k not in ("none", "lane", "collision"))),
            }
        return summary


def calculate_trace_stats(paired: pd.DataFrame) -> Dict[str, Any]:
    """Convenience function to calculate paired-trace statistics."""
    return TraceStatistics.calculate(paired)


def calculate_safety_stats(results: pd.DataFrame) -> Dict[str, Dict[str, Any]]:
    """Convenience function to summarize a safety benchmark."""
    return SafetyStatistics.calculate(results)


def rmse_row(paired: pd.DataFrame, channels: Sequence[str] = TraceStatistics.CHANNELS) -> Dict[str, Any]:
    """Summary row appended to a paired-trace CSV: RMSE per channel in the policy columns."""
    row: Dict[str, Any] = {column: np.nan for column in paired.columns}
    row["t"] = "rmse"
    for channel in channels:
        expert = paired[f"expert_{channel}"].to_numpy(dtype=float)
        policy = paired[f"policy_{channel}"].to_numpy(dtype=float)
        row[f"policy_{channel}"] = float(np.sqrt(np.mean((policy - expert) ** 2)))
    if "policy_flag" in row:
        row["policy_flag"] = ""
    return row
