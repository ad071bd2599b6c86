"""PPMC scoring and report/export helpers for trajectory recovery."""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import data


def max_workers() -> int:
    """Worker cap for per-item fan-out, from MIRRORNET_THREADS (default 1)."""
    raw = os.environ.get("MIRRORNET_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MIRRORNET_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"MIRRORNET_THREADS must be >= 1, got {n}")
    return n


def ppmc(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson product-moment correlation; 0 (with a warning) if either
    series is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("ppmc needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        warnings.warn("constant series in ppmc, returning 0", stacklevel=2)
        return 0.0
    return float(np.clip((dx * dy).sum() / denom, -1.0, 1.0))


@dataclass
class PpmcReport:
    """Per-channel PPMC (mean of per-item scores) and its summary averages."""

    per_channel: dict = field(default_factory=dict)
    avg_6tvs: float = 0.0
    avg_all: float = 0.0
    per_item: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "avg_6tvs": self.avg_6tvs,
                "avg_all": self.avg_all,
                "per_channel": self.per_channel,
            },
            indent=2,
        )

    def to_csv(self, path) -> None:
        channels = list(self.per_channel)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["item"] + channels + ["AVG_6TVs", "AVG_all"])
            for item_id, scores in self.per_item:
                row = [scores[c] for c in channels]
                tv = [scores[c] for c in data.TV_CHANNELS if c in scores]
                w.writerow(
                    [item_id]
                    + [f"{v:.4f}" for v in row]
                    + [f"{np.mean(tv):.4f}", f"{np.mean(row):.4f}"]
                )
            w.writerow(
                ["mean"]
                + [f"{self.per_channel[c]:.4f}" for c in channels]
                + [f"{self.avg_6tvs:.4f}", f"{self.avg_all:.4f}"]
            )


def ppmc_report(
    estimates: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    item_ids: Optional[Sequence[str]] = None,
    channels: Sequence[str] = data.CHANNELS,
) -> PpmcReport:
    """Per-channel PPMC averaged over items, plus 6-TV and all-channel means."""
    if len(estimates) != len(truths):
        raise ValueError(f"{len(estimates)} estimates vs {len(truths)} truths")
    if not estimates:
        raise ValueError("empty item set")
    if item_ids is None:
        item_ids = [f"item{i:04d}" for i in range(len(estimates))]

    def score_item(args):
        est, tru = args
        est = np.asarray(est, dtype=np.float64)
        tru = np.asarray(tru, dtype=np.float64)
        if est.shape != tru.shape or est.shape[0] != len(channels):
            raise ValueError(f"shape mismatch: estimate {est.shape}, truth {tru.shape}")
        return {c: ppmc(est[i], tru[i]) for i, c in enumerate(channels)}

    workers = max_workers()
    pairs = list(zip(estimates, truths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(score_item, pairs))
    else:
        scored = [score_item(p) for p in pairs]

    per_channel = {c: float(np.mean([s[c] for s in scored])) for c in channels}
    tvs = [per_channel[c] for c in channels if c in data.TV_CHANNELS]
    report = PpmcReport(
        per_channel=per_channel,
        avg_6tvs=float(np.mean(tvs)) if tvs else 0.0,
        avg_all=float(np.mean(list(per_channel.values()))),
        per_item=list(zip(item_ids, scored)),
    )
    return report


def export_trajectories(
    item_id: str,
    estimate: np.ndarray,
    truth: np.ndarray,
    path,
    channels: Sequence[str] = data.CHANNELS,
) -> None:
    """Long-format CSV {frame, channel, truth, estimate} for plotting."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["item", "frame", "channel", "truth", "estimate"])
        for i, c in enumerate(channels):
            for t in range(estimate.shape[1]):
                w.writerow([item_id, t, c, f"{truth[i, t]:.6g}", f"{estimate[i, t]:.6g}"])
