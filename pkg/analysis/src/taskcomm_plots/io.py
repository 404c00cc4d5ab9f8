"""Metrics CSV loading against the documented schema.

The producing experiment harness writes one comment line, the fixed header,
one row per episode and (for evaluation files) a trailing `# summary ...`
comment. Anything that deviates from the fixed header is rejected: silently
plotting a column from the wrong schema is worse than failing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXPECTED_HEADER = "episode,success,episode_total_time,captures,steps,mean_aoi,peak_aoi,td_loss_team,td_loss_ap,epsilon"

NUMERIC_COLUMNS = EXPECTED_HEADER.split(",")


class SchemaError(ValueError):
    """CSV header or rows do not match the documented metrics schema."""


@dataclass
class RunSeries:
    label: str
    columns: dict  # column name -> float array

    def __len__(self) -> int:
        return len(self.columns["episode"])


def load_run_csv(path, label=None) -> RunSeries:
    """Parse one metrics CSV; comments are skipped, the header must match."""
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                if line != EXPECTED_HEADER:
                    raise SchemaError(f"{path}: header {line!r} does not match the metrics schema")
                header = line
                continue
            parts = line.split(",")
            if len(parts) != len(NUMERIC_COLUMNS):
                raise SchemaError(f"{path}:{lineno}: expected {len(NUMERIC_COLUMNS)} columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric cell in {line!r}") from None
    if header is None:
        raise SchemaError(f"{path}: missing header row")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64)
    columns = {name: data[:, i] for i, name in enumerate(NUMERIC_COLUMNS)}
    return RunSeries(label=label or str(path), columns=columns)


def load_runs(paths, labels=None):
    paths = list(paths)
    if labels is None:
        labels = [str(p) for p in paths]
    if len(labels) != len(paths):
        raise ValueError(f"{len(paths)} CSVs but {len(labels)} labels")
    if len(set(labels)) != len(labels):
        raise ValueError("labels must be unique per figure")
    return [load_run_csv(path, label) for path, label in zip(paths, labels)]
