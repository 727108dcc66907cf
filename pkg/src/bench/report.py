"""CSV tables and error-decay figures of a report run."""

import logging
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ERROR_COLUMNS = ("e_y", "e_u", "e_p")
TIMING_COLUMNS = ("speedup", "truth_time", "online_time")
LABELS = {"e_y": "state", "e_u": "control", "e_p": "adjoint"}


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    temporary = path.with_name(path.name + ".tmp")
    frame.to_csv(temporary, index=False, float_format="%.17g")
    os.replace(temporary, path)
    return path


def error_table(frame: pd.DataFrame, mode: str) -> pd.DataFrame:
    """Mean relative errors of one mode with their base-10 logarithms and timings, sorted by rule and N."""
    table = frame.loc[frame["mode"] == mode, ["rule", "mode", "N", *ERROR_COLUMNS, *TIMING_COLUMNS]].copy()
    for column in ERROR_COLUMNS:
        table[f"log10_{column}"] = np.log10(np.maximum(table[column].to_numpy(dtype=float), np.finfo(float).tiny))
    ordered = ["rule", "mode", "N", *ERROR_COLUMNS, *(f"log10_{c}" for c in ERROR_COLUMNS), *TIMING_COLUMNS]
    return table[ordered].sort_values(["rule", "N"], kind="stable").reset_index(drop=True)


def speedup_table(studies: pd.DataFrame) -> pd.DataFrame:
    """Offline-Online speedups laid out one row per N and one column per rule."""
    if studies.empty:
        return pd.DataFrame(columns=["N"])
    table = studies.pivot_table(index="N", columns="rule", values="speedup", aggfunc="mean")
    table.columns.name = None
    return table.reset_index()


def write_report_tables(errors: pd.DataFrame, studies: pd.DataFrame | None, directory) -> list[Path]:
    """``errors_<mode>.csv`` for each mode present in ``errors``, and ``speedup.csv`` when studies exist."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for mode in errors["mode"].drop_duplicates():
        written.append(_write_csv(error_table(errors, mode), directory / f"errors_{mode}.csv"))
    if studies is not None and not studies.empty:
        written.append(_write_csv(speedup_table(studies), directory / "speedup.csv"))
    logger.info(f"Report tables written to {directory}: {', '.join(path.name for path in written)}")
    return written


def plot_error_decay(frame: pd.DataFrame, directory, problem: str = "") -> list[Path]:
    """One PNG per (mode, variable): log10 of the mean relative error against N, one line per rule."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for mode in frame["mode"].drop_duplicates():
        table = error_table(frame, mode)
        for column in ERROR_COLUMNS:
            fig, ax = plt.subplots(figsize=(6, 4))
            for rule, rows in table.groupby("rule", sort=False):
                ax.plot(rows["N"], rows[f"log10_{column}"], marker="o", markersize=3, label=rule)
            ax.set_xlabel("N")
            ax.set_ylabel(f"log10 mean relative {LABELS[column]} error")
            ax.set_title(f"{problem} {mode}".strip())
            ax.grid(True, alpha=0.3)
            ax.legend()
            fig.tight_layout()
            path = directory / f"decay_{mode}_{column}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    logger.info(f"{len(written)} figures written to {directory}")
    return written
