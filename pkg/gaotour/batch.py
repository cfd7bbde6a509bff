"""Batch runner: independent seeds in worker processes, aggregated with pandas."""

import logging
import threading
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import pandas as pd
import psutil

from gaotour.engine import SolverEngine
from gaotour.instance import random_metric
from gaotour.models import SolverError

logger = logging.getLogger(__name__)

COLUMNS = ["kind", "n", "seed", "pass", "ratio_lp", "ratio_opt", "r", "epsilon", "ell", "min_slack",
           "peak_memory_mb", "error"]
POLL_INTERVAL_S = 0.01


def _min_slack(report):
    slacks = [Fraction(cut["audit"]["benefit"]) - Fraction(cut["audit"]["required"]) for cut in report["cuts"]]
    return float(min(slacks)) if slacks else None


class MemoryMonitor:
    """Samples this process's RSS on a background thread and keeps the peak, in MB."""

    def __init__(self, interval_s=POLL_INTERVAL_S):
        self.interval_s = interval_s
        self.peak_mb = 0.0
        self._process = psutil.Process()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._poll, daemon=True)

    def sample(self):
        memory_mb = self._process.memory_info().rss / 1024 / 1024
        self.peak_mb = max(self.peak_mb, memory_mb)
        return memory_mb

    def _poll(self):
        while not self._stop.is_set():
            self.sample()
            self._stop.wait(self.interval_s)

    def __enter__(self):
        self.sample()
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._stop.set()
        self._thread.join()
        self.sample()
        return False


def run_one(job):
    """Solve one random instance; failures become rows, never exceptions."""
    config, kind, n, seed, memory_limit_mb = job
    row = {"kind": kind, "n": n, "seed": seed, "pass": False, "error": None}
    monitor = MemoryMonitor()
    try:
        inst = random_metric(seed, n, kind)
        with monitor:
            report = SolverEngine(config).solve(inst)
        row.update({
            "pass": report["pass"],
            "ratio_lp": report["ratio_lp"],
            "ratio_opt": report.get("ratio_opt"),
            "r": report["r"],
            "epsilon": report["epsilon"],
            "ell": report["ell"],
            "min_slack": _min_slack(report),
        })
    except SolverError as e:
        row["error"] = f"{e.stage}: {e}"
    except Exception as e:
        row["error"] = f"unexpected: {e}"

    peak_mb = monitor.peak_mb or monitor.sample()
    row["peak_memory_mb"] = round(peak_mb, 1)
    if memory_limit_mb and peak_mb > memory_limit_mb:
        row["pass"] = False
        row["error"] = f"Memory limit exceeded: peak {peak_mb:.1f}MB > {memory_limit_mb}MB"
    return row


def summarize(frame):
    if frame.empty:
        return {"runs": 0, "failures": 0, "max_ratio_lp": None, "mean_ratio_lp": None,
                "worst_slack": None, "failing_seeds": []}
    failing = frame[~frame["pass"].astype(bool)]
    ratios = frame["ratio_lp"].dropna()
    slacks = frame["min_slack"].dropna()
    return {
        "runs": int(len(frame)),
        "failures": int(len(failing)),
        "max_ratio_lp": float(ratios.max()) if len(ratios) else None,
        "mean_ratio_lp": float(ratios.mean()) if len(ratios) else None,
        "worst_slack": float(slacks.min()) if len(slacks) else None,
        "failing_seeds": [(row.kind, int(row.n), int(row.seed)) for row in failing.itertuples()],
    }


def run_batch(config, seeds, kinds=("euclidean",), n_values=(8,), workers=2, memory_limit_mb=None,
              out_dir=None, plot=False):
    """Every (kind, n, seed) combination; returns (rows DataFrame, summary)."""
    jobs = [(config, kind, n, seed, memory_limit_mb) for kind in kinds for n in n_values for seed in seeds]
    logger.info(f"Batch: {len(jobs)} runs on {workers} workers")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, jobs))
    else:
        rows = [run_one(job) for job in jobs]

    frame = pd.DataFrame(rows, columns=COLUMNS)
    summary = summarize(frame)
    for kind, n, seed in summary["failing_seeds"]:
        logger.error(f"Batch failure: kind={kind}, n={n}, seed={seed}")

    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        frame.to_csv(Path(out_dir) / "batch.csv", index=False)
        if plot and not frame.empty:
            import plotly.express as px
            fig = px.histogram(frame.dropna(subset=["ratio_lp"]), x="ratio_lp", color="kind",
                               title="Best tour cost / LP value")
            fig.write_html(str(Path(out_dir) / "batch.html"))
        logger.info(f"Batch results written to {out_dir}")
    logger.info(f"Batch summary: {summary['runs']} runs, {summary['failures']} failures, "
                f"max ratio_lp {summary['max_ratio_lp']}")
    return frame, summary
