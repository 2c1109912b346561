"""Precision-rate and success-rate evaluation.

Precision at threshold tau is the fraction of frames whose predicted
center lies within tau pixels of the ground-truth center; the named
operating points are 5 px (gtot mode) and 20 px (rgbt234 mode).
Success at threshold t is the fraction of frames with IoU strictly
greater than t on the 21-point grid {0, 0.05, ..., 1.0}; SR is the mean
of the 21 values (the area under the curve on the uniform grid).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import iou_many
from .utils import write_csv

SUCCESS_GRID = np.linspace(0.0, 1.0, 21)
DEFAULT_PRECISION_GRID = np.arange(0.0, 51.0)
PR_THRESHOLD = {"gtot": 5.0, "rgbt234": 20.0}


def center_errors(results: np.ndarray, gt: np.ndarray) -> np.ndarray:
    results = np.asarray(results, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if results.shape != gt.shape:
        raise ValueError(f"results {results.shape} and gt {gt.shape} differ")
    rc = results[:, :2] + results[:, 2:] / 2.0
    gc = gt[:, :2] + gt[:, 2:] / 2.0
    return np.hypot(rc[:, 0] - gc[:, 0], rc[:, 1] - gc[:, 1])


def overlaps(results: np.ndarray, gt: np.ndarray) -> np.ndarray:
    results = np.asarray(results, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if results.shape != gt.shape:
        raise ValueError(f"results {results.shape} and gt {gt.shape} differ")
    return np.array([iou_many(g, r[None])[0] for g, r in zip(gt, results)])


def precision_curve(results, gt, thresholds=None) -> np.ndarray:
    """Fraction of frames with center distance <= tau, per threshold."""
    thresholds = DEFAULT_PRECISION_GRID if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    err = center_errors(results, gt)
    return (err[None, :] <= thresholds[:, None]).mean(axis=1)


def success_curve(results, gt):
    """Returns (curve over SUCCESS_GRID, SR = mean of the curve).

    Success uses strict inequality: a frame counts at threshold t only
    when IoU > t, so perfect results give SR = 20/21.
    """
    ov = overlaps(results, gt)
    curve = (ov[None, :] > SUCCESS_GRID[:, None]).mean(axis=1)
    return curve, float(curve.mean())


@dataclass
class SequenceReport:
    name: str
    n_frames: int
    pr: float
    sr: float
    precision: np.ndarray
    success: np.ndarray


@dataclass
class EvalReport:
    mode: str
    pr_threshold: float
    sequences: list[SequenceReport] = field(default_factory=list)
    pr: float = 0.0
    sr: float = 0.0
    precision: np.ndarray | None = None
    success: np.ndarray | None = None


def _pr_at(curve: np.ndarray, thresholds: np.ndarray, tau: float) -> float:
    return float(curve[np.searchsorted(thresholds, tau)])


def evaluate(
    results_by_name: dict[str, np.ndarray],
    gt_by_name: dict[str, np.ndarray],
    mode: str = "gtot",
    frame_weighted: bool = True,
) -> EvalReport:
    """Per-sequence curves plus a frame-weighted (or per-sequence mean)
    aggregate. Inputs map sequence name to (T, 4) box arrays."""
    if mode not in PR_THRESHOLD:
        raise ValueError(f"mode must be one of {sorted(PR_THRESHOLD)}")
    missing = sorted(set(gt_by_name) - set(results_by_name))
    if missing:
        raise FileNotFoundError(f"missing results for sequences: {', '.join(missing)}")
    tau = PR_THRESHOLD[mode]
    thresholds = DEFAULT_PRECISION_GRID
    report = EvalReport(mode=mode, pr_threshold=tau)
    all_err, all_ov = [], []
    for name in sorted(gt_by_name):
        res, gt = results_by_name[name], gt_by_name[name]
        pc = precision_curve(res, gt, thresholds)
        sc, sr = success_curve(res, gt)
        report.sequences.append(
            SequenceReport(name, len(gt), _pr_at(pc, thresholds, tau), sr, pc, sc)
        )
        all_err.append(center_errors(res, gt))
        all_ov.append(overlaps(res, gt))
    if frame_weighted:
        err = np.concatenate(all_err)
        ov = np.concatenate(all_ov)
        report.precision = (err[None, :] <= thresholds[:, None]).mean(axis=1)
        report.success = (ov[None, :] > SUCCESS_GRID[:, None]).mean(axis=1)
    else:
        report.precision = np.mean([s.precision for s in report.sequences], axis=0)
        report.success = np.mean([s.success for s in report.sequences], axis=0)
    report.pr = _pr_at(report.precision, thresholds, tau)
    report.sr = float(report.success.mean())
    return report


def evaluate_dirs(results_dir, dataset_dir, mode: str = "gtot", frame_weighted: bool = True) -> EvalReport:
    """Evaluate one results file per sequence directory.

    Results files are <results_dir>/<sequence_name>.txt in the tracker
    output format. All missing files are listed before failing.
    """
    from .data import list_sequence_dirs, load_gt
    from .tracker import read_results

    gt_by_name, results_by_name = {}, {}
    missing = []
    for seq_dir in list_sequence_dirs(dataset_dir):
        gt_by_name[seq_dir.name] = load_gt(seq_dir)
        path = Path(results_dir) / f"{seq_dir.name}.txt"
        if path.exists():
            results_by_name[seq_dir.name] = read_results(path)
        else:
            missing.append(str(path))
    if missing:
        raise FileNotFoundError("missing results files: " + ", ".join(missing))
    for name in gt_by_name:
        if results_by_name[name].shape[0] != gt_by_name[name].shape[0]:
            raise ValueError(
                f"{name}: {results_by_name[name].shape[0]} result frames vs "
                f"{gt_by_name[name].shape[0]} gt frames"
            )
    return evaluate(results_by_name, gt_by_name, mode, frame_weighted)


def write_report_csv(report: EvalReport, out_dir) -> None:
    """Curve CSVs ("threshold,value" rows) plus a summary CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "precision_curve.csv", ["threshold", "value"],
              [(repr(float(t)), repr(float(v))) for t, v in zip(DEFAULT_PRECISION_GRID, report.precision)])
    write_csv(out / "success_curve.csv", ["threshold", "value"],
              [(repr(float(t)), repr(float(v))) for t, v in zip(SUCCESS_GRID, report.success)])
    rows = [(s.name, s.n_frames, repr(s.pr), repr(s.sr)) for s in report.sequences]
    rows.append(("aggregate", sum(s.n_frames for s in report.sequences), repr(report.pr), repr(report.sr)))
    write_csv(out / "summary.csv", ["sequence", "frames", f"pr@{report.pr_threshold:g}", "sr"], rows)


def plot_report(report: EvalReport, out_dir) -> None:
    """Optional PNG emission; requires matplotlib."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(DEFAULT_PRECISION_GRID, report.precision)
    ax1.axvline(report.pr_threshold, ls="--", c="gray")
    ax1.set(xlabel="center error threshold [px]", ylabel="precision",
            title=f"PR@{report.pr_threshold:g} = {report.pr:.3f}", ylim=(0, 1.02))
    ax2.plot(SUCCESS_GRID, report.success)
    ax2.set(xlabel="overlap threshold", ylabel="success rate",
            title=f"SR = {report.sr:.3f}", ylim=(0, 1.02))
    fig.tight_layout()
    fig.savefig(out / "curves.png", dpi=120)
    plt.close(fig)


def attribute_breakdown(
    results_by_name: dict[str, np.ndarray],
    gt_by_name: dict[str, np.ndarray],
    attributes_by_name: dict[str, list[str]],
    mode: str = "gtot",
) -> dict[str, EvalReport]:
    """Group sequences by attribute tag and evaluate each group."""
    tags = sorted({a for attrs in attributes_by_name.values() for a in attrs})
    out = {}
    for tag in tags:
        names = [n for n, attrs in attributes_by_name.items() if tag in attrs]
        out[tag] = evaluate(
            {n: results_by_name[n] for n in names},
            {n: gt_by_name[n] for n in names},
            mode,
        )
    return out
