"""Separation quality metrics and stratified report aggregation.

SDR here is the single-reference projection decomposition: the estimate is
split into its component along the reference and the residual. dB values
are capped at +-100 so reports stay serializable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .errors import DataError, ShapeError
from .signal import Waveform

DB_CAP = 100.0


def _ratio_db(num, den):
    if num <= 0.0:
        return -DB_CAP
    if den <= 0.0:
        return DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def _project(estimate, reference):
    est = np.asarray(estimate.samples if isinstance(estimate, Waveform) else estimate)
    ref = np.asarray(reference.samples if isinstance(reference, Waveform) else reference)
    if est.shape != ref.shape:
        raise ShapeError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise DataError("silent reference")
    s_target = (float(est @ ref) / ref_energy) * ref
    return est, s_target


def sdr(estimate, reference) -> float:
    """Signal-to-distortion ratio in dB: energy of the reference-aligned
    component over the residual energy. Scale-invariant in the estimate."""
    est, s_target = _project(estimate, reference)
    residual = est - s_target
    return _ratio_db(float(s_target @ s_target), float(residual @ residual))


def npa(estimate, reference) -> float:
    """Projection-alignment score in dB: aligned energy over the remaining
    (non-aligned) energy of the estimate."""
    est, s_target = _project(estimate, reference)
    aligned = float(s_target @ s_target)
    rest = float(est @ est) - aligned
    return _ratio_db(aligned, rest)


def improved_npa(proposed_est, baseline_est, reference) -> float:
    """Alignment improvement of the proposed estimate over the baseline,
    as a difference of (capped) npa values."""
    return npa(proposed_est, reference) - npa(baseline_est, reference)


def _as_mask_list(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 2:
        return [m, 1.0 - m]  # two complementary sources
    return [np.asarray(x, dtype=np.float64) for x in m]


def mask_error_rate(estimated, ideal) -> float:
    """Fraction of bins where the estimated mask disagrees with the ideal
    one, minimized over the source-label permutation.

    Accepts either lists of per-source (T, F) masks or a single (T, F)
    mask per side (interpreted as the two-source complementary pair).
    """
    est = _as_mask_list(estimated)
    ref = _as_mask_list(ideal)
    if len(est) != len(ref):
        raise ShapeError(f"source count mismatch: {len(est)} vs {len(ref)}")
    for a, b in zip(est, ref):
        if a.shape != b.shape:
            raise ShapeError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    n_bins = est[0].size
    best = 1.0
    for perm in permutations(range(len(est))):
        wrong = sum(
            int(np.count_nonzero(est[perm[c]] != ref[c])) for c in range(len(ref))
        )
        best = min(best, wrong / (n_bins * len(ref)))
    return best


def relative_error_improvement(err_baseline: float, err_proposed: float):
    """Percent reduction of the proposed error over the baseline error.
    None when the baseline error is zero (undefined)."""
    if err_baseline == 0.0:
        return None
    return 100.0 * (err_baseline - err_proposed) / err_baseline


@dataclass
class UtteranceRecord:
    id: str
    method: str  # "dc" (baseline) or "proposed"
    embedding_dim: int
    sir_db: float
    family_pair: str
    sdr_db: float  # dominant-power target stream
    sdr_mean_db: float  # mean over both output streams
    npa_db: float
    mask_error_rate: float


@dataclass
class MetricsReport:
    methods: list
    sir_values: list
    sdr_by_sir: dict  # (dim, method) -> {sir: mean, "avg": mean}
    sdr_by_family: dict  # (dim, method) -> {pair: mean}
    mask_quality: dict  # sir -> {"improved_npa": x, "relative_error_pct": y or None}
    records: list = field(default_factory=list)


def aggregate(records) -> MetricsReport:
    """Stratified means with method deltas. All methods must cover the
    identical set of mixture ids."""
    methods = sorted({r.method for r in records})
    id_sets = {m: {r.id for r in records if r.method == m} for m in methods}
    reference_ids = id_sets[methods[0]]
    for m in methods[1:]:
        if id_sets[m] != reference_ids:
            missing = sorted(reference_ids ^ id_sets[m])
            raise DataError(
                f"methods evaluated on different mixture sets; mismatched ids: {missing}"
            )
    sirs = sorted({r.sir_db for r in records})
    dims = sorted({r.embedding_dim for r in records})
    pairs = sorted({r.family_pair for r in records})

    def mean_of(selector, value):
        vals = [value(r) for r in records if selector(r)]
        return float(np.mean(vals)) if vals else float("nan")

    sdr_by_sir = {}
    sdr_by_family = {}
    for dim in dims:
        for m in methods:
            cell = {
                sir: mean_of(
                    lambda r, s=sir, d=dim, mm=m: r.sir_db == s
                    and r.embedding_dim == d
                    and r.method == mm,
                    lambda r: r.sdr_db,
                )
                for sir in sirs
            }
            cell["avg"] = mean_of(
                lambda r, d=dim, mm=m: r.embedding_dim == d and r.method == mm,
                lambda r: r.sdr_db,
            )
            sdr_by_sir[(dim, m)] = cell
            sdr_by_family[(dim, m)] = {
                pair: mean_of(
                    lambda r, p=pair, d=dim, mm=m: r.family_pair == p
                    and r.embedding_dim == d
                    and r.method == mm,
                    lambda r: r.sdr_db,
                )
                for pair in pairs
            }

    mask_quality = {}
    if {"dc", "proposed"} <= set(methods):
        for sir in sirs:
            npa_dc = mean_of(
                lambda r, s=sir: r.sir_db == s and r.method == "dc", lambda r: r.npa_db
            )
            npa_prop = mean_of(
                lambda r, s=sir: r.sir_db == s and r.method == "proposed",
                lambda r: r.npa_db,
            )
            err_dc = mean_of(
                lambda r, s=sir: r.sir_db == s and r.method == "dc",
                lambda r: r.mask_error_rate,
            )
            err_prop = mean_of(
                lambda r, s=sir: r.sir_db == s and r.method == "proposed",
                lambda r: r.mask_error_rate,
            )
            mask_quality[sir] = {
                "improved_npa": npa_prop - npa_dc,
                "relative_error_pct": relative_error_improvement(err_dc, err_prop),
            }
    return MetricsReport(
        methods=methods,
        sir_values=sirs,
        sdr_by_sir=sdr_by_sir,
        sdr_by_family=sdr_by_family,
        mask_quality=mask_quality,
        records=list(records),
    )


def records_to_csv(records, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["id", "method", "embedding_dim", "sir_db", "family_pair",
             "sdr_db", "sdr_mean_db", "npa_db", "mask_error_rate"]
        )
        for r in records:
            writer.writerow(
                [r.id, r.method, r.embedding_dim, r.sir_db, r.family_pair,
                 repr(r.sdr_db), repr(r.sdr_mean_db), repr(r.npa_db),
                 repr(r.mask_error_rate)]
            )


def report_to_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["table", "embedding_dim", "method", "key", "value"])
        for (dim, m), cell in report.sdr_by_sir.items():
            for key, value in cell.items():
                writer.writerow(["sdr_by_sir", dim, m, key, repr(value)])
        for (dim, m), cell in report.sdr_by_family.items():
            for key, value in cell.items():
                writer.writerow(["sdr_by_family", dim, m, key, repr(value)])
        for sir, cell in report.mask_quality.items():
            for key, value in cell.items():
                writer.writerow(
                    ["mask_quality", "", "", f"{key}@{sir}",
                     "n/a" if value is None else repr(value)]
                )


def _fmt(x):
    return "  n/a" if x is None or not np.isfinite(x) else f"{x:6.2f}"


def report_to_text(report: MetricsReport) -> str:
    """Pretty tables: SDR stratified by SIR (with an Avg. column), SDR by
    family pairing, and mask-quality deltas when both methods are present."""
    lines = []
    sirs = report.sir_values
    lines.append("SDR (dB) vs SIR")
    header = "Dim  Method    " + "".join(f"{s:>7.0f}" for s in sirs) + "   Avg."
    lines.append(header)
    dims = sorted({dim for dim, _ in report.sdr_by_sir})
    for dim in dims:
        for m in report.methods:
            cell = report.sdr_by_sir[(dim, m)]
            row = f"{dim:>3d}  {m:<8s}" + "".join(
                f" {_fmt(cell[s])}" for s in sirs
            ) + f" {_fmt(cell['avg'])}"
            lines.append(row)
        if {"dc", "proposed"} <= set(report.methods):
            dc = report.sdr_by_sir[(dim, "dc")]
            prop = report.sdr_by_sir[(dim, "proposed")]
            row = f"{dim:>3d}  improve " + "".join(
                f" {_fmt(prop[s] - dc[s])}" for s in sirs
            ) + f" {_fmt(prop['avg'] - dc['avg'])}"
            lines.append(row)
    lines.append("")
    lines.append("SDR (dB) vs family pairing")
    pairs = sorted(next(iter(report.sdr_by_family.values())).keys()) if report.sdr_by_family else []
    lines.append("Dim  Method    " + "".join(f"{p:>8s}" for p in pairs))
    for dim in dims:
        for m in report.methods:
            cell = report.sdr_by_family[(dim, m)]
            lines.append(
                f"{dim:>3d}  {m:<8s}" + "".join(f"  {_fmt(cell[p])}" for p in pairs)
            )
    if report.mask_quality:
        lines.append("")
        lines.append("Mask quality (proposed vs dc)")
        lines.append("SIR   improved NPA (dB)   relative error rate (%)")
        for sir in sirs:
            cell = report.mask_quality[sir]
            lines.append(
                f"{sir:>4.0f}   {_fmt(cell['improved_npa'])}              "
                f"{_fmt(cell['relative_error_pct'])}"
            )
    return "\n".join(lines) + "\n"
