"""Anomaly scoring, ROC metrics and Table-style reporting."""
from __future__ import annotations

import csv
import io
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyType, KindMismatch, MissingFamily
from .features import dense_feature_vectors, patches_from_spectrogram, stft_log_mel
from .models import Autoencoder, ModelCheckpoint

FAMILIES = ("dense", "conv")
MAX_FPR = 0.1


@dataclass
class ScoreRecord:
    file_id: str
    machine_type: str
    machine_id: str
    label: str  # "normal" | "anomaly" | "unknown"
    score: float


# -- scoring -------------------------------------------------------------------

class Scorer:
    """Holds an inference-mode model and turns clips or cached features into scores."""

    def __init__(self, checkpoint: ModelCheckpoint | Autoencoder, normalizer=None):
        if isinstance(checkpoint, ModelCheckpoint):
            self.model = checkpoint.to_model()
            self.normalizer = checkpoint.normalizer
        else:
            self.model = checkpoint
            self.normalizer = normalizer
        self.family = self.model.family

    def segments_from_mel(self, mel: np.ndarray) -> np.ndarray:
        if self.family != "conv":
            raise KindMismatch("spectrogram input is only scored by conv models")
        return patches_from_spectrogram(np.asarray(mel, dtype=np.float32), self.normalizer).data

    def segments_from_clip(self, clip) -> np.ndarray:
        if self.family == "dense":
            return dense_feature_vectors(clip).data
        return self.segments_from_mel(stft_log_mel(clip).values)

    def score_segments(self, segments: np.ndarray) -> float:
        return float(np.mean(self.model.reconstruction_error(segments), dtype=np.float64))

    def score_clip(self, clip) -> float:
        return self.score_segments(self.segments_from_clip(clip))


def score_file(checkpoint, clip) -> float:
    """Mean per-segment reconstruction error of ``clip``."""
    return Scorer(checkpoint).score_clip(clip)


# -- metrics -------------------------------------------------------------------

def _split(scores, labels):
    if labels is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        labels = [lab for _, lab in pairs]
    y = np.array([lab in (1, True, "anomaly") for lab in labels], dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.all() or not y.any():
        raise DegenerateLabels(f"need both normal and anomalous scores, got {int(y.sum())} anomalies of {len(y)}")
    return s, y


def auc(scores, labels=None) -> float:
    """ROC AUC in percent via the Mann-Whitney rank statistic (ties count 1/2).

    Accepts ``auc(scores, labels)`` or ``auc([(score, label), ...])``; a label
    is anomalous if it is ``1``, ``True`` or ``"anomaly"``.
    """
    s, y = _split(scores, labels)
    ranks = rankdata(s)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return 100.0 * u / (n_pos * n_neg)


def roc_curve(scores, labels=None):
    """FPR/TPR at every distinct threshold, from (0, 0) to (1, 1)."""
    s, y = _split(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_block = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[last_of_block]
    fps = np.cumsum(~y)[last_of_block]
    tpr = np.r_[0.0, tps / y.sum()]
    fpr = np.r_[0.0, fps / (~y).sum()]
    return fpr, tpr


def p_auc(scores, labels=None, p=MAX_FPR) -> float:
    """Standardized partial AUC over FPR in [0, p], in percent.

    The raw area is interpolated linearly at FPR = p and rescaled so a
    chance-level (diagonal) ROC gives 50 and a perfect one gives 100
    (McClish correction, as used by the challenge's reference scorer).
    """
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    fpr, tpr = roc_curve(scores, labels)
    stop = np.searchsorted(fpr, p, side="right")
    x, yv = fpr[:stop], tpr[:stop]
    if x[-1] < p:
        t_at_p = np.interp(p, fpr, tpr)
        x, yv = np.r_[x, p], np.r_[yv, t_at_p]
    area = float(np.sum(np.diff(x) * (yv[1:] + yv[:-1]) / 2.0))
    min_area = p * p / 2.0
    return 100.0 * 0.5 * (1.0 + (area - min_area) / (p - min_area))


# -- per-machine reports -------------------------------------------------------

@dataclass
class MachineScore:
    machine_type: str
    machine_id: str
    auc: float
    p_auc: float


@dataclass
class MachineReport:
    family: str
    machines: list = field(default_factory=list)
    type_means: dict | None = None

    def __post_init__(self):
        if self.type_means is None and self.machines:
            self.type_means = per_type_average(self.machines)


def per_type_average(machines: Iterable[MachineScore], machine_types=None) -> dict:
    """Unweighted mean AUC and pAUC over the machine IDs of each type."""
    groups = OrderedDict()
    for m in machines:
        groups.setdefault(m.machine_type, []).append(m)
    for t in machine_types or ():
        if t not in groups:
            raise EmptyType(f"no machines reported for type {t!r}")
    if not groups:
        raise EmptyType("no machines to average")
    return OrderedDict(
        (t, (float(np.mean([m.auc for m in ms])), float(np.mean([m.p_auc for m in ms]))))
        for t, ms in groups.items())


def evaluate_records(records: Iterable[ScoreRecord], family: str, p=MAX_FPR) -> MachineReport:
    groups = OrderedDict()
    for r in records:
        groups.setdefault((r.machine_type, r.machine_id), []).append(r)
    machines = []
    for (mtype, mid), rs in groups.items():
        if any(r.label == "unknown" for r in rs):
            raise DegenerateLabels(f"{mtype} id {mid}: unlabeled clips cannot be evaluated")
        scores = [r.score for r in rs]
        labels = [r.label for r in rs]
        machines.append(MachineScore(mtype, mid, auc(scores, labels), p_auc(scores, labels, p)))
    return MachineReport(family, machines)


def select_mixed(reports: Mapping[str, MachineReport]) -> dict:
    """Per machine type, the family with the higher mean AUC; ties go to dense."""
    for fam in FAMILIES:
        if fam not in reports:
            raise MissingFamily(f"no {fam} report to compare")
    dense, conv = reports["dense"].type_means, reports["conv"].type_means
    choice = OrderedDict()
    for t in dense:
        if t not in conv:
            raise MissingFamily(f"type {t!r} has no conv result")
        choice[t] = "conv" if conv[t][0] > dense[t][0] else "dense"
    for t in conv:
        if t not in dense:
            raise MissingFamily(f"type {t!r} has no dense result")
    return choice


# -- file formats ------------------------------------------------------------------

def score_csv_name(machine_type: str, machine_id: str) -> str:
    return f"anomaly_score_{machine_type}_id_{machine_id}.csv"


def write_score_csv(path, rows: Iterable) -> None:
    """``rows`` are ``(filename, score)`` pairs; written without a header."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for name, score in rows:
            w.writerow([name, repr(float(score))])


def read_score_csv(path) -> list:
    with open(path, newline="") as fh:
        return [(name, float(score)) for name, score in csv.reader(fh)]


def read_machine_table(path, family="baseline") -> MachineReport:
    """Per-machine AUC/pAUC table with header ``machine_type,machine_id,auc,p_auc``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return MachineReport(family, [MachineScore(r["machine_type"], r["machine_id"],
                                               float(r["auc"]), float(r["p_auc"])) for r in rows])


def write_machine_table(report: MachineReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["machine_type", "machine_id", "auc", "p_auc"])
        for m in report.machines:
            w.writerow([m.machine_type, m.machine_id, f"{m.auc:.6f}", f"{m.p_auc:.6f}"])


def baseline_fixture_path() -> Path:
    return Path(__file__).with_name("data") / "baseline_dev.csv"


def render_report(reports: Mapping[str, MachineReport], baseline: MachineReport | None = None,
                  mixed: Mapping[str, str] | None = None) -> str:
    """Markdown table: one row per machine ID plus an Average row per type.

    Columns are the optional baseline followed by each family's AUC/pAUC; when
    ``mixed`` is given a final column names the family chosen for each type.
    """
    columns = ([("baseline", baseline)] if baseline is not None else []) + list(reports.items())
    lookup = {name: {(m.machine_type, m.machine_id): m for m in rep.machines} for name, rep in columns}
    header = ["Machine Type", "Machine ID"]
    for name, _ in columns:
        header += [f"{name} AUC (%)", f"{name} pAUC (%)"]
    if mixed is not None:
        header.append("mixed family")

    def cell(v):
        return "" if v is None else f"{v:.2f}"

    out = io.StringIO()
    out.write("| " + " | ".join(header) + " |\n")
    out.write("|" + "---|" * len(header) + "\n")
    types = OrderedDict()
    for _, rep in reports.items():
        for m in rep.machines:
            types.setdefault(m.machine_type, OrderedDict())[m.machine_id] = None
    for t, ids in types.items():
        for mid in ids:
            row = [t, mid]
            for name, _ in columns:
                m = lookup[name].get((t, mid))
                row += [cell(m and m.auc), cell(m and m.p_auc)]
            if mixed is not None:
                row.append("")
            out.write("| " + " | ".join(row) + " |\n")
        row = [t, "**Average**"]
        for _, rep in columns:
            means = (rep.type_means or {}).get(t)
            row += [cell(means and means[0]), cell(means and means[1])]
        if mixed is not None:
            row.append(mixed.get(t, ""))
        out.write("| " + " | ".join(row) + " |\n")
    return out.getvalue()
