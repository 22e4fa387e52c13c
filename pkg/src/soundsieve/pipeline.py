"""Stage orchestration: extract -> train -> score -> evaluate -> report.

Every stage reads the previous stage's artifacts from the work directory and
writes its own; nothing carries timestamps, so a rerun with the same inputs
and seed reproduces the same bytes.

Work directory layout::

    features/<type>/<split>/<stem>.dense.ssf    dense vectors (float32)
    features/<type>/<split>/<stem>.mel.ssf      raw log-mel spectrogram (float32)
    models/<type>_<family>.asdk                 checkpoint
    models/<type>_<family>_history.csv          per-epoch losses
    scores/<family>/anomaly_score_<type>_id_<id>.csv
    eval/<family>.csv                           per-machine AUC / pAUC
    report.md
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from .audio_io import read_clip
from .dataset import DatasetIndex, parse_filename, scan_dataset
from .errors import ConfigError, MissingArtifact
from .evaluate import (FAMILIES, MachineReport, ScoreRecord, Scorer, evaluate_records,
                       read_machine_table, read_score_csv, render_report, score_csv_name,
                       select_mixed, write_machine_table, write_score_csv)
from .features import (FeatureKind, FeatureSet, dense_feature_vectors, load_feature_cache,
                       save_feature_cache, stft_log_mel)
from .models import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

log = logging.getLogger(__name__)

COMMANDS = ("extract", "train", "score", "evaluate", "report")


@dataclass
class RunConfig:
    dataset_root: Path = None
    work_dir: Path = None
    machine_types: list = field(default_factory=list)
    model_family: str = "dense"  # dense | conv | mixed
    lr: float = 0.001
    batch_size: int | None = None
    max_epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    threads: int = 1
    baseline: Path | None = None

    def __post_init__(self):
        if self.dataset_root is not None:
            self.dataset_root = Path(self.dataset_root)
        if self.work_dir is None and os.environ.get("SOUNDSIEVE_WORKDIR"):
            self.work_dir = os.environ["SOUNDSIEVE_WORKDIR"]
        if self.work_dir is not None:
            self.work_dir = Path(self.work_dir)
        if self.baseline is not None:
            self.baseline = Path(self.baseline)
        if isinstance(self.machine_types, str):
            self.machine_types = [t.strip() for t in self.machine_types.split(",") if t.strip()]
        if self.model_family not in ("dense", "conv", "mixed"):
            raise ConfigError(f"family must be dense, conv or mixed, got {self.model_family!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    @property
    def families(self):
        return list(FAMILIES) if self.model_family == "mixed" else [self.model_family]

    def train_config(self, family) -> TrainConfig:
        return TrainConfig(model_family=family, lr=self.lr, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, patience=self.patience,
                           val_fraction=self.val_fraction, seed=self.seed)

    def validate(self):
        if self.dataset_root is None or not self.dataset_root.is_dir():
            raise ConfigError(f"dataset_root {self.dataset_root} is not a directory")
        if self.work_dir is None:
            raise ConfigError("work_dir is not set (flag, config file or SOUNDSIEVE_WORKDIR)")
        if self.baseline is not None and not self.baseline.is_file():
            raise ConfigError(f"baseline table {self.baseline} not found")


_FIELD_TYPES = {"lr": float, "val_fraction": float, "batch_size": int, "max_epochs": int,
                "patience": int, "seed": int, "threads": int}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "family":
            key = "model_family"
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def coerce(key, value):
    if value is None or key not in _FIELD_TYPES:
        return value
    try:
        return _FIELD_TYPES[key](value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None


class Pipeline:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.work = config.work_dir
        self._index = None

    # -- helpers -----------------------------------------------------------
    @property
    def index(self) -> DatasetIndex:
        if self._index is None:
            self._index = scan_dataset(self.config.dataset_root, self.config.machine_types or None)
        return self._index

    @property
    def machine_types(self):
        return self.config.machine_types or self.index.machine_types

    def _map(self, fn, items):
        if self.config.threads == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.config.threads) as pool:
            return list(pool.map(fn, items))

    def feature_path(self, wav: Path, kind: str) -> Path:
        mtype, split = wav.parent.parent.name, wav.parent.name
        return self.work / "features" / mtype / split / f"{wav.stem}.{kind}.ssf"

    def model_path(self, mtype, family) -> Path:
        return self.work / "models" / f"{mtype}_{family}.asdk"

    def score_dir(self, family) -> Path:
        return self.work / "scores" / family

    def eval_path(self, family) -> Path:
        return self.work / "eval" / f"{family}.csv"

    def _require(self, path: Path, stage: str):
        if not path.exists():
            raise MissingArtifact(stage, str(path))

    def _load_cached(self, wav, kind):
        path = self.feature_path(wav, kind)
        self._require(path, "extract")
        return load_feature_cache(path)[1]

    # -- stages ------------------------------------------------------------
    def extract(self):
        wavs = [w for t in self.machine_types for s in ("train", "test") for w in self.index.files(t, s)]

        def one(wav):
            clip = read_clip(wav)
            out = self.feature_path(wav, "dense")
            out.parent.mkdir(parents=True, exist_ok=True)
            save_feature_cache(out, "dense", dense_feature_vectors(clip).data)
            save_feature_cache(self.feature_path(wav, "mel"), "mel", stft_log_mel(clip).values)

        self._map(one, wavs)
        log.info("extracted features for %d files", len(wavs))
        return len(wavs)

    def train(self):
        (self.work / "models").mkdir(parents=True, exist_ok=True)
        for mtype in self.machine_types:
            wavs = self.index.files(mtype, "train")
            for family in self.config.families:
                if family == "dense":
                    feats = {str(w.relative_to(self.index.root)): FeatureSet(
                        FeatureKind.DENSE, self._load_cached(w, "dense")) for w in wavs}
                else:
                    feats = {str(w.relative_to(self.index.root)): self._load_cached(w, "mel") for w in wavs}
                ckpt, history = train(feats, self.config.train_config(family), machine_type=mtype)
                save_checkpoint(ckpt, self.model_path(mtype, family))
                history.to_csv(self.work / "models" / f"{mtype}_{family}_history.csv")
                log.info("%s %s: best epoch %d of %d, val %.6f", mtype, family,
                         history.best_epoch, history.stopped_epoch, ckpt.meta["best_val_loss"])

    def score(self):
        for family in self.config.families:
            out_dir = self.score_dir(family)
            out_dir.mkdir(parents=True, exist_ok=True)
            for mtype in self.machine_types:
                path = self.model_path(mtype, family)
                self._require(path, "train")
                scorer = Scorer(load_checkpoint(path))
                for mid in self.index.entries[mtype]:
                    wavs = self.index.files(mtype, "test", mid)

                    def one(wav):
                        kind = "dense" if family == "dense" else "mel"
                        data = self._load_cached(wav, kind)
                        segs = data if family == "dense" else scorer.segments_from_mel(data)
                        return scorer.score_segments(segs)

                    scores = self._map(one, wavs)
                    write_score_csv(out_dir / score_csv_name(mtype, mid),
                                    [(w.name, s) for w, s in zip(wavs, scores)])

    def _records(self, family):
        records = []
        for mtype in self.machine_types:
            for mid in self.index.entries[mtype]:
                path = self.score_dir(family) / score_csv_name(mtype, mid)
                self._require(path, "score")
                for name, score in read_score_csv(path):
                    label, _ = parse_filename(name)
                    records.append(ScoreRecord(name, mtype, mid, label, score))
        return records

    def evaluate(self):
        reports = {}
        (self.work / "eval").mkdir(parents=True, exist_ok=True)
        for family in self.config.families:
            report = evaluate_records(self._records(family), family)
            write_machine_table(report, self.eval_path(family))
            reports[family] = report
        return reports

    def report(self):
        reports = {}
        for family in self.config.families:
            path = self.eval_path(family)
            self._require(path, "evaluate")
            reports[family] = read_machine_table(path, family)
        mixed = select_mixed(reports) if self.config.model_family == "mixed" else None
        baseline = read_machine_table(self.config.baseline, "baseline") if self.config.baseline else None
        text = render_report(reports, baseline, mixed)
        (self.work / "report.md").write_text(text)
        return text, mixed

    def run(self, command):
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
        return getattr(self, command)()


def run_pipeline(config: RunConfig, command: str):
    return Pipeline(config).run(command)


def mixed_report(reports: dict) -> MachineReport:
    """Collapse per-family reports into one, using the family chosen per type."""
    choice = select_mixed(reports)
    machines = [m for t, fam in choice.items() for m in reports[fam].machines if m.machine_type == t]
    return MachineReport("mixed", machines)


__all__ = ["COMMANDS", "Pipeline", "RunConfig", "mixed_report", "parse_config_file", "run_pipeline"]
