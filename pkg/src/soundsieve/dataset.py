"""Index a DCASE-style corpus: ``<root>/<machine_type>/{train,test}/*.wav``."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingDirectory, UnparsableFilename

log = logging.getLogger(__name__)

SPLITS = ("train", "test")
_NAME = re.compile(r"^(?:(normal|anomaly)_)?id_(\d+)_(\w+)\.wav$", re.IGNORECASE)


def parse_filename(name: str):
    """Return ``(label, machine_id)``; label is "unknown" for unprefixed names."""
    m = _NAME.match(name)
    if m is None:
        raise UnparsableFilename(name)
    label = (m.group(1) or "unknown").lower()
    return label, m.group(2)


@dataclass
class DatasetIndex:
    root: Path
    entries: dict = field(default_factory=dict)  # type -> id -> {"train": [...], "test": [...]}
    labels: dict = field(default_factory=dict)  # path -> normal | anomaly | unknown
    skipped: list = field(default_factory=list)

    @property
    def machine_types(self):
        return list(self.entries)

    def files(self, machine_type, split, machine_id=None):
        ids = [machine_id] if machine_id is not None else sorted(self.entries[machine_type])
        return [f for i in ids for f in self.entries[machine_type].get(i, {}).get(split, [])]

    def counts(self):
        return {t: {i: {s: len(v[s]) for s in SPLITS} for i, v in ids.items()}
                for t, ids in self.entries.items()}

    def is_labeled(self, machine_type):
        return all(self.labels[f] != "unknown" for f in self.files(machine_type, "test"))


def scan_dataset(root, machine_types=None) -> DatasetIndex:
    root = Path(root)
    if not root.is_dir():
        raise MissingDirectory(f"dataset root {root} does not exist")
    if machine_types is None:
        machine_types = sorted(p.name for p in root.iterdir() if p.is_dir())
    index = DatasetIndex(root)
    for mtype in machine_types:
        tdir = root / mtype
        by_id = {}
        for split in SPLITS:
            sdir = tdir / split
            if not sdir.is_dir():
                raise MissingDirectory(f"missing directory {sdir}")
            for path in sorted(sdir.glob("*.wav")):
                try:
                    label, mid = parse_filename(path.name)
                except UnparsableFilename:
                    log.warning("skipping unparsable file name %s", path)
                    index.skipped.append(path)
                    continue
                by_id.setdefault(mid, {s: [] for s in SPLITS})[split].append(path)
                index.labels[path] = label
        index.entries[mtype] = {mid: by_id[mid] for mid in sorted(by_id)}
        log.info("%s: %s", mtype, {i: (len(v["train"]), len(v["test"])) for i, v in by_id.items()})
    if index.skipped:
        log.warning("%d files skipped with unparsable names", len(index.skipped))
    return index
