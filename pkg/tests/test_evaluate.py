import csv
from pathlib import Path

import numpy as np
import pytest

from oracles import brute_auc, brute_p_auc
from soundsieve.audio_io import AudioClip
from soundsieve.errors import DegenerateLabels, EmptyType, KindMismatch, MissingFamily
from soundsieve.evaluate import (MachineReport, MachineScore, ScoreRecord, Scorer, auc,
                                 baseline_fixture_path, evaluate_records, p_auc, per_type_average,
                                 read_machine_table, read_score_csv, render_report, roc_curve,
                                 score_csv_name, score_file, select_mixed, write_machine_table,
                                 write_score_csv)
from soundsieve.features import NormalizerStats, dense_feature_vectors
from soundsieve.models import ModelCheckpoint, build_conv_ae
from soundsieve.trainer import TrainConfig, train

TABLE2 = Path(__file__).with_name("data") / "table2_dev.csv"


def table2():
    with open(TABLE2, newline="") as fh:
        return list(csv.DictReader(fh))


def table2_report(system, use_printed_means=True):
    rows = [r for r in table2() if r["system"] == system]
    machines = [MachineScore(r["machine_type"], r["machine_id"], float(r["auc"]), float(r["p_auc"]))
                for r in rows if r["machine_id"] != "average"]
    means = None
    if use_printed_means:
        means = {r["machine_type"]: (float(r["auc"]), float(r["p_auc"]))
                 for r in rows if r["machine_id"] == "average"}
    return MachineReport(system, machines, means)


def random_set(seed, n=50, ties=False):
    rng = np.random.default_rng(seed)
    labels = rng.permutation([True] * (n // 2) + [False] * (n - n // 2))
    scores = rng.normal(size=n) + 0.8 * labels
    if ties:
        scores = np.round(scores, 1)
    return scores, labels


class TestAuc:
    def test_perfect(self):
        assert auc([(1, "normal"), (2, "normal"), (3, "anomaly"), (4, "anomaly")]) == 100.0

    def test_all_ties(self):
        assert auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 50.0

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("ties", [False, True])
    def test_matches_all_pairs(self, seed, ties):
        s, y = random_set(seed, ties=ties)
        assert abs(auc(s, y) - brute_auc(s, y)) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_transform_invariance(self, seed):
        s, y = random_set(seed)
        assert auc(np.exp(3 * s) + 7, y) == pytest.approx(auc(s, y), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_label_flip(self, seed):
        s, y = random_set(seed, ties=True)
        assert auc(s, ~y) == pytest.approx(100 - auc(s, y), abs=1e-9)

    def test_degenerate(self):
        with pytest.raises(DegenerateLabels):
            auc([1, 2, 3], [0, 0, 0])
        with pytest.raises(DegenerateLabels):
            p_auc([1, 2], ["anomaly", "anomaly"])


class TestPartialAuc:
    def test_perfect(self):
        assert p_auc([1, 2, 3, 4], [0, 0, 1, 1]) == 100.0

    def test_all_ties(self):
        assert p_auc([5.0] * 8, [0, 1] * 4) == pytest.approx(50.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("ties", [False, True])
    def test_matches_brute_force_roc(self, seed, ties):
        s, y = random_set(seed, ties=ties)
        assert abs(p_auc(s, y) - brute_p_auc(s, y)) < 1e-6
        assert p_auc(s, y) <= 100

    @pytest.mark.parametrize("seed", range(5))
    def test_full_range_equals_auc(self, seed):
        s, y = random_set(seed, ties=True)
        assert abs(p_auc(s, y, p=1.0) - auc(s, y)) < 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_sklearn(self, seed):
        metrics = pytest.importorskip("sklearn.metrics")
        s, y = random_set(seed, n=80, ties=True)
        assert auc(s, y) == pytest.approx(100 * metrics.roc_auc_score(y, s), abs=1e-9)
        assert p_auc(s, y) == pytest.approx(100 * metrics.roc_auc_score(y, s, max_fpr=0.1), abs=1e-9)

    def test_roc_endpoints(self):
        fpr, tpr = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0, 0, 1, 1)
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


class TestAverages:
    def test_toycar_dense(self):
        ms = [MachineScore("ToyCar", f"0{i}", a, p) for i, (a, p) in enumerate(
            [(83.87, 72.64), (87.56, 80.35), (63.12, 55.02), (88.60, 76.68)], start=1)]
        mean_auc, mean_pauc = per_type_average(ms)["ToyCar"]
        assert abs(mean_auc - 80.79) <= 0.005
        assert abs(mean_pauc - 71.17) <= 0.005

    def test_single_machine(self):
        assert per_type_average([MachineScore("fan", "00", 61.5, 52.25)])["fan"] == (61.5, 52.25)

    def test_empty_type(self):
        with pytest.raises(EmptyType):
            per_type_average([MachineScore("fan", "00", 1, 1)], machine_types=["fan", "pump"])
        with pytest.raises(EmptyType):
            per_type_average([])

    def test_table2_average_rows(self):
        """Recompute every printed Average from its ID rows and list the disagreements."""
        off = []
        for system in ("baseline", "dense", "conv"):
            printed = table2_report(system).type_means
            computed = per_type_average(table2_report(system, use_printed_means=False).machines)
            for t in printed:
                for k, metric in enumerate(("auc", "p_auc")):
                    # 1e-9 absorbs binary rounding of means that land exactly on x.xx5
                    if abs(printed[t][k] - computed[t][k]) > 0.005 + 1e-9:
                        off.append((system, t, metric))
        # two printed averages in the published table do not match their ID rows
        assert off == [("conv", "fan", "p_auc"), ("conv", "pump", "auc")]


class TestSelectMixed:
    def test_table2(self):
        choice = select_mixed({f: table2_report(f) for f in ("dense", "conv")})
        assert {t for t, f in choice.items() if f == "conv"} == {"slider", "valve"}
        assert choice["ToyCar"] == "dense"

    def test_tie_goes_to_dense(self):
        rep = lambda fam: MachineReport(fam, [MachineScore("fan", "00", 70.0, 50.0)])
        assert select_mixed({"dense": rep("dense"), "conv": rep("conv")}) == {"fan": "dense"}

    def test_missing_family(self):
        with pytest.raises(MissingFamily):
            select_mixed({"dense": table2_report("dense")})


def test_evaluate_records_groups_by_machine():
    recs = [ScoreRecord(f"f{i}", "fan", mid, lab, float(s)) for i, (mid, lab, s) in enumerate(
        [("00", "normal", 1), ("00", "anomaly", 2), ("02", "normal", 3), ("02", "anomaly", 1)])]
    rep = evaluate_records(recs, "dense")
    assert [(m.machine_id, m.auc) for m in rep.machines] == [("00", 100.0), ("02", 0.0)]
    assert rep.type_means["fan"][0] == 50.0
    with pytest.raises(DegenerateLabels):
        evaluate_records([ScoreRecord("x", "fan", "00", "unknown", 1.0)] * 2, "dense")


# -- scoring ----------------------------------------------------------------------

TINY = {"input_dim": 640, "hidden": 16, "depth": 2, "latent": 4}


def tone(seed, n=20000):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / 16000
    return AudioClip(0.3 * np.sin(2 * np.pi * 440 * t + rng.uniform(0, 6)) + 0.002 * rng.normal(size=n), 16000)


@pytest.fixture(scope="module")
def tone_checkpoint():
    feats = {f"t{i}": dense_feature_vectors(tone(i)) for i in range(8)}
    ckpt, _ = train(feats, TrainConfig("dense", batch_size=32, max_epochs=40, arch=TINY))
    return ckpt


def test_tone_scores_below_noise(tone_checkpoint):
    noise = AudioClip(np.random.default_rng(99).uniform(-0.3, 0.3, 20000), 16000)
    assert score_file(tone_checkpoint, tone(0)) < score_file(tone_checkpoint, noise)


def test_duplicate_clip_same_score(tone_checkpoint):
    clip = tone(3)
    copy = AudioClip(clip.samples.copy(), 16000)
    assert score_file(tone_checkpoint, clip) == score_file(tone_checkpoint, copy)


def test_single_segment_clip_scores_its_patch():
    arch = {"family": "conv", "input_shape": [1, 128, 32], "filters": [2, 2], "kernels": [3, 3],
            "strides": [[2, 2], [2, 2]], "latent": 4}
    model = build_conv_ae(0, arch)
    norm = NormalizerStats(np.full(128, -5.0), np.full(128, 3.0))
    ckpt = ModelCheckpoint.from_model(model, norm)
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 1024 + 31 * 512), 16000)
    scorer = Scorer(ckpt)
    segs = scorer.segments_from_clip(clip)
    assert segs.shape == (1, 1, 128, 32)
    assert score_file(ckpt, clip) == float(ckpt.to_model().reconstruction_error(segs)[0])


def test_scorer_rejects_mel_for_dense(tone_checkpoint):
    with pytest.raises(KindMismatch):
        Scorer(tone_checkpoint).segments_from_mel(np.zeros((40, 128)))


# -- files ----------------------------------------------------------------------------

def test_score_csv_round_trip(tmp_path):
    assert score_csv_name("fan", "02") == "anomaly_score_fan_id_02.csv"
    rows = [("normal_id_02_00000000.wav", 0.1 + 0.2), ("anomaly_id_02_00000001.wav", 1e-12)]
    path = tmp_path / score_csv_name("fan", "02")
    write_score_csv(path, rows)
    assert read_score_csv(path) == rows
    assert path.read_text().splitlines()[0] == "normal_id_02_00000000.wav,0.30000000000000004"


def test_machine_table_round_trip(tmp_path):
    rep = table2_report("dense", use_printed_means=False)
    write_machine_table(rep, tmp_path / "t.csv")
    back = read_machine_table(tmp_path / "t.csv", "dense")
    assert [(m.machine_type, m.machine_id, m.auc) for m in back.machines] == \
           [(m.machine_type, m.machine_id, m.auc) for m in rep.machines]


def test_baseline_fixture_has_every_machine():
    base = read_machine_table(baseline_fixture_path())
    assert len(base.machines) == 23
    assert base.type_means["ToyCar"][0] == pytest.approx(78.77, abs=0.005)


def test_render_report_layout():
    reports = {f: table2_report(f) for f in ("dense", "conv")}
    mixed = select_mixed(reports)
    text = render_report(reports, read_machine_table(baseline_fixture_path()), mixed)
    lines = text.splitlines()
    assert lines[0].startswith("| Machine Type | Machine ID | baseline AUC (%)")
    assert lines[0].endswith("mixed family |")
    assert len(lines) == 2 + 23 + 6
    avg_slider = next(l for l in lines if l.startswith("| slider | **Average**"))
    assert "91.77" in avg_slider and avg_slider.rstrip(" |").endswith("conv")
    assert "| ToyCar | 01 | 81.36 | 68.40 | 83.87 | 72.64 | 81.59 | 71.88 |  |" in lines
