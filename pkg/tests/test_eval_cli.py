import numpy as np
import pytest

from unimos import eval_cli as E
from unimos.data import read_features
from unimos.errors import DimensionError


def run_cli(argv, capsys):
    code = E.cli_main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------------------
# evaluate / Metrics
# ---------------------------------------------------------------------------

def test_evaluate_perfect_predictions():
    m = E.evaluate([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert m.overall == 1.0
    assert m.per_class == [1.0, 1.0, 1.0]
    np.testing.assert_array_equal(np.diag(m.confusion), [1, 2, 1])
    assert m.confusion.sum() == 4


def test_evaluate_constant_predictor_balanced():
    m = E.evaluate([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert m.overall == 0.5
    assert m.per_class == [1.0, 0.0]


def test_evaluate_hand_confusion():
    pred = [0, 1, 1, 2, 2, 0]
    truth = [0, 1, 2, 2, 0, 0]
    m = E.evaluate(pred, truth, 3)
    expected = np.array([[2, 0, 1], [0, 1, 0], [0, 1, 1]])
    np.testing.assert_array_equal(m.confusion, expected)
    assert m.overall == pytest.approx(4 / 6)
    assert m.per_class[0] == pytest.approx(2 / 3)
    assert m.per_class[1] == 1.0
    assert m.per_class[2] == pytest.approx(1 / 2)
    # row sums equal class sample counts; overall equals trace / N
    np.testing.assert_array_equal(m.confusion.sum(axis=1), [3, 1, 2])
    assert m.overall == np.trace(m.confusion) / 6


def test_evaluate_absent_class_reported_absent():
    m = E.evaluate([0, 1], [0, 0], 3)
    assert m.per_class[2] is None


def test_evaluate_length_mismatch():
    with pytest.raises(DimensionError):
        E.evaluate([0, 1], [0], 2)
    with pytest.raises(DimensionError):
        E.evaluate([0, 5], [0, 1], 2)


def test_metrics_text_roundtrip():
    m = E.evaluate([0, 1, 1, 2, 2, 0], [0, 1, 2, 2, 0, 0], 3)
    m.lac_accuracy = 0.125
    m.ensemble_accuracy = 2 / 3
    back = E.metrics_from_text(E.metrics_to_text(m))
    assert back == m


# ---------------------------------------------------------------------------
# CLI end to end
# ---------------------------------------------------------------------------

@pytest.fixture
def synth_prefix(tmp_path, capsys):
    prefix = str(tmp_path / "bench")
    code = E.cli_main([
        "gen-synth", "--classes", "4", "--dim", "16", "--per-domain", "48",
        "--noise", "0.1", "--seed", "3", "--out", prefix,
    ])
    capsys.readouterr()
    assert code == 0
    return prefix


def test_gen_synth_is_reproducible(tmp_path, capsys):
    args = ["gen-synth", "--classes", "3", "--dim", "8", "--per-domain", "12",
            "--seed", "9"]
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert E.cli_main(args + ["--out", a]) == 0
    assert E.cli_main(args + ["--out", b]) == 0
    capsys.readouterr()
    for stem in ("source.umfs", "target.umfs", "text.umfs", "truth.txt"):
        assert (tmp_path / f"a.{stem}").read_bytes() == (tmp_path / f"b.{stem}").read_bytes()


def test_zeroshot_noiseless_is_perfect(tmp_path, capsys):
    prefix = str(tmp_path / "clean")
    assert E.cli_main([
        "gen-synth", "--classes", "3", "--dim", "8", "--per-domain", "12",
        "--noise", "0", "--rotation", "0", "--translation", "0", "--gap", "0",
        "--out", prefix,
    ]) == 0
    pred = str(tmp_path / "pred.txt")
    assert E.cli_main([
        "zeroshot", "--features", f"{prefix}.target.umfs",
        "--text", f"{prefix}.text.umfs", "--out", pred,
    ]) == 0
    code, out, _ = run_cli(
        ["eval", "--pred", pred, "--truth", f"{prefix}.truth.txt", "--classes", "3"],
        capsys,
    )
    assert code == 0
    metrics = E.metrics_from_text(out)
    assert metrics.overall == 1.0


def test_full_pipeline_train_infer_eval(synth_prefix, tmp_path, capsys):
    ckpt = str(tmp_path / "model.ckpt")
    report = str(tmp_path / "report.txt")
    code = E.cli_main([
        "train", "--source", f"{synth_prefix}.source.umfs",
        "--target", f"{synth_prefix}.target.umfs",
        "--text", f"{synth_prefix}.text.umfs",
        "--out", ckpt, "--report", report,
        "--epochs", "2", "--batch", "8", "--bottleneck", "16",
        "--temperature", "0.5", "--eval-labels", f"{synth_prefix}.truth.txt",
    ])
    capsys.readouterr()
    assert code == 0

    from unimos.trainer import TrainReport

    with open(report, encoding="utf-8") as fh:
        rep = TrainReport.from_text(fh.read())
    assert len(rep.epochs) == 2
    assert rep.epochs[0].target_accuracy is not None

    pred = str(tmp_path / "pred.txt")
    assert E.cli_main([
        "infer", "--checkpoint", ckpt,
        "--features", f"{synth_prefix}.target.umfs", "--out", pred,
    ]) == 0
    code, out, _ = run_cli(
        ["eval", "--pred", pred, "--truth", f"{synth_prefix}.truth.txt",
         "--classes", "4"],
        capsys,
    )
    assert code == 0
    metrics = E.metrics_from_text(out)
    assert 0.0 <= metrics.overall <= 1.0


def test_cli_matches_library_calls(synth_prefix, tmp_path, capsys):
    """The CLI is a thin shell: zeroshot output equals the library result."""
    from unimos import model as M

    pred_path = str(tmp_path / "zs.txt")
    assert E.cli_main([
        "zeroshot", "--features", f"{synth_prefix}.target.umfs",
        "--text", f"{synth_prefix}.text.umfs", "--out", pred_path,
    ]) == 0
    capsys.readouterr()
    feats = read_features(f"{synth_prefix}.target.umfs")
    text = read_features(f"{synth_prefix}.text.umfs")
    expected = M.zero_shot_features(feats.features.data, text.features)
    got = np.array([int(x) for x in open(pred_path).read().split()])
    np.testing.assert_array_equal(got, expected)


def test_eval_accepts_labeled_umfs_truth(synth_prefix, tmp_path, capsys):
    pred = str(tmp_path / "p.txt")
    assert E.cli_main([
        "zeroshot", "--features", f"{synth_prefix}.source.umfs",
        "--text", f"{synth_prefix}.text.umfs", "--out", pred,
    ]) == 0
    code, out, _ = run_cli(
        ["eval", "--pred", pred, "--truth", f"{synth_prefix}.source.umfs"],
        capsys,
    )
    assert code == 0
    assert "overall=" in out


# ---------------------------------------------------------------------------
# exit codes
# ---------------------------------------------------------------------------

def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run_cli(["gen-synth", "--bogus", "1", "--out", "x"], capsys)
    assert code == 1
    assert "usage" in err.lower()


def test_unknown_command_is_usage_error(capsys):
    code, _, _ = run_cli(["frobnicate"], capsys)
    assert code == 1


def test_missing_file_is_data_error(tmp_path, capsys):
    code, _, err = run_cli(
        ["zeroshot", "--features", str(tmp_path / "nope.umfs"),
         "--text", str(tmp_path / "nope2.umfs"), "--out", str(tmp_path / "o")],
        capsys,
    )
    assert code == 2


def test_corrupt_file_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.umfs"
    bad.write_bytes(b"JUNKJUNKJUNK")
    code, _, _ = run_cli(
        ["zeroshot", "--features", str(bad), "--text", str(bad),
         "--out", str(tmp_path / "o")],
        capsys,
    )
    assert code == 2


def test_divergence_exit_code(synth_prefix, tmp_path, capsys):
    code, _, err = run_cli([
        "train", "--source", f"{synth_prefix}.source.umfs",
        "--target", f"{synth_prefix}.target.umfs",
        "--text", f"{synth_prefix}.text.umfs",
        "--out", str(tmp_path / "c.ckpt"),
        "--epochs", "2", "--batch", "8", "--lr", "1e12",
    ], capsys)
    assert code == 3
    assert "divergence" in err.lower()


def test_eval_requires_classes_for_txt_truth(tmp_path, capsys):
    pred = tmp_path / "p.txt"
    pred.write_text("0\n1\n")
    truth = tmp_path / "t.txt"
    truth.write_text("0\n1\n")
    code, _, _ = run_cli(["eval", "--pred", str(pred), "--truth", str(truth)], capsys)
    assert code == 1


def test_thread_cap_env_validation(monkeypatch, capsys):
    monkeypatch.setenv("UNIMOS_THREADS", "banana")
    code, _, err = run_cli(["gen-synth", "--out", "/tmp/x"], capsys)
    assert code == 1
    monkeypatch.setenv("UNIMOS_THREADS", "-2")
    code, _, _ = run_cli(["gen-synth", "--out", "/tmp/x"], capsys)
    assert code == 1
