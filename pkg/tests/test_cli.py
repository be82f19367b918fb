import os
import subprocess
import sys

import numpy as np
import pytest

from liger import cli
from liger.data import EmbeddingDataset, EngineConfig, load_embeddings, load_votes, store_embeddings, store_votes, VoteMatrix
from liger.extend import extend_all
from liger.label_model import fit, load_model, predict


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, dict(line.split("=", 1) for line in out.out.splitlines() if "=" in line), out.err


@pytest.fixture
def bundle(tmp_path, capsys):
    out = tmp_path / "b"
    assert cli.main(["synth", "--kind", "checkerboard", "--seed", "1", "--n", "800", "--out", str(out)]) == 0
    capsys.readouterr()
    return out


def test_extend_zero_radii_is_byte_identical(bundle, tmp_path, capsys):
    code, kv, _ = run(["extend", "--embeddings", f"{bundle}/embeddings.lgem", "--votes", f"{bundle}/votes.csv",
                       "--radii", "0,0,0", "--out", str(tmp_path / "x.csv")], capsys)
    assert code == 0
    assert (tmp_path / "x.csv").read_bytes() == (bundle / "votes.csv").read_bytes()
    assert kv["coverage_delta"] == "0.0"
    assert (tmp_path / "x.provenance.csv").exists()


def test_fit_then_predict_matches_in_process(bundle, tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"seed": 3, "s": 2, "radii": [0.04, 0, 0]}')
    code, kv, _ = run(["fit", "--embeddings", f"{bundle}/embeddings.lgem", "--votes", f"{bundle}/votes.csv",
                       "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "m.json")], capsys)
    assert code == 0
    assert set(kv) >= {"s", "part_sizes", "mean_accuracy"}
    assert kv["s"] == "2"
    code, _, _ = run(["predict", "--model", str(tmp_path / "m.json"), "--embeddings", f"{bundle}/embeddings.lgem",
                      "--votes", f"{bundle}/votes.csv", "--out", str(tmp_path / "p.csv")], capsys)
    assert code == 0

    emb = load_embeddings(bundle / "embeddings.lgem")
    votes = load_votes(bundle / "votes.csv")
    cfg = EngineConfig(seed=3, s=2, radii=(0.04, 0.0, 0.0))
    model = fit(emb, extend_all(emb, votes, cfg.radii), cfg, support_votes=votes)
    pred = predict(model, emb, votes)
    assert (tmp_path / "p.csv").read_text() == pred.to_csv()
    stored = load_model(tmp_path / "m.json")
    assert np.array_equal(stored.accuracies, model.accuracies)


def test_evaluate(bundle, tmp_path, capsys):
    (tmp_path / "c.json").write_text('{"seed": 0}')
    run(["fit", "--embeddings", f"{bundle}/embeddings.lgem", "--votes", f"{bundle}/votes.csv",
         "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "m.json")], capsys)
    run(["predict", "--model", str(tmp_path / "m.json"), "--embeddings", f"{bundle}/embeddings.lgem",
         "--votes", f"{bundle}/votes.csv", "--out", str(tmp_path / "p.csv")], capsys)
    code, kv, _ = run(["evaluate", "--predictions", str(tmp_path / "p.csv"), "--labels", f"{bundle}/labels.csv"],
                      capsys)
    assert code == 0
    assert 0.5 < float(kv["accuracy"]) <= 1.0 and kv["n_evaluated"] == "800"


def test_bench_bias_variance_rows(tmp_path, capsys):
    code, kv, _ = run(["bench", "--kind", "bias-variance", "--s", "1,2,4,8", "--seeds", "10", "--seed", "0",
                       "--out", str(tmp_path / "bv.csv")], capsys)
    assert code == 0
    lines = (tmp_path / "bv.csv").read_text().splitlines()
    assert lines[0] == "s,mean,ci_lo,ci_hi"
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2", "4", "8"]
    assert kv["best_s"] == "2"


def test_sim_thresholds(tmp_path, capsys):
    emb = EmbeddingDataset(np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]], dtype=np.float32), "cosine")
    store_embeddings(emb, tmp_path / "e.lgem")
    store_votes(VoteMatrix(np.array([[1, 1, 1], [0, 1, 1], [0, 1, 1]])), tmp_path / "v.csv")
    code, _, _ = run(["extend", "--embeddings", str(tmp_path / "e.lgem"), "--votes", str(tmp_path / "v.csv"),
                      "--sim-thresholds", "0.99,1,1", "--out", str(tmp_path / "x.csv")], capsys)
    assert code == 0
    assert load_votes(tmp_path / "x.csv").votes[:, 0].tolist() == [1, 1, 0]


def test_sim_thresholds_need_cosine(bundle, tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["extend", "--embeddings", f"{bundle}/embeddings.lgem", "--votes", f"{bundle}/votes.csv",
                  "--sim-thresholds", "0.9", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2


def test_usage_errors_exit_2(capsys):
    for argv in (["fit"], ["extend", "--bogus", "1"], [], ["bench", "--kind", "bias-variance", "--out", "x"]):
        with pytest.raises(SystemExit) as exc:
            cli.main(argv)
        assert exc.value.code == 2
    capsys.readouterr()


def test_validation_errors_exit_1(bundle, tmp_path, capsys):
    bad = tmp_path / "v.csv"
    lines = (bundle / "votes.csv").read_text().splitlines()
    lines[4] = "3,1,2,0"
    bad.write_text("\n".join(lines) + "\n")
    code, _, err = run(["extend", "--embeddings", f"{bundle}/embeddings.lgem", "--votes", str(bad),
                        "--radii", "0", "--out", str(tmp_path / "x.csv")], capsys)
    assert code == 1 and "lf_1" in err
    (tmp_path / "c.json").write_text('{"s": 0}')
    code, _, err = run(["fit", "--embeddings", f"{bundle}/embeddings.lgem", "--votes", f"{bundle}/votes.csv",
                        "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "m.json")], capsys)
    assert code == 1 and "s:" in err
    code, _, err = run(["partition", "--embeddings", str(tmp_path / "missing.lgem"), "--s", "2", "--seed", "0",
                        "--out", str(tmp_path / "p.json")], capsys)
    assert code == 1 and "missing.lgem" in err


def test_partition_and_smoothness(bundle, tmp_path, capsys):
    code, kv, _ = run(["partition", "--embeddings", f"{bundle}/embeddings.lgem", "--s", "3", "--seed", "5",
                       "--out", str(tmp_path / "p.json")], capsys)
    assert code == 0 and sum(map(int, kv["part_sizes"].split(","))) == 800
    code, _, _ = run(["smoothness", "--embeddings", f"{bundle}/embeddings.lgem", "--labels", f"{bundle}/labels.csv",
                      "--k-grid", "1,5,10", "--out", str(tmp_path / "s.csv")], capsys)
    assert code == 0
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[1].endswith(",,")


def test_entry_point_and_threads(tmp_path):
    env = dict(os.environ, LIGER_THREADS="1")
    proc = subprocess.run(
        [sys.executable, "-m", "liger", "synth", "--kind", "model", "--seed", "2", "--n", "50",
         "--out", str(tmp_path / "m")],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0] == "n=50"
    assert cli.build_parser().parse_args(["evaluate", "--predictions", "p", "--labels", "l"]).threads in (None, 1)
