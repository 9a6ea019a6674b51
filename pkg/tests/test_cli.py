import json

import pytest

from ccvgae import cli, graphio


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "data"
    assert cli.main(["synth", "--out", str(d), "--noise-var", "10", "--seed", "2"]) == 0
    assert cli.main(["split", "--data", str(d), "--seed", "2"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", "--data", str(data), "--config", "epochs=40", "--out", str(out)]) == 0
    return out


def load(path):
    return json.loads(path.read_text())


def test_synth_writes_loadable_dataset(data):
    g = graphio.load_graph(data)
    assert g.n == 100 and g.d == 16 and len(g.edges) > 0
    assert load(data / "scm.json")["num_edges"] == len(g.edges)


def test_synth_high_noise_succeeds(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "d"), "--noise-var", "300"]) == 0


def test_split_floor_counts_and_empty_val(data, tmp_path):
    m = len(graphio.load_graph(data).edges)
    s = load(data / "split.json")
    assert len(s["val_pos"]) == int(0.05 * m) and len(s["test_pos"]) == int(0.10 * m)
    out = tmp_path / "s.json"
    assert cli.main(["split", "--data", str(data), "--val-frac", "0", "--out", str(out)]) == 0
    assert load(out)["val_pos"] == []


def test_train_outputs_and_determinism(data, trained, tmp_path):
    rep = load(trained / "report.json")
    assert 0 <= rep["auc"] <= 1 and rep["epochs"] == 40 and rep["wall_time_s"] is None
    assert cli.main(["train", "--data", str(data), "--config", "epochs=40", "--out", str(tmp_path)]) == 0
    for name in ("report.json", "checkpoint.json"):
        assert (tmp_path / name).read_bytes() == (trained / name).read_bytes()


def test_train_config_override_and_file(data, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"epochs": 3}))
    assert cli.main(["train", "--data", str(data), "--config", str(cfg), "--config", "alpha=0",
                     "--out", str(tmp_path / "o")]) == 0
    c = load(tmp_path / "o" / "report.json")["config"]
    assert c["alpha"] == 0 and c["epochs"] == 3


def test_unknown_config_key_lists_valid_keys(data, tmp_path, capsys):
    code = cli.main(["train", "--data", str(data), "--config", "alhpa=0", "--out", str(tmp_path)])
    assert code == cli.EXIT_USAGE
    assert "valid keys" in capsys.readouterr().err


def test_eval_matches_train_report(data, trained, tmp_path):
    out = tmp_path / "eval.json"
    assert cli.main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(data),
                     "--out", str(out)]) == 0
    rep, ev = load(trained / "report.json"), load(out)
    assert (ev["auc"], ev["ap"]) == (rep["auc"], rep["ap"])


def test_svd_spectrum_normalized(data, trained, tmp_path):
    out = tmp_path / "svd.json"
    assert cli.main(["svd", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(data),
                     "--out", str(out)]) == 0
    s = load(out)["spectrum"]
    assert s[0] == 1.0 and all(a >= b for a, b in zip(s, s[1:]))


def test_fewshot_table_shape(tmp_path):
    out = tmp_path / "fs.json"
    assert cli.main(["fewshot", "--family-count", "5", "--n", "30", "--k", "4", "--meta-epochs", "1",
                     "--meta-loops", "2", "--out", str(out)]) == 0
    cells = load(out)["cells"]
    by_method = {}
    for c in cells:
        by_method.setdefault(c["method"], set()).add((c["loops"], c["fraction"]))
    assert set(by_method) == {"cc", "pretrain", "rand"}
    assert all(len(v) == 8 for v in by_method.values())


def test_theory_passes(tmp_path):
    out = tmp_path / "th.json"
    assert cli.main(["theory", "--samples", "20000", "--out", str(out)]) == 0
    rep = load(out)
    assert rep["passed"] and all(c["passed"] for c in rep["checks"])


def test_theory_failure_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "run_theory_suite", lambda seed, samples: [{"name": "x", "passed": False}])
    assert cli.main(["theory", "--out", str(tmp_path / "th.json")]) == cli.EXIT_CHECK


def test_usage_errors(tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["nosuch"]) == cli.EXIT_USAGE
    assert cli.main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert cli.main(["--help"]) == cli.EXIT_OK


def test_divergence_exit_code(data, tmp_path):
    code = cli.main(["train", "--data", str(data), "--config", "lr=1e6", "--config", "epochs=50",
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_NUMERIC
