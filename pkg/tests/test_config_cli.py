import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from timessd import cli, data
from timessd.config import RunConfig, load_config, parse_pairs
from timessd.errors import ConfigError
from timessd.model import TimeAwareSSDRec
from timessd.trainer import evaluate, train

HERE = Path(__file__).parent / "data"

SMALL_RUN = ["max_len=8", "d_model=8", "d_state=4", "heads=2", "n_layers=1", "chunk=4",
             "epochs=2", "patience=2", "batch=32", "dropout=0.0"]


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# -- configuration ------------------------------------------------------------

def test_defaults_and_dump_roundtrip(tmp_path):
    cfg = RunConfig()
    p = tmp_path / "run.conf"
    p.write_text(cfg.dumps())
    assert load_config(p) == cfg


def test_overrides_win_over_file(tmp_path):
    p = tmp_path / "run.conf"
    p.write_text("lr = 0.5  # comment\n\nbatch = 64\nmask_seen = yes\n")
    cfg = load_config(p, ["lr=0.001"])
    assert cfg.lr == 0.001 and cfg.batch == 64 and cfg.mask_seen is True


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_pairs(["learning_rate = 0.1"])


def test_bad_values_rejected():
    with pytest.raises(ConfigError):
        parse_pairs(["batch = many"])
    with pytest.raises(ConfigError):
        load_config(None, ["ablation=no_attention"])
    with pytest.raises(ConfigError):
        load_config(None, ["lr=-1"])
    with pytest.raises(ConfigError):
        parse_pairs(["just words"])


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "absent.conf")


def test_shipped_presets_load():
    root = Path(__file__).parent.parent / "configs"
    for p in sorted(root.glob("*.conf")):
        load_config(p)
    assert load_config(root / "ml1m.conf").batch == 2048


# -- CLI ----------------------------------------------------------------------

def test_print_config(capsys):
    code, out, _ = run(["train", "--print-config", "--set", "d_model=32"], capsys)
    assert code == 0
    assert "d_model = 32\n" in out and "lr = 0.01\n" in out


def test_unknown_key_exit_code(capsys, caplog):
    code, out, _ = run(["train", "--print-config", "--set", "bogus=1"], capsys)
    assert code == 2 and out == "" and "bogus" in caplog.text


def test_prepare_missing_file(tmp_path):
    # separate process so the real stderr stream and exit status are observed
    res = subprocess.run([sys.executable, "-m", "timessd", "prepare-data", "--input", str(tmp_path / "nope.dat"),
                          "--output", str(tmp_path / "o")], capture_output=True, text=True, check=False)
    assert res.returncode == 2 and res.stdout == ""
    assert "nope.dat" in res.stderr and "Traceback" not in res.stderr


def test_prepare_toy_matches_golden(tmp_path, capsys):
    code, out, _ = run(["prepare-data", "--input", str(HERE / "toy_events.csv"), "--format", "csv",
                        "--output", str(tmp_path)], capsys)
    assert code == 0
    for f in ("id_map.tsv", "sequences.tsv", "stats.txt"):
        assert (tmp_path / f).read_bytes() == (HERE / "toy_golden" / f).read_bytes()
    assert out == (HERE / "toy_golden" / "stats.txt").read_text()


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert cli.main(["prepare-data", "--synthetic", "0", "--output", str(root / "data")]) == 0
    argv = ["train", "--set", f"data_dir={root / 'data'}", "--set", f"out_dir={root / 'out'}"]
    for kv in SMALL_RUN:
        argv += ["--set", kv]
    assert cli.main(argv) == 0
    return root


def test_train_writes_artifacts(toy_run):
    out = toy_run / "out"
    for f in ("config.txt", "best.npz", "history.csv", "metrics.csv"):
        assert (out / f).is_file(), f
    assert load_config(out / "config.txt").d_model == 8
    assert (out / "metrics.csv").read_text().startswith("metric,K,value\n")


def test_evaluate_matches_library(toy_run, capsys):
    code, out, _ = run(["evaluate", "--checkpoint", str(toy_run / "out" / "best.npz"),
                        "--data", str(toy_run / "data"), "--ks", "10,20"], capsys)
    assert code == 0
    m = TimeAwareSSDRec.load(toy_run / "out" / "best.npz")
    ds = data.SequenceDataset.load(toy_run / "data")
    assert out == evaluate(m, ds, "test", ks=(10, 20)).csv()


def test_evaluate_bad_checkpoint(tmp_path, capsys, caplog):
    code, out, _ = run(["evaluate", "--checkpoint", str(tmp_path / "x.npz"), "--data", str(tmp_path)], capsys)
    assert code == 2 and out == "" and "checkpoint not found" in caplog.text


def test_no_time_ablation_equals_library_build(toy_run, tmp_path, capsys):
    argv = ["train", "--set", f"data_dir={toy_run / 'data'}", "--set", f"out_dir={tmp_path}",
            "--set", "ablation=no_time"]
    for kv in SMALL_RUN:
        argv += ["--set", kv]
    code, out, _ = run(argv, capsys)
    assert code == 0
    cfg = load_config(None, SMALL_RUN + ["ablation=no_time"])
    ds = data.SequenceDataset.load(toy_run / "data")
    m = TimeAwareSSDRec(cfg.model_config(ds.n_items), seed=cfg.seed)
    assert m.cfg.no_time
    train(m, ds, cfg.train_config())
    cli_model = TimeAwareSSDRec.load(tmp_path / "best.npz")
    for k, p in m.params.items():
        np.testing.assert_array_equal(cli_model.params[k].data, p.data)
    assert out == evaluate(m, ds, "test").csv()


def test_bench_small(capsys):
    code, out, _ = run(["bench", "--T", "32,64", "--dims", "4", "--repeats", "1", "--warmup", "0",
                        "--chunk", "16"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "kernel,T,dim,median_seconds"
    assert sum(1 for ln in lines if ln.startswith(("naive,", "chunked,", "ssd,", "tissd,"))) >= 8
    assert any(ln.startswith("overhead,T=64,dim=4,") for ln in lines)


def test_verify_quick_and_negative_control(capsys):
    code, out, _ = run(["verify", "--quick"], capsys)
    assert code == 0 and "all checks passed" in out
    code, out, _ = run(["verify", "--quick", "--corrupt-rule"], capsys)
    assert code == 1 and "FAIL" in out and "model-gradients" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "timessd", "train", "--print-config"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("data_dir = ")
