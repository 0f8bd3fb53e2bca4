import json
import subprocess
import sys

import pytest

from sgde.cli import apply_overrides, load_dataset, main

from conftest import MIXED_SCHEMA, quick_config, write_mixed_csv


@pytest.fixture
def workdir(tmp_path):
    write_mixed_csv(tmp_path / "m.csv")
    (tmp_path / "schema.json").write_text(json.dumps(MIXED_SCHEMA))
    return tmp_path


@pytest.fixture
def server(tmp_path):
    proc = subprocess.Popen([sys.executable, "-m", "sgde.cli", "serve", "--listen", "127.0.0.1:0",
                             "--pool-dir", str(tmp_path / "pool")],
                            stdout=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    assert line.startswith("serving on ")
    yield line.split()[-1]
    proc.terminate()
    proc.wait(timeout=10)


def test_overrides():
    doc = apply_overrides({"dp": {"epochs": 2}}, ["dp.epochs=5", "dataset_name=abc", "seeds=[1,2]"])
    assert doc == {"dp": {"epochs": 5}, "dataset_name": "abc", "seeds": [1, 2]}


def test_client_pipeline(workdir, server, capsys):
    w = str(workdir)
    assert main(["ingest", "--csv", f"{w}/m.csv", "--schema", f"{w}/schema.json",
                 "--out", f"{w}/enc"]) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 400
    assert main(["partition", "--data", f"{w}/enc/train.npz", "--out", f"{w}/parts",
                 "--clients", "2", "--fraction", "0.5"]) == 0
    capsys.readouterr()
    for k in range(2):
        cid = f"site{k}"
        assert main(["train-generators", "--data", f"{w}/parts/client_0{k}.npz",
                     "--out", f"{w}/gen{k}", "--client-id", cid, "--schema", f"{w}/enc/schema.json",
                     "--epochs", "2", "--latent-dim", "2"]) == 0
        assert main(["push", "--server", server, "--client-id", cid, f"{w}/gen{k}"]) == 0
    capsys.readouterr()
    assert main(["pull", "--server", server, "--client-id", "site0", "--out", f"{w}/pulled"]) == 0
    assert json.loads(capsys.readouterr().out) == {"pulled": 4}
    assert main(["synthesize", f"{w}/pulled", "--n", "30", "--out", f"{w}/synth.npz"]) == 0
    synth = load_dataset(f"{w}/synth.npz")
    assert synth.class_counts().tolist() == [60, 60]
    assert main(["train", "--data", f"{w}/synth.npz", "--out", f"{w}/model.json",
                 "--epochs", "50"]) == 0
    assert main(["evaluate", "--model", f"{w}/model.json", "--data", f"{w}/enc/test.npz"]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert set(metrics) == {"accuracy", "f1", "auc"}


def test_pull_before_push_is_denied(workdir, server, capsys):
    code = main(["pull", "--server", server, "--client-id", "lurker", "--out", str(workdir / "p")])
    assert code != 0
    assert "error" in capsys.readouterr().err


def test_run_and_report(workdir, capsys):
    cfg = quick_config("m.csv", scenarios=["local"], schema="schema.json")
    (workdir / "cfg.json").write_text(json.dumps(cfg))
    out = workdir / "r.json"
    assert main(["run", "--config", str(workdir / "cfg.json"), "--out", str(out),
                 "--set", "classifier.epochs=20"]) == 0
    assert json.loads(out.read_text())["aggregate"]["local"]
    assert main(["report", str(out), "--format", "markdown"]) == 0
    assert "| toy |" in capsys.readouterr().out


def test_exit_codes(workdir):
    (workdir / "bad.json").write_text(json.dumps(quick_config("m.csv", n_clients=9)))
    assert main(["run", "--config", str(workdir / "bad.json")]) == 2
    (workdir / "empty.csv").write_text("x0,x1,colour,y\n")
    (workdir / "e.json").write_text(json.dumps(quick_config("empty.csv")))
    assert main(["run", "--config", str(workdir / "e.json")]) == 3
    main(["ingest", "--csv", str(workdir / "m.csv"), "--schema", str(workdir / "schema.json"),
          "--out", str(workdir / "enc")])
    gate = ["train-generators", "--data", str(workdir / "enc/train.npz"), "--out",
            str(workdir / "g"), "--client-id", "x", "--schema", str(workdir / "enc/schema.json"),
            "--epochs", "1", "--max-epsilon", "0.0001"]
    assert main(gate) == 4
