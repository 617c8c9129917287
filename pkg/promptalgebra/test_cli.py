#!/usr/bin/env python3
"""
End-to-end tests driving main.main() in-process
"""

import sys
import os
import io
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout

# Add current directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import main
from core.outputs import read_tsv
from sample_data import SMALL, run_checks


def _write(directory, name, config):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config, f)
    return path


def _run(*argv):
    err = io.StringIO()
    with redirect_stdout(io.StringIO()), redirect_stderr(err):
        code = main.main(list(argv) + ["--quiet"])
    return code, err.getvalue()


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def _pipeline(tmp, out):
    """gen -> spectra -> train x2 -> compose -> eval; returns the eval result path"""
    manifest = os.path.join(out, "data", "manifest.json")
    steps = [
        ("gen", {**SMALL, "noise_sigma": 0.3}),
        ("spectra", {"manifest": manifest, "energy_fraction": 0.9}),
        ("train", {"manifest": manifest, "view": "object", "basis": os.path.join(out, "bases", "basis.palb"),
                   "train": {"epochs": 3, "use_projection": True, "seed": 1}}),
        ("train", {"manifest": manifest, "view": "attribute", "basis": os.path.join(out, "bases", "basis.palb"),
                   "train": {"epochs": 3, "use_projection": True, "seed": 2}}),
        ("compose", {"composition": {"prompt_paths": [os.path.join(out, "prompts", "object.palp"),
                                                      os.path.join(out, "prompts", "attribute.palp")]},
                     "basis": os.path.join(out, "bases", "basis.palb")}),
        ("eval", {"manifest": manifest, "prompt": os.path.join(out, "prompts", "composite.palp")}),
    ]
    for i, (command, config) in enumerate(steps):
        code, err = _run(command, "--config", _write(tmp, f"{i}_{command}.json", config), "--out", out)
        assert code == 0, f"{command} exited {code}: {err}"
    return os.path.join(out, "results", "eval.json")


def test_pipeline_is_deterministic():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        result = _pipeline(tmp, out)
        first = {name: _read(os.path.join(out, "results", name)) for name in os.listdir(os.path.join(out, "results"))}
        first_prompt = _read(os.path.join(out, "prompts", "composite.palp"))
        _pipeline(tmp, out)
        second = {name: _read(os.path.join(out, "results", name)) for name in os.listdir(os.path.join(out, "results"))}
        assert first == second
        assert first_prompt == _read(os.path.join(out, "prompts", "composite.palp"))

        document = json.loads(_read(result))
        assert len(document["config_hash"]) == 16
        assert {"object_acc", "attribute_acc", "auc", "best_hm"} <= set(document["metrics"])
        log = os.path.join(out, "logs", "object.jsonl")
        records = [json.loads(line) for line in _read(log).decode("utf-8").splitlines()]
        assert [r["epoch"] for r in records] == [1, 2, 3]


def test_zero_shot_eval_on_separable_data():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        assert _run("gen", "--config", _write(tmp, "gen.json", SMALL), "--out", out)[0] == 0
        manifest = os.path.join(out, "data", "manifest.json")
        code, err = _run("eval", "--config", _write(tmp, "eval.json", {"manifest": manifest}), "--out", out)
        assert code == 0, err
        metrics = json.loads(_read(os.path.join(out, "results", "eval.json")))["metrics"]
        assert metrics["object_acc"] == 1.0 and metrics["attribute_acc"] == 1.0

        table_path = os.path.join(out, "results", "eval.tsv")
        assert _read(table_path).startswith(b"# config_hash=")
        table = read_tsv(table_path)
        assert list(table.columns) == ["model", "metric", "value"]


def test_identity_composition_round_trip():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        assert _run("gen", "--config", _write(tmp, "gen.json", {**SMALL, "noise_sigma": 0.4}), "--out", out)[0] == 0
        manifest = os.path.join(out, "data", "manifest.json")
        train = {"manifest": manifest, "view": "object", "train": {"epochs": 2}}
        assert _run("train", "--config", _write(tmp, "train.json", train), "--out", out)[0] == 0
        trained = os.path.join(out, "prompts", "object.palp")
        compose = {"composition": {"prompt_paths": [trained], "weights": [1.0], "project": False}, "name": "same"}
        assert _run("compose", "--config", _write(tmp, "compose.json", compose), "--out", out)[0] == 0

        metrics = []
        for name, prompt in (("direct", trained), ("composed", os.path.join(out, "prompts", "same.palp"))):
            config = {"manifest": manifest, "prompt": prompt, "name": name}
            assert _run("eval", "--config", _write(tmp, f"{name}.json", config), "--out", out)[0] == 0
            metrics.append(json.loads(_read(os.path.join(out, "results", f"{name}.json")))["metrics"])
        assert metrics[0] == metrics[1]


def test_sweep_and_bench_outputs():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        assert _run("gen", "--config", _write(tmp, "gen.json", {**SMALL, "noise_sigma": 0.3}), "--out", out)[0] == 0
        manifest = os.path.join(out, "data", "manifest.json")
        for view in ("object", "attribute"):
            config = {"manifest": manifest, "view": view, "train": {"epochs": 2}}
            assert _run("train", "--config", _write(tmp, f"{view}.json", config), "--out", out)[0] == 0

        sweep = {
            "manifest": manifest,
            "prompt_a": os.path.join(out, "prompts", "object.palp"),
            "prompt_b": os.path.join(out, "prompts", "attribute.palp"),
            "grid": [0.0, 0.5, 1.0],
        }
        code, err = _run("sweep", "--config", _write(tmp, "sweep.json", sweep), "--out", out)
        assert code == 0, err
        table = read_tsv(os.path.join(out, "results", "sweep.tsv"))
        assert sorted(set(table["theta"])) == [0.0, 0.5, 1.0]
        assert os.path.exists(os.path.join(out, "results", "sweep.png"))

        bench = {"manifest": manifest, "train": {"epochs": 2}, "seeds": [0, 1]}
        code, err = _run("bench", "--config", _write(tmp, "bench.json", bench), "--out", out)
        assert code == 0, err
        summary = read_tsv(os.path.join(out, "results", "bench.tsv"))
        assert {"zero-shot", "base-object", "base-attribute", "algebra"} == set(summary["model"])
        assert set(summary["trials"]) == {2}


def test_seed_override_changes_training():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        assert _run("gen", "--config", _write(tmp, "gen.json", {**SMALL, "noise_sigma": 0.3}), "--out", out)[0] == 0
        manifest = os.path.join(out, "data", "manifest.json")
        config = _write(tmp, "train.json", {"manifest": manifest, "view": "object", "train": {"epochs": 1}})
        prompt = os.path.join(out, "prompts", "object.palp")
        assert _run("train", "--config", config, "--out", out, "--seed", "1")[0] == 0
        first = _read(prompt)
        assert _run("train", "--config", config, "--out", out, "--seed", "2")[0] == 0
        assert _read(prompt) != first


def test_exit_codes():
    with tempfile.TemporaryDirectory() as tmp:
        code, err = _run("gen", "--config", _write(tmp, "bad.json", {"d": 16, "colour": "blue"}), "--out", tmp)
        assert code == 2
        assert "code=2" in err and "key=colour" in err

        code, err = _run("train", "--config", _write(tmp, "nested.json", {
            "manifest": "x", "view": "object", "train": {"epochz": 3},
        }), "--out", tmp)
        assert code == 2 and "key=train.epochz" in err

        missing = os.path.join(tmp, "nowhere", "manifest.json")
        code, err = _run("eval", "--config", _write(tmp, "eval.json", {"manifest": missing}), "--out", tmp)
        assert code == 3
        assert any(line.startswith("error=StorageError code=3") for line in err.splitlines())

        code, _ = _run("eval", "--out", tmp)
        assert code == 2


if __name__ == "__main__":
    sys.exit(run_checks(dict(globals())))
