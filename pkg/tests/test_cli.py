import csv
import json
import subprocess
import sys

import pytest
import yaml

from owcl.cli import load_config, main, report, run_grid, validate_config
from owcl.errors import ConfigError

SMALL = {
    "dataset": {"num_classes": 16, "train_per_class": 6, "test_per_class": 4, "dims": [6, 4, 4]},
    "settings": [8],
    "seeds": [0, 1],
    "methods": [{"trainer": "morst", "strategy": "moas_adaptive", "label": "MAND"}, "er+baseline_maxlogit"],
    "train": {"epochs": 2, "batch_size": 16, "decay_epochs": [1], "buffer_capacity": 32,
              "arch": {"hidden": 8, "embed": 4, "fusion": 8}},
}


def write_config(tmp_path, raw, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_empty_file_gives_complete_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg.dataset.num_classes == 16
    assert cfg.settings == (8, 4, 2)
    assert cfg.seeds == (0, 1, 2, 3, 4)
    assert cfg.train.lam == 0.3 and cfg.train.beta == 0.08 and cfg.train.buffer_capacity == 320
    assert len(cfg.methods) == 6


def test_non_dividing_increment_names_both_values():
    with pytest.raises(ConfigError) as err:
        validate_config({"settings": [5]})
    assert "5" in str(err.value) and "16" in str(err.value)


def test_negative_lambda_is_a_range_error():
    with pytest.raises(ConfigError, match="train.lam"):
        validate_config({"train": {"lam": -1}})


def test_every_problem_is_reported():
    with pytest.raises(ConfigError) as err:
        validate_config({"settings": [5], "seeds": [1, 1], "bogus": 1, "methods": ["er+nope"]})
    assert len(err.value.problems) == 4


def test_seed_override():
    assert validate_config({}, {"seed": 7}).seeds == (7,)


def test_dataset_path_is_loaded_and_hashed(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--seed", "2"]) == 0
    cfg = validate_config({"dataset": {"path": str(tmp_path / "dataset.owcl")}})
    assert cfg.dataset_path and len(cfg.dataset_digest) == 64
    with pytest.raises(ConfigError, match="dataset.path"):
        validate_config({"dataset": {"path": str(tmp_path / "missing.owcl")}})


def test_config_error_exit_code(tmp_path, capsys):
    p = write_config(tmp_path, {"settings": [5]})
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "settings[0]" in capsys.readouterr().err


@pytest.fixture(scope="module")
def grid_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    cfg = validate_config(SMALL, {"out": str(out)})
    assert run_grid(cfg) == []
    return out


def test_grid_rows(grid_out):
    rows = [r for r in read_csv(grid_out / "metrics.csv") if r["task"] == "all"]
    seed_rows = [r for r in rows if r["seed"] != "mean"]
    agg = [r for r in rows if r["seed"] == "mean"]
    assert len(seed_rows) == 4 and len(agg) == 2
    assert {r["label"] for r in agg} == {"MAND", "er+baseline_maxlogit"}


def test_grid_artifacts(grid_out):
    for name in ("taskwise.csv", "significance.csv", "losses.csv", "config.json", "manifest.json"):
        assert (grid_out / name).exists()
    assert (grid_out / "plots" / "auc_inc8.svg").exists()
    assert any(p.name.startswith("hist_") for p in (grid_out / "plots").iterdir())
    manifest = json.loads((grid_out / "manifest.json").read_text())
    assert len(manifest["cells"]) == 4 and all(c["status"] == "ok" for c in manifest["cells"])
    sig = read_csv(grid_out / "significance.csv")
    assert {r["metric"] for r in sig} == {"auc", "fpr95", "acc"}


def test_rerun_gives_identical_bytes(grid_out, tmp_path):
    cfg = validate_config(SMALL, {"out": str(tmp_path)})
    run_grid(cfg)
    for name in ("metrics.csv", "taskwise.csv", "significance.csv", "losses.csv", "config.json"):
        assert (tmp_path / name).read_bytes() == (grid_out / name).read_bytes(), name


def test_report_regenerates_identical_output(grid_out):
    before = {n: (grid_out / n).read_bytes() for n in ("metrics.csv", "significance.csv")}
    plot = (grid_out / "plots" / "acc_inc8.svg").read_bytes()
    report(str(grid_out))
    assert all((grid_out / n).read_bytes() == b for n, b in before.items())
    assert (grid_out / "plots" / "acc_inc8.svg").read_bytes() == plot


def test_parallel_grid_matches_sequential(grid_out, tmp_path):
    cfg = validate_config(SMALL, {"out": str(tmp_path)})
    run_grid(cfg, jobs=2)
    assert (tmp_path / "metrics.csv").read_bytes() == (grid_out / "metrics.csv").read_bytes()


def test_generate_verb_writes_dataset_and_stream(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--increment", "4"]) == 0
    assert (tmp_path / "dataset.owcl").read_text().startswith("OWCLDATA v1")
    assert (tmp_path / "stream_inc4.owcl").exists()


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "owcl", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for verb in ("generate", "run", "ablate", "strategies", "report"):
        assert verb in out.stdout
