import json

import numpy as np
import pytest

from mcc.cli import build_parser, config_from_args, main
from mcc.dataset import KNOWN_SCHEMAS, make_synthetic, save_csv
from mcc.experiment import ConfigError, ExperimentConfig, compare, resolve_dataset
from mcc.training import TrainConfig

SMALL_MCC = ["--hidden", "4", "--iters", "2", "--batch", "16"]


@pytest.fixture
def csv_data(tmp_path):
    data = make_synthetic(30, [2, 2, 1], 2, costs=[1.0, 2.0, 0.5], seed=3)
    path = tmp_path / "toy.csv"
    save_csv(data, path)
    return path


def run(tmp_path, csv_data, name, *extra):
    out = tmp_path / name
    code = main(["run", "--data", str(csv_data), "--folds", "3", "--seed", "1", "--out", str(out), *extra])
    return code, out


def test_same_command_twice_is_byte_identical(tmp_path, csv_data):
    a = run(tmp_path, csv_data, "a", "--algo", "mcc", *SMALL_MCC)
    b = run(tmp_path, csv_data, "b", "--algo", "mcc", *SMALL_MCC)
    assert a[0] == b[0] == 0
    for name in ("folds.csv", "metrics.csv"):
        assert (a[1] / name).read_bytes() == (b[1] / name).read_bytes()
    assert (a[1] / "fold0" / "stage1.npz").read_bytes() == (b[1] / "fold0" / "stage1.npz").read_bytes()


def test_mcc_run_artifacts(tmp_path, csv_data):
    code, out = run(tmp_path, csv_data, "m", "--algo", "mcc", *SMALL_MCC)
    assert code == 0
    for name in ("config.json", "folds.csv", "metrics.md", "metrics.csv", "report.json"):
        assert (out / name).exists()
    fold = out / "fold2"
    for name in ("plan.json", "traces.csv", "stage0.npz", "stage1.npz", "train_log_stage0.csv"):
        assert (fold / name).exists()
    header = (fold / "train_log_stage1.csv").read_text().splitlines()[0]
    assert header == "epoch,mean_loss,mean_modalities,mean_confidence"


def test_resolved_config_reproduces_metrics(tmp_path, csv_data):
    code, out = run(tmp_path, csv_data, "first", "--algo", "mcc", *SMALL_MCC)
    cfg = json.loads((out / "config.json").read_text())
    cfg["out"] = str(tmp_path / "again")
    (tmp_path / "again.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "again.json")]) == 0
    assert (out / "folds.csv").read_bytes() == (tmp_path / "again" / "folds.csv").read_bytes()


@pytest.mark.parametrize("algo", ["br", "cc", "ecc"])
def test_baseline_cost_is_total(tmp_path, csv_data, algo):
    code, out = run(tmp_path, csv_data, algo, "--algo", algo)
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["cost_average"] == {"mean": 3.5, "std": 0.0}


def test_compare(tmp_path, csv_data, capsys):
    _, br = run(tmp_path, csv_data, "br", "--algo", "br")
    # the budget keeps MCC below the baselines' full cost
    _, mcc = run(tmp_path, csv_data, "mcc", "--algo", "mcc", "--cth", "2.0", *SMALL_MCC)
    single = compare([br])
    assert len(single.strip().splitlines()) == 3 and "**" not in single
    both = compare([mcc, br])
    rows = {line.split("|")[1].strip(): line for line in both.splitlines()[2:]}
    mcc_cost = json.loads((mcc / "report.json").read_text())["cost_average"]["mean"]
    assert mcc_cost < 3.5
    assert "**" in rows["MCC"].split("|")[-2]
    capsys.readouterr()
    assert main(["compare", str(mcc), str(br)]) == 0
    assert capsys.readouterr().out == both


def test_compare_lists_missing(tmp_path, csv_data):
    _, br = run(tmp_path, csv_data, "br", "--algo", "br")
    with pytest.raises(FileNotFoundError) as err:
        compare([br, tmp_path / "nope", tmp_path / "gone"])
    assert "nope" in str(err.value) and "gone" in str(err.value)
    assert main(["compare", str(tmp_path / "nope")]) == 2


def _args(argv):
    return config_from_args(build_parser().parse_args(["run", *argv]))


class TestConfig:
    def test_defaults(self):
        cfg = _args(["--data", "x.csv"])
        assert cfg.algo == "mcc" and cfg.folds == 10 and cfg.seed == 7
        assert cfg.train == TrainConfig()

    def test_flags_override_defaults(self):
        cfg = _args(["--data", "x.csv", "--hidden", "12", "--cth", "2.5", "--ath", "0.8",
                     "--lambda", "0.3", "--batch", "4", "--iters", "9"])
        t = cfg.train
        assert (t.hidden, t.cost_threshold, t.confidence_threshold, t.lam, t.batch_size, t.iterations) \
            == (12, 2.5, 0.8, 0.3, 4, 9)

    def test_config_file_overrides_flags(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"folds": 5, "train": {"hidden": 7}}))
        cfg = _args(["--data", "x.csv", "--folds", "3", "--hidden", "12", "--seed", "4",
                     "--config", str(path)])
        assert cfg.folds == 5 and cfg.train.hidden == 7
        assert cfg.seed == 4

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"data": "x.csv", "flavour": 1}))
        with pytest.raises(ConfigError):
            _args(["--config", str(path)])

    def test_round_trip(self):
        cfg = ExperimentConfig(data="x.csv", algo="ecc", train=TrainConfig(hidden=3))
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_herbs_schema_is_accepted(self, tmp_path):
        herbs = KNOWN_SCHEMAS["herbs"]
        rng = np.random.default_rng(0)
        n, D = 12, sum(herbs["dims"])
        X = rng.normal(size=(n, D))
        Y = rng.integers(0, 2, size=(n, herbs["labels"]))
        path = tmp_path / "herbs_like.csv"
        np.savetxt(path, np.c_[X, Y], delimiter=",", fmt="%.6g")
        schema = tmp_path / "herbs.json"
        schema.write_text(json.dumps({"dims": herbs["dims"], "labels": herbs["labels"]}))
        cfg = _args(["--data", str(path), "--schema", str(schema), "--algo", "br"])
        data, prov = resolve_dataset(cfg)
        assert data.schema.dims == (13, 653, 433, 768, 36)
        assert data.n_labels == 29
        assert len(prov["sha256"]) == 64


class TestExitCodes:
    def test_missing_data_flag(self, tmp_path):
        assert main(["run", "--out", str(tmp_path / "o")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["run", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 2

    def test_bad_value(self, tmp_path, csv_data):
        assert main(["run", "--data", str(csv_data), "--folds", "1", "--out", str(tmp_path / "o")]) == 2
        assert main(["run", "--data", str(csv_data), "--lambda", "-1", "--out", str(tmp_path / "o")]) == 2

    def test_unknown_algorithm_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["run", "--data", "x", "--algo", "svm"])
        assert err.value.code == 2

    def test_missing_named_dataset(self, tmp_path):
        assert main(["run", "--data", "emotions", "--data-dir", str(tmp_path), "--out", str(tmp_path / "o")]) == 2

    def test_training_abort_is_exit_one(self, tmp_path, csv_data, monkeypatch):
        from mcc.errors import TrainingAborted

        def boom(*a, **k):
            raise TrainingAborted("diverged", seed=1, iteration=0)

        monkeypatch.setattr("mcc.experiment.train_mcc", boom)
        assert main(["run", "--data", str(csv_data), "--folds", "2", "--out", str(tmp_path / "o")]) == 1


def test_named_dataset_is_reblocked(tmp_path):
    import arff

    known = KNOWN_SCHEMAS["emotions"]
    rng = np.random.default_rng(1)
    D, L = sum(known["dims"]), known["labels"]
    attrs = [(f"f{j}", "NUMERIC") for j in range(D)] + [(f"l{l}", ["0", "1"]) for l in range(L)]
    rows = [list(rng.normal(size=D)) + [str(v) for v in rng.integers(0, 2, size=L)]
            for _ in range(known["n"])]
    (tmp_path / "emotions.arff").write_text(arff.dumps({"relation": "e", "attributes": attrs, "data": rows}))
    cfg = ExperimentConfig(data="emotions", data_dir=str(tmp_path))
    data, prov = resolve_dataset(cfg)
    assert data.schema.dims == (32, 32, 8)
    assert data.X.shape == (593, 72)
    assert prov["path"].endswith("emotions.arff")
