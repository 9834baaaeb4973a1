import json
import subprocess
import sys

import numpy as np
import pytest

from contractsos import cli
from contractsos import informativity as inf
from contractsos.polyalg import monomial_basis


def write(tmp_path, cfg, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def tiny_config():
    return {
        "basis": [{"dim": 1, "terms": [{"exp": [1], "coef": 1.0}]}],
        "dataset": {"samples": [{"x": [1.0], "y": [2.0]}], "noise": {"type": "matrix", "matrix": [[1, 0], [0, -1]]}},
        "K": {"center": [2.0], "radius": 1.0},
    }


def fast_uav_config(**over):
    cfg = json.loads(json.dumps(cli.UAV_CONFIG))
    cfg["sim"].update({"horizon": 0.5, "dt": 1e-2, "realizations": 3})
    cfg.update(over)
    return cfg


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestIdentify:
    def test_tiny_example(self, tmp_path):
        out = tmp_path / "out"
        assert run("identify", "--config", write(tmp_path, tiny_config()), "--out", out) == 0
        assert json.loads((out / "N.json").read_text()) == {"matrix": [[-3.0, 2.0], [2.0, -1.0]], "split": 1}
        assert json.loads((out / "theta_lse.json").read_text())["theta"] == [[2.0]]

    def test_zero_noise_recovery(self, tmp_path):
        rng = np.random.default_rng(0)
        b = monomial_basis(2, 2)
        theta = rng.normal(size=(6, 2))
        samples, _ = inf.generate_dataset(theta, b, rng.uniform(-1, 1, (20, 2)), 0.0, seed=1)
        cfg = {"basis": {"dim": 2, "degree": 2}, "K": {"center": [0.0, 0.0], "radius": 1.0},
               "dataset": inf.dataset_to_json(samples, {"dim": 2, "degree": 2}, 0.0)}
        out = tmp_path / "out"
        assert run("identify", "--config", write(tmp_path, cfg), "--out", out) == 0
        got = np.array(json.loads((out / "theta_lse.json").read_text())["theta"])
        assert np.max(np.abs(got - theta)) < 1e-8

    def test_rank_deficient_warns(self, tmp_path, capsys):
        cfg = {"basis": {"dim": 1, "degree": 2}, "K": {"center": [0.0], "radius": 1.0},
               "dataset": {"samples": [{"x": [0.5], "y": [1.0]}, {"x": [0.5], "y": [1.0]}, {"x": [-0.5], "y": [0.0]}],
                           "noise": {"type": "energy", "epsilon": 0.1}}}
        out = tmp_path / "out"
        assert run("identify", "--config", write(tmp_path, cfg), "--out", out) == 0
        diag = json.loads((out / "identify.json").read_text())
        assert diag["rank_deficient"] and diag["warnings"]
        assert "warning" in capsys.readouterr().err

    def test_dataset_path(self, tmp_path):
        cfg = tiny_config()
        (tmp_path / "data.json").write_text(json.dumps(cfg.pop("dataset")))
        cfg["dataset_path"] = "data.json"
        assert run("identify", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == 0


class TestExitCodes:
    @pytest.mark.parametrize("mutate", [
        lambda c: c.pop("K"),
        lambda c: c.update(K={"center": [0.0], "radius": -1.0}),
        lambda c: c.update(P=[[-1.0]]),
        lambda c: c["dataset"].update(noise={"type": "matrix", "matrix": [[1, 0], [0, 1]]}),
        lambda c: c.update(gamma_target=0.5),
        lambda c: c.pop("dataset"),
    ])
    def test_invalid_config(self, tmp_path, mutate):
        cfg = tiny_config()
        mutate(cfg)
        out = tmp_path / "out"
        assert run("identify", "--config", write(tmp_path, cfg), "--out", out) == 2
        err = json.loads((out / "error.json").read_text())
        assert err["exit_code"] == 2 and err["message"]

    def test_unparseable_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        assert run("identify", "--config", p, "--out", tmp_path / "o") == 2

    def test_missing_config(self, tmp_path):
        assert run("oslip", "--out", tmp_path / "o") == 2

    def test_infeasible(self, tmp_path):
        cfg = fast_uav_config(gamma_target=-100.0)
        assert run("synthesize", "--config", write(tmp_path, cfg), "--out", tmp_path / "o") == 3

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "contractsos", "identify", "--config",
                               str(write(tmp_path, tiny_config())), "--out", str(tmp_path / "o")])
        assert proc.returncode == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    cfg_path = write(tmp, fast_uav_config())
    out = tmp / "out"
    codes = [run(cmd, "--config", cfg_path, "--out", out, "--relaxed")
             for cmd in ("identify", "oslip", "synthesize", "simulate", "verify")]
    return cfg_path, out, codes


class TestPipeline:
    def test_all_stages_succeed(self, pipeline):
        _, out, codes = pipeline
        assert codes == [0, 0, 0, 0, 0]
        for name in ("N.json", "theta_lse.json", "phi_lse.json", "oslip.json", "result.json", "gain.json",
                     "nominal_trajectory.csv", "deviation.csv", "report.json", "audit.json"):
            assert (out / name).exists(), name
        assert not (out / "error.json").exists()

    def test_oslip_file(self, pipeline):
        _, out, _ = pipeline
        doc = json.loads((out / "oslip.json").read_text())
        assert doc["nominal"]["certified_upper"] >= doc["nominal"]["value"]

    def test_idempotent(self, pipeline, tmp_path):
        cfg_path, out, _ = pipeline
        before = {p.name: p.read_bytes() for p in out.iterdir()}
        assert run("synthesize", "--config", cfg_path, "--out", out, "--relaxed") == 0
        assert run("verify", "--config", cfg_path, "--out", out) == 0
        assert {p.name: p.read_bytes() for p in out.iterdir()} == before

    def test_gain_corruption_detected(self, pipeline, tmp_path):
        cfg_path, out, _ = pipeline
        original = (out / "gain.json").read_bytes()
        rng = np.random.default_rng(0)
        positions = sorted(set(rng.integers(0, len(original), 25).tolist()) | {0, len(original) - 1})
        try:
            for pos in positions:
                data = bytearray(original)
                data[pos] = (data[pos] + 1 + int(rng.integers(0, 90))) % 128 or 1
                if data[pos] == original[pos]:
                    data[pos] ^= 1
                (out / "gain.json").write_bytes(bytes(data))
                assert run("verify", "--config", cfg_path, "--out", out) == 4, pos
        finally:
            (out / "gain.json").write_bytes(original)
        assert run("verify", "--config", cfg_path, "--out", out) == 0

    def test_missing_gain_is_mismatch(self, pipeline, tmp_path):
        cfg_path, out, _ = pipeline
        original = (out / "gain.json").read_bytes()
        (out / "gain.json").unlink()
        try:
            assert run("verify", "--config", cfg_path, "--out", out) == 4
        finally:
            (out / "gain.json").write_bytes(original)
