import json

import numpy as np
import pytest

from lrfact import Linear, Model, save_model, save_tensor, load_tensor
from lrfact.cli import main

from conftest import f32, low_rank_matrix, make_mlp


@pytest.fixture
def mlp_path(rng, tmp_path):
    save_model(make_mlp(rng, widths=(16, 32, 8)), tmp_path / "mlp")
    return tmp_path / "mlp"


@pytest.fixture
def identity_path(tmp_path):
    model = Model("id", (3,), (Linear("fc", np.eye(3, dtype=np.float32)),))
    save_model(model, tmp_path / "id")
    return tmp_path / "id"


class TestInspect:
    def test_table_and_totals(self, mlp_path, capsys):
        assert main(["inspect", str(mlp_path)]) == 0
        out = capsys.readouterr().out
        assert "fc0" in out and "TOTAL" in out

    def test_json_totals_are_sums(self, mlp_path, capsys):
        assert main(["inspect", str(mlp_path), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["totals"]["params"] == sum(l["params"] for l in doc["layers"])
        assert doc["totals"]["flops"] == sum(l["flops"] for l in doc["layers"])

    def test_empty_model(self, tmp_path, capsys):
        save_model(Model("empty", (3,), ()), tmp_path / "e")
        assert main(["inspect", str(tmp_path / "e"), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["totals"] == {"params": 0, "flops": 0}

    def test_missing_file_exit2(self, tmp_path, capsys):
        assert main(["inspect", str(tmp_path / "nope")]) == 2
        assert "error" in capsys.readouterr().err


class TestFactorize:
    def test_all_gated(self, tmp_path, rng, capsys):
        model = Model("m", (4,), (Linear("fc", rng.uniform(-1, 1, (4, 4)).astype(np.float32)),))
        save_model(model, tmp_path / "m")
        code = main(["factorize", str(tmp_path / "m"), str(tmp_path / "out"), "--rank", "2", "--json"])
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert all(l["decision"] == "skipped(rank-gate)" for l in doc["layers"])
        # weights byte-identical to the input model
        assert (tmp_path / "m.bin").read_bytes() == (tmp_path / "out.bin").read_bytes()

    def test_ratio_reduces_flops(self, mlp_path, tmp_path, capsys):
        code = main(
            ["factorize", str(mlp_path), str(tmp_path / "out"), "--rank-ratio", "0.25", "--solver", "svd", "--json"]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["totals"]["flops_after"] < doc["totals"]["flops_before"]

    def test_conflicting_rank_flags_exit1(self, mlp_path, tmp_path, capsys):
        code = main(["factorize", str(mlp_path), str(tmp_path / "out"), "--rank", "2", "--rank-ratio", "0.5"])
        assert code == 1
        assert not (tmp_path / "out.json").exists()

    def test_missing_rank_flag_exit1(self, mlp_path, tmp_path):
        assert main(["factorize", str(mlp_path), str(tmp_path / "out")]) == 1

    def test_random_solver_warns(self, mlp_path, tmp_path, capsys):
        code = main(["factorize", str(mlp_path), str(tmp_path / "out"), "--rank", "4", "--solver", "random"])
        assert code == 0
        assert "do not approximate" in capsys.readouterr().err

    def test_deterministic_output_files(self, mlp_path, tmp_path):
        args = ["--rank-ratio", "0.5", "--solver", "random", "--seed", "11"]
        assert main(["factorize", str(mlp_path), str(tmp_path / "a")] + args) == 0
        assert main(["factorize", str(mlp_path), str(tmp_path / "b")] + args) == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_include_exclude(self, mlp_path, tmp_path, capsys):
        code = main(
            ["factorize", str(mlp_path), str(tmp_path / "out"), "--rank-ratio", "0.5", "--exclude", "fc0", "--json"]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        by_name = {l["name"]: l for l in doc["layers"]}
        assert by_name["fc0"]["decision"] == "skipped(filtered)"
        assert by_name["fc1"]["decision"] == "factorized"

    def test_solver_failure_exit3(self, mlp_path, tmp_path, capsys, monkeypatch):
        from lrfact.errors import SolverError
        import lrfact.cli as cli

        def boom(model, config):
            raise SolverError("layer 'fc0': synthetic failure", "fc0")

        monkeypatch.setattr(cli, "auto_fact", boom)
        code = main(["factorize", str(mlp_path), str(tmp_path / "out"), "--rank", "2"])
        assert code == 3
        assert "fc0" in capsys.readouterr().err


class TestRun:
    def test_identity(self, identity_path, tmp_path, capsys):
        x = f32([[1, 2, 3], [4, 5, 6]])
        save_tensor(x, tmp_path / "x")
        code = main(["run", str(identity_path), str(tmp_path / "x"), str(tmp_path / "y")])
        assert code == 0
        assert "output shape: 2x3" in capsys.readouterr().out
        assert np.array_equal(load_tensor(tmp_path / "y"), x)

    def test_wrong_shape_exit4(self, identity_path, tmp_path, capsys):
        save_tensor(np.zeros((2, 4), dtype=np.float32), tmp_path / "x")
        code = main(["run", str(identity_path), str(tmp_path / "x"), str(tmp_path / "y")])
        assert code == 4


class TestDiff:
    def test_model_vs_itself(self, mlp_path, capsys):
        assert main(["diff", str(mlp_path), str(mlp_path), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["max_abs"] == 0.0

    def test_lossy_truncation_exceeds_tol(self, rng, tmp_path, capsys):
        w = low_rank_matrix(rng, 8, 8, 2)
        dense = Model("dense", (8,), (Linear("fc", w),))
        save_model(dense, tmp_path / "dense")
        main(["factorize", str(tmp_path / "dense"), str(tmp_path / "r1"), "--rank", "1"])
        capsys.readouterr()
        code = main(["diff", str(tmp_path / "dense"), str(tmp_path / "r1"), "--tol", "1e-6", "--json"])
        assert code == 5
        doc = json.loads(capsys.readouterr().out)
        assert doc["max_abs"] > 1e-6

    def test_exact_rank_within_tol(self, rng, tmp_path, capsys):
        w = low_rank_matrix(rng, 8, 8, 2)
        save_model(Model("dense", (8,), (Linear("fc", w),)), tmp_path / "dense")
        main(["factorize", str(tmp_path / "dense"), str(tmp_path / "r2"), "--rank", "2"])
        assert main(["diff", str(tmp_path / "dense"), str(tmp_path / "r2"), "--tol", "1e-4"]) == 0

    def test_incompatible_shapes_exit4(self, rng, tmp_path):
        save_model(make_mlp(rng, widths=(16, 8)), tmp_path / "a")
        save_model(make_mlp(rng, widths=(12, 8)), tmp_path / "b")
        assert main(["diff", str(tmp_path / "a"), str(tmp_path / "b")]) == 4


class TestBench:
    def test_sample_count(self, mlp_path, capsys):
        assert main(["bench", str(mlp_path), "--repeats", "5", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["samples_s"]) == 5
        assert doc["flops"] > 0

    def test_zero_repeats_exit1(self, mlp_path):
        assert main(["bench", str(mlp_path), "--repeats", "0"]) == 1


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_unknown_flag(self, mlp_path):
        assert main(["inspect", str(mlp_path), "--frobnicate"]) == 1
