import json
import struct

import numpy as np
import pytest

from lrfact import (
    Linear,
    Model,
    load_model,
    load_tensor,
    save_model,
    save_tensor,
)
from lrfact.errors import (
    BlobLengthError,
    ManifestError,
    NonFiniteError,
    TensorLayoutError,
    VersionError,
)
from lrfact.modelio import model_paths, tensor_paths

from conftest import f32, make_cnn, make_mlp


def layers_equal(a, b):
    if type(a) is not type(b) or a.name != b.name:
        return False
    for attr in ("weight", "bias", "encoder", "decoder"):
        if hasattr(a, attr):
            va, vb = getattr(a, attr), getattr(b, attr)
            if (va is None) != (vb is None):
                return False
            if va is not None and not np.array_equal(va, vb):
                return False
    for attr in ("stride", "padding", "dilation"):
        if hasattr(a, attr) and getattr(a, attr) != getattr(b, attr):
            return False
    return True


def models_equal(a, b):
    return (
        a.name == b.name
        and a.input_shape == b.input_shape
        and len(a.layers) == len(b.layers)
        and all(layers_equal(x, y) for x, y in zip(a.layers, b.layers))
    )


class TestModelRoundTrip:
    def test_mlp(self, rng, tmp_path):
        model = make_mlp(rng)
        save_model(model, tmp_path / "m")
        assert models_equal(load_model(tmp_path / "m"), model)

    def test_cnn_with_factorized_layers(self, rng, tmp_path):
        from lrfact import FactorizeConfig, RankPolicy, auto_fact

        model, _ = auto_fact(make_cnn(rng), FactorizeConfig(rank_policy=RankPolicy.of_ratio(0.5)))
        save_model(model, tmp_path / "m")
        assert models_equal(load_model(tmp_path / "m"), model)

    def test_empty_model(self, tmp_path):
        model = Model("empty", (3,), ())
        save_model(model, tmp_path / "m")
        json_path, bin_path = model_paths(tmp_path / "m")
        assert bin_path.read_bytes() == b""
        loaded = load_model(tmp_path / "m")
        assert loaded.layers == () and loaded.input_shape == (3,)

    def test_blob_bytes_are_le_f32(self, tmp_path):
        model = Model("m", (2,), (Linear("fc", f32([[1, 2], [3, 4]])),))
        save_model(model, tmp_path / "m")
        _, bin_path = model_paths(tmp_path / "m")
        assert bin_path.read_bytes() == struct.pack("<4f", 1.0, 2.0, 3.0, 4.0)

    def test_save_load_save_byte_identical(self, rng, tmp_path):
        model = make_cnn(rng)
        save_model(model, tmp_path / "a")
        save_model(load_model(tmp_path / "a"), tmp_path / "b")
        for suffix in (".json", ".bin"):
            assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()

    def test_path_suffix_normalized(self, rng, tmp_path):
        model = make_mlp(rng)
        save_model(model, tmp_path / "m.json")
        assert models_equal(load_model(tmp_path / "m.bin"), model)


class TestModelValidation:
    @pytest.fixture
    def saved(self, rng, tmp_path):
        save_model(make_mlp(rng), tmp_path / "m")
        return model_paths(tmp_path / "m")

    def _edit(self, json_path, fn):
        manifest = json.loads(json_path.read_text())
        fn(manifest)
        json_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    def test_version_mismatch(self, saved):
        json_path, _ = saved
        self._edit(json_path, lambda m: m.update(format_version=2))
        with pytest.raises(VersionError):
            load_model(json_path)

    def test_blob_too_short(self, saved):
        json_path, bin_path = saved
        bin_path.write_bytes(bin_path.read_bytes()[:-1])
        with pytest.raises(BlobLengthError):
            load_model(json_path)

    def test_blob_too_long(self, saved):
        json_path, bin_path = saved
        bin_path.write_bytes(bin_path.read_bytes() + b"\x00" * 4)
        with pytest.raises(BlobLengthError):
            load_model(json_path)

    def test_byte_length_disagrees_with_shape(self, saved):
        json_path, _ = saved

        def corrupt(m):
            m["layers"][0]["tensors"][0]["byte_length"] -= 4

        self._edit(json_path, corrupt)
        with pytest.raises(TensorLayoutError):
            load_model(json_path)

    def test_overlapping_offsets(self, saved):
        json_path, _ = saved

        def corrupt(m):
            m["layers"][0]["tensors"][1]["byte_offset"] -= 4

        self._edit(json_path, corrupt)
        with pytest.raises(TensorLayoutError):
            load_model(json_path)

    def test_non_finite_payload(self, saved):
        json_path, bin_path = saved
        blob = bytearray(bin_path.read_bytes())
        blob[0:4] = struct.pack("<f", float("nan"))
        bin_path.write_bytes(bytes(blob))
        with pytest.raises(NonFiniteError):
            load_model(json_path)

    def test_unknown_kind(self, saved):
        json_path, _ = saved
        self._edit(json_path, lambda m: m["layers"][0].update(kind="pooling"))
        with pytest.raises(ManifestError):
            load_model(json_path)

    def test_grouped_conv_rejected(self, saved):
        json_path, _ = saved
        self._edit(json_path, lambda m: m["layers"][0].update(groups=2))
        with pytest.raises(ManifestError):
            load_model(json_path)

    def test_missing_top_level_key(self, saved):
        json_path, _ = saved
        self._edit(json_path, lambda m: m.pop("input_shape"))
        with pytest.raises(ManifestError):
            load_model(json_path)

    def test_duplicate_layer_names(self, saved):
        json_path, _ = saved

        def corrupt(m):
            m["layers"][2]["name"] = m["layers"][0]["name"]

        self._edit(json_path, corrupt)
        with pytest.raises(ManifestError):
            load_model(json_path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_model(tmp_path / "nope")

    def test_invalid_json(self, saved):
        json_path, _ = saved
        json_path.write_text("{not json")
        with pytest.raises(ManifestError):
            load_model(json_path)


class TestTensorFiles:
    def test_round_trip(self, tmp_path):
        t = np.zeros((2, 2), dtype=np.float32)
        save_tensor(t, tmp_path / "t")
        assert np.array_equal(load_tensor(tmp_path / "t"), t)

    def test_encoding(self, tmp_path):
        save_tensor(f32([1.5]), tmp_path / "t")
        _, bin_path = tensor_paths(tmp_path / "t")
        assert bin_path.read_bytes() == bytes.fromhex("0000c03f")

    def test_header_is_one_line(self, tmp_path):
        save_tensor(f32([[1, 2], [3, 4]]), tmp_path / "t")
        json_path, _ = tensor_paths(tmp_path / "t")
        text = json_path.read_text()
        assert text.endswith("\n") and text.count("\n") == 1
        assert json.loads(text)["shape"] == [2, 2]

    def test_length_mismatch(self, tmp_path):
        save_tensor(np.zeros((2, 2), dtype=np.float32), tmp_path / "t")
        json_path, _ = tensor_paths(tmp_path / "t")
        header = json.loads(json_path.read_text())
        header["shape"] = [2, 3]
        json_path.write_text(json.dumps(header, sort_keys=True) + "\n")
        with pytest.raises(BlobLengthError):
            load_tensor(tmp_path / "t")

    def test_non_finite(self, tmp_path):
        save_tensor(f32([1.0]), tmp_path / "t")
        _, bin_path = tensor_paths(tmp_path / "t")
        bin_path.write_bytes(struct.pack("<f", float("inf")))
        with pytest.raises(NonFiniteError):
            load_tensor(tmp_path / "t")
