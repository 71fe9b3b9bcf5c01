"""Tests for binary checkpoints."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from resus.core.checkpoint import (
    load_model,
    load_predictor,
    read_checkpoint,
    save_model,
    save_predictor,
    write_checkpoint,
)
from resus.core.errors import DataError, SpecMismatchError
from resus.core.meta import MetaSettings, ResusModel
from resus.core.models import make_task
from resus.core.networks import PredictorSpec, init_state

from .helpers import make_log


def _predictor(space, arch="fm", embed_dim=3):
    spec = PredictorSpec.for_space(arch, space, embed_dim=embed_dim, mlp_widths=(4,))
    return init_state(spec, "predictor", space, np.random.default_rng(0)).freeze()


def _meta(space, mode="rr", **settings):
    return ResusModel.create(
        MetaSettings(mode=mode, tau=6, **settings),
        _predictor(space) if mode != "mus" else None,
        PredictorSpec.for_space("fm", space, embed_dim=3),
        space,
        np.random.default_rng(1),
    )


class TestRawCheckpoint:
    """Tests for write_checkpoint and read_checkpoint."""

    def test_tensor_shapes_and_dtypes(self):
        """Test scalars, vectors and matrices keep shape and dtype."""
        tensors = {
            "scalar": np.asarray(1.5, dtype=np.float32),
            "vector": np.arange(4, dtype=np.int64),
            "matrix": np.ones((2, 3), dtype=np.float64),
        }
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "raw.ckpt"
            write_checkpoint(path, {"kind": "test"}, tensors)
            header, loaded = read_checkpoint(path)
        assert header == {"kind": "test"}
        for name, value in tensors.items():
            assert loaded[name].shape == value.shape
            assert loaded[name].dtype == value.dtype
            np.testing.assert_array_equal(loaded[name], value)

    def test_bad_magic(self):
        """Test a foreign file is rejected."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "x.ckpt"
            path.write_bytes(b"PK\x03\x04 not ours")
            with pytest.raises(DataError):
                read_checkpoint(path)

    def test_missing(self):
        """Test a missing checkpoint raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            read_checkpoint("/nonexistent/model.ckpt")


class TestPredictorCheckpoint:
    """Tests for shared-predictor checkpoints."""

    def test_round_trip(self, space):
        """Test a saved predictor loads back with identical parameters."""
        state = _predictor(space, arch="deepfm")
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "psi.ckpt"
            save_predictor(state, path)
            loaded = load_predictor(path, expected=state.spec)
        assert loaded.spec == state.spec
        assert loaded.frozen
        assert loaded.params["bias"].shape == ()
        np.testing.assert_array_equal(loaded.offsets, state.offsets)
        for name, value in state.params.items():
            np.testing.assert_array_equal(loaded.params[name], value)

    def test_byte_deterministic(self, space):
        """Test saving the same state twice gives identical bytes."""
        state = _predictor(space)
        with tempfile.TemporaryDirectory() as tmpdir:
            first, second = Path(tmpdir) / "a.ckpt", Path(tmpdir) / "b.ckpt"
            save_predictor(state, first)
            save_predictor(state.copy(), second)
            assert first.read_bytes() == second.read_bytes()

    def test_spec_mismatch(self, space):
        """Test loading under a different architecture raises SpecMismatchError."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "psi.ckpt"
            save_predictor(_predictor(space, embed_dim=3), path)
            with pytest.raises(SpecMismatchError):
                load_predictor(path, expected=PredictorSpec.for_space("fm", space, embed_dim=5))

    def test_meta_checkpoint_without_psi(self, space):
        """Test a MUS checkpoint holds no shared predictor."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "mus.ckpt"
            save_model(_meta(space, mode="mus"), path)
            with pytest.raises(SpecMismatchError):
                load_predictor(path)


class TestModelCheckpoint:
    """Tests for meta-model checkpoints."""

    @pytest.mark.parametrize("mode", ["nn", "rr", "mus"])
    def test_round_trip(self, space, mode):
        """Test settings, encoder and meta parameters survive a round trip."""
        model = _meta(space, mode=mode, beta_per_size=True)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "meta.ckpt"
            save_model(model, path)
            loaded = load_model(path)
        assert loaded.settings == model.settings
        assert set(loaded.meta_params) == set(model.meta_params)
        for name, value in model.meta_params.items():
            assert loaded.meta_params[name].shape == value.shape
            np.testing.assert_array_equal(loaded.meta_params[name], value)
        np.testing.assert_array_equal(loaded.phi.params["emb"], model.phi.params["emb"])
        assert (loaded.psi is None) == (mode == "mus")

    def test_predictions_survive(self, space):
        """Test a reloaded model predicts exactly as before."""
        model = _meta(space)
        task = make_task(make_log("u", [1, 0, 1, 1, 0, 0], timestamps=range(6)), 3, time_ordered=True)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "meta.ckpt"
            save_model(model, path)
            loaded = load_model(path)
        np.testing.assert_array_equal(loaded.predict_task(task), model.predict_task(task))

    def test_shared_checkpoint_loads_as_shared_model(self, space):
        """Test a predictor checkpoint loads as a shared-only model."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "psi.ckpt"
            save_predictor(_predictor(space), path)
            model = load_model(path)
        assert model.mode == "shared"
        assert model.phi is None

    def test_encoder_mismatch(self, space):
        """Test an encoder built for another width is rejected."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "meta.ckpt"
            save_model(_meta(space), path)
            with pytest.raises(SpecMismatchError):
                load_model(path, expected_phi=PredictorSpec.for_space("lr", space, embed_dim=3))
