"""Checkpoint <-> model glue: saving, packing, loading, bit-exact equivalence."""

import numpy as np
import pytest

from tridiff.bitpack import PackedTernary
from tridiff.checkpoint import Checkpoint, CheckpointError, deserialize, serialize
from tridiff.deploy import (
    ema_checkpoint,
    load_checkpoint,
    load_model,
    master_checkpoint,
    pack_checkpoint,
    save_checkpoint,
)
from tridiff.diffusion import NoiseSchedule, ddpm_sample
from tridiff.model import DiT, ModelConfig

from test_model import _randomize_modulation


@pytest.fixture
def trained_like_model(small_cfg, rng):
    """A model with nonzero modulation so packing is non-trivial."""
    model = DiT(small_cfg, seed=13)
    _randomize_modulation(model, rng)
    return model


class TestMasterCheckpoint:
    def test_roundtrip_through_file(self, trained_like_model, tmp_path):
        path = str(tmp_path / "m.terd")
        save_checkpoint(master_checkpoint(trained_like_model), path)
        loaded = load_model(load_checkpoint(path))
        for name, p in trained_like_model.named_parameters().items():
            assert np.array_equal(loaded.named_parameters()[name].data, p.data), name

    def test_alpha_stored_rank0(self, trained_like_model):
        ckpt = master_checkpoint(trained_like_model)
        alpha = ckpt.get("blocks.0.attn.wq.alpha")
        assert alpha.shape == ()

    def test_ema_checkpoint_uses_shadow_values(self, trained_like_model):
        ema = {k: v.data * 0.5 for k, v in trained_like_model.named_parameters().items()}
        ckpt = ema_checkpoint(trained_like_model, ema)
        loaded = load_model(ckpt)
        for name, p in loaded.named_parameters().items():
            assert np.array_equal(p.data, ema[name]), name

    def test_load_state_mismatch_rejected(self, trained_like_model, small_cfg):
        ckpt = master_checkpoint(trained_like_model)
        other = ModelConfig(**{**small_cfg.__dict__, "depth": 3})
        broken = Checkpoint(config_text=other.to_text(),
                            tensors=list(ckpt.tensors))
        with pytest.raises(ValueError):
            load_model(broken)


class TestPackCheckpoint:
    def test_pack_replaces_ternary_pairs(self, trained_like_model):
        dense = master_checkpoint(trained_like_model)
        packed = pack_checkpoint(dense)
        packed_names = {n for n, v in packed.tensors if isinstance(v, PackedTernary)}
        expected = {f"{p}.weight" for p in trained_like_model.ternary_layers()}
        assert packed_names == expected
        assert not any(n.endswith(".alpha") and f"{n[:-6]}.weight" in expected
                       for n, _ in packed.tensors)

    def test_packing_packed_rejected(self, trained_like_model):
        packed = pack_checkpoint(master_checkpoint(trained_like_model))
        with pytest.raises(CheckpointError, match="already packed"):
            pack_checkpoint(packed)

    def test_nothing_to_pack_when_unquantized(self, small_cfg):
        cfg = ModelConfig(**{**small_cfg.__dict__, "quantize_blocks": False})
        model = DiT(cfg, seed=0)
        packed = pack_checkpoint(master_checkpoint(model))
        assert not packed.has_packed

    def test_packed_file_roundtrip(self, trained_like_model, tmp_path):
        packed = pack_checkpoint(master_checkpoint(trained_like_model))
        data = serialize(packed)
        assert serialize(deserialize(data)) == data


class TestPackedEquivalence:
    def test_packed_model_predictions_bit_exact(self, trained_like_model, rng):
        dense = master_checkpoint(trained_like_model)
        packed_model = load_model(pack_checkpoint(dense))
        x = rng.standard_normal((2, 3, 16, 16)).astype(np.float32)
        t = np.array([999, 10])
        labels = np.array([0, 5])
        drop = np.array([False, False])
        a = trained_like_model.predict_noise(x, t, labels, drop)
        b = packed_model.predict_noise(x, t, labels, drop)
        assert np.array_equal(a, b)

    def test_packed_sampling_bit_exact(self, trained_like_model):
        schedule = NoiseSchedule.linear(trained_like_model.num_timesteps)
        packed_model = load_model(pack_checkpoint(master_checkpoint(trained_like_model)))
        a = ddpm_sample(trained_like_model, [0, 3], steps=25, cfg_scale=4.0,
                        rng=np.random.default_rng(7), schedule=schedule)
        b = ddpm_sample(packed_model, [0, 3], steps=25, cfg_scale=4.0,
                        rng=np.random.default_rng(7), schedule=schedule)
        assert np.array_equal(a, b)

    def test_packed_model_has_no_masters(self, trained_like_model):
        packed_model = load_model(pack_checkpoint(master_checkpoint(trained_like_model)))
        names = set(packed_model.named_parameters())
        assert not any(n.endswith(".alpha") for n in names)
        for prefix in packed_model.ternary_layers():
            assert f"{prefix}.weight" not in names
            assert packed_model.ternary_layers()[prefix].frozen_codes is not None

    def test_packed_checkpoint_name_mismatch_rejected(self, trained_like_model):
        packed = pack_checkpoint(master_checkpoint(trained_like_model))
        tensors = [(n.replace("blocks.0", "blocks.9") if "blocks.0.attn.wq.weight" in n else n, v)
                   for n, v in packed.tensors]
        broken = Checkpoint(config_text=packed.config_text, tensors=tensors)
        with pytest.raises(CheckpointError):
            load_model(broken)
