"""Model assembly contracts: determinism, shape preservation, the in_only
ablation mechanism, the parameter audit, and checkpoint round trips."""

import numpy as np
import pytest

from adastyle import ArchConfig, TranslationModel, translator_param_report
from adastyle.checkpoint import load_arrays, load_model, save_arrays, save_model


def _sources(rng, cfg, n=2):
    return rng.uniform(-1, 1, (n, 3, cfg.image_size, cfg.image_size)).astype(np.float32)


class TestArchConfig:
    def test_divisibility_enforced(self):
        with pytest.raises(ValueError, match="divisible"):
            ArchConfig(image_size=30, down_blocks=2).validate()

    def test_bad_activation(self):
        with pytest.raises(ValueError, match="activation"):
            ArchConfig(activation="swish").validate()

    def test_bad_adain_mode(self):
        with pytest.raises(ValueError, match="adain_mode"):
            ArchConfig(adain_mode="none").validate()

    def test_channel_cap(self):
        cfg = ArchConfig(base_channels=16, down_blocks=2)
        assert cfg.channels_after(2) == 64
        assert ArchConfig(base_channels=8, down_blocks=3).channels_after(3) == 64


class TestMappingNetwork:
    def test_deterministic(self, tiny_model, rng):
        z = rng.standard_normal((3, tiny_model.cfg.latent_dim)).astype(np.float32)
        a = tiny_model.map_latent(z, 0)
        b = tiny_model.map_latent(z, 0)
        assert a.tobytes() == b.tobytes()

    def test_domain_heads_differ(self, tiny_model, rng):
        z = rng.standard_normal((4, tiny_model.cfg.latent_dim)).astype(np.float32)
        assert not np.array_equal(tiny_model.map_latent(z, 0), tiny_model.map_latent(z, 1))

    def test_domain_out_of_range(self, tiny_model, rng):
        z = rng.standard_normal((1, tiny_model.cfg.latent_dim)).astype(np.float32)
        with pytest.raises(ValueError, match="domain out of range"):
            tiny_model.map_latent(z, 2)

    def test_style_code_shape(self, tiny_model, rng):
        z = rng.standard_normal((5, tiny_model.cfg.latent_dim)).astype(np.float32)
        assert tiny_model.map_latent(z, 1).shape == (5, tiny_model.cfg.style_dim)


class TestStyleEncoder:
    def test_deterministic(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg)
        assert (tiny_model.encode_style(x, 0).tobytes()
                == tiny_model.encode_style(x, 0).tobytes())

    def test_shape(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg, n=3)
        assert tiny_model.encode_style(x, 1).shape == (3, tiny_model.cfg.style_dim)

    def test_distinct_images_distinct_codes(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg, n=2)
        w = tiny_model.encode_style(x, 0)
        assert not np.array_equal(w[0], w[1])


class TestTranslate:
    @pytest.mark.parametrize("down,blocks", [(2, 4), (2, 6), (3, 4), (3, 6)])
    def test_shape_preserved_across_configs(self, down, blocks, rng):
        cfg = ArchConfig(image_size=32, base_channels=4, down_blocks=down,
                         translator_blocks=blocks, style_dim=4, latent_dim=3)
        model = TranslationModel(cfg, seed=0)
        x = _sources(rng, cfg)
        w = model.map_latent(rng.standard_normal((2, 3)).astype(np.float32), 0)
        assert model.translate(x, w).shape == x.shape

    def test_deterministic_bitwise(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg)
        w = tiny_model.map_latent(rng.standard_normal((2, 3)).astype(np.float32), 1)
        assert tiny_model.translate(x, w).tobytes() == tiny_model.translate(x, w).tobytes()

    def test_output_range(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg)
        w = tiny_model.map_latent(rng.standard_normal((2, 3)).astype(np.float32), 0)
        out = tiny_model.translate(x, w)
        assert out.min() >= -1.0 and out.max() <= 1.0

    def test_different_styles_give_different_outputs(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg, n=1)
        z = rng.standard_normal((2, 3)).astype(np.float32)
        w = tiny_model.map_latent(z, 0)
        a = tiny_model.translate(x, w[0:1])
        b = tiny_model.translate(x, w[1:2])
        assert np.abs(a - b).mean() > 0

    def test_shape_mismatch(self, tiny_model, rng):
        bad = rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32)
        w = np.zeros((1, tiny_model.cfg.style_dim), dtype=np.float32)
        with pytest.raises(ValueError, match="image_size"):
            tiny_model.translate(bad, w)


class TestDiscriminate:
    def test_scalar_logit_per_sample(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg, n=4)
        out = tiny_model.discriminate(x, 1)
        assert out.shape == (4,) and np.isfinite(out).all()

    def test_deterministic(self, tiny_model, rng):
        x = _sources(rng, tiny_model.cfg)
        np.testing.assert_array_equal(tiny_model.discriminate(x, 0),
                                      tiny_model.discriminate(x, 0))


class TestInOnlyAblation:
    """With plain IN and a non-adaptive activation the style code has no
    path into the generator; with adarelu it does."""

    def test_leaky_is_style_independent(self, rng):
        cfg = ArchConfig(image_size=16, base_channels=4, down_blocks=2,
                         translator_blocks=2, style_dim=4, latent_dim=3,
                         activation="leaky_relu", adain_mode="in_only")
        model = TranslationModel(cfg, seed=2)
        x = _sources(rng, cfg, n=1)
        w1 = rng.standard_normal((1, 4)).astype(np.float32)
        w2 = rng.standard_normal((1, 4)).astype(np.float32)
        assert model.translate(x, w1).tobytes() == model.translate(x, w2).tobytes()

    def test_adarelu_is_style_dependent(self, rng):
        cfg = ArchConfig(image_size=16, base_channels=4, down_blocks=2,
                         translator_blocks=2, style_dim=4, latent_dim=3,
                         activation="adarelu", adain_mode="in_only")
        model = TranslationModel(cfg, seed=2)
        x = _sources(rng, cfg, n=1)
        w1 = rng.standard_normal((1, 4)).astype(np.float32)
        w2 = rng.standard_normal((1, 4)).astype(np.float32)
        assert np.abs(model.translate(x, w1) - model.translate(x, w2)).mean() > 0


class TestParamReport:
    def test_default_config_overhead_below_one_percent(self):
        model = TranslationModel(ArchConfig(activation="sa_adarelu"), seed=0)
        structural, total, frac = translator_param_report(model)
        assert structural > 0
        assert frac < 0.01

    def test_non_sa_has_no_structural_params(self, tiny_model):
        structural, total, frac = translator_param_report(tiny_model)
        assert structural == 0 and total > 0

    def test_param_names_unique(self, tiny_model):
        names = [n for n, _ in tiny_model.named_params()]
        assert len(names) == len(set(names))


class TestCheckpoint:
    def test_byte_exact_round_trip(self, tiny_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_model(path, tiny_model)
        first = path.read_bytes()
        reloaded = load_model(path)
        save_model(path, reloaded)
        assert path.read_bytes() == first

    def test_reload_preserves_behavior(self, tiny_model, tmp_path, rng):
        path = tmp_path / "model.ckpt"
        save_model(path, tiny_model)
        reloaded = load_model(path)
        x = _sources(rng, tiny_model.cfg)
        z = rng.standard_normal((2, 3)).astype(np.float32)
        w_a = tiny_model.map_latent(z, 0)
        w_b = reloaded.map_latent(z, 0)
        assert w_a.tobytes() == w_b.tobytes()
        assert (tiny_model.translate(x, w_a).tobytes()
                == reloaded.translate(x, w_b).tobytes())

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_arrays(path)

    def test_array_round_trip_preserves_dtype_and_order(self, tmp_path, rng):
        arrays = {
            "b/second": rng.standard_normal((2, 3)).astype(np.float32),
            "a/first": rng.standard_normal(4).astype(np.float64),
        }
        path = tmp_path / "arrays.ckpt"
        save_arrays(path, arrays)
        back = load_arrays(path)
        assert list(back) == ["b/second", "a/first"]
        for k in arrays:
            assert back[k].dtype == arrays[k].dtype
            np.testing.assert_array_equal(back[k], arrays[k])

    def test_config_travels_with_checkpoint(self, tmp_path):
        cfg = ArchConfig(image_size=16, base_channels=4, down_blocks=2,
                         translator_blocks=3, style_dim=4, latent_dim=3,
                         activation="sa_prelu", structural_mode="dwconv",
                         adain_mode="in_only")
        model = TranslationModel(cfg, seed=9)
        path = tmp_path / "m.ckpt"
        save_model(path, model)
        back = load_model(path)
        assert back.cfg == cfg
