"""Generative prior tests: builders, scoring, training, checkpoints."""

import numpy as np
import pytest

from blindinv import autodiff as ad
from blindinv.autodiff import Tape, Tensor, grad_check
from blindinv.errors import FormatError
from blindinv.gan import (
    ACT_SIGMOID,
    ACT_TANH,
    GanConfig,
    build_discriminator,
    build_generator,
    gan_train,
    load_checkpoint,
    perceptual_loss,
    sample,
    save_checkpoint,
    write_network,
)
from blindinv.rng import Pcg32

LOG_EPS = 1e-8


def _tiny_cfg(**kwargs):
    defaults = dict(latent_dim=8, image_shape=(1, 6, 6), gen_hidden=(12,),
                    disc_hidden=(12,))
    defaults.update(kwargs)
    return GanConfig(**defaults)


def _zeroed_disc(cfg=None):
    """All-zero weights make the score exactly sigmoid(0) = 0.5."""
    disc = build_discriminator(cfg or _tiny_cfg(), Pcg32(0))
    for layer in disc.layers:
        layer.weights.assign_(np.zeros(layer.weights.shape))
        layer.bias.assign_(np.zeros(layer.bias.shape))
    return disc


class TestBuilders:
    def test_default_latent_dim_is_100(self):
        assert GanConfig().latent_dim == 100
        gen = build_generator(GanConfig(), Pcg32(0))
        assert gen.latent_dim == 100

    def test_sample_range_within_unit_box(self):
        gen = build_generator(_tiny_cfg(init_std=1.0), Pcg32(1))
        for seed in range(5):
            img = sample(gen, Pcg32(seed).uniform(-1, 1, 8))
            assert img.data.min() >= -1.0 and img.data.max() <= 1.0
            assert img.shape == (1, 6, 6)

    def test_same_seed_identical_builds(self):
        a = build_generator(_tiny_cfg(), Pcg32(3))
        b = build_generator(_tiny_cfg(), Pcg32(3))
        for name, _ in a.params.items():
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_sample_deterministic(self):
        gen = build_generator(_tiny_cfg(), Pcg32(4))
        z = Pcg32(5).uniform(-1, 1, 8)
        assert np.array_equal(sample(gen, z).data, sample(gen, z).data)

    def test_discriminator_outputs_in_unit_interval(self):
        disc = build_discriminator(_tiny_cfg(init_std=1.0), Pcg32(6))
        for seed in range(5):
            score = disc.score(Pcg32(seed).normal(0, 1, (1, 6, 6)))
            assert 0.0 < score < 1.0

    def test_sample_is_differentiable(self):
        gen = build_generator(_tiny_cfg(init_std=0.5), Pcg32(7))

        def f(leaf):
            cols = gen.forward(ad.reshape(leaf, (8, 1)))
            return ad.sum(cols)

        err = grad_check(f, Tensor(Pcg32(8).uniform(-0.9, 0.9, 8)))
        assert err < 1e-4


class TestPerceptualLoss:
    def test_single_image_at_half_score(self):
        disc = _zeroed_disc()
        tape = Tape()
        x = tape.leaf(Pcg32(9).normal(0, 0.5, (36, 1)))
        loss = perceptual_loss(disc, x)
        np.testing.assert_allclose(loss.value.item(), np.log(0.5), rtol=1e-12)

    def test_summation_structure_n2_s3(self):
        disc = _zeroed_disc()
        tape = Tape()
        batches = [
            tape.leaf(Pcg32(10).normal(0, 0.5, (36, 3))),
            tape.leaf(Pcg32(11).normal(0, 0.5, (36, 3))),
        ]
        loss = perceptual_loss(disc, batches)
        np.testing.assert_allclose(loss.value.item(), 6 * np.log(0.5), rtol=1e-12)

    def test_saturated_score_hits_clamp_floor(self):
        disc = _zeroed_disc()
        disc.layers[-1].bias.assign_(np.array([60.0]))  # sigmoid -> ~1
        tape = Tape()
        loss = perceptual_loss(disc, tape.leaf(np.zeros((36, 1))))
        np.testing.assert_allclose(loss.value.item(), np.log(LOG_EPS), rtol=1e-12)

    def test_monotone_in_scores(self):
        # raising D(x) lowers the loss
        disc = _zeroed_disc()
        disc.layers[-1].weights.assign_(np.ones((1, 12)) * 0.1)
        disc.layers[0].weights.assign_(np.ones((12, 36)) * 0.05)
        lo, hi = -np.ones((36, 1)), np.ones((36, 1))
        assert disc.score(hi.reshape(1, 6, 6)) > disc.score(lo.reshape(1, 6, 6))
        tape = Tape()
        loss_hi = perceptual_loss(disc, tape.leaf(hi)).value.item()
        loss_lo = perceptual_loss(disc, tape.leaf(lo)).value.item()
        assert loss_hi < loss_lo


class TestGanTrain:
    def test_constant_images_are_learned(self):
        c = 0.3
        data = np.full((64, 1, 16, 16), c)
        rng = Pcg32(42)
        cfg = GanConfig()
        gen = build_generator(cfg, rng)
        disc = build_discriminator(cfg, rng)
        log = gan_train(gen, disc, data, epochs=120, batch=32,
                        lr_g=2e-4, lr_d=2e-4, rng=rng)
        samples = gen.sample_batch(Pcg32(7).uniform(-1, 1, (64, 100)))
        assert abs(samples.mean() - c) < 0.25
        assert all(np.isfinite(e["d_loss"]) and np.isfinite(e["g_loss"]) for e in log)

    def test_zero_epochs_leaves_parameters_untouched(self):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(1))
        disc = build_discriminator(cfg, Pcg32(2))
        before = {n: t.data.copy() for n, t in gen.params.items()}
        log = gan_train(gen, disc, np.zeros((4, 1, 6, 6)), epochs=0, batch=2,
                        lr_g=1e-4, lr_d=1e-4, rng=Pcg32(3))
        assert log == []
        for name, _ in gen.params.items():
            assert np.array_equal(gen.params[name].data, before[name])

    def test_fixed_seed_reproduces_log_bitwise(self):
        def run():
            cfg = _tiny_cfg()
            gen = build_generator(cfg, Pcg32(1))
            disc = build_discriminator(cfg, Pcg32(2))
            return gan_train(gen, disc, Pcg32(4).uniform(-0.8, 0.8, (10, 1, 6, 6)),
                             epochs=4, batch=4, lr_g=1e-4, lr_d=1e-4, rng=Pcg32(3))

        assert run() == run()

    def test_empty_dataset_rejected(self):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(1))
        disc = build_discriminator(cfg, Pcg32(2))
        with pytest.raises(ValueError, match="non-empty"):
            gan_train(gen, disc, np.zeros((0, 1, 6, 6)), 1, 2, 1e-4, 1e-4, Pcg32(3))

    def test_out_of_range_dataset_rejected(self):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(1))
        disc = build_discriminator(cfg, Pcg32(2))
        with pytest.raises(ValueError, match=r"\[-1, 1\]"):
            gan_train(gen, disc, np.full((4, 1, 6, 6), 1.5), 1, 2, 1e-4, 1e-4, Pcg32(3))


class TestCheckpoint:
    def test_round_trip_exact_at_float32(self, tmp_path):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(1))
        disc = build_discriminator(cfg, Pcg32(2))
        path = tmp_path / "gan.gpri"
        save_checkpoint(path, gen, disc)
        gen2, disc2 = load_checkpoint(path)
        assert gen2.latent_dim == 8
        assert gen2.output_shape == (1, 6, 6)
        for a, b in ((gen, gen2), (disc, disc2)):
            for name, _ in a.params.items():
                stored = a.params[name].data.astype(np.float32).astype(np.float64)
                assert np.array_equal(stored, b.params[name].data)

    def test_loaded_generator_samples_like_saved(self, tmp_path):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(3))
        disc = build_discriminator(cfg, Pcg32(4))
        path = tmp_path / "gan.gpri"
        save_checkpoint(path, gen, disc)
        gen2, _ = load_checkpoint(path)
        z = Pcg32(5).uniform(-1, 1, 8)
        np.testing.assert_allclose(
            sample(gen2, z).data, sample(gen, z).data, atol=1e-6
        )

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.gpri"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)

    def test_truncation_reports_byte_counts(self, tmp_path):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(1))
        disc = build_discriminator(cfg, Pcg32(2))
        path = tmp_path / "gan.gpri"
        save_checkpoint(path, gen, disc)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError, match=r"expected \d+ bytes, found \d+"):
            load_checkpoint(path)

    def test_checkpoint_without_tanh_head_rejected(self, tmp_path):
        cfg = _tiny_cfg()
        disc = build_discriminator(cfg, Pcg32(2))
        blob = write_network(disc.specs, disc.layers, 8)
        path = tmp_path / "disc_only.gpri"
        path.write_bytes(blob)
        with pytest.raises(FormatError, match="tanh"):
            load_checkpoint(path)

    def test_wire_layout_header(self, tmp_path):
        cfg = _tiny_cfg()
        gen = build_generator(cfg, Pcg32(1))
        disc = build_discriminator(cfg, Pcg32(2))
        path = tmp_path / "gan.gpri"
        save_checkpoint(path, gen, disc)
        blob = path.read_bytes()
        assert blob[:4] == b"GPRI"
        version = int.from_bytes(blob[4:8], "little")
        latent = int.from_bytes(blob[8:12], "little")
        count = int.from_bytes(blob[12:16], "little")
        assert (version, latent, count) == (1, 8, 4)
        # generator output record carries the spatial shape hint
        kind, act = blob[16 + 18], blob[16 + 19]
        assert (kind, act) == (0, ACT_TANH)
        disc_last = blob[16 + 18 * 3]
        assert blob[16 + 18 * 3 + 1] == ACT_SIGMOID
