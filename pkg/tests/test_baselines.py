"""Baseline method tests: PGD variants, Wiener deconvolution, FastICA."""

import numpy as np
import pytest

from blindinv.baselines import (
    circular_apply,
    dft2d,
    fastica,
    idft2d,
    kernel_spectrum,
    naive_additive,
    pgd_known_forward,
    pgd_no_forward,
    wiener_deconvolve,
)
from blindinv.errors import UnderdeterminedError
from blindinv.gan import GanConfig, build_discriminator, build_generator
from blindinv.measurement import (
    ConvKernel,
    KernelOperator,
    MixingOperator,
    gaussian_kernel,
    sample_mixing,
)
from blindinv.metrics import psnr
from blindinv.rng import Pcg32


def _tiny_gan(seed=1):
    cfg = GanConfig(latent_dim=8, image_shape=(1, 5, 5), gen_hidden=(12,),
                    disc_hidden=(12,))
    rng = Pcg32(seed)
    return build_generator(cfg, rng), build_discriminator(cfg, rng)


class TestPgdNoForward:
    def test_recovers_in_range_observation(self):
        gen, disc = _tiny_gan()
        y = [gen.sample(Pcg32(2).uniform(-1, 1, 8)).data]
        res = pgd_no_forward(gen, disc, y, steps=4000, lr=2e-3, alpha=0.0,
                             rng=Pcg32(3))
        assert res.final_loss < 1e-2

    def test_latents_respect_clip_box(self):
        gen, disc = _tiny_gan()
        y = [np.zeros((1, 5, 5))]
        res = pgd_no_forward(gen, disc, y, steps=50, lr=5.0, alpha=1e-4,
                             rng=Pcg32(4))
        # sources come from tanh so check the recorded history is finite
        # and the run completed under an absurd step size
        assert np.isfinite(res.final_loss)
        assert np.abs(res.sources).max() <= 1.0

    def test_seeded_determinism(self):
        gen, disc = _tiny_gan()
        y = [Pcg32(5).uniform(-0.5, 0.5, (1, 5, 5))]
        a = pgd_no_forward(gen, disc, y, 20, 3e-4, 1e-4, Pcg32(6))
        b = pgd_no_forward(gen, disc, y, 20, 3e-4, 1e-4, Pcg32(6))
        assert np.array_equal(a.sources, b.sources)
        assert a.loss_history == b.loss_history


class TestPgdKnownForward:
    def test_identity_operator_reduces_to_no_forward(self):
        gen, disc = _tiny_gan()
        y = [Pcg32(7).uniform(-0.5, 0.5, (1, 5, 5)) for _ in range(2)]
        op = KernelOperator(ConvKernel(np.array([[1.0]])), "identity")
        known = pgd_known_forward(gen, disc, y, op, 30, 3e-4, 1e-4, Pcg32(8))
        plain = pgd_no_forward(gen, disc, y, 30, 3e-4, 1e-4, Pcg32(8))
        assert np.array_equal(known.sources, plain.sources)
        assert known.loss_history == plain.loss_history

    def test_known_blur_beats_blind_fit_usually(self):
        # paired comparison over seeded trials: knowing the blur should
        # recover the sharp image at least as well most of the time
        gen, disc = _tiny_gan()
        op = KernelOperator(gaussian_kernel(3, 1.0), "gaussian_blur")
        wins = 0
        trials = 20
        for seed in range(trials):
            truth = gen.sample(Pcg32(100 + seed).uniform(-1, 1, 8)).data
            y = [op.apply(truth)]
            known = pgd_known_forward(
                gen, disc, y, op, 600, 2e-3, 1e-4, Pcg32(200 + seed)
            )
            plain = pgd_no_forward(
                gen, disc, y, 600, 2e-3, 1e-4, Pcg32(200 + seed)
            )
            wins += psnr(known.sources[0, 0], truth) >= psnr(
                plain.sources[0, 0], truth
            )
        assert wins >= 0.8 * trials

    def test_mixing_operator_supported(self):
        gen, disc = _tiny_gan()
        m = sample_mixing(2, 3, Pcg32(9))
        op = MixingOperator(m)
        truth = gen.sample_batch(Pcg32(10).uniform(-1, 1, (2, 8))).reshape(2, 25)
        y = [op.apply(truth)]
        res = pgd_known_forward(gen, disc, y, op, 50, 3e-4, 1e-4, Pcg32(11))
        assert res.sources.shape == (1, 2, 1, 5, 5)
        assert np.isfinite(res.final_loss)


class TestNaiveAdditive:
    def test_s1_reduces_to_pgd_no_forward(self):
        gen, disc = _tiny_gan()
        y = [Pcg32(12).uniform(-0.5, 0.5, (1, 5, 5))]
        add = naive_additive(gen, disc, y, 1, 25, 3e-4, 1e-4, Pcg32(13))
        plain = pgd_no_forward(gen, disc, y, 25, 3e-4, 1e-4, Pcg32(13))
        assert np.array_equal(add.sources, plain.sources)

    def test_improves_on_unweighted_sums(self):
        gen, disc = _tiny_gan()
        z_true = Pcg32(14).uniform(-1, 1, (2, 8))
        truth = gen.sample_batch(z_true)
        y = [truth.sum(axis=0)]
        res = naive_additive(gen, disc, y, 2, 2000, 2e-3, 0.0, Pcg32(15))
        assert res.final_loss < res.initial_loss
        assert res.final_loss < 0.1 * res.initial_loss

    def test_latents_clipped(self):
        gen, disc = _tiny_gan()
        y = [np.zeros((1, 5, 5))]
        res = naive_additive(gen, disc, y, 2, 30, 10.0, 0.0, Pcg32(16))
        assert np.isfinite(res.final_loss)


class TestDft:
    def test_round_trip(self):
        x = Pcg32(17).normal(0, 1, (6, 9))
        np.testing.assert_allclose(idft2d(dft2d(x)).real, x, atol=1e-10)

    def test_parseval(self):
        x = Pcg32(18).normal(0, 1, (8, 8))
        spectral = np.abs(dft2d(x)) ** 2
        np.testing.assert_allclose(
            (x**2).sum(), spectral.sum() / 64.0, rtol=1e-8
        )

    def test_delta_gives_flat_spectrum(self):
        x = np.zeros((5, 5))
        x[0, 0] = 1.0
        np.testing.assert_allclose(dft2d(x), np.ones((5, 5)), atol=1e-12)


class TestWiener:
    def test_delta_kernel_identity(self):
        img = Pcg32(19).normal(0, 1, (8, 8))
        k = ConvKernel(np.array([[1.0]]))
        np.testing.assert_allclose(wiener_deconvolve(img, k, 0.0), img, atol=1e-10)

    def test_noiseless_circular_recovery(self):
        # the regularizer must sit below the kernel's spectral floor for
        # near-exact inversion; 5x5 sigma=1 keeps min |H| ~ 5e-4
        rng = Pcg32(20)
        img = rng.normal(0, 0.5, (16, 16))
        k = gaussian_kernel(5, 1.0)
        blurred = circular_apply(img, k)
        restored = wiener_deconvolve(blurred, k, 1e-12)
        rmse = float(np.sqrt(np.mean((restored - img) ** 2)))
        assert rmse < 1e-3

    def test_noiseless_recovery_severe_kernel_unregularized(self):
        # with k_reg = 0 the filter is the exact inverse even when the
        # spectrum nearly vanishes (noiseless, float64)
        rng = Pcg32(20)
        img = rng.normal(0, 0.5, (16, 16))
        k = gaussian_kernel(7, 1.5)
        restored = wiener_deconvolve(circular_apply(img, k), k, 0.0)
        assert float(np.sqrt(np.mean((restored - img) ** 2))) < 1e-9

    def test_large_regularization_kills_output(self):
        img = Pcg32(21).normal(0, 1, (8, 8))
        out = wiener_deconvolve(img, gaussian_kernel(3, 1.0), 1e12)
        assert np.abs(out).max() < 1e-9

    def test_negative_regularization_rejected(self):
        with pytest.raises(ValueError):
            wiener_deconvolve(np.zeros((4, 4)), gaussian_kernel(3, 1.0), -1.0)

    def test_multichannel(self):
        img = Pcg32(22).normal(0, 1, (3, 8, 8))
        k = gaussian_kernel(3, 1.0)
        out = wiener_deconvolve(circular_apply(img, k), k, 1e-12)
        np.testing.assert_allclose(out, img, atol=1e-6)

    def test_spectrum_matches_circular_apply(self):
        rng = Pcg32(23)
        img = rng.normal(0, 1, (8, 8))
        k = ConvKernel(rng.normal(0, 1, (3, 3)))
        via_fft = idft2d(dft2d(img) * kernel_spectrum(k, 8, 8)).real
        np.testing.assert_allclose(via_fft, circular_apply(img, k), atol=1e-10)


class TestFastIca:
    def _mixed_uniform(self, n_obs, s, n, seed):
        rng = Pcg32(seed)
        sources = rng.uniform(-1, 1, (s, n))
        mix = rng.normal(0, 1, (n_obs, s))
        return sources, mix @ sources

    def test_separates_two_uniform_sources(self):
        sources, mixed = self._mixed_uniform(2, 2, 4000, 24)
        result = fastica(mixed, 2, rng=Pcg32(25))
        assert result.converged
        for comp in result.components:
            best = max(
                abs(np.corrcoef(comp, sources[i])[0, 1]) for i in range(2)
            )
            assert best > 0.95
        # distinct sources claimed by distinct components
        claims = [
            int(np.argmax([abs(np.corrcoef(c, sources[i])[0, 1]) for i in range(2)]))
            for c in result.components
        ]
        assert sorted(claims) == [0, 1]

    def test_unmixing_is_orthonormal(self):
        _, mixed = self._mixed_uniform(3, 3, 3000, 26)
        result = fastica(mixed, 3, rng=Pcg32(27))
        np.testing.assert_allclose(
            result.unmixing @ result.unmixing.T, np.eye(3), atol=1e-8
        )

    def test_single_component_returns_whitened_mixture(self):
        _, mixed = self._mixed_uniform(2, 2, 1000, 28)
        result = fastica(mixed, 1, rng=Pcg32(29))
        z = result.components
        assert z.shape == (1, 1000)
        np.testing.assert_allclose(z.mean(), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.var(ddof=1), 1.0, atol=1e-8)

    def test_underdetermined_rejected(self):
        with pytest.raises(UnderdeterminedError, match="underdetermined"):
            fastica(np.zeros((2, 100)), 3)

    def test_scale_invariance_up_to_sign_permutation(self):
        _, mixed = self._mixed_uniform(2, 2, 3000, 30)
        a = fastica(mixed, 2, rng=Pcg32(31)).components
        b = fastica(100.0 * mixed, 2, rng=Pcg32(31)).components
        for comp in a:
            best = max(abs(np.corrcoef(comp, other)[0, 1]) for other in b)
            assert best > 0.999

    def test_iteration_cap_flags_non_convergence(self):
        _, mixed = self._mixed_uniform(3, 3, 500, 32)
        result = fastica(mixed, 3, rng=Pcg32(33), max_iter=1)
        assert not result.converged
        assert result.n_iter == 1
        assert result.components.shape == (3, 500)
