"""Augmentation semantics: operator labels, patch mixing, determinism."""

import numpy as np
import pytest
from scipy import stats

from fasbench.errors import ConfigError, ContractError, ShapeError
from fasbench.imageops import luminance
from fasbench.labels import LIVE, SPOOF, UNLABELED
from fasbench.augment import (
    ARTIFACT_CATEGORIES,
    CATEGORY_PHOTO,
    OPERATORS,
    AugConfig,
    ImageSample,
    apply_fas_aug,
    apply_operator,
    apply_pda,
    augment_sample,
    horizontal_flip,
    moire,
    sample_rng,
    standard_augs,
)

rng = np.random.default_rng(47)


def make_sample(label=LIVE, size=32, sid="s0", domain="d0", patch_labels=None):
    return ImageSample(
        pixels=rng.random((3, size, size)),
        label=label,
        domain=domain,
        sample_id=sid,
        patch_labels=patch_labels,
    )


class TestImageSample:
    def test_live_with_spoof_patch_label_rejected(self):
        with pytest.raises(ContractError):
            make_sample(label=LIVE, patch_labels=np.array([LIVE, SPOOF, LIVE, LIVE]))

    def test_bad_label_rejected(self):
        with pytest.raises(ContractError):
            make_sample(label=7)


class TestAugConfig:
    def test_defaults_valid(self):
        AugConfig()

    def test_bad_probability(self):
        with pytest.raises(ConfigError):
            AugConfig(p_fas_aug=1.5)

    def test_degenerate_range(self):
        with pytest.raises(ConfigError):
            AugConfig(noise_sigma=(0.05, 0.05))


class TestOperatorLabels:
    def test_live_plus_moire_becomes_spoof(self):
        out = apply_operator(make_sample(LIVE), "moire", AugConfig(), np.random.default_rng(0))
        assert out.label == SPOOF

    def test_live_plus_low_resolution_stays_live(self):
        out = apply_operator(
            make_sample(LIVE), "low_resolution", AugConfig(), np.random.default_rng(0)
        )
        assert out.label == LIVE

    def test_moire_label_idempotent(self):
        cfg = AugConfig()
        out = apply_operator(make_sample(LIVE), "moire", cfg, np.random.default_rng(0))
        out = apply_operator(out, "moire", cfg, np.random.default_rng(1))
        assert out.label == SPOOF

    def test_artifact_overwrites_patch_labels(self):
        s = make_sample(SPOOF, patch_labels=np.array([LIVE, SPOOF, LIVE, SPOOF]))
        out = apply_operator(s, "halftone", AugConfig(), np.random.default_rng(0))
        np.testing.assert_array_equal(out.patch_labels, SPOOF)

    def test_all_outputs_in_range(self):
        cfg = AugConfig()
        for i, name in enumerate(OPERATORS):
            out = apply_operator(make_sample(SPOOF, sid=f"s{i}"), name,
                                 cfg, np.random.default_rng(i))
            assert np.isfinite(out.pixels).all(), name
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0, name

    def test_inputs_never_mutated(self):
        s = make_sample(LIVE)
        before = s.pixels.copy()
        for i, name in enumerate(OPERATORS):
            apply_operator(s, name, AugConfig(), np.random.default_rng(i))
        np.testing.assert_array_equal(s.pixels, before)
        assert s.provenance == []


class TestApplyFasAug:
    def test_probability_zero_is_identity(self):
        cfg = AugConfig(p_fas_aug=0.0)
        s = make_sample(LIVE)
        r = np.random.default_rng(1)
        for _ in range(1000):
            out = apply_fas_aug(s, r, cfg)
            assert out is s

    def test_label_semantics_over_corpus(self):
        cfg = AugConfig(p_fas_aug=1.0)
        violations = 0
        for i in range(2000):
            label = LIVE if i % 2 == 0 else SPOOF
            s = make_sample(label, size=16, sid=f"c{i}")
            out = apply_fas_aug(s, sample_rng(0, s.sample_id, 0), cfg)
            assert len(out.provenance) == 1
            rec = out.provenance[0]
            if rec["category"] in ARTIFACT_CATEGORIES:
                if out.label != SPOOF:
                    violations += 1
            elif rec["category"] == CATEGORY_PHOTO:
                if out.label != label:
                    violations += 1
            if not (np.isfinite(out.pixels).all()
                    and 0.0 <= out.pixels.min() and out.pixels.max() <= 1.0):
                violations += 1
        assert violations == 0

    def test_selection_uses_all_operators(self):
        cfg = AugConfig(p_fas_aug=1.0)
        seen = set()
        for i in range(400):
            out = apply_fas_aug(make_sample(SPOOF, size=16, sid=f"u{i}"),
                                sample_rng(1, f"u{i}", 0), cfg)
            seen.add(out.provenance[0]["op"])
        assert seen == set(OPERATORS)

    def test_out_of_range_pixels_rejected(self):
        s = make_sample(LIVE)
        s.pixels[0, 0, 0] = 1.5
        with pytest.raises(ContractError):
            apply_fas_aug(s, np.random.default_rng(0), AugConfig())


class TestMoire:
    def test_amplitude_zero_identity(self):
        img = rng.random((3, 16, 16))
        np.testing.assert_array_equal(moire(img, 0.3, 30.0, 0.0), img)

    def test_amplitude_bounds(self):
        img = rng.random((3, 8, 8))
        with pytest.raises(ContractError):
            moire(img, 0.3, 30.0, 0.6)

    def test_fft_peaks_at_grating_frequencies(self):
        # Fixed parameters on constant gray; the luminance spectrum must show
        # its two strongest components at the two grating frequencies.
        n = 64
        img = np.full((3, n, n), 0.5)
        out = moire(img, frequency=0.3, angle_deg=30.0, amplitude=0.1)
        lum = luminance(out)
        mag = np.abs(np.fft.fft2(lum - lum.mean()))

        def expected_bin(freq, angle_deg):
            theta = np.deg2rad(angle_deg)
            return n * freq * np.sin(theta), n * freq * np.cos(theta)

        targets = [expected_bin(0.3, 30.0), expected_bin(0.3 * 1.08, 34.0)]

        half = mag[: n // 2 + 1].copy()  # keep one of each conjugate pair
        found = []
        for _ in range(2):
            ky, kx = np.unravel_index(np.argmax(half), half.shape)
            found.append((ky, kx if kx <= n // 2 else kx - n))
            half[max(0, ky - 2) : ky + 3, max(0, kx - 2) : kx + 3] = 0.0
        for ky, kx in found:
            dist = min(np.hypot(ky - ty, kx - tx) for ty, tx in targets)
            assert dist <= 2.0, f"peak at ({ky},{kx}) not near either grating"
        # The two peaks must belong to distinct gratings.
        d0 = [np.hypot(found[0][0] - ty, found[0][1] - tx) for ty, tx in targets]
        d1 = [np.hypot(found[1][0] - ty, found[1][1] - tx) for ty, tx in targets]
        assert np.argmin(d0) != np.argmin(d1)


class TestApplyPda:
    def _pair(self, size=32):
        return make_sample(SPOOF, size=size, sid="sp"), make_sample(LIVE, size=size, sid="lv")

    def test_all_patches_replaced_at_probability_one(self):
        spoof, live = self._pair()
        cfg = AugConfig(p_pda_patch=1.0, patch_size=8)
        out = apply_pda(spoof, live, np.random.default_rng(0), cfg)
        np.testing.assert_array_equal(out.pixels, live.pixels)
        np.testing.assert_array_equal(out.patch_labels, LIVE)
        assert out.label == SPOOF

    def test_replaced_patches_copy_exactly(self):
        spoof, live = self._pair()
        cfg = AugConfig(patch_size=8)
        out = apply_pda(spoof, live, np.random.default_rng(3), cfg)
        grid = 32 // 8
        labels = out.patch_labels.reshape(grid, grid)
        for gy in range(grid):
            for gx in range(grid):
                block = (slice(None), slice(gy * 8, (gy + 1) * 8), slice(gx * 8, (gx + 1) * 8))
                source = live if labels[gy, gx] == LIVE else spoof
                np.testing.assert_array_equal(out.pixels[block], source.pixels[block])

    def test_wrong_labels_rejected(self):
        spoof, live = self._pair()
        with pytest.raises(ContractError):
            apply_pda(live, spoof, np.random.default_rng(0), AugConfig())

    def test_geometry_mismatch_rejected(self):
        spoof = make_sample(SPOOF, size=32)
        live = make_sample(LIVE, size=16)
        with pytest.raises(ShapeError):
            apply_pda(spoof, live, np.random.default_rng(0), AugConfig())

    def test_replacement_statistics(self):
        # 256 patches (patch_size 2 on 32px), 10^4 trials.
        cfg = AugConfig(patch_size=2)
        spoof, live = self._pair()
        trials = 10_000
        counts = np.empty(trials, dtype=np.int64)
        r = np.random.default_rng(123)
        for i in range(trials):
            out = apply_pda(spoof, live, r, cfg)
            counts[i] = int((out.patch_labels == LIVE).sum())
        num_patches = 256
        mean_fraction = counts.mean() / num_patches
        sigma_mean = 0.5 / np.sqrt(num_patches * trials)
        assert abs(mean_fraction - 0.5) < 3.0 * sigma_mean

        # Chi-square goodness of fit against Binomial(256, 0.5).
        ks = np.arange(num_patches + 1)
        pmf = stats.binom.pmf(ks, num_patches, 0.5)
        observed = np.bincount(counts, minlength=num_patches + 1).astype(np.float64)
        expected = pmf * trials
        keep = expected >= 5.0
        obs = np.concatenate([[observed[~keep].sum()], observed[keep]])
        exp = np.concatenate([[expected[~keep].sum()], expected[keep]])
        stat = ((obs - exp) ** 2 / exp).sum()
        p_value = stats.chi2.sf(stat, df=len(obs) - 1)
        assert p_value > 0.001


class TestStandardAugs:
    def test_flip_twice_identity(self):
        s = make_sample(SPOOF, patch_labels=rng.integers(0, 2, size=16))
        out = horizontal_flip(horizontal_flip(s, 8), 8)
        np.testing.assert_array_equal(out.pixels, s.pixels)
        np.testing.assert_array_equal(out.patch_labels, s.patch_labels)

    def test_flip_mirrors_patch_labels(self):
        labels = np.arange(16) % 2
        s = make_sample(SPOOF, patch_labels=labels.copy())
        out = horizontal_flip(s, 8)
        np.testing.assert_array_equal(
            out.patch_labels.reshape(4, 4), labels.reshape(4, 4)[:, ::-1]
        )

    def test_brightness_matches_provenance_factor(self):
        cfg = AugConfig(rotation_degrees=0.0)
        s = make_sample(LIVE)
        r = np.random.default_rng(6)  # first draw >= 0.5: no flip
        assert np.random.default_rng(6).random() >= 0.5
        out = standard_augs(s, r, cfg)
        factor = [rec for rec in out.provenance if rec["op"] == "brightness"][0]["params"]["factor"]
        np.testing.assert_allclose(out.pixels, np.clip(s.pixels * factor, 0, 1), atol=1e-12)

    def test_rotation_unlabels_patches(self):
        cfg = AugConfig(rotation_degrees=10.0)
        s = make_sample(SPOOF, patch_labels=rng.integers(0, 2, size=16))
        out = standard_augs(s, np.random.default_rng(0), cfg)
        np.testing.assert_array_equal(out.patch_labels, UNLABELED)

    def test_rotation_disabled_keeps_patch_labels(self):
        cfg = AugConfig(rotation_degrees=10.0)
        labels = rng.integers(0, 2, size=16)
        s = make_sample(SPOOF, patch_labels=labels.copy())
        out = standard_augs(s, np.random.default_rng(6), cfg, allow_rotation=False)
        # No flip with this seed, so labels are untouched.
        np.testing.assert_array_equal(out.patch_labels, labels)

    def test_label_never_changes(self):
        for label in (LIVE, SPOOF):
            out = standard_augs(make_sample(label), np.random.default_rng(2), AugConfig())
            assert out.label == label


class TestDeterminism:
    def test_keyed_rng_reproducible(self):
        a = sample_rng(7, "video3/frame2", 5).random(8)
        b = sample_rng(7, "video3/frame2", 5).random(8)
        np.testing.assert_array_equal(a, b)

    def test_keyed_rng_varies_with_inputs(self):
        base = sample_rng(7, "x", 0).random(4)
        assert not np.array_equal(base, sample_rng(8, "x", 0).random(4))
        assert not np.array_equal(base, sample_rng(7, "y", 0).random(4))
        assert not np.array_equal(base, sample_rng(7, "x", 1).random(4))

    def test_full_pipeline_reproducible(self):
        cfg = AugConfig(p_fas_aug=1.0, p_pda=1.0)
        live_pool = [make_sample(LIVE, sid=f"lp{i}") for i in range(3)]
        base = make_sample(SPOOF, sid="pipe")

        def run():
            return augment_sample(base, live_pool, sample_rng(0, "pipe", 2), cfg)

        a, b = run(), run()
        np.testing.assert_array_equal(a.pixels, b.pixels)
        assert a.label == b.label
        assert a.provenance == b.provenance
        if a.patch_labels is not None:
            np.testing.assert_array_equal(a.patch_labels, b.patch_labels)

    def test_pipeline_skips_rotation_after_patch_mix(self):
        cfg = AugConfig(p_fas_aug=0.0, p_pda=1.0, rotation_degrees=10.0)
        live_pool = [make_sample(LIVE, sid="lp")]
        for i in range(50):
            out = augment_sample(make_sample(SPOOF, sid=f"m{i}"), live_pool,
                                 sample_rng(3, f"m{i}", 0), cfg)
            ops = [rec["op"] for rec in out.provenance]
            assert "pda" in ops
            assert "rotation" not in ops
            assert np.all(out.patch_labels != UNLABELED)
