import numpy as np
import pytest

from levelseg.autoconfig import (Fingerprint, PlanConfig, fingerprint, plan,
                                 poly_lr)
from levelseg.data import Sample, synth_generate
from levelseg.errors import (EmptyDataset, ImageTooSmall, InconsistentShapes,
                             PlanInvalid)

from oracles import two_pass_mean_std


def make_samples(n, h, w, fill=None, rng=None):
    out = []
    for i in range(n):
        if fill is not None:
            img = np.full((h, w, 1), fill, dtype=np.float32)
        else:
            img = rng.random((h, w, 1)).astype(np.float32)
        out.append(Sample(image=img, label=np.zeros((h, w), np.uint8),
                          sample_id=f"x{i}"))
    return out


class TestFingerprint:
    def test_bookkeeping(self, rng):
        fp = fingerprint(make_samples(20, 256, 256, rng=rng), classes=2)
        assert (fp.height, fp.width, fp.channels, fp.classes) == (256, 256, 1, 2)
        assert fp.sample_count == 20

    def test_constant_images_clamp_std(self):
        fp = fingerprint(make_samples(3, 64, 64, fill=0.0), classes=2)
        assert fp.intensity_mean == (0.0,)
        assert fp.intensity_std == (1e-8,)

    def test_matches_two_pass_oracle(self):
        samples = synth_generate(21, 8, size=64)
        fp = fingerprint(samples, classes=2)
        mean, std = two_pass_mean_std([s.image for s in samples])
        assert fp.intensity_mean[0] == pytest.approx(mean[0], abs=1e-10)
        assert fp.intensity_std[0] == pytest.approx(std[0], abs=1e-10)

    def test_empty_dataset(self):
        with pytest.raises(EmptyDataset):
            fingerprint([], classes=2)

    def test_inconsistent_shapes(self, rng):
        samples = make_samples(2, 64, 64, rng=rng) + make_samples(1, 32, 32, rng=rng)
        with pytest.raises(InconsistentShapes):
            fingerprint(samples, classes=2)

    def test_round_trip(self, rng):
        fp = fingerprint(make_samples(2, 64, 64, rng=rng), classes=2)
        assert Fingerprint.from_dict(fp.to_dict()) == fp


def fp_of_size(h, w=None):
    w = w or h
    return Fingerprint(height=h, width=w, channels=1, classes=2,
                       intensity_mean=(0.0,), intensity_std=(1.0,),
                       spacing=(1.0, 1.0), sample_count=4)


class TestPlan:
    def test_256_rules(self):
        p = plan(fp_of_size(256))
        assert p.num_stages == 6
        assert p.features_per_stage == (32, 64, 128, 256, 512, 512, 512)
        assert p.batch_size == 12
        assert p.kernel_size == 3
        assert p.learning_rate == 0.01

    def test_32_rules(self):
        p = plan(fp_of_size(32))
        assert p.num_stages == 3
        assert p.features_per_stage == (32, 64, 128, 256)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            plan(fp_of_size(31))

    def test_indivisible_dims_rejected(self):
        with pytest.raises(PlanInvalid):
            plan(fp_of_size(100))  # needs divisibility by 2**4

    def test_batch_clamps(self):
        assert plan(fp_of_size(64)).batch_size == 12
        assert plan(fp_of_size(1024)).batch_size == 4
        assert plan(fp_of_size(2048)).batch_size == 2

    def test_determinism(self):
        fp = fp_of_size(128)
        assert plan(fp) == plan(fp)

    def test_monotone_stages(self):
        sizes = [32, 64, 96, 128, 192, 256, 512]
        stages = [plan(fp_of_size(s)).num_stages for s in sizes]
        assert stages == sorted(stages)

    def test_downsampling_safety(self):
        for s in (32, 64, 96, 128, 160, 256, 512):
            p = plan(fp_of_size(s))
            assert s // (2 ** p.num_stages) >= 4

    def test_features_increase_then_cap(self):
        feats = plan(fp_of_size(512)).features_per_stage
        diffs = np.diff(feats)
        assert (diffs >= 0).all()
        assert feats[-1] == 512

    def test_round_trip(self):
        p = plan(fp_of_size(64))
        assert PlanConfig.from_dict(p.to_dict()) == p

    def test_poly_lr_decay(self):
        p = plan(fp_of_size(64), max_epochs=100)
        assert poly_lr(p, 0) == 0.01
        assert poly_lr(p, 50) == pytest.approx(0.01 * 0.5 ** 0.9)
        assert poly_lr(p, 99) < 0.001
