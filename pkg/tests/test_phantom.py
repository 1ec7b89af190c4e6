import numpy as np
import pytest

from fixsearch.errors import ConfigError
from fixsearch.phantom import (LesionSpec, PhantomSpec, background, generate, lesion_profile,
                               suite_spec)


def small(**kw):
    base = dict(width=128, height=128, n_blobs=60, lesion=LesionSpec(center=(64, 64), radius=10.0))
    base.update(kw)
    return PhantomSpec(**base)


def test_same_seed_bit_identical():
    a, ta = generate(small(seed=4))
    b, tb = generate(small(seed=4))
    assert a.data.tobytes() == b.data.tobytes()
    assert ta == tb


def test_different_seed_differs():
    assert not np.array_equal(generate(small(seed=1))[0].data, generate(small(seed=2))[0].data)


def test_no_lesion_no_truth():
    img, truth = generate(small(lesion=None))
    assert truth is None
    assert img.shape == (128, 128)


def test_zero_contrast_equals_background_plus_noise():
    spec = small(lesion=LesionSpec(center=(64, 64), radius=10.0, contrast=0.0))
    img, _ = generate(spec)
    bare, _ = generate(small(lesion=None))
    assert img.data.tobytes() == bare.data.tobytes()


def test_lesion_raises_disk_over_annulus():
    les = LesionSpec(center=(64, 64), radius=10.0, contrast=4.0, spicules=0)
    spec = small(lesion=les, noise_sigma=0.0, n_blobs=0)
    img, _ = generate(spec)
    yy, xx = np.mgrid[0:128, 0:128]
    r = np.hypot(xx - 64, yy - 64)
    disk = img.data[r <= 10].mean()
    ring = img.data[(r > 10) & (r <= 10 * np.sqrt(2))].mean()
    # dome mean over the disk is contrast / 2
    assert disk - ring == pytest.approx(2.0, rel=0.05)


def test_lesion_profile_peak_and_support():
    spec = small(lesion=LesionSpec(center=(64, 64), radius=10.0, contrast=3.0, spicules=0))
    prof = lesion_profile(spec)
    assert prof[64, 64] == 3.0
    assert prof[64, 80] == 0.0


def test_density_variance_ordering():
    var = {}
    for d in ("fatty", "scattered", "heterogeneous"):
        var[d] = np.mean([background(PhantomSpec(seed=s, density_class=d, lesion=None)).var()
                          for s in range(3)])
    assert var["heterogeneous"] > var["scattered"] > var["fatty"]


def test_lesion_must_fit():
    with pytest.raises(ConfigError):
        PhantomSpec(width=64, height=64, lesion=LesionSpec(center=(5, 32), radius=10.0))
    with pytest.raises(ConfigError):
        PhantomSpec(density_class="dense")


def test_suite_cycles_density_and_keeps_margin():
    seen = set()
    for s in range(20):
        spec = suite_spec(s)
        seen.add(spec.density_class)
        x, y = spec.lesion.center
        assert min(x, y, 511 - x, 511 - y) >= 100
    assert seen == {"fatty", "scattered", "heterogeneous"}


def test_pitch_recorded():
    img, _ = generate(small(pitch_mm=0.085))
    assert img.pitch_mm == 0.085
