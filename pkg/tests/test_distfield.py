"""Exact distance transform and signed level-set fields.

The load-bearing oracle is a brute-force all-pairs nearest-reference
search; both the compiled and the pure-Python backend must match it
exactly (squared distances are integers, so exact equality is fair).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierseg import distfield
from hierseg._edt_py import squared_edt as squared_edt_py

from oracles import brute_force_sq_edt

try:
    from hierseg._edt_fast import squared_edt as squared_edt_fast
    HAVE_FAST = True
except ImportError:  # pragma: no cover - depends on build environment
    HAVE_FAST = False

BACKENDS = [pytest.param(squared_edt_py, id="python")]
if HAVE_FAST:
    BACKENDS.append(pytest.param(squared_edt_fast, id="compiled"))


def random_nonempty_mask(rng, max_side=64):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    mask = rng.random((h, w)) < rng.uniform(0.02, 0.6)
    if not mask.any():
        mask[rng.integers(h), rng.integers(w)] = True
    return mask


@pytest.mark.parametrize("backend", BACKENDS)
class TestSquaredEdtOracle:
    def test_fifty_random_masks_match_brute_force(self, backend):
        rng = np.random.default_rng(20240915)
        for _ in range(50):
            mask = random_nonempty_mask(rng)
            got = backend(np.ascontiguousarray(mask))
            want = brute_force_sq_edt(mask)
            assert np.max(np.abs(got - want)) <= 1e-9

    def test_all_true_mask_is_zero(self, backend):
        mask = np.ones((5, 7), dtype=bool)
        assert not backend(mask).any()

    def test_single_row_example(self, backend):
        mask = np.array([[False, False, True, False]])
        got = np.sqrt(backend(mask))
        assert got.tolist() == [[2.0, 1.0, 0.0, 1.0]]

    def test_center_pixel_example(self, backend):
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        got = np.sqrt(backend(mask))
        assert got[1, 1] == 0.0
        assert got[0, 1] == got[1, 0] == got[1, 2] == got[2, 1] == 1.0
        corners = [got[0, 0], got[0, 2], got[2, 0], got[2, 2]]
        assert corners == pytest.approx([np.sqrt(2)] * 4)


class TestBackendsAgree:
    @pytest.mark.skipif(not HAVE_FAST, reason="compiled backend not built")
    def test_backends_bit_identical(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            mask = random_nonempty_mask(rng, max_side=48)
            a = squared_edt_py(np.ascontiguousarray(mask))
            b = squared_edt_fast(np.ascontiguousarray(mask))
            assert np.array_equal(a, b)

    def test_backend_name_is_reported(self):
        assert distfield.EDT_BACKEND in ("compiled", "python")


class TestEdt:
    def test_empty_reference_raises(self):
        with pytest.raises(ValueError, match="empty reference"):
            distfield.edt(np.zeros((3, 3), dtype=bool))

    @given(st.integers(0, 2**31 - 1), st.integers(-5, 5), st.integers(-5, 5))
    @settings(max_examples=30, deadline=None)
    def test_translation_equivariance(self, seed, dy, dx):
        # Shifting the reference set shifts the distance field with it
        # (comparing the overlap region only).
        rng = np.random.default_rng(seed)
        base = np.zeros((24, 24), dtype=bool)
        ys = rng.integers(8, 16, size=5)
        xs = rng.integers(8, 16, size=5)
        base[ys, xs] = True
        shifted = np.roll(np.roll(base, dy, axis=0), dx, axis=1)
        d0 = distfield.edt(base)
        d1 = distfield.edt(shifted)
        # Only compare where both fields see the same set of nearest points:
        # keep the central region farther from the border than the shift.
        m = 8
        assert np.allclose(d1[m + dy:16 + dy, m + dx:16 + dx],
                           d0[m:16, m:16])


class TestLevelSet:
    def test_single_row_example(self):
        phi = distfield.level_set(np.array([[False, True, False]]))
        assert phi.tolist() == [[1.0, -1.0, 1.0]]

    def test_center_true_example(self):
        g = np.zeros((3, 3), dtype=bool)
        g[1, 1] = True
        phi = distfield.level_set(g)
        assert phi[1, 1] == -1.0
        assert phi[0, 1] == phi[1, 0] == phi[1, 2] == phi[2, 1] == 1.0
        assert phi[0, 0] == pytest.approx(np.sqrt(2))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_sign_flip_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.random((12, 12)) < 0.4
        if not g.any() or g.all():
            g[0, 0] = True
            g[-1, -1] = False
        phi = distfield.level_set(g)
        assert np.array_equal(distfield.level_set(~g), -phi)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_sign_convention_and_magnitude(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.random((10, 14)) < 0.3
        if not g.any() or g.all():
            g[2, 3] = True
            g[5, 5] = False
        phi = distfield.level_set(g)
        assert (phi[g] < 0).all()
        assert (phi[~g] > 0).all()
        assert np.min(np.abs(phi)) >= 1.0

    @pytest.mark.parametrize("bad", [np.zeros((4, 4), dtype=bool),
                                     np.ones((4, 4), dtype=bool)])
    def test_degenerate_masks_raise(self, bad):
        with pytest.raises(ValueError, match="degenerate"):
            distfield.level_set(bad)


def test_env_override_selects_python_backend():
    # The selector honors HIERSEG_EDT=python in a fresh interpreter.
    import os
    import subprocess
    import sys

    code = "import hierseg.distfield as d; print(d.EDT_BACKEND)"
    out = subprocess.run([sys.executable, "-c", code],
                         env={**os.environ, "HIERSEG_EDT": "python"},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
