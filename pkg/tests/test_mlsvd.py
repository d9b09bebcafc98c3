import numpy as np
import pytest

from cpdkit.core import multilinear_multiply, unfold
from cpdkit.generators import warmup_tensor
from cpdkit.mlsvd import (EXACT, SvdMethod, compress, energy_profile, reconstruct,
                          select_rank, truncated_svd, truncation_errors)

# relative error of every truncation of the warm-up core, as tabulated in the source
TRUNCATION_TABLE = {
    (1, 1, 1): 0.04345277, (1, 1, 2): 0.04345277, (1, 1, 3): 0.04345276,
    (1, 2, 1): 0.04345198, (1, 3, 1): 0.04345198, (2, 1, 1): 0.04345156,
    (3, 1, 1): 0.04345154, (2, 2, 1): 0.04330007, (2, 3, 1): 0.04321934,
    (3, 2, 1): 0.04255157, (3, 3, 1): 0.04246718, (2, 1, 2): 0.03591381,
    (3, 1, 2): 0.03588523, (2, 1, 3): 0.03572117, (3, 1, 3): 0.03549749,
    (1, 2, 2): 0.02888081, (1, 3, 2): 0.02887894, (1, 2, 3): 0.02871292,
    (1, 3, 3): 0.02869078, (2, 2, 2): 0.01093718, (2, 3, 2): 0.01060795,
    (2, 2, 3): 0.00964929, (2, 3, 3): 0.00919564, (3, 2, 2): 0.00720686,
    (3, 3, 2): 0.00668082, (3, 2, 3): 0.00296115, (3, 3, 3): 0.0,
}


class TestTruncatedSvd:
    @pytest.mark.parametrize("kind", ["exact", "randomized"])
    def test_matches_lapack(self, rng, kind):
        m = rng.standard_normal((30, 8)) @ rng.standard_normal((8, 40))
        u, s, vt = truncated_svd(m, 5, SvdMethod(kind))
        ref = np.linalg.svd(m, compute_uv=False)[:5]
        assert np.allclose(s, ref, rtol=1e-10)
        assert np.allclose(u.T @ u, np.eye(5), atol=1e-12)

    def test_exact_low_rank_reconstruction(self, rng):
        m = rng.standard_normal((20, 3)) @ rng.standard_normal((3, 50))
        u, s, vt = truncated_svd(m, 3, EXACT)
        assert np.linalg.norm(u * s @ vt - m) <= 1e-10 * np.linalg.norm(m)

    def test_sign_convention(self, rng):
        m = rng.standard_normal((6, 9))
        u, _, _ = truncated_svd(m, 4, EXACT)
        idx = np.argmax(np.abs(u), axis=0)
        assert np.all(u[idx, np.arange(4)] > 0)

    def test_gram_fallback_ill_conditioned(self, rng):
        # tiny trailing singular value: the Gram route would lose it entirely
        q1, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        q2, _ = np.linalg.qr(rng.standard_normal((40, 5)))
        s = np.array([1, 1e-2, 1e-4, 1e-7, 1e-10])
        m = (q1 * s) @ q2.T
        _, got, _ = truncated_svd(m, 5, EXACT)
        assert np.allclose(got, s, rtol=1e-4)

    def test_bad_k(self):
        with pytest.raises(ValueError):
            truncated_svd(np.ones((3, 4)), 4)

    def test_nonfinite(self):
        with pytest.raises(FloatingPointError):
            truncated_svd(np.array([[1.0, np.nan], [0.0, 1.0]]), 1)

    def test_seeded(self, rng):
        m = rng.standard_normal((50, 60))
        a = truncated_svd(m, 3, SvdMethod(seed=4))
        b = truncated_svd(m, 3, SvdMethod(seed=4))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


class TestSelectRank:
    def test_strict_inequality(self):
        # tail energy exactly tol after one value is not enough
        s = np.sqrt([0.9, 0.1])
        assert select_rank(s, 0.1) == 2
        assert select_rank(s, 0.1000001) == 1

    def test_zero_tol_keeps_everything(self):
        assert select_rank([3.0, 2.0, 1.0], 0.0) == 3

    def test_zero_tensor(self):
        assert select_rank([0.0, 0.0], 1e-6) == 1


class TestCompress:
    def test_warmup_trunc_dims(self):
        t = warmup_tensor()
        res = compress(t, 3, 1e-6)
        assert res.trunc_dims == (3, 3, 3)
        assert np.linalg.norm(t - reconstruct(res)) / np.linalg.norm(t) <= 1e-12

    def test_bases_orthonormal(self):
        res = compress(warmup_tensor(), 3)
        for u in res.bases:
            assert np.allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-12)

    def test_core_is_projection(self):
        t = warmup_tensor()
        res = compress(t, 3, svd=EXACT)
        expect = multilinear_multiply([u.T for u in res.bases], t)
        assert np.allclose(res.core, expect, atol=1e-12)

    def test_sequential_agrees_on_exact_multilinear_rank(self, rng):
        core = rng.standard_normal((2, 3, 2))
        us = [np.linalg.qr(rng.standard_normal((d, r)))[0] for d, r in ((6, 2), (7, 3), (5, 2))]
        t = multilinear_multiply(us, core)
        for variant in ("classic", "sequential"):
            res = compress(t, 5, 1e-10, variant=variant)
            assert res.trunc_dims == (2, 3, 2)
            assert np.linalg.norm(t - reconstruct(res)) <= 1e-10 * np.linalg.norm(t)

    def test_rank_cap_limits(self, rng):
        t = rng.standard_normal((6, 5, 4))
        assert compress(t, 2, 0.0).trunc_dims == (2, 2, 2)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            compress(np.ones((2, 2)), 0)
        with pytest.raises(ValueError):
            compress(np.ones((2, 2)), 1, variant="other")
        with pytest.raises(ValueError):
            compress(np.ones((2, 2)), 1, -1.0)


class TestTruncationErrors:
    def test_source_table(self):
        t = warmup_tensor()
        res = compress(t, 3, 1e-6, svd=EXACT)
        errs = truncation_errors(t, res)
        assert len(errs) == 27
        for shape, want in TRUNCATION_TABLE.items():
            assert errs[shape] == pytest.approx(want, abs=1e-6), shape

    def test_marginal_grid_order4(self, rng):
        t = rng.standard_normal((3, 3, 3, 3))
        res = compress(t, 3, 0.0)
        errs = truncation_errors(t, res, grid="marginal")
        assert errs[(3, 3, 3, 3)] < 1e-12
        with pytest.raises(ValueError):
            truncation_errors(t, res, grid="full")

    def test_errors_shrink_with_more_rows(self):
        t = warmup_tensor()
        errs = truncation_errors(t, compress(t, 3, svd=EXACT))
        assert errs[(1, 1, 1)] >= errs[(2, 2, 2)] >= errs[(3, 3, 3)]


class TestEnergy:
    def test_profile_equals_singular_values(self):
        t = warmup_tensor()
        res = compress(t, 3, svd=EXACT)
        for l in range(3):
            sv = np.linalg.svd(unfold(t, l), compute_uv=False)[:3]
            assert np.allclose(energy_profile(res.core, l), sv, rtol=1e-10)

    def test_profile_nonincreasing(self):
        res = compress(warmup_tensor(), 3)
        for l in range(3):
            e = energy_profile(res.core, l)
            assert np.all(np.diff(e) <= 1e-12)
