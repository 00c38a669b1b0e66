"""Kernel tests: backend cross-agreement plus finite-difference oracles."""

import numpy as np
import pytest

from scribblecap.kernels import _numpy as knp
from scribblecap import kernels

from gradcheck import finite_difference, assert_grads_close

try:
    from scribblecap.kernels import _core as kext
except ImportError:
    kext = None

BACKENDS = [pytest.param(knp, id="python")]
if kext is not None:
    BACKENDS.append(pytest.param(kext, id="compiled"))

RNG = np.random.default_rng(20240601)


def rand(shape, dtype=np.float64):
    return RNG.standard_normal(shape).astype(dtype)


@pytest.mark.parametrize("mod", BACKENDS)
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
class TestForwardShapes:
    def test_layernorm(self, mod, dtype):
        x, g, b = rand((4, 6), dtype), rand(6, dtype), rand(6, dtype)
        y, mean, rstd = mod.layernorm_forward(x, g, b, 1e-5)
        assert y.shape == x.shape and mean.shape == (4,) and rstd.shape == (4,)
        assert y.dtype == dtype
        # normalized rows have mean ~0, var ~1 before affine
        xhat = (y - b) / g
        np.testing.assert_allclose(xhat.mean(axis=1), 0, atol=1e-5)

    def test_softmax_rows(self, mod, dtype):
        x = rand((5, 7), dtype)
        p = mod.softmax_rows(x)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-5)
        assert (p > 0).all()

    def test_softmax_handles_large_logits(self, mod, dtype):
        x = np.full((2, 3), 1e4, dtype=dtype)
        p = mod.softmax_rows(x)
        np.testing.assert_allclose(p, 1.0 / 3.0, rtol=1e-5)

    def test_gelu(self, mod, dtype):
        x = rand((3, 4), dtype)
        y = mod.gelu_forward(x)
        assert y.shape == x.shape
        # GELU(0) = 0; large positive ~ identity
        z = np.zeros((1, 2), dtype=dtype)
        np.testing.assert_allclose(mod.gelu_forward(z), 0, atol=1e-7)

    def test_cross_entropy(self, mod, dtype):
        logits = rand((4, 9), dtype)
        targets = np.array([0, 3, 8, 2], dtype=np.int64)
        losses, probs = mod.cross_entropy_rows(logits, targets)
        assert losses.shape == (4,)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=1e-5)
        # uniform logits give log(C)
        u = np.zeros((1, 9), dtype=dtype)
        lo, _ = mod.cross_entropy_rows(u, np.array([4], dtype=np.int64))
        np.testing.assert_allclose(lo, np.log(9), rtol=1e-5)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-12)])
@pytest.mark.skipif(kext is None, reason="compiled backend unavailable")
class TestBackendAgreement:
    def test_all_kernels_match(self, dtype, tol):
        x = rand((6, 8), dtype)
        g, b = rand(8, dtype), rand(8, dtype)
        dy = rand((6, 8), dtype)
        targets = np.array([1, 0, 7, 3, 5, 2], dtype=np.int64)

        y1, m1, r1 = knp.layernorm_forward(x, g, b, 1e-5)
        y2, m2, r2 = kext.layernorm_forward(x, g, b, 1e-5)
        np.testing.assert_allclose(y1, y2, atol=tol)
        for a1, a2 in zip(knp.layernorm_backward(dy, x, g, m1, r1),
                          kext.layernorm_backward(dy, x, g, m2, r2)):
            np.testing.assert_allclose(a1, a2, atol=10 * tol)

        p1, p2 = knp.softmax_rows(x), kext.softmax_rows(x)
        np.testing.assert_allclose(p1, p2, atol=tol)
        np.testing.assert_allclose(knp.softmax_rows_backward(dy, p1),
                                   kext.softmax_rows_backward(dy, p2), atol=10 * tol)

        np.testing.assert_allclose(knp.gelu_forward(x), kext.gelu_forward(x), atol=tol)
        np.testing.assert_allclose(knp.gelu_backward(dy, x), kext.gelu_backward(dy, x), atol=10 * tol)

        l1, q1 = knp.cross_entropy_rows(x, targets)
        l2, q2 = kext.cross_entropy_rows(x, targets)
        np.testing.assert_allclose(l1, l2, atol=tol)
        dl = rand(6, dtype)
        np.testing.assert_allclose(knp.cross_entropy_backward(q1, targets, dl),
                                   kext.cross_entropy_backward(q2, targets, dl), atol=10 * tol)

    def test_adam_matches(self, dtype, tol):
        n = 40
        p1, g1 = rand(n, dtype), rand(n, dtype)
        p2 = p1.copy()
        m1 = np.zeros(n, dtype=dtype); v1 = np.zeros(n, dtype=dtype)
        m2 = np.zeros(n, dtype=dtype); v2 = np.zeros(n, dtype=dtype)
        for t in range(1, 6):
            knp.adam_update(p1, g1, m1, v1, t, 1e-3, 0.9, 0.999, 1e-8)
            kext.adam_update(p2, g1, m2, v2, t, 1e-3, 0.9, 0.999, 1e-8)
        np.testing.assert_allclose(p1, p2, atol=10 * tol)
        np.testing.assert_allclose(m1, m2, atol=10 * tol)


class TestGradOracles:
    """Each backward kernel against central finite differences (64-bit)."""

    def test_layernorm_backward(self):
        x = rand((3, 5))
        g, b = rand(5), rand(5)
        dy = rand((3, 5))

        def loss():
            y, _, _ = knp.layernorm_forward(x, g, b, 1e-5)
            return float((y * dy).sum())

        fd = finite_difference(loss, {"x": x, "g": g, "b": b})
        yo, mean, rstd = knp.layernorm_forward(x, g, b, 1e-5)
        dx, dg, db = knp.layernorm_backward(dy, x, g, mean, rstd)
        assert_grads_close({"x": dx, "g": dg, "b": db}, fd)

    def test_softmax_backward(self):
        x = rand((4, 6))
        dy = rand((4, 6))

        def loss():
            return float((knp.softmax_rows(x) * dy).sum())

        fd = finite_difference(loss, {"x": x})
        probs = knp.softmax_rows(x)
        dx = knp.softmax_rows_backward(dy, probs)
        assert_grads_close({"x": dx}, fd)

    def test_gelu_backward(self):
        x = rand((3, 4))
        dy = rand((3, 4))

        def loss():
            return float((knp.gelu_forward(x) * dy).sum())

        fd = finite_difference(loss, {"x": x})
        dx = knp.gelu_backward(dy, x)
        assert_grads_close({"x": dx}, fd)

    def test_cross_entropy_backward(self):
        logits = rand((4, 7))
        targets = np.array([2, 0, 6, 1], dtype=np.int64)
        dl = rand(4)

        def loss():
            losses, _ = knp.cross_entropy_rows(logits, targets)
            return float((losses * dl).sum())

        fd = finite_difference(loss, {"logits": logits})
        _, probs = knp.cross_entropy_rows(logits, targets)
        dlogits = knp.cross_entropy_backward(probs, targets, dl)
        assert_grads_close({"logits": dlogits}, fd)


class TestBackendSelection:
    def test_active_backend_valid(self):
        assert kernels.BACKEND in ("compiled", "python")

    def test_available_backends(self):
        avail = kernels.available_backends()
        assert avail["python"] is not None
