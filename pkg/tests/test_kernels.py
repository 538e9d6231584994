"""The compiled kernels and the NumPy fallback must agree exactly."""

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from roisearch import _kernels_py as py
from roisearch import kernels

try:
    from roisearch import _kernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled extension not built")


@needs_ext
def test_default_backend_is_compiled():
    assert kernels.BACKEND == "cython"


def test_env_var_selects_fallback():
    code = "import roisearch.kernels as k; print(k.BACKEND)"
    env = {**os.environ, "ROISEARCH_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("seed", range(10))
def test_pair_counts_parity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 60))
    a = rng.integers(0, 5, n).astype(float)
    b = rng.normal(size=n).round(1)
    assert tuple(cy.pair_counts(a, b)) == tuple(py.pair_counts(a, b))


@needs_ext
@pytest.mark.parametrize("seed", range(10))
def test_hinge_pairs_parity(seed):
    rng = np.random.default_rng(seed)
    n = 30
    pred = rng.normal(size=n)
    label = rng.integers(0, 6, n).astype(float)
    ii = rng.integers(0, n, 200)
    jj = rng.integers(0, n, 200)
    l1, n1, g1 = cy.hinge_pairs(pred, label, ii, jj, 0.05)
    l2, n2, g2 = py.hinge_pairs(pred, label, ii, jj, 0.05)
    assert n1 == n2
    assert l1 == pytest.approx(l2, abs=1e-12)
    np.testing.assert_allclose(g1, g2, atol=1e-12)


@needs_ext
@pytest.mark.parametrize("temperature", [1.0, 0.5, 3.0])
def test_score_grad_parity(temperature):
    rng = np.random.default_rng(1)
    sizes = [2, 3, 8, 2]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    probs = np.concatenate([rng.dirichlet(np.ones(s)) for s in sizes])
    idx = np.stack([rng.integers(0, s, 64) for s in sizes], axis=1).astype(np.int64)
    adv = rng.normal(size=64)
    np.testing.assert_allclose(
        cy.score_grad(idx, adv, probs, offsets, temperature),
        py.score_grad(idx, adv, probs, offsets, temperature),
        atol=1e-12,
    )


def test_fallback_hinge_skips_equal_labels():
    loss, n, g = py.hinge_pairs(np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([0]), np.array([1]), 0.1)
    assert n == 0 and loss == 0.0 and not g.any()


def test_reload_is_idempotent():
    assert importlib.reload(kernels).BACKEND in ("cython", "python")
