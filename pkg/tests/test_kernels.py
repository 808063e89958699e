import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nuggetbank import _kernels_py as py
from nuggetbank import kernels

compiled = pytest.importorskip("nuggetbank._kernels", reason="compiled extension not built")


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_kendall_counts_agree(data):
    n = data.draw(st.integers(0, 12))
    x = np.array(data.draw(st.lists(st.integers(-3, 3), min_size=n, max_size=n)), dtype=np.float64)
    y = np.array(data.draw(st.lists(st.integers(-3, 3), min_size=n, max_size=n)), dtype=np.float64)
    assert compiled.kendall_pair_counts(x, y) == py.kendall_pair_counts(x, y)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_weighted_sums_bitwise(data):
    n = data.draw(st.integers(0, 12))
    x = np.array(data.draw(st.lists(st.integers(-3, 3), min_size=n, max_size=n)), dtype=np.float64)
    y = np.array(data.draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n)), dtype=np.float64)
    w = np.array(data.draw(st.lists(st.floats(0.01, 1), min_size=n, max_size=n)), dtype=np.float64)
    assert compiled.weighted_pair_sums(x, y, w) == py.weighted_pair_sums(x, y, w)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=0, max_size=25))
def test_signed_rank_counts_agree(ranks):
    r = np.array(ranks, dtype=np.int64)
    a, b = compiled.signed_rank_null_counts(r), py.signed_rank_null_counts(r)
    assert np.array_equal(a, b)
    assert a.sum() == 2.0 ** len(ranks)


def test_svm_bitwise_agreement():
    rng = np.random.default_rng(0)
    for trial in range(8):
        n, d = int(rng.integers(4, 30)), int(rng.integers(2, 20))
        X = np.ascontiguousarray(rng.normal(size=(n, d)))
        y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
        y[:2] = [1.0, -1.0]
        for tol in (0.0, 1e-6):
            a = compiled.svm_dual_cd(X, y, 1.0, 200, tol, trial)
            b = py.svm_dual_cd(X, y, 1.0, 200, tol, trial)
            assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_backend_selected():
    if os.environ.get("NUGGETBANK_PURE_PYTHON", "") not in ("", "0"):
        assert kernels.BACKEND == "python"
        return
    assert kernels.BACKEND == "compiled"
    assert kernels.svm_dual_cd is compiled.svm_dual_cd
