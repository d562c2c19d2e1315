import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from care import _pykernels, kernels

try:
    from care import _ckernels
except ImportError:  # extension not built; parity tests skip
    _ckernels = None

needs_c = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_splitmix_reference_output():
    # first output of the published splitmix64 generator seeded with 0
    assert _pykernels._mix(0) == 0xE220A8397B1DCDAF


def test_pair_uniform_symmetric_and_in_unit_interval():
    for a, b in [(1, 2), (7, 1000), (0, 0), (2**40, 3)]:
        u = _pykernels.pair_uniform(5, a, b)
        assert 0.0 <= u < 1.0
        assert u == _pykernels.pair_uniform(5, b, a)


def test_pair_uniform_many_matches_scalar(rng):
    ids = rng.integers(0, 10**9, 200)
    many = _pykernels.pair_uniform_many(77, 12345, ids)
    assert many.tolist() == [_pykernels.pair_uniform(77, 12345, int(i)) for i in ids]


@needs_c
@given(st.integers(0, 2**64 - 1), st.integers(0, 2**62), st.integers(0, 2**62))
def test_pair_uniform_parity(seed, a, b):
    assert _ckernels.pair_uniform(seed, a, b) == _pykernels.pair_uniform(seed, a, b)


@needs_c
@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 30)), max_size=40),
       st.integers(0, 30), st.sampled_from([0.0, 0.01, 0.5, 1.0]), st.sampled_from([0.0, 0.3, 1.0]),
       st.integers(0, 2**32))
def test_oracle_scan_parity(buf, cand_cluster, fp, fn, seed):
    ids = np.array([i for i, _ in buf], dtype=np.int64)
    cl = np.array([c for _, c in buf], dtype=np.int64)
    assert (_ckernels.oracle_scan(10**7, cand_cluster, ids, cl, fp, fn, seed)
            == _pykernels.oracle_scan(10**7, cand_cluster, ids, cl, fp, fn, seed))


def brute_contacts(xs, ys, ranges):
    out = []
    for i in range(len(xs)):
        for j in range(i + 1, len(xs)):
            r = min(ranges[i], ranges[j])
            if (xs[i] - xs[j]) ** 2 + (ys[i] - ys[j]) ** 2 <= r * r:
                out.append((i, j))
    return out


@pytest.mark.parametrize("impl", [_pykernels] + ([_ckernels] if _ckernels else []),
                         ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_contact_pairs_vs_brute_force(impl, rng):
    for n in (0, 1, 2, 30, 200):
        xs, ys = rng.uniform(0, 300, n), rng.uniform(0, 300, n)
        ranges = rng.choice([20.0, 40.0], n)
        i, j = impl.contact_pairs(xs, ys, ranges)
        assert list(zip(i.tolist(), j.tolist())) == brute_contacts(xs, ys, ranges)


def test_contact_at_exact_range_counts():
    i, j = kernels.contact_pairs(np.array([0.0, 20.0]), np.array([0.0, 0.0]), np.array([20.0, 20.0]))
    assert (i.tolist(), j.tolist()) == ([0], [1])


@pytest.mark.parametrize("impl", [_pykernels] + ([_ckernels] if _ckernels else []),
                         ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_hamming_matrix_vs_popcount(impl, rng):
    a = rng.integers(0, 2**63, 9, dtype=np.uint64) | np.uint64(2**63)
    b = rng.integers(0, 2**63, 4, dtype=np.uint64)
    m = impl.hamming_matrix(a, b)
    assert m.tolist() == [[bin(int(x) ^ int(y)).count("1") for y in b] for x in a]


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython" or kernels.os.environ.get("CARE_PURE_PYTHON")
