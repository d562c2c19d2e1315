import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import binomtest

from care.config import MessageRecord
from care.detectors import (CostModel, Gates, ItemMeta, OracleDetector, PHash64, ScoreUndefined, Thresholds,
                            Verdict, gist_similarity, oracle_decide, phash_compute, phash_similarity,
                            phash_similarity_matrix, pipeline_avg_cost, pipeline_decide, read_feature_csv,
                            read_metadata_csv, read_pgm, read_sift_csv, resample_box, sift_similarity,
                            stage_counts, write_pgm)

from oracles import box_resample_reference, dct2_reference, phash_reference


def msg(mid, cid):
    return MessageRecord(mid, cid, 0, 0.0)


def _ramp():
    return np.outer(np.arange(64), np.ones(64)) * 3.0 + np.outer(np.ones(64), np.arange(64))


# -- pHash -------------------------------------------------------------------------

FROZEN = [
    # (image builder, hash from the reference implementation)
    (lambda: ((np.mgrid[0:40, 0:48][0] * 7 + np.mgrid[0:40, 0:48][1] * 13) % 256).astype(float),
     0xF5B7AA15B5604A60),
    (_ramp, 0x0),
    (lambda: np.sin(np.mgrid[0:33, 0:57][0] / 3.0) * 100 + np.cos(np.mgrid[0:33, 0:57][1] / 5.0) * 80 + 200,
     0x101015A),
]


@pytest.mark.parametrize("build,expected", FROZEN)
def test_phash_frozen_values(build, expected):
    assert int(phash_compute(build())) == expected


@pytest.mark.parametrize("shape", [(64, 64), (50, 70), (32, 32), (8, 9)])
def test_resample_matches_overlap_integration(rng, shape):
    img = rng.uniform(0, 255, shape)
    assert np.allclose(resample_box(img), box_resample_reference(img))


def test_dct_matches_definition(rng):
    from scipy.fft import dctn
    x = rng.normal(size=(32, 32))
    assert np.allclose(dctn(x, type=2, norm="ortho"), dct2_reference(x))


def test_phash_matches_reference_on_random_images(rng):
    for _ in range(5):
        h, w = rng.integers(8, 80, 2)
        img = rng.uniform(0, 255, (h, w))
        assert int(phash_compute(img)) == phash_reference(img)


def test_constant_image_hashes_to_zero():
    assert int(phash_compute(np.full((40, 40), 77.0))) == 0
    assert int(phash_compute(np.zeros((8, 8)))) == 0


@given(arrays(np.float64, (24, 24), elements=st.floats(0, 255)),
       st.sampled_from([0.5, 2.0, 3.7]), st.sampled_from([0.0, 10.0, 25.0]))
def test_phash_affine_invariance(img, gain, offset):
    assert phash_compute(img * gain + offset) == phash_compute(img)


def test_dc_bit_always_zero(rng):
    for _ in range(20):
        assert not int(phash_compute(rng.uniform(0, 255, (32, 32)))) & 1


def test_phash_rejects_small_or_bad_images():
    with pytest.raises(ValueError):
        phash_compute(np.zeros((7, 20)))
    with pytest.raises(ValueError):
        phash_compute(np.full((8, 8), -1.0))


def test_phash_similarity_examples():
    a = 0x0123456789ABCDEF
    assert phash_similarity(a, a) == 64
    assert phash_similarity(a, ~a & (2**64 - 1)) == 0
    assert phash_similarity(a, a ^ 0b1011) == 61
    assert str(PHash64(255)) == "00000000000000ff"


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1))
def test_phash_similarity_symmetric_and_bounded(a, b):
    s = phash_similarity(a, b)
    assert s == phash_similarity(b, a) and 0 <= s <= 64


def test_similarity_matrix_agrees_with_scalar(rng):
    a = [int(x) for x in rng.integers(0, 2**63, 7)] + [2**64 - 1]
    b = [int(x) for x in rng.integers(0, 2**63, 5)]
    m = phash_similarity_matrix(a, b)
    assert m.tolist() == [[phash_similarity(x, y) for y in b] for x in a]


def test_pgm_roundtrip_binary_and_ascii(tmp_path, rng):
    img = rng.integers(0, 256, (12, 17))
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    body = " ".join(str(v) for v in img.ravel())
    (tmp_path / "b.pgm").write_text(f"P2\n# a comment\n17 12\n# another\n255\n{body}\n")
    assert np.array_equal(read_pgm(tmp_path / "b.pgm"), img)


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "x.pgm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "x.pgm")


# -- GIST / SIFT ----------------------------------------------------------------------

def test_gist_examples():
    v = [1.0, 2.0, 3.0, 4.0]
    assert gist_similarity(v, v) == pytest.approx(1.0)
    assert gist_similarity(v, [-x for x in v]) == pytest.approx(-1.0)
    assert gist_similarity(v, [1, 2, 3, 5]) == pytest.approx(0.98270762, abs=1e-6)
    with pytest.raises(ScoreUndefined):
        gist_similarity([2, 2, 2], [1, 2, 3])


@given(arrays(np.float64, 6, elements=st.floats(-100, 100)), arrays(np.float64, 6, elements=st.floats(-100, 100)))
def test_gist_matches_numpy_and_is_symmetric(a, b):
    if np.ptp(a) < 1e-3 or np.ptp(b) < 1e-3:
        return
    s = gist_similarity(a, b)
    assert s == pytest.approx(gist_similarity(b, a), abs=1e-12)
    assert s == pytest.approx(np.corrcoef(a, b)[0, 1], abs=1e-9)
    assert -1.0 <= s <= 1.0


def test_sift_examples():
    assert sift_similarity(100, 100) == 1.0
    assert sift_similarity(8, 8) is None
    assert sift_similarity(40, 10) == 0.25
    with pytest.raises(ValueError):
        sift_similarity(10, 11)


# -- oracle detector ---------------------------------------------------------------------

def test_oracle_perfect():
    assert oracle_decide(msg(1, 5), msg(2, 5), 0, 0, 1) == Verdict.SIMILAR
    assert oracle_decide(msg(1, 5), msg(2, 6), 0, 0, 1) == Verdict.NOT_SIMILAR


def test_oracle_rates_within_half_percent():
    det = OracleDetector(0.01, 0.30, seed=2024)
    n = 100_000
    fp = sum(det.decide(msg(2 * k, k), msg(2 * k + 1, -k - 1)) == Verdict.SIMILAR for k in range(n))
    fn = sum(det.decide(msg(2 * k, k), msg(2 * k + 1, k)) == Verdict.NOT_SIMILAR for k in range(n))
    assert abs(fp / n - 0.01) <= 0.005
    assert abs(fn / n - 0.30) <= 0.005
    # and the counts are consistent with an unbiased coin
    assert binomtest(fp, n, 0.01).pvalue > 1e-4
    assert binomtest(fn, n, 0.30).pvalue > 1e-4


def test_oracle_replay_and_order_independent():
    det = OracleDetector(0.3, 0.3, seed=7)
    a, b = msg(10, 1), msg(99, 2)
    first = det.decide(a, b)
    assert all(det.decide(a, b) == first for _ in range(100))
    assert det.decide(b, a) == first
    assert OracleDetector(0.3, 0.3, seed=7).decide(a, b) == first


def test_pair_scope_scan_matches_pairwise(rng):
    det = OracleDetector(0.2, 0.4, seed=99, scope="pair")
    ids = np.arange(1, 301, dtype=np.int64)
    clusters = rng.integers(0, 40, 300).astype(np.int64)
    for cid in (3, 1000):
        cand = msg(1000, cid)
        similar, present = det.scan(cand, ids, clusters)
        verdicts = [det.decide(cand, msg(int(i), int(c))) for i, c in zip(ids, clusters)]
        assert similar == any(v == Verdict.SIMILAR for v in verdicts)
        assert present == bool(np.any(clusters == cid))


def test_message_scope_rate_independent_of_buffer_size():
    det = OracleDetector(0.05, 0.25, seed=8)
    n = 20_000
    for size in (1, 50, 400):
        ids = np.arange(10**6, 10**6 + size, dtype=np.int64)
        fp = np.mean([det.scan(msg(k, -1), ids, ids)[0] for k in range(n)])
        fn = np.mean([not det.scan(msg(k, 10**6), ids, ids)[0] for k in range(n)])
        assert abs(fp - 0.05) < 0.01 and abs(fn - 0.25) < 0.015


def test_message_scope_consistent_across_buffers(rng):
    det = OracleDetector(0.3, 0.3, seed=4)
    for k in range(200):
        a = rng.integers(10**6, 2 * 10**6, 5).astype(np.int64)
        b = rng.integers(10**6, 2 * 10**6, 40).astype(np.int64)
        assert det.scan(msg(k, -1), a, a)[0] == det.scan(msg(k, -1), b, b)[0]
    assert det.scan(msg(1, 1), np.array([], dtype=np.int64), np.array([], dtype=np.int64)) == (False, False)
    with pytest.raises(ValueError):
        OracleDetector(scope="bogus")


# -- pipeline -------------------------------------------------------------------------------

TH = Thresholds(gist=0.5, phash=60, sift=0.3)


def test_metadata_gate_far_items():
    cand = ItemMeta("c", geo=(40.44, -79.99), phash=0, gist=[1, 2, 3])
    far = [ItemMeta(f"b{k}", geo=(40.44 + 0.09 + k * 0.01, -79.99), phash=0, gist=[1, 2, 3]) for k in range(3)]
    res = pipeline_decide(cand, far, TH, Gates(100.0, 3600.0))
    assert res.aggregate.verdict == Verdict.NOT_SIMILAR and res.cost_units == 0
    assert all(d.stage == "metadata" for d in res.per_item)


def test_metadata_gate_old_items():
    cand = ItemMeta("c", timestamp=10_000.0, phash=0)
    old = [ItemMeta("b", timestamp=0.0, phash=0)]
    assert pipeline_decide(cand, old, TH).aggregate.verdict == Verdict.NOT_SIMILAR


def test_gist_rejects_everything():
    cand = ItemMeta("c", gist=[1, 2, 3, 4], phash=0)
    buf = [ItemMeta(f"b{k}", gist=[4, 3, 2, 1 + k * 0.1], phash=0) for k in range(4)]
    res = pipeline_decide(cand, buf, TH)
    assert res.aggregate.verdict == Verdict.NOT_SIMILAR
    assert res.cost_units == 4 * 50.0
    assert all(d.stage == "gist" for d in res.per_item)


def test_phash_fast_path_skips_sift():
    cand = ItemMeta("c", gist=[1, 2, 3, 4], phash=0xABC, sift={"b": (100, 1)})
    buf = [ItemMeta("b", gist=[1, 2, 3, 4.5], phash=0xABC)]
    res = pipeline_decide(cand, buf, TH)
    assert res.aggregate.verdict == Verdict.SIMILAR
    assert res.per_item[0].stage == "phash" and res.cost_units == 51.0


def test_sift_decides_and_missing_features_fall_through():
    cand = ItemMeta("c", sift={"b": (100, 50), "d": (8, 8)})
    res = pipeline_decide(cand, [ItemMeta("b"), ItemMeta("d"), ItemMeta("e")], TH)
    assert [d.verdict for d in res.per_item] == [Verdict.SIMILAR, Verdict.NOT_SIMILAR, Verdict.NOT_SIMILAR]
    assert [d.stage for d in res.per_item] == ["sift", "sift", "exhausted"]
    assert all(d.verdict != Verdict.UNCERTAIN for d in res.per_item)


def test_avg_cost_examples():
    assert pipeline_avg_cost(100, 0, 0) == 50.0
    assert pipeline_avg_cost(100, 100, 100) == 201.0
    assert pipeline_avg_cost(100, 60, 30) == pytest.approx(95.6)
    with pytest.raises(ValueError):
        pipeline_avg_cost(0, 0, 0)
    with pytest.raises(ValueError):
        pipeline_avg_cost(10, 5, 6)
    with pytest.raises(ValueError):
        CostModel(c_phash=0)


@given(st.integers(1, 500), st.data())
def test_avg_cost_monotone(n1, data):
    n2 = data.draw(st.integers(0, n1))
    n3 = data.draw(st.integers(0, n2))
    base = pipeline_avg_cost(n1, n2, n3)
    if n2 < n1:
        assert pipeline_avg_cost(n1, n2 + 1, n3) >= base
    if n3 < n2:
        assert pipeline_avg_cost(n1, n2, n3 + 1) >= base


def test_stage_counts_from_decisions():
    cand = ItemMeta("c", gist=[1, 2, 3, 4], phash=0, sift={"b1": (20, 1), "b2": (20, 1)})
    buf = [ItemMeta("b0", gist=[4, 3, 2, 1], phash=0),
           ItemMeta("b1", gist=[1, 2, 3, 4], phash=2**64 - 1),
           ItemMeta("b2", gist=[1, 2, 3, 4.1], phash=2**64 - 1)]
    res = pipeline_decide(cand, buf, TH)
    n = stage_counts(res.per_item)
    assert n == (3, 2, 2)
    assert res.cost_units == pytest.approx(pipeline_avg_cost(*n) * n[0])


def test_feature_file_readers(tmp_path):
    (tmp_path / "g.csv").write_text("item_id,v1,v2\na,1,2\nb,3,4\n")
    (tmp_path / "s.csv").write_text("item_a,item_b,m,m_prime\na,b,40,10\n")
    (tmp_path / "m.csv").write_text("item_id,lat,lon,timestamp\na,40.1,-79.9,100\nb,,,\n")
    assert read_feature_csv(tmp_path / "g.csv")["b"].tolist() == [3.0, 4.0]
    assert read_sift_csv(tmp_path / "s.csv")[("a", "b")] == (40, 10)
    meta = read_metadata_csv(tmp_path / "m.csv")
    assert meta["a"] == ((40.1, -79.9), 100.0) and meta["b"] == (None, None)
