from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import brute_hits, brute_points, random_lattice
from unipotent_evl.lattice import Lattice, NormPair, SplitDims, diagonal_apply, unipotent_apply
from unipotent_evl.sections import (
    BoxWindow,
    InnerBall,
    InnerBox,
    ProjectedBallWindow,
    RegionC,
    SectionError,
    first_hit,
    impact_marginal_event,
    joint_count_event,
    list_hits,
    region_count,
    scaled_first_hit_statistic,
)

D2 = SplitDims(2, 1, 0)
D3 = SplitDims(3, 1, 1)
D3b = SplitDims(3, 2, 0)
D4 = SplitDims(4, 2, 1)
ALL = [D2, D3, D3b, D4]


def windows(d):
    yield ProjectedBallWindow(d, "euclidean")
    yield ProjectedBallWindow(d, "sup")
    yield BoxWindow(d, tuple([-0.5] * d.m + [0.0]), tuple([0.7] * d.m + [1.2]))


def test_window_membership():
    W = ProjectedBallWindow(D3)
    assert W.contains([0.6, 0.8])[0]
    assert not W.contains([0.6, 0.81])[0]
    assert not W.contains([0.0, 0.0])[0]
    B = BoxWindow(D3, (-1, 0), (1, 1))
    assert not B.contains([0, 0])[0] and B.contains([0, 1e-9])[0]
    assert BoxWindow(D2, (0.5,), (0.2,)).is_empty
    with pytest.raises(SectionError):
        BoxWindow(D2, (-0.1,), (1.0,))


def test_window_bbox_consistent(rng):
    for d in ALL:
        for W in windows(d):
            lo, hi = W.bbox()
            pts = rng.uniform(lo - 0.5, hi + 0.5, size=(2000, d.m + 1))
            inside = W.contains(pts)
            assert np.all(pts[inside] >= lo - 1e-12) and np.all(pts[inside] <= hi + 1e-12)


def test_region_c_membership():
    C = RegionC(D3, InnerBall(2.0), ProjectedBallWindow(D3), L=2.0)
    assert C.contains([0.5, 0.1, 0.3])[0]  # s = 5/3 <= 2, L w = (0.2, 0.6)
    assert not C.contains([0.7, 0.1, 0.3])[0]  # s = 7/3
    assert not C.contains([0.0, 0.1, 0.6])[0]  # L w outside the disc
    lo, hi = C.bbox()
    assert np.all(hi[:1] == 2.0 * 0.5) and hi[-1] == 0.5


def test_z2_hits_example():
    hits = list_hits(Lattice.standard(D2), ProjectedBallWindow(D2), 1.0, 2.5)
    assert [h.s[0] for h in hits] == [0.0, -1.0, 1.0, -2.0, 2.0]
    assert all(tuple(h.vector) == (h.s[0], 1.0) for h in hits)
    assert hits[0].to_json() == {"s": [0.0], "snorm": 0.0, "w": [1.0], "witness": [0, 1], "L": 1.0}


def test_empty_list_after_push():
    # the only primitive vectors with small v_n have v_n = e^{-3}, below the window
    x = diagonal_apply(Lattice.standard(D2), 3.0)
    W = BoxWindow(D2, (0.5,), (1.0,))
    assert list_hits(x, W, 1.0, 10.0) == []


def test_first_hit_examples():
    z = Lattice.standard(D2)
    W = ProjectedBallWindow(D2)
    rec = first_hit(z, W, 1.0, s_start=1.0)
    assert rec.s[0] == 0.0 and tuple(rec.witness) == (0, 1)
    shifted = unipotent_apply(z, [0.5])
    rec = first_hit(shifted, W, 1.0, s_start=1.0)
    assert rec.snorm == 0.5 and tuple(rec.witness) == (0, 1) and rec.s[0] == -0.5
    assert scaled_first_hit_statistic(z, W, 1.0) == 0.0
    # Z^2 has no primitive vector with 0 < v_n <= 1/4: never hits at L = 4
    assert scaled_first_hit_statistic(z, W, 4.0) is None


def test_first_hit_budget():
    W = BoxWindow(D2, (0.5,), (1.0,))
    x = diagonal_apply(Lattice.standard(D2), 3.0)
    assert first_hit(x, W, 1.0, s_start=1.0, budget=8.0) is None
    with pytest.raises(SectionError):
        first_hit(x, W, 1.0, s_start=0.0)
    with pytest.raises(SectionError):
        list_hits(x, BoxWindow(D2, (0.6,), (0.5,)), 1.0, 1.0)


@pytest.mark.parametrize("d", ALL, ids=str)
def test_hits_match_brute_force(rng, d):
    for _ in range(25):
        x = random_lattice(d, rng)
        for W in windows(d):
            for inner in ("euclidean", "sup"):
                L = float(rng.uniform(1, 2))
                sb = float(rng.uniform(0.5, 3))
                got = [(h.snorm, tuple(int(a) for a in h.witness)) for h in list_hits(x, W, L, sb, NormPair(inner=inner))]
                ref = brute_hits(x, W, L, sb, inner)
                assert sorted(got) == ref
                # record invariants
                for h in list_hits(x, W, L, sb, NormPair(inner=inner)):
                    v = h.witness @ x.basis
                    assert v[-1] > 0 and W.contains(h.w)[0]
                    assert np.allclose(h.s * v[-1], v[: d.k], atol=1e-9)


def test_hits_sorted_and_deterministic(rng):
    x = random_lattice(D4, rng)
    W = ProjectedBallWindow(D4)
    h1 = list_hits(x, W, 1.0, 3.0)
    h2 = list_hits(x, W, 1.0, 3.0)
    assert [tuple(h.witness) for h in h1] == [tuple(h.witness) for h in h2]
    assert all(a.snorm <= b.snorm for a, b in zip(h1, h1[1:]))


def test_counting_identity(rng):
    for d in (D2, D3, D4):
        for _ in range(40):
            x = random_lattice(d, rng)
            W = ProjectedBallWindow(d)
            L = float(rng.uniform(1, 1.5))
            A = InnerBall(float(rng.uniform(0.3, 2.0)))
            n_hits = sum(1 for h in list_hits(x, W, L, A.radius) if A.contains(h.s)[0])
            assert n_hits == len(brute_points(x.basis, RegionC(d, A, W, L), primitive_only=True))


def test_hit_scaling_equivariance(rng):
    for _ in range(60):
        d = ALL[rng.integers(len(ALL))]
        x = random_lattice(d, rng)
        W = ProjectedBallWindow(d)
        t = float(rng.uniform(-0.4, 0.4))
        L = float(rng.uniform(1, 2))
        sb = float(rng.uniform(1, 3))
        a = list_hits(x, W, L, sb)
        b = list_hits(diagonal_apply(x, -t), W, L * math.exp(-d.k * t), sb * math.exp(-d.n * t))
        assert sorted(tuple(h.witness) for h in a) == sorted(tuple(h.witness) for h in b)
        for ha, hb in zip(sorted(a, key=lambda h: tuple(h.witness)), sorted(b, key=lambda h: tuple(h.witness))):
            assert hb.snorm == pytest.approx(math.exp(-d.n * t) * ha.snorm, rel=1e-9, abs=1e-12)


def test_scaled_statistic_invariance(rng):
    for _ in range(30):
        d = [D2, D3, D3b][rng.integers(3)]
        x = random_lattice(d, rng)
        W = ProjectedBallWindow(d)
        L, t = 4.0, float(rng.uniform(-0.5, 0.5))
        a = scaled_first_hit_statistic(x, W, L)
        b = scaled_first_hit_statistic(diagonal_apply(x, -t), W, L * math.exp(-d.k * t))
        assert a is not None and b is not None and a >= 0
        assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


def test_joint_count_examples(rng):
    z = Lattice.standard(D2)
    W = ProjectedBallWindow(D2)
    assert joint_count_event(z, [InnerBall(0.5)], [1], W, 1.0)
    for _ in range(20):
        x = random_lattice(D3, rng)
        A1, A2 = InnerBall(0.5), InnerBall(1.5)
        assert not joint_count_event(x, [A1, A2], [3, 2], ProjectedBallWindow(D3), 1.0)


def test_joint_count_brute_force(rng):
    for _ in range(60):
        d = [D2, D3, D4][rng.integers(3)]
        x = random_lattice(d, rng)
        W = ProjectedBallWindow(d)
        L = float(rng.uniform(1.0, 1.3))
        if d.k == 1:
            A = [InnerBall(float(rng.uniform(0.2, 1))), InnerBox((-0.3,), (0.9,))]
        else:
            A = [InnerBall(float(rng.uniform(0.2, 1))), InnerBox((-0.3, -0.2), (0.5, 0.6))]
        c = L ** (d.n / d.k)
        counts = [len(brute_points(x.basis, RegionC(d, a.scaled(c), W, L), True)) for a in A]
        assert joint_count_event(x, A, counts, W, L)
        assert not joint_count_event(x, A, [counts[0] + 1, counts[1]], W, L)


def test_impact_marginal_examples(rng):
    z = Lattice.standard(D2)
    W = ProjectedBallWindow(D2)
    assert impact_marginal_event(z, W, 1.0, 0.5, BoxWindow(D2, (0.0,), (0.5,))) is False
    assert impact_marginal_event(z, W, 1.0, 0.5, BoxWindow(D2, (0.5,), (0.1,))) is False
    for _ in range(40):
        x = random_lattice(D3, rng)
        X = float(rng.uniform(0.05, 1))
        stat = scaled_first_hit_statistic(x, W := ProjectedBallWindow(D3), 2.0)
        assert impact_marginal_event(x, W, 2.0, X, W) == (stat > X)
