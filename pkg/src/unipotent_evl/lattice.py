"""Unimodular lattices, the unipotent and diagonal actions, norms, alpha,
LLL reduction and enumeration of lattice points in bounded regions.

Conventions: vectors are rows and matrices act on the right, so the lattice
``x = Gamma g`` is the row span ``Z^n g`` of ``basis``.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol

import numpy as np

from . import _kernels

DET_TOL = 1e-9
RENORM_TOL = 1e-12
LLL_DELTA = 0.99
DEFAULT_NODE_CAP = 10_000_000
MAX_DIM = 6
# exp() of anything beyond this overflows a float64
_EXP_LIMIT = 700.0

NORM_TAGS = ("euclidean", "sup")

_node_cap: contextvars.ContextVar[int] = contextvars.ContextVar("node_cap", default=DEFAULT_NODE_CAP)


@contextlib.contextmanager
def enumeration_cap(cap: int):
    """Temporarily change the default enumeration node cap."""
    token = _node_cap.set(int(cap))
    try:
        yield
    finally:
        _node_cap.reset(token)


def current_cap() -> int:
    return _node_cap.get()


class LatticeError(ValueError):
    """Invalid lattice data (dimension mismatch, degenerate basis, ...)."""


class EnumerationCapError(RuntimeError):
    """Enumeration refused or aborted because it would exceed the node cap."""


@dataclass(frozen=True)
class SplitDims:
    """Block sizes ``n = k + m + 1`` of the rank-k unipotent action."""

    n: int
    k: int
    m: int

    def __post_init__(self):
        if self.k < 1 or self.m < 0 or self.n < 2:
            raise LatticeError(f"invalid dims n={self.n}, k={self.k}, m={self.m}")
        if self.n != self.k + self.m + 1:
            raise LatticeError(f"n={self.n} must equal k+m+1={self.k + self.m + 1}")
        if self.n > MAX_DIM:
            raise LatticeError(f"n={self.n} exceeds supported maximum {MAX_DIM}")

    @classmethod
    def from_km(cls, k: int, m: int) -> "SplitDims":
        return cls(k + m + 1, k, m)

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "m": self.m}


def _check_matrix(a, n: int | None = None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LatticeError(f"expected a square matrix, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise LatticeError(f"expected {n}x{n} matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LatticeError("matrix has non-finite entries")
    return a


class Lattice:
    """A unimodular lattice ``Z^n g`` together with its block structure."""

    __slots__ = ("dims", "basis")

    def __init__(self, dims: SplitDims, basis):
        b = _check_matrix(basis, dims.n)
        det = np.linalg.det(b)
        if abs(det - 1.0) > DET_TOL:
            raise LatticeError(f"basis determinant {det!r} is not 1")
        if abs(det - 1.0) > RENORM_TOL:
            b = b / det ** (1.0 / dims.n)
        b.setflags(write=False)
        self.dims = dims
        self.basis = b

    @classmethod
    def from_matrix(cls, dims: SplitDims, matrix) -> "Lattice":
        """Normalise an arbitrary nondegenerate matrix to covolume one.

        A negative determinant is fixed by flipping the sign of the first
        row, which does not change the lattice.
        """
        b = _check_matrix(matrix, dims.n)
        det = np.linalg.det(b)
        if abs(det) < 1e-6:
            raise LatticeError(f"degenerate basis (det={det!r})")
        if det < 0:
            b[0] = -b[0]
            det = -det
        return cls(dims, b / det ** (1.0 / dims.n))

    @classmethod
    def standard(cls, dims: SplitDims) -> "Lattice":
        return cls(dims, np.eye(dims.n))

    def _renormalised(self, b: np.ndarray) -> "Lattice":
        det = np.linalg.det(b)
        if det < 0:
            b[0] = -b[0]
            det = -det
        if abs(det - 1.0) > RENORM_TOL:
            b = b / det ** (1.0 / self.dims.n)
        return Lattice(self.dims, b)

    def act(self, g) -> "Lattice":
        """Right multiplication ``x -> x g`` by a determinant-one matrix."""
        g = _check_matrix(g, self.dims.n)
        return self._renormalised(self.basis @ g)

    def points(self, coeffs) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.basis

    def __repr__(self):
        return f"Lattice(n={self.dims.n}, k={self.dims.k}, m={self.dims.m})"


def unipotent_matrix(dims: SplitDims, s) -> np.ndarray:
    s = np.asarray(s, dtype=float).reshape(-1)
    if s.shape[0] != dims.k:
        raise LatticeError(f"time s must have {dims.k} components, got {s.shape[0]}")
    if not np.all(np.isfinite(s)):
        raise LatticeError("time s is not finite")
    u = np.eye(dims.n)
    u[-1, : dims.k] = -s
    return u


def diagonal_entries(dims: SplitDims, t: float) -> np.ndarray:
    t = float(t)
    if not math.isfinite(t):
        raise LatticeError("t is not finite")
    if abs(t) * max(dims.m + 1, dims.k) > _EXP_LIMIT:
        raise OverflowError(f"diagonal flow time t={t} out of representable range")
    d = np.full(dims.n, math.exp(-dims.k * t))
    d[: dims.k] = math.exp((dims.m + 1) * t)
    return d


def diagonal_matrix(dims: SplitDims, t: float) -> np.ndarray:
    return np.diag(diagonal_entries(dims, t))


def unipotent_apply(x: Lattice, s) -> Lattice:
    """``h_s(x) = x U(s)``; on rows ``(v', v'', v_n) -> (v' - s v_n, v'', v_n)``."""
    s = np.asarray(s, dtype=float).reshape(-1)
    unipotent_matrix(x.dims, s)  # validates shape and finiteness
    b = x.basis.copy()
    b[:, : x.dims.k] -= np.outer(b[:, -1], s)
    return x._renormalised(b)


def diagonal_apply(x: Lattice, t: float) -> Lattice:
    """``phi_t(x) = x Phi(t)``."""
    return x._renormalised(x.basis * diagonal_entries(x.dims, t))


def primitive_mask(coeffs: np.ndarray) -> np.ndarray:
    """True for rows with gcd of entries equal to one."""
    coeffs = np.asarray(coeffs, dtype=np.int64)
    if coeffs.size == 0:
        return np.zeros(coeffs.shape[0], dtype=bool)
    return np.gcd.reduce(np.abs(coeffs), axis=1) == 1


@dataclass(frozen=True)
class NormPair:
    """Outer norm on R^n, inner norm on R^k and an optional conjugator.

    With a conjugator ``g0`` the outer norm becomes ``|v|_{g0} = |v g0^{-1}|``.
    """

    outer: str = "euclidean"
    inner: str = "euclidean"
    conjugator: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        for tag in (self.outer, self.inner):
            if tag not in NORM_TAGS:
                raise ValueError(f"unsupported norm {tag!r}; choose from {NORM_TAGS}")
        if self.conjugator is not None:
            g0 = _check_matrix(self.conjugator)
            if abs(np.linalg.det(g0) - 1.0) > DET_TOL:
                raise LatticeError("conjugator must have determinant 1")
            g0.setflags(write=False)
            object.__setattr__(self, "conjugator", g0)
            inv = np.linalg.inv(g0)
            inv.setflags(write=False)
            object.__setattr__(self, "_conj_inv", inv)

    @property
    def conjugator_inverse(self) -> np.ndarray | None:
        return getattr(self, "_conj_inv", None)

    def plain(self) -> "NormPair":
        return NormPair(self.outer, self.inner)

    def outer_norm(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.conjugator is not None:
            v = v @ self.conjugator_inverse
        return vector_norm(v, self.outer)

    def inner_norm(self, s) -> np.ndarray:
        return vector_norm(np.asarray(s, dtype=float), self.inner)

    def to_dict(self) -> dict:
        d = {"outer": self.outer, "inner": self.inner}
        if self.conjugator is not None:
            d["conjugator"] = self.conjugator.tolist()
        return d


def vector_norm(v: np.ndarray, tag: str) -> np.ndarray:
    a = np.abs(v)
    m = np.max(a, axis=-1)
    if tag == "sup":
        return m
    # scaled to avoid under/overflow in the squares
    safe = np.where(m > 0, m, 1.0)
    q = a / np.expand_dims(safe, -1)
    return m * np.sqrt(np.sum(q * q, axis=-1))


def unit_ball_volume(d: int, tag: str) -> float:
    if d == 0:
        return 1.0
    if tag == "sup":
        return 2.0**d
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


# -- reduction and enumeration ----------------------------------------------


def _lll(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b = np.ascontiguousarray(b, dtype=float).copy()
    t, status = _kernels.lll_reduce_kernel(b, LLL_DELTA, 100_000)
    if status:
        raise LatticeError("LLL did not converge (basis too ill-conditioned)")
    return b, t


def lll_reduce(x: Lattice) -> tuple[Lattice, np.ndarray]:
    """delta=0.99 LLL reduction; returns the reduced lattice and ``T`` with
    ``T @ x.basis == reduced.basis`` (integer, ``det T = +-1``)."""
    _, t = _lll(x.basis)
    # rebuild from the exact integer transform; ill-conditioned inputs can
    # leave ~1e-9 determinant drift, which is renormalised away
    b = t.astype(float) @ x.basis
    det = np.linalg.det(b)
    if det < 0:
        b[0] = -b[0]
        t[0] = -t[0]
        det = -det
    if abs(det - 1.0) > RENORM_TOL:
        b = b / det ** (1.0 / x.dims.n)
    return Lattice(x.dims, b), t


def is_lll_reduced(basis, delta: float = LLL_DELTA, eps: float = 1e-9) -> bool:
    mu, _, bsq = _kernels.gram_schmidt(np.ascontiguousarray(basis, dtype=float))
    n = len(bsq)
    for i in range(n):
        for j in range(i):
            if abs(mu[i, j]) > 0.5 + eps:
                return False
    for i in range(1, n):
        if bsq[i] < (delta - mu[i, i - 1] ** 2) * bsq[i - 1] * (1 - eps):
            return False
    return True


class Region(Protocol):
    """Anything with an axis-aligned bounding box and a vectorised membership
    test on ``(N, n)`` arrays of points."""

    def bbox(self) -> tuple[np.ndarray, np.ndarray]: ...

    def contains(self, points: np.ndarray) -> np.ndarray: ...


@dataclass
class BoxRegion:
    """The closed box ``[lo, hi]`` with an optional extra membership test."""

    lo: np.ndarray
    hi: np.ndarray
    test: Callable[[np.ndarray], np.ndarray] | None = None

    def bbox(self):
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def contains(self, points):
        lo, hi = self.bbox()
        ok = np.all((points >= lo - 1e-12) & (points <= hi + 1e-12), axis=1)
        if self.test is not None:
            ok &= self.test(points)
        return ok


@dataclass
class BallRegion:
    """Closed norm ball ``{|v - center| <= radius}`` for a :class:`NormPair`
    outer norm (conjugator honoured)."""

    dim: int
    radius: float
    norms: NormPair = field(default_factory=NormPair)
    center: np.ndarray | None = None

    def bbox(self):
        n = self.dim
        c = np.zeros(n) if self.center is None else np.asarray(self.center, float)
        if self.norms.conjugator is None:
            h = np.full(n, self.radius)
        else:
            # |v_j| <= |v g0^{-1}|_inf * sum_i |g0_ij|
            h = self.radius * np.abs(self.norms.conjugator).sum(axis=0)
        return c - h, c + h

    def contains(self, points):
        c = 0.0 if self.center is None else np.asarray(self.center, float)
        return self.norms.outer_norm(points - c) <= self.radius * (1 + 1e-12)


@dataclass
class PointSet:
    """Result of an enumeration: integer coefficients and embedded points."""

    coeffs: np.ndarray
    points: np.ndarray

    def __len__(self):
        return self.coeffs.shape[0]

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return zip(self.coeffs, self.points)

    def subset(self, mask) -> "PointSet":
        return PointSet(self.coeffs[mask], self.points[mask])


def predicted_count(basis: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Volume heuristic for the number of lattice points in the enumeration
    ball circumscribing ``[lo, hi]``."""
    n = basis.shape[0]
    half = np.maximum((hi - lo) / 2, 0.0)
    r = math.sqrt(n)
    vol = unit_ball_volume(n, "euclidean") * r**n * float(np.prod(half))
    return vol / abs(np.linalg.det(basis))


def enumerate_box(basis: np.ndarray, lo, hi, cap: int | None = None) -> np.ndarray:
    """Integer coefficient vectors ``c`` (including 0) of all lattice points
    ``c @ basis`` in a superset of the box ``[lo, hi]``.

    The box is mapped to the cube ``[-1, 1]^n`` by a diagonal rescaling, the
    rescaled basis is LLL-reduced, and the circumscribed ball of radius
    ``sqrt(n)`` is enumerated with Fincke-Pohst per-level bounds.
    """
    cap = current_cap() if cap is None else cap
    basis = np.asarray(basis, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = basis.shape[0]
    if lo.shape != (n,) or hi.shape != (n,):
        raise LatticeError("bounding box dimension mismatch")
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise LatticeError("bounding box must be compact")
    if np.any(hi < lo):
        return np.zeros((0, n), dtype=np.int64)
    mid = (lo + hi) / 2
    half = (hi - lo) / 2
    floor = 1e-12 * max(float(half.max()), 1e-12)
    half = np.maximum(half, floor)
    if predicted_count(basis, mid - half, mid + half) > cap:
        raise EnumerationCapError(
            f"predicted enumeration count exceeds cap {cap}; shrink the region"
        )
    scaled = basis / half
    red, t = _lll(scaled)
    center = mid / half
    radius = math.sqrt(n) * (1 + 1e-9)
    size = 64
    while True:
        out = np.empty((size, n), dtype=np.int64)
        count, nodes = _kernels.enumerate_ball_kernel(red, center, radius, cap, out)
        if nodes < 0:
            raise EnumerationCapError(f"enumeration exceeded node cap {cap}")
        if count <= size:
            break
        size = count
    return out[:count] @ t


def enumerate_points(
    x: Lattice | np.ndarray,
    region: Region,
    primitive_only: bool = False,
    cap: int | None = None,
) -> PointSet:
    """All nonzero lattice points of ``x`` in ``region``.

    Returns coefficients relative to ``x.basis`` together with the points.
    Completeness is guaranteed: the region's bounding box is covered by the
    enumeration ball and each candidate is tested exactly.
    """
    basis = x.basis if isinstance(x, Lattice) else np.asarray(x, dtype=float)
    lo, hi = region.bbox()
    coeffs = enumerate_box(basis, lo, hi, cap)
    nonzero = np.any(coeffs != 0, axis=1)
    coeffs = coeffs[nonzero]
    pts = coeffs.astype(float) @ basis
    keep = region.contains(pts) if len(pts) else np.zeros(0, dtype=bool)
    if primitive_only and len(pts):
        keep &= primitive_mask(coeffs)
    return PointSet(coeffs[keep], pts[keep])


def ball_region(n: int, radius: float, norms: NormPair | None = None) -> BallRegion:
    return BallRegion(n, radius, norms or NormPair())


@dataclass
class ShortestVector:
    alpha: float
    length: float
    witness: np.ndarray
    vector: np.ndarray


def shortest_vector(x: Lattice | np.ndarray, norms: NormPair | None = None) -> ShortestVector:
    """Exact shortest nonzero vector for the (possibly conjugated) outer norm."""
    norms = norms or NormPair()
    basis = x.basis if isinstance(x, Lattice) else np.asarray(x, dtype=float)
    if abs(np.linalg.det(basis)) < 1e-6:
        raise LatticeError("degenerate basis")
    n = basis.shape[0]
    work = basis if norms.conjugator is None else basis @ norms.conjugator_inverse
    red, t = _lll(work)
    lengths = vector_norm(red, norms.outer)
    best = float(lengths.min())
    # enumerate in the transformed frame, where the outer norm is plain
    region = ball_region(n, best, NormPair(norms.outer, norms.inner))
    found = enumerate_points(work, region)
    if len(found) == 0:
        i = int(np.argmin(lengths))
        coeffs = t[i]
    else:
        lens = vector_norm(found.points, norms.outer)
        i = int(np.argmin(lens))
        coeffs = found.coeffs[i]
    vec = coeffs.astype(float) @ basis
    length = float(norms.outer_norm(vec))
    return ShortestVector(1.0 / length, length, coeffs, vec)


def alpha(x: Lattice, norms: NormPair | None = None) -> float:
    """``alpha(x) = max_{v != 0} 1/|v|``."""
    return shortest_vector(x, norms).alpha
