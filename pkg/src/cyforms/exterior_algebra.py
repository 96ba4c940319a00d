"""Pointwise multilinear algebra on the exterior powers of (R^{2n})*.

Coordinates are interleaved, ``(x1, y1, x2, y2, ...)``, so axis ``2j`` is
``x_{j+1}`` and axis ``2j+1`` is ``y_{j+1}``.  A degree-``k`` form is stored
as a coefficient vector over the lexicographically sorted strictly
increasing ``k``-tuples of axes.  The standard orientation is
``dx1^dy1^...^dxn^dyn``, so ``omega^n/n!`` has coefficient ``+1`` on the
single top index.

Most operations come in two flavours: methods on :class:`AlgebraicForm`
for a single point, and ``*_coeffs`` helpers acting on arrays whose first
axis indexes basis components (used by the grid code).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import DegreeError, NotComplexType

__all__ = [
    "MultiIndexBasis",
    "AlgebraicForm",
    "SymplecticFrame",
    "axis_names",
    "basis",
    "wedge",
    "interior_product",
    "omega_pairing",
    "symplectic_star",
    "primitivity_residual",
    "stability_margin_2form",
    "hitchin_lambda",
    "hitchin_K",
    "reconstruct_complex_structure",
    "standard_complex_structure",
    "pullback_linear",
    "exterior_power",
    "primitive_projector",
    "random_form",
]


def axis_names(m):
    return [f"{'xy'[a % 2]}{a // 2 + 1}" for a in range(m)]


def merge_sign(I, J):
    """Sign of ``e^I ^ e^J`` relative to the sorted basis element, 0 if they overlap."""
    if set(I) & set(J):
        return 0
    inversions = sum(1 for i in I for j in J if i > j)
    return -1 if inversions % 2 else 1


@dataclass(frozen=True)
class MultiIndexBasis:
    m: int
    k: int
    indices: tuple
    position: dict = field(compare=False, repr=False)

    def __len__(self):
        return len(self.indices)

    def index(self, I):
        return self.position[tuple(I)]

    def label(self, i):
        names = axis_names(self.m)
        I = self.indices[i]
        return "^".join("d" + names[a] for a in I) if I else "1"

    @property
    def wedge_sign_table(self):
        """``sign[i, j]`` of ``e^{I_i} ^ e^{I_j}`` (degree ``2k`` products)."""
        return np.array([[merge_sign(I, J) for J in self.indices] for I in self.indices])


@lru_cache(maxsize=None)
def basis(m, k):
    if not 0 <= k <= m:
        raise DegreeError(f"degree {k} outside [0, {m}]")
    idx = tuple(combinations(range(m), k))
    return MultiIndexBasis(m, k, idx, {I: i for i, I in enumerate(idx)})


@lru_cache(maxsize=None)
def wedge_table(m, p, q):
    """Nonzero structure constants of ``Lambda^p x Lambda^q -> Lambda^{p+q}``.

    Returns integer arrays ``(out, ia, ib)`` and a float array ``sign`` with
    ``(a ^ b)[out] += sign * a[ia] * b[ib]``.
    """
    if p + q > m:
        raise DegreeError(f"wedge of degrees {p} and {q} exceeds dimension {m}")
    Bp, Bq, Br = basis(m, p), basis(m, q), basis(m, p + q)
    rows = []
    for i, I in enumerate(Bp.indices):
        for j, J in enumerate(Bq.indices):
            s = merge_sign(I, J)
            if s:
                rows.append((Br.index(tuple(sorted(I + J))), i, j, s))
    rows.sort()
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(float)


@lru_cache(maxsize=None)
def _wedge_groups(m, p, q):
    out, ia, ib, sign = wedge_table(m, p, q)
    groups = []
    for o in range(math.comb(m, p + q)):
        sel = out == o
        groups.append((ia[sel], ib[sel], sign[sel]))
    return groups


def wedge_coeffs(m, p, q, a, b):
    """Wedge of coefficient arrays with a leading component axis (broadcast over the rest)."""
    a = np.asarray(a)
    b = np.asarray(b)
    rest = np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros((math.comb(m, p + q),) + rest, dtype=np.result_type(a, b, float))
    for o, (ia, ib, sign) in enumerate(_wedge_groups(m, p, q)):
        acc = out[o, ...]
        for i, j, s in zip(ia, ib, sign):
            if s > 0:
                acc += a[i] * b[j]
            else:
                acc -= a[i] * b[j]
    return out


@lru_cache(maxsize=None)
def left_wedge_matrices(m, k):
    """``E[a]`` is the matrix of ``e^a ^ (.)`` from degree ``k`` to ``k+1``."""
    out, ia, ib, sign = wedge_table(m, 1, k)
    E = np.zeros((m, math.comb(m, k + 1), math.comb(m, k)))
    E[ia, out, ib] = sign
    E.setflags(write=False)
    return E


@lru_cache(maxsize=None)
def interior_table(m, k):
    """``(out, axis, src, sign)``: ``iota_v e^I`` picks up ``sign * v[axis]`` on ``out``."""
    Bk, Bl = basis(m, k), basis(m, k - 1)
    rows = []
    for i, I in enumerate(Bk.indices):
        for p, a in enumerate(I):
            rows.append((Bl.index(I[:p] + I[p + 1:]), a, i, -1 if p % 2 else 1))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3].astype(float)


def interior_coeffs(m, k, v, a):
    """Contraction of the vector(s) ``v`` (shape ``(m, ...)``) into coefficient array ``a``."""
    out_i, axis, src, sign = interior_table(m, k)
    v = np.asarray(v)
    rest = np.broadcast_shapes(v.shape[1:], a.shape[1:])
    out = np.zeros((math.comb(m, k - 1),) + rest, dtype=np.result_type(v, a, float))
    for o, ax, s, sg in zip(out_i, axis, src, sign):
        out[o] += sg * v[ax] * a[s]
    return out


class AlgebraicForm:
    """A constant-coefficient exterior form of fixed degree on ``R^m``."""

    __slots__ = ("m", "degree", "coeffs")

    def __init__(self, m, degree, coeffs=None):
        B = basis(m, degree)
        if coeffs is None:
            coeffs = np.zeros(len(B), dtype=complex)
        coeffs = np.array(coeffs, dtype=complex).reshape(-1)
        if coeffs.size != len(B):
            raise DegreeError(f"expected {len(B)} coefficients for degree {degree}, got {coeffs.size}")
        self.m = m
        self.degree = degree
        self.coeffs = coeffs

    @classmethod
    def from_terms(cls, m, terms, degree=None):
        """Build from ``{"x1 y1": c, ...}``; keys are space separated axis names in any order."""
        names = {nm: a for a, nm in enumerate(axis_names(m))}
        parsed = []
        for key, c in terms.items():
            axes = [names[t] for t in key.split()] if key.strip() else []
            parsed.append((axes, c))
        if degree is None:
            degree = len(parsed[0][0]) if parsed else 0
        f = cls(m, degree)
        B = basis(m, degree)
        for axes, c in parsed:
            if len(axes) != degree:
                raise DegreeError("mixed degrees in from_terms")
            srt = tuple(sorted(axes))
            if len(set(srt)) < len(srt):
                continue
            inv = sum(1 for i in range(len(axes)) for j in range(i + 1, len(axes)) if axes[i] > axes[j])
            f.coeffs[B.index(srt)] += (-1) ** inv * c
        return f

    @classmethod
    def basis_element(cls, m, I):
        f = cls(m, len(I))
        f.coeffs[basis(m, len(I)).index(tuple(I))] = 1.0
        return f

    @classmethod
    def scalar(cls, m, c=1.0):
        return cls(m, 0, [c])

    @classmethod
    def one_form(cls, v):
        v = np.asarray(v)
        return cls(v.size, 1, v)

    def _check(self, other):
        if not isinstance(other, AlgebraicForm) or other.m != self.m or other.degree != self.degree:
            raise DegreeError("forms must share ambient dimension and degree")

    def __add__(self, other):
        self._check(other)
        return AlgebraicForm(self.m, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return AlgebraicForm(self.m, self.degree, self.coeffs - other.coeffs)

    def __neg__(self):
        return AlgebraicForm(self.m, self.degree, -self.coeffs)

    def __mul__(self, c):
        if isinstance(c, AlgebraicForm):
            return NotImplemented
        return AlgebraicForm(self.m, self.degree, self.coeffs * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return AlgebraicForm(self.m, self.degree, self.coeffs / c)

    def __xor__(self, other):
        return wedge(self, other)

    def __repr__(self):
        B = basis(self.m, self.degree)
        terms = [f"({c:.6g}){B.label(i)}" for i, c in enumerate(self.coeffs) if abs(c) > 0]
        return f"AlgebraicForm(m={self.m}, k={self.degree}: " + (" + ".join(terms) or "0") + ")"

    def conj(self):
        return AlgebraicForm(self.m, self.degree, self.coeffs.conj())

    @property
    def real(self):
        return AlgebraicForm(self.m, self.degree, self.coeffs.real)

    @property
    def imag(self):
        return AlgebraicForm(self.m, self.degree, self.coeffs.imag)

    def is_real(self, tol=0.0):
        return bool(np.all(np.abs(self.coeffs.imag) <= tol))

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def max_abs(self):
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def top(self):
        """Coefficient on the volume element (only meaningful for top degree)."""
        if self.degree != self.m:
            raise DegreeError("not a top-degree form")
        return self.coeffs[0]

    def allclose(self, other, atol=1e-12):
        self._check(other)
        return bool(np.max(np.abs(self.coeffs - other.coeffs), initial=0.0) <= atol)


def wedge(a, b):
    if a.m != b.m:
        raise DegreeError("ambient dimensions differ")
    if a.degree + b.degree > a.m:
        raise DegreeError(f"degree {a.degree} + {b.degree} exceeds {a.m}")
    c = wedge_coeffs(a.m, a.degree, b.degree, a.coeffs, b.coeffs)
    return AlgebraicForm(a.m, a.degree + b.degree, c)


def interior_product(v, a):
    v = np.asarray(v, dtype=complex)
    if a.degree < 1:
        raise DegreeError("cannot contract into a 0-form")
    return AlgebraicForm(a.m, a.degree - 1, interior_coeffs(a.m, a.degree, v, a.coeffs))


class SymplecticFrame:
    """Constant symplectic form ``omega`` together with its bivector and volume.

    ``omega_matrix[a, b]`` is the coefficient of ``e^a ^ e^b`` (``a < b``) in
    ``omega``, extended antisymmetrically.  The bivector is the plain matrix
    inverse, so ``omega^{-1}(dx_i, dy_i) = -1`` for the standard form.  This
    is the sign for which primitive middle-degree forms satisfy
    ``*eta = (-1)^{n(n+1)/2} eta``; the opposite sign flips the star on odd
    degrees and breaks that law for odd ``n``.
    """

    def __init__(self, omega_matrix):
        W = np.array(omega_matrix, dtype=float)
        m = W.shape[0]
        if W.shape != (m, m) or m % 2 or not np.allclose(W, -W.T):
            raise ValueError("omega must be an even-dimensional antisymmetric matrix")
        self.m = m
        self.n = m // 2
        self.omega_matrix = W
        self.omega_inverse = np.linalg.inv(W)
        B2 = basis(m, 2)
        self.omega = AlgebraicForm(m, 2, [W[i, j] for i, j in B2.indices])
        power = AlgebraicForm.scalar(m)
        for _ in range(self.n):
            power = wedge(power, self.omega)
        self.volume_normalizer = power / math.factorial(self.n)

    @classmethod
    def standard(cls, n):
        m = 2 * n
        W = np.zeros((m, m))
        for j in range(n):
            W[2 * j, 2 * j + 1] = 1.0
            W[2 * j + 1, 2 * j] = -1.0
        return cls(W)

    def pairing_matrix(self, k):
        return _pairing_matrix(self, k)

    def star_matrix(self, k):
        return _star_matrix(self, k)


_FRAME_CACHE = {}


def _frame_cache(frame, kind, k, build):
    key = (id(frame), kind, k)
    hit = _FRAME_CACHE.get(key)
    if hit is None or hit[0] is not frame:
        hit = (frame, build())
        _FRAME_CACHE[key] = hit
    return hit[1]


def _pairing_matrix(frame, k):
    def build():
        B = basis(frame.m, k)
        P = frame.omega_inverse
        if k == 0:
            G = np.ones((1, 1))
        else:
            idx = np.array(B.indices)
            sub = P[idx[:, None, :, None], idx[None, :, None, :]]
            G = np.linalg.det(sub)
        G.setflags(write=False)
        return G

    return _frame_cache(frame, "pair", k, build)


def _star_matrix(frame, k):
    def build():
        m = frame.m
        Bk, Bc = basis(m, k), basis(m, m - k)
        G = _pairing_matrix(frame, k)
        vol = frame.volume_normalizer.top().real
        S = np.zeros((len(Bc), len(Bk)))
        full = set(range(m))
        for i, I in enumerate(Bk.indices):
            Ic = tuple(sorted(full - set(I)))
            S[Bc.index(Ic), :] = merge_sign(I, Ic) * vol * G[i, :]
        S.setflags(write=False)
        return S

    return _frame_cache(frame, "star", k, build)


def omega_pairing(a, b, frame):
    """``(omega^{-1})^k (a, b)``: determinant of pairings on decomposables, bilinear."""
    if a.degree != b.degree:
        raise DegreeError("pairing needs equal degrees")
    return complex(a.coeffs @ frame.pairing_matrix(a.degree) @ b.coeffs)


def symplectic_star(a, frame):
    """Unique form with ``alpha ^ *b = (omega^{-1})^k(alpha, b) omega^n/n!`` for all ``alpha``."""
    return AlgebraicForm(a.m, a.m - a.degree, frame.star_matrix(a.degree) @ a.coeffs)


def primitivity_residual(eta, frame):
    return wedge(eta, frame.omega).max_abs()


def stability_margin_2form(w, m=None):
    """``|coef of w^{m/2} on vol| / |w|^{m/2}``; zero exactly when ``w`` is degenerate."""
    if w.degree != 2:
        raise DegreeError("expected a 2-form")
    m = w.m if m is None else m
    if not w.is_real(1e-12 * max(w.max_abs(), 1.0)):
        raise ValueError("stability margin is defined for real 2-forms")
    nrm = np.linalg.norm(w.coeffs.real)
    if nrm == 0:
        return 0.0
    power = AlgebraicForm.scalar(m)
    for _ in range(m // 2):
        power = wedge(power, w.real)
    return float(abs(power.top()) / nrm ** (m // 2))


@lru_cache(maxsize=None)
def hitchin_table():
    """Sparse quadratic table for ``K_rho``: ``K[a, b] += c * rho[I] * rho[J]``.

    ``K_rho(v)`` is the vector ``u`` with ``iota_u vol = -(iota_v rho) ^ rho``.
    The overall sign of the Lambda^5 -> V identification is chosen so that
    ``Re(dz1^dz2^dz3)`` reconstructs the standard complex structure.
    """
    m = 6
    B3, B5 = basis(m, 3), basis(m, 5)
    missing = [B5.index(tuple(x for x in range(m) if x != a)) for a in range(m)]
    rows = {}
    for I in range(len(B3)):
        eI = AlgebraicForm.basis_element(m, B3.indices[I])
        for b in range(m):
            ivI = interior_product(np.eye(m)[b], eI)
            if not np.any(ivI.coeffs):
                continue
            for J in range(len(B3)):
                eJ = AlgebraicForm.basis_element(m, B3.indices[J])
                beta = wedge(ivI, eJ).coeffs
                for a in range(m):
                    c = -((-1) ** a) * beta[missing[a]].real
                    if c:
                        rows[(a, b, I, J)] = rows.get((a, b, I, J), 0.0) + c
    keys = sorted(rows)
    arr = np.array(keys, dtype=np.int64)
    coef = np.array([rows[k] for k in keys])
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], coef


def hitchin_K(rho):
    """The endomorphism ``K_rho`` of ``R^6`` (trivialized by the standard volume)."""
    if rho.m != 6 or rho.degree != 3:
        raise DegreeError("Hitchin's K is defined for 3-forms on R^6")
    r = rho.coeffs.real
    a, b, I, J, c = hitchin_table()
    K = np.zeros((6, 6))
    np.add.at(K, (a, b), c * r[I] * r[J])
    return K


def hitchin_lambda(rho):
    """Quartic invariant ``lambda(rho) = tr(K_rho^2) / 6``; negative iff complex type."""
    K = hitchin_K(rho)
    return float(np.trace(K @ K) / 6.0)


def standard_complex_structure(n):
    """Matrix of ``J0`` on vectors: ``J0 d/dx_j = d/dy_j`` and ``J0 d/dy_j = -d/dx_j``."""
    m = 2 * n
    J = np.zeros((m, m))
    for j in range(n):
        J[2 * j + 1, 2 * j] = 1.0
        J[2 * j, 2 * j + 1] = -1.0
    return J


def exterior_power(g, k):
    """``L[I, J] = det g[I, J]``; the induced map on ``Lambda^k``."""
    g = np.asarray(g)
    m = g.shape[-1]
    B = basis(m, k)
    if k == 0:
        return np.ones(g.shape[:-2] + (1, 1), dtype=g.dtype)
    idx = np.array(B.indices)
    sub = g[..., idx[:, None, :, None], idx[None, :, None, :]]
    return np.linalg.det(sub)


def pullback_linear(f, g):
    """Pullback of a constant form through the linear map ``v -> g v``."""
    L = exterior_power(np.asarray(g, dtype=float), f.degree)
    return AlgebraicForm(f.m, f.degree, L.T @ f.coeffs)


def reconstruct_complex_structure(rho):
    """``J = K_rho / sqrt(-lambda)`` and ``rho_hat = rho(J., J., J.)``."""
    lam = hitchin_lambda(rho)
    if not lam < 0:
        raise NotComplexType(f"lambda(rho) = {lam:.3e} >= 0")
    J = hitchin_K(rho) / math.sqrt(-lam)
    return J, pullback_linear(rho.real, J)


def primitive_projector(frame, k):
    """Orthogonal projector (Euclidean on coefficients) onto ``ker(. ^ omega)`` in degree ``k``."""

    def build():
        m = frame.m
        if k + 2 > m:
            return np.eye(math.comb(m, k))
        L = wedge_coeffs(m, k, 2, np.eye(math.comb(m, k)), frame.omega.coeffs.real[:, None])
        _, s, vh = np.linalg.svd(L)
        rank = int(np.sum(s > 1e-12 * max(s.max(), 1.0)))
        null = vh[rank:].T
        return null @ null.T

    return _frame_cache(frame, "prim", k, build)


def random_form(m, k, rng, real=False):
    n = math.comb(m, k)
    c = rng.standard_normal(n)
    if not real:
        c = c + 1j * rng.standard_normal(n)
    return AlgebraicForm(m, k, c)
