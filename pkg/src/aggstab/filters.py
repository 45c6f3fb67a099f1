"""Polynomial filters, cyclic coefficient shifts, Lipschitz certification, and stability bounds.

A filter with taps h_0..h_a acts on per-node aggregation rows through the
circulant matrix sum_k h_k C^k.  Its effect on the underlying graph is
governed by the family of shifted polynomials p_m(lambda), m = 0..a, whose
coefficients are cyclic rotations of the tap vector: the stability constants
of the whole architecture are controlled by the worst Lipschitz and
integral-Lipschitz constants across that family.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .graph import _as_square_matrix, _check_symmetric, eigendecompose_symmetric

EIGEN_TIE_RTOL = 1e-10


@dataclass(frozen=True)
class PolyFilter:
    """Tap coefficients h_0..h_a of f(lambda) = sum_k h_k lambda^k."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=np.float64))
        if c.ndim != 1 or c.size == 0:
            raise ValueError("filter needs at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise ValueError("filter coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1


@dataclass(frozen=True)
class Omega:
    """Closed real interval with a uniform evaluation grid."""

    lo: float
    hi: float
    grid_points: int = 2048

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo >= self.hi:
            raise ValueError("omega requires finite lo < hi")
        if self.grid_points < 2:
            raise ValueError("omega needs at least 2 grid points")

    def grid(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.grid_points)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Grid suprema of |p'(lambda)| (L0) and |lambda p'(lambda)| (L1) over the shift family.

    Carries the interval it was computed on so downstream sweeps can verify
    that perturbed spectra stay covered.
    """

    L0: float
    L1: float
    grid_points: int
    omega: Omega


@dataclass(frozen=True)
class StabilityBound:
    """First-layer perturbation bound C0*|T0| + C1*|T1| with C_i = N sqrt(a+1) L_i."""

    c0: float
    c1: float
    total: float
    layer_product: float = 1.0


def eval_poly(f: PolyFilter, lam: float) -> float:
    """Horner evaluation of f at a scalar."""
    acc = 0.0
    for c in f.coeffs[::-1]:
        acc = acc * lam + c
    return float(acc)


def eval_poly_matrix(f: PolyFilter, S) -> np.ndarray:
    """sum_k h_k S^k by iterated multiplication."""
    S = _as_square_matrix(S, "S")
    n = S.shape[0]
    acc = f.coeffs[0] * np.eye(n)
    power = np.eye(n)
    for h in f.coeffs[1:]:
        power = power @ S
        acc = acc + h * power
    return acc


def cyclic_shift_coeffs(f: PolyFilter, m: int) -> PolyFilter:
    """m-th cyclic rotation of the taps: h'_k = h_{(k-m) mod (a+1)}.

    Equivalently lambda^m f(lambda) reduced modulo lambda^(a+1) - 1.
    """
    if m < 0:
        raise ValueError("shift index must be >= 0")
    return PolyFilter(np.roll(f.coeffs, m % f.coeffs.size))


def printed_shift_coeffs(f: PolyFilter, m: int) -> PolyFilter:
    """Diagnostic variant: lambda^m f(lambda) - (lambda^(a+1) - 1) sum_{r=0}^m h_{a-r} lambda^{m-r}.

    Kept only for comparison against cyclic_shift_coeffs; it does not reduce
    to f at m = 0 and is never used in certification or bounds.
    """
    if m < 0:
        raise ValueError("shift index must be >= 0")
    n = f.coeffs.size
    a = n - 1
    out = np.zeros(a + m + 2)
    out[m:m + n] += f.coeffs  # lambda^m f(lambda)
    for r in range(min(m, a) + 1):
        h = f.coeffs[a - r]
        out[m - r + a + 1] -= h
        out[m - r] += h
    return PolyFilter(out)


def _derivative_coeffs(coeffs: np.ndarray) -> np.ndarray:
    if coeffs.size == 1:
        return np.zeros(1)
    return coeffs[1:] * np.arange(1, coeffs.size)


def _poly_grid(coeffs: np.ndarray, grid: np.ndarray) -> np.ndarray:
    vals = np.zeros_like(grid)
    for c in coeffs[::-1]:
        vals = vals * grid + c
    return vals


def estimate_lipschitz(f: PolyFilter, omega: Omega, include_shifts: bool = True) -> LipschitzEstimate:
    """Estimate L0 = sup|p_m'| and L1 = sup|lambda p_m'| on omega's grid.

    Derivatives are evaluated analytically from the coefficients; the grid
    maximum is a tight surrogate for the true supremum at the default
    resolution.  With include_shifts the maximum runs over every cyclic
    rotation m = 0..a, which is what the stability bound requires.
    """
    grid = omega.grid()
    shifts = range(f.coeffs.size) if include_shifts else (0,)
    l0 = 0.0
    l1 = 0.0
    for m in shifts:
        dcoeffs = _derivative_coeffs(np.roll(f.coeffs, m))
        dvals = np.abs(_poly_grid(dcoeffs, grid))
        l0 = max(l0, float(dvals.max()))
        l1 = max(l1, float(np.abs(grid * dvals).max()))
    return LipschitzEstimate(L0=l0, L1=l1, grid_points=omega.grid_points, omega=omega)


def estimate_lipschitz_bank(filters, omega: Omega) -> LipschitzEstimate:
    """Worst-case estimate across a bank of filters, shifts included."""
    filters = list(filters)
    if not filters:
        raise ValueError("empty filter bank")
    ests = [estimate_lipschitz(f, omega, include_shifts=True) for f in filters]
    return LipschitzEstimate(
        L0=max(e.L0 for e in ests),
        L1=max(e.L1 for e in ests),
        grid_points=omega.grid_points,
        omega=omega,
    )


def certify_filter(f: PolyFilter, omega: Omega, l0_max: float, l1_max: float):
    """Check L0 <= l0_max and L1 <= l1_max with all cyclic shifts included."""
    if l0_max < 0 or l1_max < 0:
        raise ValueError("certification targets must be >= 0")
    est = estimate_lipschitz(f, omega, include_shifts=True)
    return {"pass": bool(est.L0 <= l0_max and est.L1 <= l1_max), "estimate": est}


def circulant_from_coeffs(f: PolyFilter) -> np.ndarray:
    """sum_k h_k C^k for the cyclic delay C (C e_i = e_{i+1 mod a+1}).

    Column r of the result is cyclic_shift_coeffs(f, r): entry (q, k) is
    h_{(q-k) mod (a+1)}.
    """
    n = f.coeffs.size
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return f.coeffs[idx]


def circulant_eigenvalues(f: PolyFilter) -> np.ndarray:
    """f evaluated at the (a+1)-th roots of unity, the circulant's spectrum."""
    n = f.coeffs.size
    omega = np.exp(2j * np.pi * np.arange(n) / n)
    return np.array([np.polyval(f.coeffs[::-1], w) for w in omega])


def frechet_derivative_poly(f: PolyFilter, S, Xi) -> np.ndarray:
    """Derivative of S -> f(S) at a symmetric S in direction Xi.

    Computed from the eigendecomposition S = V diag(lam) V^T as
    V (Z * (V^T Xi V)) V^T, where Z_rs is the divided difference
    (f(lam_r) - f(lam_s)) / (lam_r - lam_s), falling back to f'(lam_r)
    when the pair is numerically tied.
    """
    S = _as_square_matrix(S, "S")
    _check_symmetric(S, 1e-10, "S")
    Xi = _as_square_matrix(Xi, "Xi")
    if Xi.shape != S.shape:
        raise ValueError("direction must match S's shape")
    dec = eigendecompose_symmetric(S)
    lam = dec.eigenvalues
    V = dec.eigenvectors
    fvals = _poly_grid(f.coeffs, lam)
    dvals = _poly_grid(_derivative_coeffs(f.coeffs), lam)
    diff = lam[:, None] - lam[None, :]
    tied = np.abs(diff) <= EIGEN_TIE_RTOL * (1.0 + np.abs(lam))[:, None]
    z = np.where(tied, dvals[:, None],
                 (fvals[:, None] - fvals[None, :]) / np.where(tied, 1.0, diff))
    return V @ (z * (V.T @ Xi @ V)) @ V.T


def frechet_fd_oracle(f: PolyFilter, S, Xi, t: float) -> np.ndarray:
    """Central finite-difference probe (f(S + t Xi) - f(S - t Xi)) / (2t)."""
    if t <= 0:
        raise ValueError("step must be positive")
    S = _as_square_matrix(S, "S")
    Xi = _as_square_matrix(Xi, "Xi")
    return (eval_poly_matrix(f, S + t * Xi) - eval_poly_matrix(f, S - t * Xi)) / (2.0 * t)


def stability_bound(n: int, a: int, L0: float, L1: float,
                    t0_norm: float, t1_norm: float) -> StabilityBound:
    """First-layer bound: C0 = n sqrt(a+1) L0, C1 = n sqrt(a+1) L1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if min(a, L0, L1, t0_norm, t1_norm) < 0:
        raise ValueError("bound inputs must be >= 0")
    scale = n * np.sqrt(a + 1.0)
    c0 = float(scale * L0)
    c1 = float(scale * L1)
    return StabilityBound(c0=c0, c1=c1, total=c0 * t0_norm + c1 * t1_norm)


def multilayer_bound(base: StabilityBound, layer_norms) -> StabilityBound:
    """Scale a first-layer bound by the product of deeper-layer operator norms."""
    layer_norms = [float(b) for b in layer_norms]
    if any(b < 0 for b in layer_norms):
        raise ValueError("layer norms must be >= 0")
    prod = float(np.prod(layer_norms)) if layer_norms else 1.0
    return StabilityBound(c0=base.c0 * prod, c1=base.c1 * prod,
                          total=base.total * prod,
                          layer_product=base.layer_product * prod)


def omega_for_radius(radius: float, *, delta: float = 0.05, grid_points: int = 2048) -> Omega:
    """Symmetric interval [-(1+delta) r, (1+delta) r] covering a spectral radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    hi = (1.0 + delta) * radius
    return Omega(lo=-hi, hi=hi, grid_points=grid_points)


def filter_to_json(f: PolyFilter) -> str:
    return json.dumps(f.coeffs.tolist())


def filter_from_json(text: str) -> PolyFilter:
    return PolyFilter(np.array(json.loads(text), dtype=np.float64))
