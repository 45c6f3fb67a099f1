"""Graphs, shift operators, norms, eigendecompositions, and graph perturbations."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

SYMMETRY_ATOL = 1e-12


def _as_square_matrix(m, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def _check_symmetric(m: np.ndarray, atol: float, name: str = "matrix") -> None:
    dev = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if dev > atol:
        raise ValueError(f"{name} is asymmetric: max|M - M^T| = {dev:.3e} > {atol:.0e}")


@dataclass(frozen=True)
class Graph:
    """An undirected graph held as its dense symmetric shift matrix."""

    n: int
    shift: np.ndarray
    labels: list[str] | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("node count must be positive")
        shift = _as_square_matrix(self.shift, "shift")
        if shift.shape[0] != self.n:
            raise ValueError(f"shift is {shift.shape[0]}x{shift.shape[0]} but n={self.n}")
        _check_symmetric(shift, SYMMETRY_ATOL, "shift")
        if self.labels is not None and len(self.labels) != self.n:
            raise ValueError("labels length must equal node count")
        object.__setattr__(self, "shift", shift)


def validate_signal(g: Graph, x) -> np.ndarray:
    """Coerce x to a float vector and check it is a signal on g."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.n,):
        raise ValueError(f"signal has shape {x.shape}, expected ({g.n},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite entries")
    return x


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a symmetric matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class PerturbationSpec:
    """Target spectral norms for the additive (T0) and multiplicative (T1) parts."""

    kind: str  # additive | multiplicative | mixed
    t0_norm: float = 0.0
    t1_norm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("additive", "multiplicative", "mixed"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        for name, v in (("t0_norm", self.t0_norm), ("t1_norm", self.t1_norm)):
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0")
        if self.kind == "additive" and self.t1_norm != 0:
            raise ValueError("additive perturbation requires t1_norm = 0")
        if self.kind == "multiplicative" and self.t0_norm != 0:
            raise ValueError("multiplicative perturbation requires t0_norm = 0")


@dataclass(frozen=True)
class PerturbationRealization:
    """Concrete draw (T0, T1) and the perturbed shift S + T0 + T1 S."""

    t0: np.ndarray
    t1: np.ndarray
    perturbed_shift: np.ndarray


def build_shift_from_adjacency(W, normalization: str = "none") -> Graph:
    """Turn a nonnegative symmetric adjacency into a Graph.

    normalization "none" keeps W as the shift; "symmetric_degree" rescales to
    D^{-1/2} W D^{-1/2}, mapping rows of isolated nodes to zero.
    """
    W = _as_square_matrix(W, "adjacency")
    _check_symmetric(W, SYMMETRY_ATOL, "adjacency")
    if np.any(W < 0):
        raise ValueError("adjacency has negative weights")
    if np.any(np.abs(np.diag(W)) > 0):
        raise ValueError("adjacency must have zero diagonal")
    if normalization == "none":
        shift = W.copy()
    elif normalization == "symmetric_degree":
        deg = W.sum(axis=1)
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
        shift = inv_sqrt[:, None] * W * inv_sqrt[None, :]
        shift = 0.5 * (shift + shift.T)  # kill last-ulp asymmetry from the two products
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return Graph(n=W.shape[0], shift=shift)


def random_graph(model: str, n: int, seed: int, *, p: float | None = None,
                 blocks: int | None = None, p_in: float | None = None,
                 p_out: float | None = None) -> Graph:
    """Sample a 0/1 adjacency: Erdos-Renyi ("erdos_renyi") or planted blocks ("sbm")."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if model == "erdos_renyi":
        if p is None or not 0.0 <= p <= 1.0:
            raise ValueError("erdos_renyi requires p in [0, 1]")
        prob = np.full((n, n), p)
    elif model == "sbm":
        if blocks is None or blocks < 1:
            raise ValueError("sbm requires blocks >= 1")
        for name, v in (("p_in", p_in), ("p_out", p_out)):
            if v is None or not 0.0 <= v <= 1.0:
                raise ValueError(f"sbm requires {name} in [0, 1]")
        membership = np.arange(n) * blocks // n
        same = membership[:, None] == membership[None, :]
        prob = np.where(same, p_in, p_out)
    else:
        raise ValueError(f"unknown graph model {model!r}")
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    adj = (upper | upper.T).astype(np.float64)
    return Graph(n=n, shift=adj)


def spectral_norm(M) -> float:
    """Largest singular value, via a symmetric eigensolve of the Gram matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")
    if M.size == 0:
        return 0.0
    # eigvalsh on the smaller Gram side is exact enough (1e-9 relative) at
    # these sizes and avoids the sign/rotation ambiguity of full SVD.
    gram = M.T @ M if M.shape[1] <= M.shape[0] else M @ M.T
    return float(np.sqrt(max(np.linalg.eigvalsh(gram)[-1], 0.0)))


def eigendecompose_symmetric(S) -> SpectralDecomposition:
    """Eigendecomposition of a symmetric matrix with ascending eigenvalues."""
    S = _as_square_matrix(S, "S")
    _check_symmetric(S, 1e-10, "S")
    eigenvalues, eigenvectors = np.linalg.eigh(S)
    return SpectralDecomposition(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def _symmetric_gaussian_with_norm(rng: np.random.Generator, n: int, target: float) -> np.ndarray:
    if target == 0.0:
        return np.zeros((n, n))
    raw = rng.standard_normal((n, n))
    sym = 0.5 * (raw + raw.T)
    nrm = spectral_norm(sym)
    if nrm == 0.0:  # astronomically unlikely; redraw deterministically
        return _symmetric_gaussian_with_norm(rng, n, target)
    return sym * (target / nrm)


def realize_perturbation(spec: PerturbationSpec, g: Graph) -> PerturbationRealization:
    """Draw symmetric Gaussian T0, T1 rescaled to the requested spectral norms."""
    rng = np.random.default_rng(spec.seed)
    t0 = _symmetric_gaussian_with_norm(rng, g.n, spec.t0_norm)
    t1 = _symmetric_gaussian_with_norm(rng, g.n, spec.t1_norm)
    return PerturbationRealization(
        t0=t0, t1=t1, perturbed_shift=apply_perturbation(g.shift, t0, t1)
    )


def apply_perturbation(S, t0, t1) -> np.ndarray:
    """Perturbed shift S + T0 + T1 S. The product term makes the result non-symmetric in general."""
    S = _as_square_matrix(S, "S")
    t0 = _as_square_matrix(t0, "t0")
    t1 = _as_square_matrix(t1, "t1")
    if t0.shape != S.shape or t1.shape != S.shape:
        raise ValueError("perturbation matrices must match the shift's shape")
    return S + t0 + t1 @ S


def graph_to_json(g: Graph) -> str:
    doc = {"n": g.n, "shift": g.shift.tolist(), "labels": g.labels}
    return json.dumps(doc, sort_keys=True)


def graph_from_json(text: str) -> Graph:
    doc = json.loads(text)
    return Graph(n=int(doc["n"]), shift=np.array(doc["shift"], dtype=np.float64),
                 labels=doc.get("labels"))
