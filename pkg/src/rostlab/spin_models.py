"""Gaussian spin-glass Hamiltonians: SK, mixed p-spin, and Edwards-Anderson.

A spin configuration is a length-N numpy vector with entries exactly +-1
(see ``as_spins``). The mixed Hamiltonian is

    H(sigma) = sum_p beta_p N^{-(p-1)/2} sum_{i1..ip} g_{i1..ip} s_i1 ... s_ip

with independent standard Gaussian couplings over ordered index tuples (no
symmetrization: symmetrizing would change the variance normalization), so
that over fresh disorder Cov(H(s), H(s')) = N sum_p beta_p^2 R(s,s')^p with
R the normalized spin overlap. Only p = 1 and even p are admitted. The
Edwards-Anderson model lives on a 2D rectangular lattice with one unit
Gaussian per edge and H(s) = sum_edges g_e s_i s_j, whose covariance is the
exact bilinear edge sum.

Couplings come from a counter-based hash of (seed, p, i1, ..., ip), so any
single coupling is reproducible in isolation and an N-site realization is
the restriction of the (N+1)-site one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rng import coupling_normals

MAX_TENSOR_ENTRIES = 20_000_000


def as_spins(sigma, n: Optional[int] = None) -> np.ndarray:
    """Validate and return a +-1 configuration as a float64 vector."""
    s = np.asarray(sigma, dtype=np.float64).ravel()
    if n is not None and s.size != n:
        raise ValueError(f"configuration has length {s.size}, expected {n}")
    if not np.all(np.abs(s) == 1.0):
        raise ValueError("spin entries must be exactly +1 or -1")
    return s


def random_spins(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=n)


def overlap(sigma, sigma2) -> float:
    """Normalized overlap R = (1/N) sum_i s_i s'_i, an exact rational k/N."""
    s1 = as_spins(sigma)
    s2 = as_spins(sigma2, n=s1.size)
    return float(s1 @ s2) / s1.size


@dataclass(frozen=True)
class MixedCouplings:
    """Inverse-temperature weights beta_p over p = 1 and even p >= 2.

    ``terms`` holds (p, beta_p) pairs with beta_p > 0, sorted by p. The
    weighted norm sum_p 2^p beta_p^2 controls the single-site increment
    error and must be finite (automatic for finitely many terms).
    """

    terms: tuple[tuple[int, float], ...]

    def __post_init__(self):
        seen = set()
        for p, b in self.terms:
            if p in seen:
                raise ValueError(f"duplicate order p={p}")
            seen.add(p)
            if p != 1 and (p < 2 or p % 2 != 0):
                raise ValueError(f"only p=1 and even p are allowed, got p={p}")
            if not np.isfinite(b) or b < 0:
                raise ValueError(f"beta_{p} must be finite and >= 0, got {b}")
        object.__setattr__(
            self, "terms", tuple(sorted((int(p), float(b)) for p, b in self.terms if b > 0.0))
        )

    @classmethod
    def from_pairs(cls, pairs) -> "MixedCouplings":
        return cls(tuple((int(p), float(b)) for p, b in pairs))

    @classmethod
    def sk(cls, beta2: float) -> "MixedCouplings":
        return cls(((2, float(beta2)),))

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(p for p, _ in self.terms)

    def beta(self, p: int) -> float:
        for q, b in self.terms:
            if q == p:
                return b
        return 0.0

    @property
    def norm_sq(self) -> float:
        return sum(b * b for _, b in self.terms)

    @property
    def weighted_norm_sq(self) -> float:
        return sum(2.0**p * b * b for p, b in self.terms)

    def scaled(self, factor: float) -> "MixedCouplings":
        return MixedCouplings(tuple((p, factor * b) for p, b in self.terms))

    def to_pairs(self) -> list[list]:
        return [[p, b] for p, b in self.terms]


def _lattice_edges(rows: int, cols: int, periodic: bool) -> np.ndarray:
    """Edge list of a rows x cols rectangular lattice, sites in row-major order."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            elif periodic and cols > 2:
                edges.append((i, r * cols))
            if r + 1 < rows:
                edges.append((i, i + cols))
            elif periodic and rows > 2:
                edges.append((i, c))
    return np.array(sorted(set(tuple(sorted(e)) for e in edges)), dtype=np.int64)


@dataclass(frozen=True)
class DisorderRealization:
    """One realization of the quenched couplings for a given model.

    ``tensors[p]`` has shape (n,)*p over ordered index tuples; EA instead
    carries one Gaussian per lattice edge. Immutable after construction and
    safe to share across parallel workers.
    """

    kind: str
    n: int
    beta: Optional[MixedCouplings]
    tensors: dict = field(default_factory=dict)
    edges: Optional[np.ndarray] = None
    edge_couplings: Optional[np.ndarray] = None
    lattice: Optional[tuple[int, int]] = None
    periodic: bool = False
    seed: int = 0


def build_disorder(
    kind: str,
    n: int,
    beta: Optional[MixedCouplings] = None,
    seed: int = 0,
    lattice: Optional[tuple[int, int]] = None,
    periodic: bool = False,
) -> DisorderRealization:
    """Draw a disorder realization; deterministic given the seed.

    kind is one of "sk" (pure p=2), "mixed" (p=1 and even p), or "ea"
    (2D lattice, ``lattice=(rows, cols)``, free boundary unless periodic).
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    kind = kind.lower()
    if kind == "ea":
        if lattice is None:
            raise ValueError("EA model requires lattice=(rows, cols)")
        rows, cols = lattice
        if rows * cols != n:
            raise ValueError(f"lattice {lattice} has {rows*cols} sites, expected n={n}")
        edges = _lattice_edges(rows, cols, periodic)
        g = coupling_normals(seed, "ea-edge", edges[:, 0], edges[:, 1])
        return DisorderRealization(
            kind="ea", n=n, beta=None, edges=edges, edge_couplings=g,
            lattice=(rows, cols), periodic=periodic, seed=seed,
        )

    if beta is None:
        raise ValueError(f"{kind} model requires couplings beta")
    if isinstance(beta, (int, float)):
        beta = MixedCouplings.sk(beta)
    if kind == "sk":
        if beta.orders not in ((), (2,)):
            raise ValueError("SK is the pure p=2 model; use kind='mixed' otherwise")
    elif kind != "mixed":
        raise ValueError(f"unknown model kind {kind!r}")

    tensors = {}
    for p in beta.orders:
        if n**p > MAX_TENSOR_ENTRIES:
            raise ValueError(f"coupling tensor n^p = {n}^{p} is too large")
        idx = np.unravel_index(np.arange(n**p), (n,) * p)
        tensors[p] = coupling_normals(seed, p, *idx).reshape((n,) * p)
    return DisorderRealization(kind=kind, n=n, beta=beta, tensors=tensors, seed=seed)


def _khatri_rao_power(S: np.ndarray, half: int) -> np.ndarray:
    """Row-wise Kronecker power: rows s -> s (x) s (x) ... (half times)."""
    out = S
    for _ in range(half - 1):
        out = (out[:, :, None] * S[:, None, :]).reshape(S.shape[0], -1)
    return out


def per_order_energies(d: DisorderRealization, S: np.ndarray) -> dict:
    """Raw per-order energies N^{-(p-1)/2} sum g s..s for each config row of S.

    The beta_p weights are NOT applied, so a table of configurations can be
    re-weighted to any coupling vector without touching the disorder.
    """
    S = np.asarray(S, dtype=np.float64)
    n = d.n
    if S.shape[1] != n:
        raise ValueError("configuration length mismatch")
    if d.kind == "ea":
        prod = S[:, d.edges[:, 0]] * S[:, d.edges[:, 1]]
        return {"ea": prod @ d.edge_couplings}
    out = {}
    for p, g in d.tensors.items():
        scale = float(n) ** (-(p - 1) / 2.0)
        if p == 1:
            out[p] = S @ g
        elif p == 2:
            out[p] = scale * ((S @ g) * S).sum(axis=1)
        else:
            half = p // 2
            M = _khatri_rao_power(S, half)
            G = g.reshape(n**half, n**half)
            out[p] = scale * ((M @ G) * M).sum(axis=1)
    return out


def hamiltonian_batch(d: DisorderRealization, S: np.ndarray) -> np.ndarray:
    """H for every configuration row of S (exact, vectorized)."""
    raw = per_order_energies(d, S)
    if d.kind == "ea":
        return raw["ea"]
    total = np.zeros(S.shape[0])
    for p, b in d.beta.terms:
        total += b * raw[p]
    return total


def hamiltonian_eval(d: DisorderRealization, sigma) -> float:
    """Exact energy of one configuration (defining sum, O(N^p) per term)."""
    s = as_spins(sigma, n=d.n)
    return float(hamiltonian_batch(d, s[None, :])[0])


@dataclass(frozen=True)
class ModelDescriptor:
    """Serializable model family: kind, size, couplings, lattice, base seed."""

    kind: str
    n: int
    beta: Optional[MixedCouplings] = None
    lattice: Optional[tuple[int, int]] = None
    periodic: bool = False
    seed: int = 0

    def build(self, seed: Optional[int] = None) -> DisorderRealization:
        return build_disorder(
            self.kind, self.n, beta=self.beta, seed=self.seed if seed is None else seed,
            lattice=self.lattice, periodic=self.periodic,
        )

    def to_json(self) -> str:
        doc = {"kind": self.kind, "n": self.n}
        doc["beta"] = self.beta.to_pairs() if self.beta is not None else None
        if self.lattice is not None:
            doc["lattice"] = list(self.lattice)
            doc["periodic"] = self.periodic
        doc["seed"] = self.seed
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelDescriptor":
        doc = json.loads(text)
        beta = MixedCouplings.from_pairs(doc["beta"]) if doc.get("beta") else None
        lattice = tuple(doc["lattice"]) if doc.get("lattice") else None
        return cls(
            kind=doc["kind"], n=int(doc["n"]), beta=beta, lattice=lattice,
            periodic=bool(doc.get("periodic", False)), seed=int(doc["seed"]),
        )

    @classmethod
    def sk(cls, n: int, beta2: float, seed: int = 0) -> "ModelDescriptor":
        return cls(kind="sk", n=n, beta=MixedCouplings.sk(beta2), seed=seed)

    @classmethod
    def mixed(cls, n: int, pairs, seed: int = 0) -> "ModelDescriptor":
        return cls(kind="mixed", n=n, beta=MixedCouplings.from_pairs(pairs), seed=seed)

    @classmethod
    def ea(cls, lattice: tuple[int, int], periodic: bool = False, seed: int = 0) -> "ModelDescriptor":
        return cls(kind="ea", n=lattice[0] * lattice[1], lattice=tuple(lattice),
                   periodic=periodic, seed=seed)
