"""Finite atomic sampling measures and their overlap functionals.

The canonical object is a pair (weights, Gram): K atom weights summing to 1
and the K x K matrix of inner products v_i . v_j with diagonal in [0, 1].
Moments depend only on that pair; any coordinate realization is equivalent
up to isometry, so coordinates are derived on demand (pivoted Cholesky) and
never canonical.

For the structured measures used in practice the Gram matrix is never
materialized: subclasses carry the geometry implicitly (low-rank coordinate
factors, orthogonal atoms, product structure, hierarchical trees) and only
expose pairwise overlaps, the diagonal, and Gaussian fields with covariance
gram^{.p} (elementwise power). A dense K x K matrix is built lazily and only
under a size guard.

Monomial functionals over s <= 4 replicas, e.g. E mu^{x3}(q12 q13), are the
common currency of every statistical test; two replica slots hitting the
same atom contribute the self inner product ||v||^2, while the sampled
matrix itself always carries 1 on the diagonal.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .reporting import Estimate, MomentEntry, MomentReport, mean_stderr, zscore
from .rng import substream

WEIGHT_TOL = 1e-12
PSD_JITTER = 1e-10
ACTIVE_WEIGHT = 1e-15
EXACT_MODE_CAP = 10_000_000
DENSE_GRAM_CAP = 30_000_000
KHATRI_RAO_CAP = 50_000_000


# ---------------------------------------------------------------------------
# monomials

@dataclass(frozen=True)
class Monomial:
    """Product prod q_{ab}^{k_ab} over replica pairs 1 <= a < b <= s."""

    edges: tuple[tuple[tuple[int, int], int], ...]

    def __post_init__(self):
        merged: dict[tuple[int, int], int] = {}
        for (a, b), k in self.edges:
            if a == b or a < 1 or b < 1:
                raise ValueError(f"bad replica pair ({a},{b})")
            if k < 1:
                raise ValueError("exponents must be >= 1")
            key = (min(a, b), max(a, b))
            merged[key] = merged.get(key, 0) + int(k)
        object.__setattr__(self, "edges", tuple(sorted(merged.items())))

    @property
    def n_replicas(self) -> int:
        return max(b for (_, b), _ in self.edges)

    @property
    def name(self) -> str:
        parts = []
        for (a, b), k in self.edges:
            parts.append(f"q{a}{b}" + (f"^{k}" if k > 1 else ""))
        return "*".join(parts)

    @classmethod
    def parse(cls, text: str) -> "Monomial":
        """Parse names like "q12", "q12^2", "q12*q13" (replica labels 1..9)."""
        edges = []
        for tok in re.split(r"[*\s]+", text.strip()):
            m = re.fullmatch(r"q(\d)(\d)(?:\^(\d+))?", tok)
            if not m:
                raise ValueError(f"cannot parse monomial token {tok!r}")
            edges.append(((int(m.group(1)), int(m.group(2))), int(m.group(3) or 1)))
        return cls(tuple(edges))


def catalog(*names: str) -> tuple[Monomial, ...]:
    return tuple(Monomial.parse(n) for n in names)


# powers of q12 up to 4, the 3-replica products used by the Ghirlanda-Guerra
# tests, and two 4-replica products; covers s in {2, 3, 4}
DEFAULT_CATALOG = catalog(
    "q12", "q12^2", "q12^3", "q12^4",
    "q12*q13", "q12*q13*q23", "q12^2*q13",
    "q12*q34", "q12^2*q34^2",
)


# ---------------------------------------------------------------------------
# measures

class AtomicMeasure:
    """Base class: atom weights plus implicit inner-product geometry."""

    def __init__(self, weights, label: str = ""):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and >= 0")
        total = w.sum()
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"weights must sum to 1 (got {total})")
        self.weights = w / total
        self.label = label

    # geometry interface -----------------------------------------------------
    @property
    def n_atoms(self) -> int:
        return self.weights.size

    def overlap_diag(self) -> np.ndarray:
        raise NotImplementedError

    def pair_overlaps(self, ii, jj) -> np.ndarray:
        """v_i . v_j for index arrays ii, jj (elementwise)."""
        raise NotImplementedError

    def coords(self) -> Optional[np.ndarray]:
        """A K x r coordinate factor with V V^T = gram, when cheap; else None."""
        return None

    def _power_field_impl(self, p: int, rng, size: int) -> np.ndarray:
        raise NotImplementedError

    def reweighted(self, new_weights, label: Optional[str] = None) -> "AtomicMeasure":
        """Same geometry, new weights."""
        raise NotImplementedError

    # generic machinery -------------------------------------------------------
    def gram(self) -> np.ndarray:
        """Dense Gram matrix (size-guarded; prefer the implicit interface)."""
        K = self.n_atoms
        if K * K > DENSE_GRAM_CAP:
            raise ValueError(f"refusing to materialize {K}x{K} Gram matrix")
        V = self.coords()
        if V is not None:
            return V @ V.T
        ii, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
        return self.pair_overlaps(ii.ravel(), jj.ravel()).reshape(K, K)

    def power_field(self, p: int, rng: np.random.Generator, size: int = 1) -> np.ndarray:
        """(K, size) centered Gaussian samples with covariance gram^{.p}.

        p = 0 is the constant field: covariance 1 between every pair of
        atoms, i.e. one shared standard normal.
        """
        if p == 0:
            return np.broadcast_to(rng.standard_normal(size), (self.n_atoms, size)).copy()
        return self._power_field_impl(p, rng, size)

    def _exact_monomial(self, mono: "Monomial") -> Optional[float]:
        """Structured closed form for one monomial, or None if unavailable."""
        return None

    def validate(self) -> None:
        """Weight and PSD invariants; raises on violation."""
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("weights do not sum to 1")
        d = self.overlap_diag()
        if np.any(d < -PSD_JITTER) or np.any(d > 1.0 + 1e-9):
            raise ValueError("Gram diagonal must lie in [0, 1]")
        self._validate_psd()

    def _validate_psd(self) -> None:
        # Gram-factor subclasses are PSD by construction; dense ones override.
        pass

    def active_atoms(self) -> np.ndarray:
        return np.flatnonzero(self.weights > ACTIVE_WEIGHT)


class GramMeasure(AtomicMeasure):
    """Measure defined by an explicit dense Gram matrix."""

    def __init__(self, weights, gram, label: str = ""):
        super().__init__(weights, label)
        G = np.asarray(gram, dtype=np.float64)
        if G.shape != (self.n_atoms, self.n_atoms):
            raise ValueError("gram shape mismatch")
        if not np.allclose(G, G.T, atol=1e-12):
            raise ValueError("gram must be symmetric")
        self._gram = G
        self._chol_cache: dict[int, np.ndarray] = {}

    def overlap_diag(self) -> np.ndarray:
        return np.diag(self._gram).copy()

    def pair_overlaps(self, ii, jj) -> np.ndarray:
        return self._gram[ii, jj]

    def gram(self) -> np.ndarray:
        return self._gram

    def coords(self) -> Optional[np.ndarray]:
        return pivoted_cholesky(self._gram, jitter=PSD_JITTER)

    def _power_field_impl(self, p, rng, size):
        if p not in self._chol_cache:
            C = self._gram if p == 1 else self._gram**p
            self._chol_cache[p] = _jittered_cholesky(C, PSD_JITTER)
        return self._chol_cache[p] @ rng.standard_normal((self.n_atoms, size))

    def reweighted(self, new_weights, label=None):
        m = GramMeasure.__new__(GramMeasure)
        AtomicMeasure.__init__(m, new_weights, label or self.label)
        m._gram = self._gram
        m._chol_cache = self._chol_cache
        return m

    def _validate_psd(self) -> None:
        V = pivoted_cholesky(self._gram, jitter=PSD_JITTER)
        err = np.abs(self._gram - V @ V.T).max()
        if err > 1e-8 * self.n_atoms:
            raise ValueError(f"gram fails PSD validation (residual {err:.3e})")


class CoordMeasure(AtomicMeasure):
    """Measure defined by a dense K x r coordinate factor (gram = V V^T)."""

    def __init__(self, weights, coords, label: str = ""):
        super().__init__(weights, label)
        V = np.asarray(coords, dtype=np.float64)
        if V.ndim != 2 or V.shape[0] != self.n_atoms:
            raise ValueError("coords must be K x r")
        self._V = V

    def overlap_diag(self) -> np.ndarray:
        return (self._V**2).sum(axis=1)

    def pair_overlaps(self, ii, jj) -> np.ndarray:
        return (self._V[ii] * self._V[jj]).sum(axis=1)

    def coords(self) -> np.ndarray:
        return self._V

    def _power_field_impl(self, p, rng, size):
        U = self._V
        for _ in range(p - 1):
            if U.shape[1] * self._V.shape[1] * self.n_atoms > KHATRI_RAO_CAP:
                # fall back to a dense covariance route
                C = self.gram() ** p
                return _jittered_cholesky(C, PSD_JITTER) @ rng.standard_normal(
                    (self.n_atoms, size))
            U = (U[:, :, None] * self._V[:, None, :]).reshape(self.n_atoms, -1)
        return U @ rng.standard_normal((U.shape[1], size))

    def reweighted(self, new_weights, label=None):
        return CoordMeasure(new_weights, self._V, label or self.label)


class OrthogonalMeasure(AtomicMeasure):
    """Mutually orthogonal atoms; only the norms ||v_i||^2 matter."""

    def __init__(self, weights, norms_sq, label: str = ""):
        super().__init__(weights, label)
        d = np.asarray(norms_sq, dtype=np.float64)
        if d.shape != (self.n_atoms,):
            raise ValueError("norms_sq must match the number of atoms")
        self._d = d

    def overlap_diag(self) -> np.ndarray:
        return self._d.copy()

    def pair_overlaps(self, ii, jj) -> np.ndarray:
        ii = np.asarray(ii)
        return np.where(ii == np.asarray(jj), self._d[ii], 0.0)

    def _power_field_impl(self, p, rng, size):
        return (self._d[:, None] ** (p / 2.0)) * rng.standard_normal((self.n_atoms, size))

    def reweighted(self, new_weights, label=None):
        return OrthogonalMeasure(new_weights, self._d, label or self.label)

    def effective_dimension_exact(self) -> int:
        lam = self.weights * self._d
        return int(np.sum(lam > 1e-8 * lam.sum()))

    def _exact_monomial(self, mono: "Monomial") -> float:
        # off-diagonal overlaps vanish, so only tuples where each connected
        # component of the replica graph collapses to one atom contribute
        out = 1.0
        for replicas, k_total in _connected_components(mono):
            out *= float((self.weights ** len(replicas) * self._d**k_total).sum())
        return out


class ProductMeasure(AtomicMeasure):
    """Atoms indexed by pairs (i, j), v_(ij) = (u_i + v_j)/sqrt(2) with the
    u's and v's orthonormal families; overlaps (1{i=i'} + 1{j=j'})/2."""

    def __init__(self, weights, shape: tuple[int, int], label: str = ""):
        super().__init__(weights, label)
        m1, m2 = shape
        if m1 * m2 != self.n_atoms:
            raise ValueError("weights length must be m1*m2")
        self.shape = (m1, m2)

    def _split(self, idx):
        return np.divmod(np.asarray(idx), self.shape[1])

    def overlap_diag(self) -> np.ndarray:
        return np.ones(self.n_atoms)

    def pair_overlaps(self, ii, jj) -> np.ndarray:
        i1, j1 = self._split(ii)
        i2, j2 = self._split(jj)
        return 0.5 * ((i1 == i2).astype(float) + (j1 == j2).astype(float))

    def _power_field_impl(self, p, rng, size):
        # gram^{.p} has entries 2^{-p} (same i xor same j), 1 (same atom):
        # field = 2^{-p/2} eta_i + 2^{-p/2} eta'_j + sqrt(1 - 2^{1-p}) zeta_ij
        m1, m2 = self.shape
        a = 2.0 ** (-p / 2.0)
        c = np.sqrt(max(0.0, 1.0 - 2.0 ** (1 - p)))
        e1 = rng.standard_normal((m1, size))
        e2 = rng.standard_normal((m2, size))
        out = a * (np.repeat(e1, m2, axis=0) + np.tile(e2, (m1, 1)))
        if c > 0.0:
            out += c * rng.standard_normal((self.n_atoms, size))
        return out

    def reweighted(self, new_weights, label=None):
        return ProductMeasure(new_weights, self.shape, label or self.label)

    def _exact_monomial(self, mono: "Monomial") -> Optional[float]:
        # single-edge monomials only: the overlap takes values {0, 1/2, 1}
        # with P(1/2) from same-row-xor-same-column mass
        if len(mono.edges) != 1:
            return None
        k = mono.edges[0][1]
        w = self.weights.reshape(self.shape)
        same_atom = float((w**2).sum())
        same_row = float((w.sum(axis=1) ** 2).sum())
        same_col = float((w.sum(axis=0) ** 2).sum())
        p_half = same_row + same_col - 2.0 * same_atom
        return p_half * 0.5**k + same_atom

    def effective_dimension_exact(self) -> int:
        # gram = U U^T with U the K x (m1+m2) incidence factor / sqrt(2)
        m1, m2 = self.shape
        w = self.weights.reshape(m1, m2)
        A = np.zeros((m1 + m2, m1 + m2))
        A[:m1, :m1] = np.diag(w.sum(axis=1))
        A[m1:, m1:] = np.diag(w.sum(axis=0))
        A[:m1, m1:] = w
        A[m1:, :m1] = w.T
        lam = np.linalg.eigvalsh(0.5 * A)
        tr = float(self.weights.sum())  # diagonal is 1
        return int(np.sum(lam > 1e-8 * tr))


class TreeMeasure(AtomicMeasure):
    """Hierarchical overlaps: leaves of a depth-k M-ary tree, overlap between
    two leaves q_a where a is the depth of their last common ancestor, and
    ||v||^2 = q_k; the Gram matrix is ultrametric by construction."""

    def __init__(self, weights, q_levels, arity: int, label: str = ""):
        super().__init__(weights, label)
        q = np.asarray(q_levels, dtype=np.float64)
        k = q.size - 1
        if arity**k != self.n_atoms:
            raise ValueError("weights length must be arity^k")
        if np.any(np.diff(q) < 0) or q[0] < 0 or q[-1] > 1:
            raise ValueError("q levels must be monotone in [0, 1]")
        self.q = q
        self.k = k
        self.arity = arity

    def _digits(self, idx) -> np.ndarray:
        """Base-M digits of leaf indices, most significant (level 1) first."""
        idx = np.asarray(idx)
        out = np.empty((self.k,) + idx.shape, dtype=np.int64)
        rest = idx
        for l in range(self.k - 1, -1, -1):
            rest, out[l] = np.divmod(rest, self.arity)
        return out

    def ancestor_depth(self, ii, jj) -> np.ndarray:
        di, dj = self._digits(ii), self._digits(jj)
        alive = np.ones(np.broadcast(np.asarray(ii), np.asarray(jj)).shape, dtype=bool)
        depth = np.zeros_like(alive, dtype=np.int64)
        for l in range(self.k):
            alive = alive & (di[l] == dj[l])
            depth += alive
        return depth

    def overlap_diag(self) -> np.ndarray:
        return np.full(self.n_atoms, self.q[-1])

    def pair_overlaps(self, ii, jj) -> np.ndarray:
        return self.q[self.ancestor_depth(ii, jj)]

    def _power_field_impl(self, p, rng, size):
        qp = self.q**p
        out = np.sqrt(qp[0]) * np.broadcast_to(
            rng.standard_normal(size), (self.n_atoms, size)).copy()
        leaf = np.arange(self.n_atoms)
        for l in range(1, self.k + 1):
            inc = qp[l] - qp[l - 1]
            if inc <= 0.0:
                continue
            nodes = rng.standard_normal((self.arity**l, size))
            node_of_leaf = leaf // (self.arity ** (self.k - l))
            out += np.sqrt(inc) * nodes[node_of_leaf]
        return out

    def reweighted(self, new_weights, label=None):
        return TreeMeasure(new_weights, self.q, self.arity, label or self.label)

    def ancestor_depth_distribution(self) -> np.ndarray:
        """P(depth = l) for two iid atoms, l = 0..k, from subtree masses."""
        p_geq = np.empty(self.k + 1)
        for l in range(self.k + 1):
            t = self.weights.reshape(self.arity**l, -1).sum(axis=1)
            p_geq[l] = float((t**2).sum())
        dist = np.empty(self.k + 1)
        dist[:-1] = p_geq[:-1] - p_geq[1:]
        dist[-1] = p_geq[-1]
        return dist

    def _exact_monomial(self, mono: "Monomial") -> Optional[float]:
        if len(mono.edges) != 1:
            return None
        k = mono.edges[0][1]
        dist = self.ancestor_depth_distribution()
        return float((dist * self.q**k).sum())


# ---------------------------------------------------------------------------
# construction helpers

def pivoted_cholesky(G: np.ndarray, jitter: float = PSD_JITTER,
                     tol: float = 1e-12) -> np.ndarray:
    """Pivoted Cholesky factor V (K x r) with V V^T ~= G for PSD G."""
    G = np.asarray(G, dtype=np.float64)
    K = G.shape[0]
    d = np.diag(G).copy() + jitter
    V = np.zeros((K, K))
    for r in range(K):
        j = int(np.argmax(d))
        if d[j] <= tol * max(1.0, float(np.diag(G).max())):
            return V[:, :r]
        col = G[:, j] - V @ V[j, :]
        piv = np.sqrt(d[j])
        V[:, r] = col / piv
        V[j, r] = piv
        d -= V[:, r] ** 2
        d[j] = 0.0
    return V


def _jittered_cholesky(C: np.ndarray, jitter: float) -> np.ndarray:
    K = C.shape[0]
    scale = max(1.0, float(np.diag(C).max()))
    for factor in (1.0, 10.0, 100.0):
        try:
            return np.linalg.cholesky(C + factor * jitter * scale * np.eye(K))
        except np.linalg.LinAlgError:
            continue
    raise ValueError("covariance is not PSD within jitter")


def measure_from_gram(weights, gram, label: str = "") -> GramMeasure:
    m = GramMeasure(weights, gram, label)
    m.validate()
    return m


def rost_from_gibbs(table, kernel: str = "model", disorder=None) -> AtomicMeasure:
    """Sampling measure of the Gibbs table under an overlap kernel.

    kernel "r" uses the normalized spin overlap R, "r2" its square (the SK
    form), "ea-edge" the normalized edge form of the given EA disorder.
    Duplicate atoms (identical geometry rows) are merged with their weights
    summed, which halves the table for even-p models.
    """
    from .gibbs import spin_configurations

    S = spin_configurations(table.n)
    w = table.probabilities()
    n = table.n
    if kernel in ("r", "R"):
        V = S / np.sqrt(n)
        label = f"gibbs-R(n={n})"
    elif kernel in ("r2", "R2", "r^2"):
        V = (S[:, :, None] * S[:, None, :]).reshape(S.shape[0], -1) / n
        label = f"gibbs-R2(n={n})"
    elif kernel == "ea-edge":
        if disorder is None or disorder.edges is None:
            raise ValueError("ea-edge kernel needs the EA disorder realization")
        E = disorder.edges
        V = (S[:, E[:, 0]] * S[:, E[:, 1]]) / np.sqrt(E.shape[0])
        label = f"gibbs-EA(n={n})"
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    V, w = _merge_duplicate_rows(V, w)
    m = CoordMeasure(w, V, label)
    d = m.overlap_diag()
    if np.abs(d - 1.0).max() > 1e-9:
        raise ValueError("kernel bug: Gibbs ROSt diagonal must be 1")
    return m


def _merge_duplicate_rows(V: np.ndarray, w: np.ndarray, tol: float = WEIGHT_TOL):
    key = np.round(V / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    if first.size == V.shape[0]:
        return V, w
    wm = np.zeros(first.size)
    np.add.at(wm, inverse, w)
    return V[first], wm


def single_atom_measure(norm_sq: float = 1.0) -> OrthogonalMeasure:
    return OrthogonalMeasure([1.0], [norm_sq], label="single-atom")


def orthonormal_measure(weights) -> OrthogonalMeasure:
    w = np.asarray(weights, dtype=float)
    return OrthogonalMeasure(w, np.ones(w.size), label="orthonormal")


# ---------------------------------------------------------------------------
# sampling and moments

def _connected_components(mono: Monomial) -> list[tuple[frozenset, int]]:
    """Connected components of the replica graph with total edge exponents."""
    parent = {}

    def find(a):
        while parent.get(a, a) != a:
            parent[a] = parent.get(parent[a], parent[a])
            a = parent[a]
        return a

    for (a, b), _ in mono.edges:
        parent.setdefault(a, a)
        parent.setdefault(b, b)
        parent[find(a)] = find(b)
    comps: dict = {}
    for (a, b), k in mono.edges:
        root = find(a)
        members, total = comps.get(root, (set(), 0))
        members |= {a, b}
        comps[root] = (members, total + k)
    return [(frozenset(m), k) for m, k in comps.values()]


def sample_overlap_matrix(m: AtomicMeasure, s: int, rng: np.random.Generator) -> np.ndarray:
    """Gram minor of s atoms drawn iid from the weights, diagonal set to 1."""
    if s < 2:
        raise ValueError("need at least two replicas")
    idx = rng.choice(m.n_atoms, size=s, p=m.weights)
    Q = np.ones((s, s))
    iu = np.triu_indices(s, k=1)
    vals = m.pair_overlaps(idx[iu[0]], idx[iu[1]])
    Q[iu] = vals
    Q[(iu[1], iu[0])] = vals
    return Q


def exact_moments(m: AtomicMeasure, monomials, gram: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact moments: structured closed forms where the geometry admits them,
    dense weighted K^s sums otherwise (guarded by K^s <= 1e7)."""
    out = np.empty(len(monomials))
    G = gram
    for t, mono in enumerate(monomials):
        closed = m._exact_monomial(mono)
        if closed is not None:
            out[t] = closed
            continue
        s = mono.n_replicas
        if m.n_atoms**s > EXACT_MODE_CAP:
            raise ValueError(
                f"exact mode needs K^s <= {EXACT_MODE_CAP}, got {m.n_atoms}^{s}")
        if G is None:
            G = m.gram()
        letters = "abcd"[:s]
        operands, subs = [], []
        for r in range(s):
            operands.append(m.weights)
            subs.append(letters[r])
        for (a, b), k in mono.edges:
            operands.append(G**k if k > 1 else G)
            subs.append(letters[a - 1] + letters[b - 1])
        out[t] = np.einsum(",".join(subs) + "->", *operands, optimize=True)
    return out


def mc_moments(m: AtomicMeasure, monomials, n_tuples: int,
               rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo estimate of each monomial from shared replica tuples."""
    s_max = max(mono.n_replicas for mono in monomials)
    idx = rng.choice(m.n_atoms, size=(n_tuples, s_max), p=m.weights)
    pair_vals: dict[tuple[int, int], np.ndarray] = {}
    for mono in monomials:
        for (a, b), _ in mono.edges:
            if (a, b) not in pair_vals:
                pair_vals[(a, b)] = m.pair_overlaps(idx[:, a - 1], idx[:, b - 1])
    out = np.empty(len(monomials))
    for t, mono in enumerate(monomials):
        acc = np.ones(n_tuples)
        for (a, b), k in mono.edges:
            acc = acc * (pair_vals[(a, b)] ** k)
        out[t] = acc.mean()
    return out


def inner_moments(m: AtomicMeasure, monomials, mode: str, budget: int,
                  rng: np.random.Generator) -> np.ndarray:
    """One measure's moment vector, exact when affordable else Monte Carlo.

    In "auto" mode each monomial independently takes a structured closed
    form or a dense exact sum when one is affordable; the rest share a
    single Monte Carlo tuple pool.
    """
    monomials = tuple(monomials)
    if mode == "exact":
        return exact_moments(m, monomials)
    if mode == "mc":
        return mc_moments(m, monomials, budget, rng)
    if mode != "auto":
        raise ValueError(f"unknown mode {mode!r}")
    out = np.empty(len(monomials))
    mc_idx = []
    for t, mono in enumerate(monomials):
        closed = m._exact_monomial(mono)
        if closed is not None:
            out[t] = closed
        elif m.n_atoms**mono.n_replicas <= EXACT_MODE_CAP:
            out[t] = exact_moments(m, [mono])[0]
        else:
            mc_idx.append(t)
    if mc_idx:
        est = mc_moments(m, [monomials[t] for t in mc_idx], budget, rng)
        for j, t in enumerate(mc_idx):
            out[t] = est[j]
    return out


# ---------------------------------------------------------------------------
# ensembles

@dataclass(frozen=True)
class RostEnsemble:
    """A seeded generator of independent AtomicMeasure realizations.

    ``draw(i)`` is a pure function of (seed, i); draws are exchangeable by
    construction, so ensemble averages estimate the law's expectations.
    """

    label: str
    size: int
    seed: int
    build: Callable[[np.random.Generator], AtomicMeasure] = field(repr=False)

    def draw(self, index: int) -> AtomicMeasure:
        if not 0 <= index < self.size:
            raise IndexError(index)
        return self.build(substream(self.seed, "draw", index))

    def draws(self, draw_range=None):
        lo, hi = (0, self.size) if draw_range is None else draw_range
        for i in range(lo, hi):
            yield self.draw(i)


def fixed_ensemble(m: AtomicMeasure, size: int, seed: int = 0) -> RostEnsemble:
    return RostEnsemble(label=f"fixed({m.label})", size=size, seed=seed,
                        build=lambda rng: m)


def gibbs_ensemble(model, beta: float, kernel: str, size: int, seed: int) -> RostEnsemble:
    """Fresh-disorder Gibbs ROSt ensemble for a spin model descriptor."""
    from .gibbs import enumerate_gibbs

    def build(rng: np.random.Generator) -> AtomicMeasure:
        d = model.build(seed=int(rng.integers(1 << 62)))
        table = enumerate_gibbs(d, beta)
        return rost_from_gibbs(table, kernel, disorder=d)

    return RostEnsemble(label=f"gibbs({model.kind},n={model.n},beta={beta},{kernel})",
                        size=size, seed=seed, build=build)


def moment_vector(e: RostEnsemble, monomials=DEFAULT_CATALOG, mode: str = "auto",
                  budget: int = 100_000, seed: int = 0,
                  draw_range=None) -> MomentReport:
    """Ensemble moment estimates: inner expectation per draw (exact weighted
    sum or ``budget`` sampled replica tuples), stderr across draws."""
    monomials = tuple(monomials)
    lo, hi = (0, e.size) if draw_range is None else draw_range
    per_draw = np.empty((hi - lo, len(monomials)))
    for r in range(lo, hi):
        m = e.draw(r)
        rng = substream(seed, "moments", r)
        per_draw[r - lo] = inner_moments(m, monomials, mode, budget, rng)
    entries = []
    for t, mono in enumerate(monomials):
        mean, se = mean_stderr(per_draw[:, t])
        entries.append(MomentEntry(name=mono.name, estimate=mean, stderr=se,
                                   z=zscore(mean, se), n=hi - lo))
    return MomentReport(entries=entries, meta={
        "ensemble": e.label, "mode": mode, "budget": budget, "seed": seed,
        "per_draw": per_draw, "monomials": [mono.name for mono in monomials],
    })


def rost_distance(r1: MomentReport, r2: MomentReport) -> tuple[float, float]:
    """Max |estimate difference| over the shared catalog, and the max z-score
    of the differences under pooled standard errors."""
    if r1.names() != r2.names():
        raise ValueError("moment reports use different catalogs")
    diff = r1.estimates() - r2.estimates()
    pooled = np.sqrt(r1.stderrs() ** 2 + r2.stderrs() ** 2)
    zcs = [zscore(d, s) for d, s in zip(diff, pooled)]
    return float(np.abs(diff).max()), float(max(abs(z) for z in zcs))


# ---------------------------------------------------------------------------
# support diagnostics

def ultrametricity_score(e: RostEnsemble, n_triples: int, seed: int = 0,
                         slack: float = 1e-9) -> tuple[float, float]:
    """Sampled rate of triples violating q12 >= min(q13, q23), and the worst
    violation margin, aggregated over the ensemble."""
    if n_triples < 1:
        raise ValueError("need n_triples >= 1")
    violations = 0
    total = 0
    worst = 0.0
    for r in range(e.size):
        m = e.draw(r)
        rng = substream(seed, "triples", r)
        idx = rng.choice(m.n_atoms, size=(n_triples, 3), p=m.weights)
        q12 = m.pair_overlaps(idx[:, 0], idx[:, 1])
        q13 = m.pair_overlaps(idx[:, 0], idx[:, 2])
        q23 = m.pair_overlaps(idx[:, 1], idx[:, 2])
        gap = np.minimum(q13, q23) - q12
        violations += int(np.sum(gap > slack))
        total += n_triples
        if gap.size:
            worst = max(worst, float(gap.max()))
    return violations / total, worst


def support_radii(m: AtomicMeasure) -> tuple[float, float]:
    """(r_min, r_max): inner and outer radius of the positively-weighted support."""
    active = m.active_atoms()
    if active.size == 0:
        raise ValueError("measure has no atoms above the weight floor")
    norms = np.sqrt(np.maximum(m.overlap_diag()[active], 0.0))
    return float(norms.min()), float(norms.max())


def effective_dimension(m: AtomicMeasure) -> int:
    """Numerical rank of W^{1/2} gram W^{1/2} (eigenvalues above 1e-8 trace)."""
    if isinstance(m, (OrthogonalMeasure, ProductMeasure)):
        return m.effective_dimension_exact()
    V = m.coords()
    if V is not None:
        X = np.sqrt(m.weights)[:, None] * V
        lam = np.linalg.svd(X, compute_uv=False) ** 2
    else:
        G = m.gram()
        sw = np.sqrt(m.weights)
        lam = np.linalg.eigvalsh(sw[:, None] * G * sw[None, :])
    tr = float((m.weights * m.overlap_diag()).sum())
    return int(np.sum(lam > 1e-8 * tr))


# ---------------------------------------------------------------------------
# serialization

def measure_to_json(m: AtomicMeasure) -> str:
    """AtomicMeasure file format: weights plus row-major lower-triangle Gram."""
    G = m.gram()
    tri = [float(G[i, j]) for i in range(m.n_atoms) for j in range(i + 1)]
    doc = {"label": m.label, "weights": [float(x) for x in m.weights], "gram": tri}
    return json.dumps(doc, separators=(",", ":"))


def measure_from_json(text: str) -> GramMeasure:
    doc = json.loads(text)
    w = np.asarray(doc["weights"], dtype=float)
    K = w.size
    G = np.zeros((K, K))
    it = iter(doc["gram"])
    for i in range(K):
        for j in range(i + 1):
            G[i, j] = G[j, i] = next(it)
    return measure_from_gram(w, G, label=doc.get("label", ""))
