"""Truncated Poisson-Dirichlet samplers, Ruelle probability cascades, and the
two structured counterexample measures.

PD(x) weights are the top-M atoms of the Poisson process with intensity
x t^{-x-1} dt on (0, inf), obtained as xi_i = Gamma_i^{-1/x} for Gamma_i the
cumulative sums of unit exponentials, normalized over the M retained atoms.
The reference process has infinitely many atoms, so truncation is the
central approximation here: every reported PD or cascade moment should be
checked against an M-doubled run (see ``truncation_shift``).

A k-level cascade attaches an independent PD(x_l) weight vector to every
node at level l; leaf weights are products along the path and the overlap
between two leaves is q_a with a the depth of their last common ancestor.

The two-sphere measure puts PD(x1) weights on orthogonal vectors of norm
sqrt(q1) and PD(x2) weights on an orthogonal family of norm sqrt(q2), with
(1-x1) q1 = (1-x2) q2 and q1 + q2 = 1. Block masses are proportional to the
unnormalized truncated Poisson sums ("ppp", the default): under the p=1
linear cavity map each block's point process is reweighted into a constant
times a fresh copy, the constants agree exactly because of the constraint
above, and the joint normalization then cancels them, so the law is
preserved. Fixing the block masses at 1/2 each ("half") destroys this: the
map makes the mass ratio fluctuate, which is detectable as a stability
deficit of order 1e-2, so "half" is kept only as a demonstration option.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .measures import (
    OrthogonalMeasure,
    ProductMeasure,
    RostEnsemble,
    TreeMeasure,
)
from .reporting import Estimate, MomentEntry, MomentReport, mean_stderr, zscore
from .rng import substream

MAX_RPC_ATOMS = 100_000


@dataclass(frozen=True)
class PdWeights:
    """Normalized, decreasing top-M Poisson-Dirichlet weights.

    ``raw_total`` is the unnormalized sum of the retained Poisson atoms;
    ratios of raw totals across independent blocks are what joint
    renormalization preserves.
    """

    weights: np.ndarray
    x: float
    raw_total: float


def sample_poisson_dirichlet(x: float, M: int, rng: np.random.Generator) -> PdWeights:
    """Top-M atoms of PPP(x t^{-x-1} dt), normalized. Requires 0 < x < 1."""
    if not 0.0 < x < 1.0:
        raise ValueError(f"PD exponent must be in (0,1), got {x}")
    if M < 2:
        raise ValueError("need M >= 2 atoms")
    gam = rng.exponential(size=M).cumsum()
    xi = gam ** (-1.0 / x)
    total = xi.sum()
    return PdWeights(weights=xi / total, x=x, raw_total=float(total))


def pd_moment(weights: np.ndarray, m: int) -> float:
    """sum_i w_i^m, the weight-moment functionals used in invariance tests."""
    return float((weights**m).sum())


def pd_invariance_check(x: float, lam: float, M: int, reps: int,
                        seed: int = 0, moments=(2, 3, 4, 5, 6)) -> MomentReport:
    """Compare normalized (p_i e^{lam g_i}) against fresh PD(x) weights.

    The comparison is on the first weight-moment functionals sum w^m; for
    the untruncated process the reweighted law is exactly PD(x) again, so
    all z-scores should sit at noise level once M is large enough.
    """
    per_rep = np.empty((reps, len(moments)))
    for r in range(reps):
        rng = substream(seed, "pd-inv", r)
        base = sample_poisson_dirichlet(x, M, rng)
        g = rng.standard_normal(M)
        tilted = base.weights * np.exp(lam * g)
        tilted /= tilted.sum()
        fresh = sample_poisson_dirichlet(x, M, rng)
        for t, mth in enumerate(moments):
            per_rep[r, t] = pd_moment(tilted, mth) - pd_moment(fresh.weights, mth)
    entries = []
    for t, mth in enumerate(moments):
        mean, se = mean_stderr(per_rep[:, t])
        entries.append(MomentEntry(name=f"sum_w^{mth}", estimate=mean, stderr=se,
                                   z=zscore(mean, se), n=reps))
    return MomentReport(entries=entries, meta={
        "x": x, "lambda": lam, "M": M, "reps": reps, "seed": seed,
        "per_draw": per_rep,
    })


@dataclass(frozen=True)
class RpcSpec:
    """Order parameter of a k-level cascade: exponents 0 < x_1 < ... < x_k < 1,
    overlaps 0 <= q_0 <= ... <= q_k <= 1, and the per-level truncation M."""

    x: tuple[float, ...]
    q: tuple[float, ...]
    M: int = 1000

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        q = tuple(float(v) for v in self.q)
        if len(q) != len(x) + 1:
            raise ValueError("need q_0..q_k for k = len(x) levels")
        if any(not 0.0 < v < 1.0 for v in x) or any(np.diff(x) <= 0):
            raise ValueError("exponents must be strictly increasing in (0,1)")
        if any(v < 0 or v > 1 for v in q) or any(np.diff(q) < 0):
            raise ValueError("overlaps must be monotone in [0,1]")
        if self.M < 2:
            raise ValueError("need M >= 2")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "q", q)

    @property
    def k(self) -> int:
        return len(self.x)

    def overlap_law(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact untruncated overlap distribution: P(q = q_l) = x_{l+1} - x_l
        with the conventions x_0 = 0 and x_{k+1} = 1."""
        xs = np.concatenate(([0.0], self.x, [1.0]))
        return np.asarray(self.q), np.diff(xs)

    def overlap_moment(self, p: int) -> float:
        """Exact untruncated E mu^{x2} (v.v')^p."""
        vals, probs = self.overlap_law()
        return float((probs * vals**p).sum())

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "x": list(self.x), "q": list(self.q),
                           "M": self.M}, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RpcSpec":
        doc = json.loads(text)
        return cls(x=tuple(doc["x"]), q=tuple(doc["q"]), M=int(doc["M"]))


def build_rpc(spec: RpcSpec, rng: np.random.Generator) -> TreeMeasure:
    """One truncated cascade realization as a hierarchical measure."""
    if spec.M**spec.k > MAX_RPC_ATOMS:
        raise ValueError(f"M^k = {spec.M}^{spec.k} exceeds {MAX_RPC_ATOMS} atoms")
    M, k = spec.M, spec.k
    w = np.ones(1)
    for level in range(1, k + 1):
        n_nodes = M ** (level - 1)
        gam = rng.exponential(size=(n_nodes, M)).cumsum(axis=1)
        xi = gam ** (-1.0 / spec.x[level - 1])
        blocks = xi / xi.sum(axis=1, keepdims=True)
        w = (w[:, None] * blocks).ravel()
    w /= w.sum()
    return TreeMeasure(w, q_levels=spec.q, arity=M, label=f"rpc(k={k},M={M})")


def rpc_ensemble(spec: RpcSpec, size: int, seed: int) -> RostEnsemble:
    return RostEnsemble(label=f"rpc({spec.x},{spec.q},M={spec.M})", size=size,
                        seed=seed, build=lambda rng: build_rpc(spec, rng))


def two_sphere_overlaps(x1: float, x2: float) -> tuple[float, float]:
    """Solve (1-x1) q1 = (1-x2) q2, q1 + q2 = 1 for the two sphere radii^2."""
    if not (0.0 < x1 < 1.0 and 0.0 < x2 < 1.0) or x1 == x2:
        raise ValueError("need distinct exponents in (0,1)")
    denom = (1.0 - x1) + (1.0 - x2)
    return (1.0 - x2) / denom, (1.0 - x1) / denom


def build_two_sphere(x1: float, x2: float, M: int, rng: np.random.Generator,
                     block_masses: str = "ppp") -> OrthogonalMeasure:
    """Two orthogonal PD-weighted families on spheres of radius sqrt(q1), sqrt(q2).

    ``block_masses="ppp"`` (default) weights each block by its unnormalized
    truncated Poisson sum, the construction that is exactly stochastically
    stable under the p=1 linear cavity map; ``"half"`` fixes both block
    masses at 1/2, which is not stable (kept for demonstrations).
    """
    q1, q2 = two_sphere_overlaps(x1, x2)
    b1 = sample_poisson_dirichlet(x1, M, rng)
    b2 = sample_poisson_dirichlet(x2, M, rng)
    if block_masses == "ppp":
        m1 = b1.raw_total / (b1.raw_total + b2.raw_total)
    elif block_masses == "half":
        m1 = 0.5
    else:
        raise ValueError(f"unknown block_masses mode {block_masses!r}")
    w = np.concatenate([m1 * b1.weights, (1.0 - m1) * b2.weights])
    d = np.concatenate([np.full(M, q1), np.full(M, q2)])
    return OrthogonalMeasure(w, d, label=f"two-sphere(x1={x1},x2={x2},{block_masses})")


def build_uncoupled_rem(x1: float, x2: float, M: int,
                        rng: np.random.Generator) -> ProductMeasure:
    """Product of two independent PD families on atoms (u_i + v_j)/sqrt(2)."""
    if M * M > MAX_RPC_ATOMS:
        raise ValueError(f"M^2 = {M*M} exceeds {MAX_RPC_ATOMS} atoms")
    p1 = sample_poisson_dirichlet(x1, M, rng).weights
    p2 = sample_poisson_dirichlet(x2, M, rng).weights
    w = np.outer(p1, p2).ravel()
    w /= w.sum()
    return ProductMeasure(w, (M, M), label=f"uncoupled-rem(x1={x1},x2={x2})")


def two_sphere_ensemble(x1: float, x2: float, M: int, size: int, seed: int,
                        block_masses: str = "ppp") -> RostEnsemble:
    return RostEnsemble(
        label=f"two-sphere(x1={x1},x2={x2},M={M},{block_masses})", size=size, seed=seed,
        build=lambda rng: build_two_sphere(x1, x2, M, rng, block_masses))


def rem_ensemble(x1: float, x2: float, M: int, size: int, seed: int) -> RostEnsemble:
    return RostEnsemble(label=f"uncoupled-rem(x1={x1},x2={x2},M={M})", size=size,
                        seed=seed, build=lambda rng: build_uncoupled_rem(x1, x2, M, rng))


def truncation_shift(build_fn, statistic, M: int, reps: int, seed: int = 0) -> dict:
    """Bias instrumentation: statistic at truncation M versus 2M.

    ``build_fn(M, rng)`` builds the object, ``statistic`` maps it to a float.
    Returns both estimates and the shift with its pooled stderr; a healthy
    truncation has |shift| below the pooled stderr.
    """
    vals = {m: np.empty(reps) for m in (M, 2 * M)}
    for m in (M, 2 * M):
        for r in range(reps):
            rng = substream(seed, "trunc", m, r)
            vals[m][r] = statistic(build_fn(m, rng))
    a = Estimate.from_values(vals[M])
    b = Estimate.from_values(vals[2 * M])
    pooled = float(np.hypot(a.stderr, b.stderr))
    return {"at_M": a, "at_2M": b, "shift": b.value - a.value, "pooled_stderr": pooled,
            "within_stderr": abs(b.value - a.value) <= pooled}
