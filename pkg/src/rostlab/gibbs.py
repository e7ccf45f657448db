"""Exact Gibbs measures by full enumeration at small N.

A Gibbs table holds log-weights beta*H(sigma) over all 2^N configurations in
Gray-code order, together with a max-shifted stable log partition function.
Enumeration is capped at N <= 24 (default working range N in [8, 16]);
beyond that the objects of interest are not exactly computable here.

Disorder expectations are always seeded finite ensembles with a reported
standard error; every free energy below is a quenched average.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .reporting import Estimate
from .rng import child_seed, substream
from .spin_models import (
    DisorderRealization,
    MixedCouplings,
    ModelDescriptor,
    build_disorder,
    hamiltonian_batch,
    per_order_energies,
)

ENUM_CAP = 24
TWO_REPLICA_EXACT_CAP = 13
TWO_REPLICA_SAMPLE_PAIRS = 100_000
_CHUNK = 1 << 14


def spin_block(n: int, start: int, stop: int) -> np.ndarray:
    """Rows [start, stop) of the 2^n x n configuration matrix, Gray order."""
    t = np.arange(start, stop, dtype=np.uint64)
    codes = t ^ (t >> np.uint64(1))
    bits = (codes[:, None] >> np.arange(n, dtype=np.uint64)) & np.uint64(1)
    return 1.0 - 2.0 * bits.astype(np.float64)


@lru_cache(maxsize=8)
def spin_configurations(n: int) -> np.ndarray:
    """All 2^n configurations in Gray-code order (cached for small n)."""
    if n > 16:
        raise ValueError("configuration matrix is cached only for n <= 16")
    S = spin_block(n, 0, 1 << n)
    S.setflags(write=False)
    return S


def gray_flip_positions(n: int) -> np.ndarray:
    """Bit flipped between Gray codes t and t+1, for t = 0 .. 2^n - 2."""
    t = np.arange(1, 1 << n, dtype=np.uint64)
    # position = count of trailing zeros of t+1 ... i.e. of t here (t starts at 1)
    pos = np.zeros(t.size, dtype=np.int64)
    tt = t.copy()
    while np.any(tt & np.uint64(1) == 0):
        mask = (tt & np.uint64(1)) == 0
        pos[mask] += 1
        tt[mask] >>= np.uint64(1)
    return pos


@dataclass(frozen=True)
class GibbsTable:
    """Exact Gibbs measure over all 2^n configurations (Gray-code order)."""

    n: int
    beta_scale: float
    log_weights: np.ndarray
    log_partition: float

    @property
    def n_configs(self) -> int:
        return self.log_weights.size

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_weights - self.log_partition)

    def free_energy_density(self) -> float:
        return self.log_partition / self.n


def _table_from_log_weights(n: int, beta: float, lw: np.ndarray) -> GibbsTable:
    if not np.all(np.isfinite(lw)):
        raise ValueError("non-finite energies in enumeration")
    return GibbsTable(n=n, beta_scale=beta, log_weights=lw,
                      log_partition=float(logsumexp(lw)))


def enumerate_gibbs(d: DisorderRealization, beta: float) -> GibbsTable:
    """Exact table of beta*H over all configurations of the given disorder."""
    if d.n > ENUM_CAP:
        raise ValueError(f"enumeration capped at N <= {ENUM_CAP}, got {d.n}")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    K = 1 << d.n
    lw = np.empty(K)
    for start in range(0, K, _CHUNK):
        stop = min(start + _CHUNK, K)
        lw[start:stop] = beta * hamiltonian_batch(d, spin_block(d.n, start, stop))
    return _table_from_log_weights(d.n, beta, lw)


def enumerate_raw_energies(d: DisorderRealization) -> dict:
    """Per-order raw energies for all configurations (no beta weights)."""
    if d.n > ENUM_CAP:
        raise ValueError(f"enumeration capped at N <= {ENUM_CAP}, got {d.n}")
    K = 1 << d.n
    out = None
    for start in range(0, K, _CHUNK):
        stop = min(start + _CHUNK, K)
        raw = per_order_energies(d, spin_block(d.n, start, stop))
        if out is None:
            out = {p: np.empty(K) for p in raw}
        for p, e in raw.items():
            out[p][start:stop] = e
    return out


def table_from_raw(n: int, raw: dict, beta: MixedCouplings, beta_scale: float = 1.0) -> GibbsTable:
    """Gibbs table for arbitrary couplings, reusing enumerated raw energies."""
    lw = np.zeros(1 << n)
    for p, b in beta.terms:
        lw += beta_scale * b * raw[p]
    return _table_from_log_weights(n, beta_scale, lw)


def gray_code_energies(d: DisorderRealization) -> np.ndarray:
    """Energies in Gray-code order by incremental single-flip updates.

    Supported for p <= 2 terms and the EA model, where one flip costs O(N).
    Agrees with the vectorized batch evaluation to rounding error; kept as
    an independent enumeration route.
    """
    n = d.n
    if n > 20:
        raise ValueError("incremental enumeration capped at N <= 20")
    sigma = np.ones(n)
    flips = gray_flip_positions(n)
    out = np.empty(1 << n)

    if d.kind == "ea":
        nbr = [[] for _ in range(n)]
        for e, (i, j) in enumerate(d.edges):
            nbr[i].append((j, e))
            nbr[j].append((i, e))
        g = d.edge_couplings
        h = float((sigma[d.edges[:, 0]] * sigma[d.edges[:, 1]]) @ g)
        out[0] = h
        for t, k in enumerate(flips, start=1):
            local = sum(g[e] * sigma[j] for j, e in nbr[k])
            h += -2.0 * sigma[k] * local
            sigma[k] = -sigma[k]
            out[t] = h
        return out

    if any(p > 2 for p in d.beta.orders):
        raise ValueError("incremental updates implemented for p <= 2 terms only")
    b1 = d.beta.beta(1)
    b2 = d.beta.beta(2)
    g1 = d.tensors.get(1, np.zeros(n))
    g2 = d.tensors.get(2, np.zeros((n, n)))
    scale2 = b2 / np.sqrt(n)
    A = g2 + g2.T
    field = A @ sigma  # field[k] = sum_j (g_kj + g_jk) sigma_j
    diag2 = np.diag(g2)
    h = b1 * float(g1 @ sigma) + scale2 * float(sigma @ g2 @ sigma)
    out[0] = h
    for t, k in enumerate(flips, start=1):
        h += -2.0 * sigma[k] * b1 * g1[k]
        h += scale2 * (-2.0 * sigma[k] * field[k] + 4.0 * diag2[k])
        field -= 2.0 * sigma[k] * A[:, k]
        sigma[k] = -sigma[k]
        out[t] = h
    return out


@dataclass(frozen=True)
class FreeEnergyEstimate:
    """Quenched estimate of f_N = (1/N) E log Z_N over a disorder ensemble."""

    mean: float
    stderr: float
    n_disorder: int

    def as_estimate(self) -> Estimate:
        return Estimate(self.mean, self.stderr, self.n_disorder)


def free_energy_values(model: ModelDescriptor, beta: float, n_disorder: int,
                       seed: int, draw_range=None) -> np.ndarray:
    """Per-draw (1/N) log Z values; draw i is a pure function of (seed, i)."""
    lo, hi = (0, n_disorder) if draw_range is None else draw_range
    vals = np.empty(hi - lo)
    for i in range(lo, hi):
        d = model.build(seed=child_seed(seed, "disorder", i))
        vals[i - lo] = enumerate_gibbs(d, beta).free_energy_density()
    return vals


def free_energy_mc(model: ModelDescriptor, beta: float, n_disorder: int,
                   seed: int, draw_range=None) -> FreeEnergyEstimate:
    """Mean and stderr of (1/N) log Z over independent disorder draws."""
    if n_disorder < 2:
        raise ValueError("need n_disorder >= 2")
    vals = free_energy_values(model, beta, n_disorder, seed, draw_range)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return FreeEnergyEstimate(mean=mean, stderr=stderr, n_disorder=vals.size)


def two_replica_overlap_moment(table: GibbsTable, p: int,
                               rng: np.random.Generator | None = None) -> float:
    """E_G E_G' R(sigma, sigma')^p under one fixed Gibbs table.

    Exact double sum over the 2^N table for N <= 13 (O(4^N), chunked);
    above that, Monte Carlo over sampled replica pairs (rng required).
    """
    n = table.n
    w = table.probabilities()
    if n <= TWO_REPLICA_EXACT_CAP:
        S = spin_configurations(n) if n <= 16 else None
        K = 1 << n
        acc = 0.0
        for start in range(0, K, 1024):
            stop = min(start + 1024, K)
            Sc = S[start:stop] if S is not None else spin_block(n, start, stop)
            Sf = S if S is not None else spin_block(n, 0, K)
            R = (Sc @ Sf.T) / n
            acc += w[start:stop] @ (R**p @ w)
        return float(acc)
    if rng is None:
        raise ValueError(f"N > {TWO_REPLICA_EXACT_CAP} needs sampled pairs; pass rng")
    idx = rng.choice(w.size, size=(TWO_REPLICA_SAMPLE_PAIRS, 2), p=w)
    Sa = _configs_at(n, idx[:, 0])
    Sb = _configs_at(n, idx[:, 1])
    r = (Sa * Sb).sum(axis=1) / n
    return float(np.mean(r**p))


def _configs_at(n: int, idx: np.ndarray) -> np.ndarray:
    t = idx.astype(np.uint64)
    codes = t ^ (t >> np.uint64(1))
    bits = (codes[:, None] >> np.arange(n, dtype=np.uint64)) & np.uint64(1)
    return 1.0 - 2.0 * bits.astype(np.float64)


@dataclass(frozen=True)
class DerivativeReport:
    """One entry of the coupling-derivative functional beta_p (1 - E<R^p>)."""

    p: int
    prefactor: float
    moment: Estimate
    value: Estimate


def free_energy_p_derivative(model: ModelDescriptor, p: int, n_disorder: int,
                             seed: int, beta_scale: float = 1.0) -> DerivativeReport:
    """beta_p (1 - E G^{x2} R^p), the partial derivative of f_N in beta_p.

    The two-replica expectation is exact per disorder draw; ``beta_scale``
    scales the measure (0 gives the uniform measure while keeping the
    model's beta_p as prefactor). Nonnegative for every admissible p.
    """
    if model.beta is None or p not in model.beta.orders:
        prefactor = 0.0
    else:
        prefactor = model.beta.beta(p)
    if prefactor == 0.0:
        return DerivativeReport(p=p, prefactor=0.0,
                                moment=Estimate(0.0, 0.0, 0),
                                value=Estimate(0.0, 0.0, n_disorder))
    vals = np.empty(n_disorder)
    for i in range(n_disorder):
        d = model.build(seed=child_seed(seed, "disorder", i))
        table = enumerate_gibbs(d, beta_scale)
        vals[i] = two_replica_overlap_moment(table, p)
    moment = Estimate.from_values(vals)
    value = Estimate(prefactor * (1.0 - moment.value),
                     prefactor * moment.stderr, n_disorder)
    return DerivativeReport(p=p, prefactor=prefactor, moment=moment, value=value)


def lipschitz_free_energy_check(beta: MixedCouplings, beta2: MixedCouplings,
                                n: int, n_disorder: int, seed: int) -> dict:
    """Check |f_N(beta) - f_N(beta')| <= (1/2) sum_p |beta_p^2 - beta'_p^2|.

    Uses common disorder draws for the two parameter vectors, so the
    difference is estimated with a paired stderr. Returns both sides.
    """
    orders = sorted(set(beta.orders) | set(beta2.orders))
    union = MixedCouplings.from_pairs([(p, 1.0) for p in orders]) if orders else None
    diffs = np.empty(n_disorder)
    for i in range(n_disorder):
        if union is None:
            diffs[i] = 0.0
            continue
        d = build_disorder("mixed", n, union, seed=child_seed(seed, "disorder", i))
        raw = enumerate_raw_energies(d)
        fa = table_from_raw(n, raw, beta).free_energy_density() if beta.terms else np.log(2.0)
        fb = table_from_raw(n, raw, beta2).free_energy_density() if beta2.terms else np.log(2.0)
        diffs[i] = fa - fb
    est = Estimate.from_values(diffs)
    bound = 0.5 * sum(abs(beta.beta(p) ** 2 - beta2.beta(p) ** 2) for p in orders)
    return {
        "difference": est,
        "lhs": abs(est.value),
        "bound": bound,
        "tolerance": 4.0 * est.stderr,
        "holds": abs(est.value) <= bound + 4.0 * est.stderr,
    }
