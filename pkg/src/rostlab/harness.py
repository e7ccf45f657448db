"""Experiment orchestration: seeded configs, parallel tasks, CSV/JSON output.

A run is fully determined by its config (TOML for humans, JSON echo in the
manifest for machines): identical (config, seed) produce byte-identical CSV
outputs at any thread count, because work is split into a fixed list of
tasks whose randomness derives from hash(master_seed, task tokens) and
whose results are reduced in task order. Exit codes: 0 all assertions pass,
1 statistical failure (some |z| >= 4 or a failed bound), 2 configuration or
guard error.

Column layouts for every CSV are documented in docs/csv_schema.md.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .cascades import (
    RpcSpec,
    build_two_sphere,
    build_uncoupled_rem,
    pd_invariance_check,
    rem_ensemble,
    rpc_ensemble,
    two_sphere_ensemble,
    two_sphere_overlaps,
)
from .cavity import (
    CavitySpec,
    apply_cavity_map,
    compose_check,
    compose_logweight_identity,
    empirical_linearization_check,
    gg_deficit,
    stability_deficit,
)
from .gibbs import free_energy_values
from .measures import (
    DEFAULT_CATALOG,
    Monomial,
    fixed_ensemble,
    gibbs_ensemble,
    support_radii,
    ultrametricity_score,
)
from .parisi import ass_increment, minimize_guerra
from .reporting import Estimate, Z_THRESHOLD, fit_loglog, mean_stderr, zscore
from .rng import child_seed, substream
from .spin_models import MixedCouplings, ModelDescriptor

EXPERIMENT_KINDS = (
    "free-energy", "stability", "gg", "ultrametricity", "pd-invariance",
    "composition", "linearization", "parisi-min", "ass-increment",
    "counterexamples",
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment: kind, kind-specific parameters, budgets, seeding."""

    kind: str
    seed: int
    params: dict = field(default_factory=dict)
    threads: int = 1
    out_dir: str = "runs"

    def validate(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.seed is None:
            raise ConfigError("seed is mandatory (no wall-clock defaults)")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for key, val in (self.params.get("budgets") or {}).items():
            if not isinstance(val, int) or val <= 0:
                raise ConfigError(f"budget {key!r} must be a positive integer")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        try:
            kind = doc.pop("kind")
            seed = doc.pop("seed")
        except KeyError as exc:
            raise ConfigError(f"missing required config field {exc}") from exc
        threads = doc.pop("threads", 0) or _env_threads()
        out_dir = doc.pop("out_dir", "runs")
        cfg = cls(kind=kind, seed=seed, params=doc, threads=threads, out_dir=out_dir)
        cfg.validate()
        return cfg

    @classmethod
    def from_toml(cls, path: str) -> "ExperimentConfig":
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except Exception as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(doc)

    def echo(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "threads": self.threads,
                "out_dir": self.out_dir, **self.params}


def _env_threads() -> int:
    try:
        return max(1, int(os.environ.get("ROSTLAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class RunManifest:
    """Everything needed to reproduce a run and check its outputs."""

    config: dict
    version: str
    started: str
    finished: str
    task_seeds: dict
    outputs: dict          # filename -> sha256 of contents
    passed: bool
    exit_code: int
    run_dir: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        with open(path) as fh:
            return cls(**json.load(fh))


# ---------------------------------------------------------------------------
# deterministic output helpers

def format_cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, fieldnames: list[str], rows: list[dict]) -> None:
    lines = [",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(format_cell(row.get(k, "")) for k in fieldnames))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def run_tasks(tasks, threads: int) -> list:
    """Execute (name, fn) tasks, results in task order at any thread count."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn() for _, fn in tasks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(fn) for _, fn in tasks]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# config -> ensembles

def _model_from(doc: dict) -> ModelDescriptor:
    kind = doc.get("kind", "sk")
    if kind == "ea":
        return ModelDescriptor.ea(tuple(doc["lattice"]),
                                  periodic=bool(doc.get("periodic", False)))
    beta = MixedCouplings.from_pairs(doc["beta"])
    return ModelDescriptor(kind=kind, n=int(doc["n"]), beta=beta)


def _source_ensemble(doc: dict, size: int, seed: int):
    typ = doc.get("type")
    if typ == "rpc":
        spec = RpcSpec(x=tuple(doc["x"]), q=tuple(doc["q"]), M=int(doc.get("M", 1000)))
        return rpc_ensemble(spec, size, seed)
    if typ == "gibbs":
        model = _model_from(doc["model"])
        return gibbs_ensemble(model, float(doc.get("beta_scale", 1.0)),
                              doc.get("kernel", "r"), size, seed)
    if typ == "two-sphere":
        return two_sphere_ensemble(float(doc["x1"]), float(doc["x2"]),
                                   int(doc.get("M", 1000)), size, seed,
                                   doc.get("block_masses", "ppp"))
    if typ == "uncoupled-rem":
        return rem_ensemble(float(doc["x1"]), float(doc["x2"]),
                            int(doc.get("M", 200)), size, seed)
    raise ConfigError(f"unknown source type {typ!r}")


def _catalog_from(params: dict):
    names = params.get("catalog")
    if not names:
        return DEFAULT_CATALOG
    return tuple(Monomial.parse(n) for n in names)


def _budget(params: dict, key: str, default: int) -> int:
    return int((params.get("budgets") or {}).get(key, default))


# ---------------------------------------------------------------------------
# experiment runners: each returns (fieldnames, rows, summary, passed)

def _run_free_energy(cfg: ExperimentConfig):
    p = cfg.params
    model = _model_from(p["model"])
    betas = p.get("beta_scale", [1.0])
    if not isinstance(betas, list):
        betas = [betas]
    n_disorder = _budget(p, "n_disorder", 200)
    n_chunks = min(8, n_disorder)
    bounds = np.linspace(0, n_disorder, n_chunks + 1).astype(int)
    rows = []
    for b in betas:
        seed_b = child_seed(cfg.seed, "free-energy", repr(float(b)))
        tasks = [(f"chunk{j}", lambda j=j, b=b: free_energy_values(
            model, float(b), n_disorder, seed_b, (bounds[j], bounds[j + 1])))
            for j in range(n_chunks)]
        vals = np.concatenate(run_tasks(tasks, cfg.threads))
        mean, se = mean_stderr(vals)
        rows.append({"model": model.kind, "n": model.n, "beta": float(b),
                     "quantity": "free_energy", "mean": mean, "stderr": se,
                     "n_disorder": n_disorder, "seed": seed_b})
    fields = ["model", "n", "beta", "quantity", "mean", "stderr", "n_disorder", "seed"]
    return fields, rows, {"n_rows": len(rows)}, True


def _run_stability(cfg: ExperimentConfig):
    p = cfg.params
    cav = p.get("cavity", {})
    lams = cav.get("lam", [0.5, 1.0, 2.0])
    if not isinstance(lams, list):
        lams = [lams]
    c_mix = tuple(cav.get("c_mix", (0.0, 1.0)))
    psi = cav.get("psi", "linear")
    cat = _catalog_from(p)
    n_draws = _budget(p, "n_draws", 200)
    budget = _budget(p, "budget", 100_000)
    n_fields = _budget(p, "n_fields", 1)
    n_list = p.get("n_list")  # optional scan over gibbs sizes
    sources = []
    if n_list:
        base = dict(p["source"])
        for n in n_list:
            doc = json.loads(json.dumps(base))
            doc["model"]["n"] = int(n)
            sources.append((int(n), doc))
    else:
        sources.append((p["source"].get("model", {}).get("n", ""), p["source"]))

    tasks = []
    for n_tag, doc in sources:
        for lam in lams:
            spec = CavitySpec(psi, float(lam), c_mix)
            seed_t = child_seed(cfg.seed, "stability", str(n_tag), repr(float(lam)))
            ens = _source_ensemble(doc, n_draws, child_seed(seed_t, "ens"))
            tasks.append(((n_tag, lam), lambda e=ens, s=spec, sd=seed_t: stability_deficit(
                e, s, cat, budget=budget, seed=sd, n_fields=n_fields)))
    reports = run_tasks(tasks, cfg.threads)
    rows = []
    for ((n_tag, lam), _), rep in zip(tasks, reports):
        for t, entry in enumerate(rep.entries):
            rows.append({"n": n_tag, "lam": lam, "monomial": entry.name,
                         "baseline": rep.meta["baseline"][t],
                         "mapped": rep.meta["mapped"][t],
                         "deficit": entry.estimate, "stderr": entry.stderr,
                         "z": entry.z})
    max_z = max(abs(r["z"]) for r in rows)
    fields = ["n", "lam", "monomial", "baseline", "mapped", "deficit", "stderr", "z"]
    summary = {"max_abs_z": max_z, "pass": max_z < Z_THRESHOLD,
               "budgets": {"n_draws": n_draws, "budget": budget, "n_fields": n_fields},
               "spec": {"psi": psi, "lam": lams, "c_mix": list(c_mix)}}
    return fields, rows, summary, bool(max_z < Z_THRESHOLD)


def _run_gg(cfg: ExperimentConfig):
    p = cfg.params
    cat = _catalog_from(p)
    s_list = p.get("s", [2])
    p_list = p.get("p", [1])
    n_draws = _budget(p, "n_draws", 200)
    budget = _budget(p, "budget", 100_000)
    tasks = []
    for s in s_list:
        for pw in p_list:
            seed_t = child_seed(cfg.seed, "gg", s, pw)
            ens = _source_ensemble(p["source"], n_draws, child_seed(seed_t, "ens"))
            tasks.append(((s, pw), lambda e=ens, s=s, pw=pw, sd=seed_t: gg_deficit(
                e, s=s, p_power=pw, monomials=cat, budget=budget, seed=sd)))
    reports = run_tasks(tasks, cfg.threads)
    rows = []
    for ((s, pw), _), rep in zip(tasks, reports):
        for entry in rep.entries:
            rows.append({"s": s, "p": pw, "monomial": entry.name,
                         "residual": entry.estimate, "stderr": entry.stderr,
                         "z": entry.z})
    max_z = max(abs(r["z"]) for r in rows)
    fields = ["s", "p", "monomial", "residual", "stderr", "z"]
    return fields, rows, {"max_abs_z": max_z, "pass": max_z < Z_THRESHOLD}, \
        bool(max_z < Z_THRESHOLD)


def _run_ultrametricity(cfg: ExperimentConfig):
    p = cfg.params
    n_draws = _budget(p, "n_draws", 50)
    n_triples = _budget(p, "n_triples", 10_000)
    ens = _source_ensemble(p["source"], n_draws, child_seed(cfg.seed, "ultra"))
    rate, worst = ultrametricity_score(ens, n_triples, seed=child_seed(cfg.seed, "tri"))
    expect = p.get("expect", "zero")
    ok = rate == 0.0 if expect == "zero" else rate > 0.0
    rows = [{"violation_rate": rate, "worst_slack": worst, "expect": expect}]
    return ["violation_rate", "worst_slack", "expect"], rows, \
        {"violation_rate": rate, "pass": ok}, ok


def _run_pd_invariance(cfg: ExperimentConfig):
    p = cfg.params
    xs = p.get("x", [0.3, 0.5, 0.7])
    if not isinstance(xs, list):
        xs = [xs]
    lam = float(p.get("lam", 1.0))
    M = _budget(p, "M", 10_000)
    reps = _budget(p, "reps", 2000)
    tasks = [(x, lambda x=x: pd_invariance_check(
        float(x), lam, M, reps, seed=child_seed(cfg.seed, "pd", repr(float(x)))))
        for x in xs]
    reports = run_tasks(tasks, cfg.threads)
    rows = []
    for (x, _), rep in zip(tasks, reports):
        for entry in rep.entries:
            rows.append({"x": x, "moment": entry.name, "difference": entry.estimate,
                         "stderr": entry.stderr, "z": entry.z})
    max_z = max(abs(r["z"]) for r in rows)
    fields = ["x", "moment", "difference", "stderr", "z"]
    return fields, rows, {"max_abs_z": max_z, "pass": max_z < Z_THRESHOLD}, \
        bool(max_z < Z_THRESHOLD)


def _run_composition(cfg: ExperimentConfig):
    p = cfg.params
    lam = float(p.get("lam", 1.0))
    lam2 = float(p.get("lam2", 1.0))
    cat = _catalog_from(p)
    n_draws = _budget(p, "n_draws", 200)
    budget = _budget(p, "budget", 10_000)
    ens = _source_ensemble(p["source"], n_draws, child_seed(cfg.seed, "comp-ens"))
    rep = compose_check(ens, lam, lam2, cat, budget=budget,
                        seed=child_seed(cfg.seed, "comp"))
    ident = compose_logweight_identity(
        ens.draw(0), lam, lam2, substream(cfg.seed, "comp-ident"))
    rows = [{"monomial": e.name, "deficit": e.estimate, "stderr": e.stderr, "z": e.z}
            for e in rep.entries]
    max_z = rep.max_abs_z()
    ok = max_z < Z_THRESHOLD and ident < 1e-12
    summary = {"max_abs_z": max_z, "logweight_identity_error": ident, "pass": ok}
    return ["monomial", "deficit", "stderr", "z"], rows, summary, ok


def _run_linearization(cfg: ExperimentConfig):
    p = cfg.params
    cav = p.get("cavity", {})
    spec = CavitySpec(cav.get("psi", "linear"), float(cav.get("lam", 1.0)),
                      tuple(cav.get("c_mix", (0.0, 1.0))))
    n_grid = p.get("n_grid", [16, 64, 256, 1024, 4096])
    reps = _budget(p, "reps", 200)
    ens = _source_ensemble(p["source"], 1, child_seed(cfg.seed, "lin-src"))
    m = ens.draw(0)
    table = empirical_linearization_check(m, spec, p.get("F", "factor"),
                                          n_grid=n_grid, reps=reps,
                                          seed=child_seed(cfg.seed, "lin"))
    rows = [{"n": n, "rms_error": e} for n, e in zip(table.n_grid, table.rms_error)]
    lo, hi = p.get("slope_window", [-0.62, -0.38])
    ok = table.degenerate or (lo <= table.slope <= hi)
    summary = {"slope": table.slope, "slope_stderr": table.slope_stderr,
               "degenerate": table.degenerate, "window": [lo, hi], "pass": ok}
    return ["n", "rms_error"], rows, summary, bool(ok)


def _run_parisi_min(cfg: ExperimentConfig):
    p = cfg.params
    beta = MixedCouplings.from_pairs(p["beta"])
    k_max = int(p.get("k_max", 2))
    n_starts = _budget(p, "n_starts", 8)
    spec, ev, trace = minimize_guerra(
        beta, k_max=k_max, seed=child_seed(cfg.seed, "parisi-min"),
        n_starts=n_starts, maxiter=_budget(p, "maxiter", 500),
        final_budget=(_budget(p, "n_draws", 100), _budget(p, "budget", 100_000)))
    rows = [{"iteration": i, "k": k, "x": ";".join(repr(v) for v in x),
             "q": ";".join(repr(v) for v in q), "value": v}
            for i, k, x, q, v in trace.rows]
    summary = {
        "beta": beta.to_pairs(), "k": spec.k, "x": list(spec.x), "q": list(spec.q),
        "rhs": ev.rhs.value, "rhs_stderr": ev.rhs.stderr,
        "rhs_deterministic": ev.rhs_deterministic,
        "parisi_term": ev.parisi_term,
        "correction": ev.correction.value, "correction_stderr": ev.correction.stderr,
        "correction_alt": ev.correction_alt, "consistency_z": ev.consistency_z,
        "pass": ev.consistent,
    }
    return ["iteration", "k", "x", "q", "value"], rows, summary, ev.consistent


def _run_ass_increment(cfg: ExperimentConfig):
    p = cfg.params
    model = p["model"]
    beta = MixedCouplings.from_pairs(model["beta"])
    kind = model.get("kind", "sk")
    n_list = p.get("n_list", [model.get("n", 8)])
    n_disorder = _budget(p, "n_disorder", 200)
    n_fields = _budget(p, "n_fields", 64)
    tasks = [(n, lambda n=n: ass_increment(
        kind, int(n), beta, n_disorder=n_disorder, n_fields=n_fields,
        seed=child_seed(cfg.seed, "ass", int(n)))) for n in n_list]
    reports = run_tasks(tasks, cfg.threads)
    rows = []
    for rep in reports:
        rows.append({"n": rep.n, "direct": rep.direct.value,
                     "direct_stderr": rep.direct.stderr,
                     "cavity": rep.cavity_term.value,
                     "shift": rep.shift_term.value,
                     "residual": rep.residual.value,
                     "residual_stderr": rep.residual.stderr,
                     "epsilon_bound": rep.epsilon_bound,
                     "within_bound": rep.within_bound})
    ok = all(r["within_bound"] for r in rows)
    resids = [abs(r["residual"]) for r in rows]
    decreasing = all(resids[i + 1] <= resids[i] for i in range(len(resids) - 1))
    fields = ["n", "direct", "direct_stderr", "cavity", "shift", "residual",
              "residual_stderr", "epsilon_bound", "within_bound"]
    return fields, rows, {"pass": ok, "decreasing": decreasing}, bool(ok)


def _run_counterexamples(cfg: ExperimentConfig):
    p = cfg.params
    x1 = float(p.get("x1", 0.25))
    x2 = float(p.get("x2", 0.5))
    M = _budget(p, "M", 1000)
    n_draws = _budget(p, "n_draws", 300)
    budget = _budget(p, "budget", 50_000)
    lam = float(p.get("lam", 1.0))
    cat = _catalog_from(p)
    seed = cfg.seed

    def sphere_stab():
        ens = two_sphere_ensemble(x1, x2, M, n_draws, child_seed(seed, "ts-ens"))
        return stability_deficit(ens, CavitySpec("linear", lam), cat,
                                 budget=budget, seed=child_seed(seed, "ts-stab"))

    def rem_stab():
        m_rem = min(M, 300)
        ens = rem_ensemble(x1, x2, m_rem, n_draws, child_seed(seed, "rem-ens"))
        return stability_deficit(ens, CavitySpec("linear", lam), cat,
                                 budget=budget, seed=child_seed(seed, "rem-stab"))

    reports = run_tasks([("sphere", sphere_stab), ("rem", rem_stab)], cfg.threads)
    rows = []
    for name, rep in zip(("two-sphere", "uncoupled-rem"), reports):
        for e in rep.entries:
            rows.append({"measure": name, "monomial": e.name, "deficit": e.estimate,
                         "stderr": e.stderr, "z": e.z})
    q1, q2 = two_sphere_overlaps(x1, x2)
    tw = build_two_sphere(x1, x2, M, substream(seed, "ts-radii"))
    r_min, r_max = support_radii(tw)
    rem_m = build_uncoupled_rem(x1, x2, min(M, 300), substream(seed, "rem-w"))
    m2 = rem_m.shape[1]
    witness = rem_m.pair_overlaps(
        np.array([0, 0, m2 + 1]), np.array([m2 + 1, 1, 1]))
    rate, _ = ultrametricity_score(
        rem_ensemble(x1, x2, min(M, 300), 5, child_seed(seed, "rem-ultra")),
        _budget(p, "n_triples", 10_000), seed=child_seed(seed, "tri"))
    max_z = max(abs(r["z"]) for r in rows)
    ok = (max_z < Z_THRESHOLD and abs(r_min - np.sqrt(q1)) < 1e-12
          and abs(r_max - np.sqrt(q2)) < 1e-12 and r_min != r_max
          and np.allclose(witness, [0.0, 0.5, 0.5]) and rate > 0)
    summary = {"max_abs_z": max_z, "r_min": r_min, "r_max": r_max,
               "witness_overlaps": [float(v) for v in witness],
               "rem_violation_rate": rate, "pass": bool(ok)}
    return ["measure", "monomial", "deficit", "stderr", "z"], rows, summary, bool(ok)


_RUNNERS = {
    "free-energy": _run_free_energy,
    "stability": _run_stability,
    "gg": _run_gg,
    "ultrametricity": _run_ultrametricity,
    "pd-invariance": _run_pd_invariance,
    "composition": _run_composition,
    "linearization": _run_linearization,
    "parisi-min": _run_parisi_min,
    "ass-increment": _run_ass_increment,
    "counterexamples": _run_counterexamples,
}


# ---------------------------------------------------------------------------
# run / replay / summarize

def run_experiment(cfg: ExperimentConfig) -> RunManifest:
    """Execute the configured pipeline; write results.csv, summary.json and
    manifest.json into a per-run directory; exit code in the manifest."""
    cfg.validate()
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    run_dir = os.path.join(cfg.out_dir, f"{cfg.kind}-seed{cfg.seed}")
    suffix = 0
    while os.path.exists(run_dir):
        suffix += 1
        run_dir = os.path.join(cfg.out_dir, f"{cfg.kind}-seed{cfg.seed}-{suffix}")
    os.makedirs(run_dir)
    try:
        fields, rows, summary, passed = _RUNNERS[cfg.kind](cfg)
    except (ConfigError, ValueError, KeyError) as exc:
        manifest = RunManifest(
            config=cfg.echo(), version=__version__, started=started,
            finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
            task_seeds={}, outputs={}, passed=False, exit_code=2,
            run_dir=run_dir)
        with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
            fh.write(manifest.to_json())
        raise ConfigError(str(exc)) from exc

    csv_path = os.path.join(run_dir, "results.csv")
    write_csv(csv_path, fields, rows)
    summary_path = os.path.join(run_dir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump({"kind": cfg.kind, "seed": cfg.seed, **summary}, fh,
                  indent=2, sort_keys=True, default=float)
    outputs = {"results.csv": _sha256(csv_path), "summary.json": _sha256(summary_path)}
    manifest = RunManifest(
        config=cfg.echo(), version=__version__, started=started,
        finished=time.strftime("%Y-%m-%dT%H:%M:%S"),
        task_seeds={"master": cfg.seed}, outputs=outputs,
        passed=bool(passed), exit_code=0 if passed else 1, run_dir=run_dir)
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        fh.write(manifest.to_json())
    return manifest


def replay(manifest_path: str, threads: int | None = None) -> dict:
    """Re-execute a run with identical seeds; compare output digests."""
    ref = RunManifest.load(manifest_path)
    doc = dict(ref.config)
    if threads is not None:
        doc["threads"] = threads
    doc["out_dir"] = os.path.join(os.path.dirname(ref.run_dir) or ".", "replay")
    cfg = ExperimentConfig.from_dict(doc)
    new = run_experiment(cfg)
    mismatches = {name: (ref.outputs.get(name), new.outputs.get(name))
                  for name in set(ref.outputs) | set(new.outputs)
                  if ref.outputs.get(name) != new.outputs.get(name)}
    return {"reference": manifest_path, "replayed": new.run_dir,
            "identical": not mismatches, "mismatches": mismatches,
            "manifest": new}


def summarize(out_dir: str) -> dict:
    """Cross-run tables grouped by kind, plot-ready; never merges kinds."""
    groups: dict[str, list] = {}
    for root, _dirs, files in os.walk(out_dir):
        if "manifest.json" in files:
            man = RunManifest.load(os.path.join(root, "manifest.json"))
            kind = man.config.get("kind", "?")
            with open(os.path.join(root, "summary.json")) as fh:
                summary = json.load(fh)
            rows = _read_csv(os.path.join(root, "results.csv"))
            groups.setdefault(kind, []).append(
                {"run_dir": root, "summary": summary, "rows": rows})
    if not groups:
        raise ConfigError(f"no completed runs under {out_dir}")
    aggregate: dict = {}
    for kind, runs in sorted(groups.items()):
        agg = {"n_runs": len(runs), "all_pass": all(
            r["summary"].get("pass", True) for r in runs)}
        trend_rows = [row for r in runs for row in r["rows"]
                      if row.get("n") and row.get("z") is not None]
        if kind == "stability" and trend_rows:
            by_n: dict[int, float] = {}
            for row in trend_rows:
                n = int(float(row["n"]))
                by_n[n] = max(by_n.get(n, 0.0), abs(float(row["deficit"])))
            if len(by_n) >= 2 and all(v > 0 for v in by_n.values()):
                ns = sorted(by_n)
                slope, _ = fit_loglog(ns, [by_n[n] for n in ns])
                agg["deficit_trend"] = {"n": ns, "max_abs_deficit": [by_n[n] for n in ns],
                                        "log_slope": slope}
        aggregate[kind] = agg
    agg_path = os.path.join(out_dir, "aggregate.json")
    with open(agg_path, "w") as fh:
        json.dump(aggregate, fh, indent=2, sort_keys=True, default=float)
    # plot-ready per-kind CSV
    for kind, runs in groups.items():
        allrows = [dict(row, run=os.path.basename(r["run_dir"]))
                   for r in runs for row in r["rows"]]
        if allrows:
            fields = ["run"] + [k for k in allrows[0] if k != "run"]
            write_csv(os.path.join(out_dir, f"aggregate-{kind}.csv"), fields, allrows)
    return aggregate


def _read_csv(path: str) -> list[dict]:
    with open(path) as fh:
        lines = [l.rstrip("\n") for l in fh if l.strip()]
    if not lines:
        return []
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]
