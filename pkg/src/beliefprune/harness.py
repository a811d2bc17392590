"""Experiment runners: entropy study, planning benchmark, receding-horizon runs.

Every experiment is driven by one JSON config (see :func:`validate_config`)
and writes CSV tables plus a ``<experiment>.meta.json`` sidecar holding the
canonical config and its SHA-256. Result tables are a pure function of the
config and seeds. Wall-clock times go to a separate ``*_timing.csv`` so
the other files stay byte-for-byte reproducible.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .belief import (LIKELIHOOD_FLOOR, SimplificationSchedule, effective_sample_size, nested_views,
                     propagate_and_reweight, systematic_resample)
from .entropy import (EntropyBoundCache, boers_entropy, kde_entropy, naive_weight_entropy)
from .models import BeaconWorldConfig, DensityCounter, gaussian_entropy, kalman_step
from .planner import SimplifiedPlanner, exact_objective, receding_horizon_run, _tree_rng
from .tree import BUILDERS, build_tree, predicted_size

EXPERIMENTS = ("entropy-study", "plan-bench", "receding-run")

_WORLD_FIELDS = {f.name for f in dataclasses.fields(BeaconWorldConfig)}


class ConfigError(ValueError):
    """A run config that cannot be executed."""


@dataclass(frozen=True)
class RunConfig:
    """One experiment. Lists are stored as tuples; ``horizons`` is per builder."""

    experiment: str
    worlds: dict[str, BeaconWorldConfig]
    builders: tuple[str, ...]
    schedule: tuple[float, ...]
    n_particles: tuple[int, ...]
    horizons: dict[str, tuple[int, ...]]
    seeds: tuple[int, ...]
    output: str | None = None
    steps: int = 20
    rollouts: int = 5
    node_budget: int = 20000
    time_cap_s: float = 35.0
    goal_radius: float = 1.0
    path_action: tuple[float, float] = (0.5, 0.5)
    entropy_fractions: tuple[float, ...] = (0.1, 0.5, 0.9, 1.0)
    snapshots: bool = True
    compare_exact: bool = True

    def with_seed_offset(self, offset: int) -> "RunConfig":
        return dataclasses.replace(self, seeds=tuple(s + offset for s in self.seeds))

    def simplification(self) -> SimplificationSchedule:
        return SimplificationSchedule(self.schedule)


def _tuple(value, name, cast, allow_empty=False):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be a list")
    if not value and not allow_empty:
        raise ConfigError(f"{name} must be non-empty")
    try:
        return tuple(cast(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _int(v):
    if isinstance(v, bool) or not float(v).is_integer():
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _world(name: str, entry: Mapping[str, Any]) -> BeaconWorldConfig:
    if not isinstance(entry, Mapping):
        raise ConfigError(f"world {name!r} must be an object")
    unknown = set(entry) - _WORLD_FIELDS
    if unknown:
        raise ConfigError(f"world {name!r}: unknown fields {sorted(unknown)}")
    required = {f.name for f in dataclasses.fields(BeaconWorldConfig)
                if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING}
    missing = required - set(entry)
    if missing:
        raise ConfigError(f"world {name!r}: missing fields {sorted(missing)}")
    kwargs = dict(entry)
    kwargs.setdefault("name", name)
    for key in ("start", "goal"):
        if key in kwargs and len(kwargs[key]) != 2:
            raise ConfigError(f"world {name!r}: {key} must have two coordinates")
    if "beacons" in kwargs:
        kwargs["beacons"] = [tuple(b) for b in kwargs["beacons"]]
        if any(len(b) != 2 for b in kwargs["beacons"]):
            raise ConfigError(f"world {name!r}: beacons must be 2-D points")
    if "actions" in kwargs:
        kwargs["actions"] = tuple(kwargs["actions"])
    try:
        return BeaconWorldConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"world {name!r}: {exc}") from None


def validate_config(raw: Mapping[str, Any]) -> RunConfig:
    """Check a parsed JSON config and turn it into a :class:`RunConfig`."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    missing = {"experiment", "worlds", "seeds"} - set(raw)
    if missing:
        raise ConfigError(f"missing config keys {sorted(missing)}")
    experiment = raw["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {experiment!r}")
    if not isinstance(raw["worlds"], Mapping) or not raw["worlds"]:
        raise ConfigError("worlds must be a non-empty object")
    worlds = {str(k): _world(str(k), v) for k, v in raw["worlds"].items()}

    builders = _tuple(raw.get("builders", ["despot"]), "builders", str)
    bad = [b for b in builders if b not in BUILDERS]
    if bad:
        raise ConfigError(f"unknown builders {bad}; expected from {BUILDERS}")
    schedule = _tuple(raw.get("schedule", [0.1, 0.2, 0.4, 0.8, 1.0]), "schedule", float)
    try:
        SimplificationSchedule(schedule)
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    n_particles = _tuple(raw.get("n_particles", [50]), "n_particles", _int)
    if any(n < 2 for n in n_particles):
        raise ConfigError("n_particles entries must be >= 2")
    seeds = _tuple(raw["seeds"], "seeds", _int)

    h_raw = raw.get("horizons", [2])
    if isinstance(h_raw, Mapping):
        missing_b = [b for b in builders if b not in h_raw]
        if missing_b:
            raise ConfigError(f"horizons missing for builders {missing_b}")
        horizons = {b: _tuple(h_raw[b], f"horizons[{b}]", _int) for b in builders}
    else:
        hs = _tuple(h_raw, "horizons", _int)
        horizons = {b: hs for b in builders}
    if any(h < 1 for hs in horizons.values() for h in hs):
        raise ConfigError("horizons must be >= 1")

    fractions = _tuple(raw.get("entropy_fractions", [0.1, 0.5, 0.9, 1.0]), "entropy_fractions", float)
    try:
        SimplificationSchedule(fractions)
    except ValueError as exc:
        raise ConfigError(f"entropy_fractions: {exc}") from None
    path_action = _tuple(raw.get("path_action", [0.5, 0.5]), "path_action", float)
    if len(path_action) != 2:
        raise ConfigError("path_action must have two components")

    cfg = RunConfig(
        experiment=experiment,
        worlds=worlds,
        builders=builders,
        schedule=schedule,
        n_particles=n_particles,
        horizons=horizons,
        seeds=seeds,
        output=raw.get("output"),
        steps=_checked(raw, "steps", 20, _int, lambda v: v >= 1),
        rollouts=_checked(raw, "rollouts", 5, _int, lambda v: v >= 1),
        node_budget=_checked(raw, "node_budget", 20000, _int, lambda v: v >= 1),
        time_cap_s=_checked(raw, "time_cap_s", 35.0, float, lambda v: v > 0),
        goal_radius=_checked(raw, "goal_radius", 1.0, float, lambda v: v > 0),
        path_action=path_action,
        entropy_fractions=fractions,
        snapshots=_checked(raw, "snapshots", True, bool, lambda v: True),
        compare_exact=_checked(raw, "compare_exact", True, bool, lambda v: True),
    )
    return cfg


def _checked(raw, key, default, cast, ok):
    if key not in raw:
        return default
    try:
        value = cast(raw[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None
    if not ok(value):
        raise ConfigError(f"{key} out of range: {raw[key]!r}")
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    """Canonical JSON-ready form; ``validate_config`` of it gives ``cfg`` back."""
    out = {}
    for f in dataclasses.fields(RunConfig):
        v = getattr(cfg, f.name)
        if f.name == "worlds":
            v = {k: _world_dict(w) for k, w in sorted(v.items())}
        elif f.name == "horizons":
            v = {k: list(h) for k, h in sorted(v.items())}
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _world_dict(w: BeaconWorldConfig) -> dict:
    d = dataclasses.asdict(w)
    d["start"], d["goal"] = list(w.start), list(w.goal)
    d["beacons"] = [list(b) for b in w.beacons]
    d["actions"] = list(w.actions)
    return d


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return validate_config(raw)


def emit_metadata(cfg: RunConfig, out_dir: str | Path, files: list[str] | None = None) -> Path:
    """Write the canonical config echo and its hash beside the outputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": config_to_dict(cfg),
        "config_sha256": config_hash(cfg),
        "files": sorted(files or []),
    }
    path = out / f"{cfg.experiment}.meta.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path: Path, rows: list[dict], columns: list[str] | None = None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k, "")) for k in columns})


@dataclass
class ExperimentResult:
    """Tables keyed by file stem; ``timing`` tables are not reproducible."""

    config: RunConfig
    tables: dict[str, list[dict]] = field(default_factory=dict)
    timing: dict[str, list[dict]] = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for stem, rows in list(self.tables.items()) + list(self.timing.items()):
            path = out / f"{stem}.csv"
            write_csv(path, rows)
            written.append(path)
        written.append(emit_metadata(self.config, out, [p.name for p in written]))
        return written


# entropy study

def run_entropy_study(cfg: RunConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Track a filter along a straight path and compare entropy estimates.

    For every world, particle count and seed, the true state moves by
    ``path_action`` each step. Per step the table holds the Kalman entropy,
    the particle estimate, a KDE estimate, the weight entropy, and bounds at
    each of ``entropy_fractions``.
    """
    h = config_hash(cfg)
    schedule = SimplificationSchedule(cfg.entropy_fractions)
    steps_rows, bound_rows, timing = [], [], []
    action = np.asarray(cfg.path_action)
    for wname, world in sorted(cfg.worlds.items()):
        models = world.models()
        for n in cfg.n_particles:
            for seed in cfg.seeds:
                ss_world, ss_filter, ss_views = np.random.SeedSequence(seed, spawn_key=(3,)).spawn(3)
                world_rng = np.random.default_rng(ss_world)
                filter_rng = np.random.default_rng(ss_filter)
                view_rng = np.random.default_rng(ss_views)
                x = np.asarray(world.start) + world.prior_sigma * world_rng.standard_normal(2)
                belief = world.prior(filter_rng, n)
                gauss = world.prior_gaussian()
                for k in range(cfg.steps):
                    x = models.transition.sample(x, action, world_rng)
                    z = models.sensor.sample(x, world_rng)
                    nxt = propagate_and_reweight(belief, action, z, models.transition, models.sensor,
                                                 filter_rng, floor=LIKELIHOOD_FLOOR)
                    gauss = kalman_step(gauss, action, z, models)
                    t0 = time.perf_counter()
                    exact_counter = DensityCounter()
                    boers = boers_entropy(belief, nxt, action, z, models, exact_counter)
                    t_exact = time.perf_counter() - t0
                    base = {"config_sha256": h, "world": wname, "n": n, "seed": seed, "step": k}
                    ess = effective_sample_size(nxt)
                    steps_rows.append({
                        **base,
                        "true_x": x[0], "true_y": x[1],
                        "kf_entropy": gaussian_entropy(gauss),
                        "boers_entropy": boers,
                        "kde_entropy": kde_entropy(nxt),
                        "naive_entropy": naive_weight_entropy(nxt),
                        "ess": ess,
                        "exact_transition_evals": exact_counter.transition,
                        "exact_observation_evals": exact_counter.observation,
                    })
                    t0 = time.perf_counter()
                    bound_rows.extend(_bound_chain(base, belief, nxt, action, z, models, schedule, view_rng))
                    timing.append({**base, "exact_s": t_exact, "bounds_chain_s": time.perf_counter() - t0})
                    belief = nxt
                    if ess < n / 2:
                        belief = systematic_resample(belief, filter_rng)
    res = ExperimentResult(cfg, {"entropy_steps": steps_rows, "entropy_bounds": bound_rows},
                           {"entropy_timing": timing})
    if out_dir is not None:
        res.write(out_dir)
    return res


def _bound_chain(base, prev, nxt, action, z, models, schedule, rng):
    views_prev = nested_views(prev, schedule, rng)
    views_next = nested_views(nxt, schedule, rng)
    counter = DensityCounter()
    rows = []
    cache = None
    for level in range(schedule.finest + 1):
        vp, vn = views_prev[level], views_next[level]
        if cache is None:
            cache = EntropyBoundCache.build(vp, vn, prev, nxt, action, z, models, counter)
            bounds = cache.bounds()
        else:
            added_p = np.setdiff1d(vp.indices, views_prev[level - 1].indices)
            added_n = np.setdiff1d(vn.indices, views_next[level - 1].indices)
            bounds = cache.extend(added_p, added_n, level=level)
        rows.append({
            **base, "level": level, "fraction": schedule.fractions[level], "n_s": vn.size,
            "lower": bounds.lower, "upper": bounds.upper, "width": bounds.width,
            "cumulative_transition_evals": counter.transition,
            "cumulative_observation_evals": counter.observation,
        })
    return rows


# planning benchmark

def run_plan_bench(cfg: RunConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Simplified vs exact planning on identical trees, per (builder, world, N, L).

    A cell whose predicted tree exceeds ``node_budget`` nodes is skipped
    up front. A cell whose planning session exceeds ``time_cap_s`` stops
    after that seed and is marked ``timeout``.
    """
    h = config_hash(cfg)
    schedule = cfg.simplification()
    runs, levels, table = [], [], []
    for builder in cfg.builders:
        for wname, world in sorted(cfg.worlds.items()):
            for n in cfg.n_particles:
                for horizon in cfg.horizons[builder]:
                    cell = {"config_sha256": h, "builder": builder, "world": wname, "n": n, "horizon": horizon}
                    size = predicted_size(builder, len(world.actions), n, horizon, cfg.rollouts, world.n_obs)
                    status, times, times_exact, ratios = "ok", [], [], []
                    agree_all = True
                    if size > cfg.node_budget:
                        status = "over-budget"
                    for seed in cfg.seeds if status == "ok" else ():
                        row, hist, t_simp, t_exact = _bench_session(world, builder, n, horizon, seed, schedule,
                                                                    cfg.rollouts)
                        runs.append({**cell, "seed": seed, **row})
                        levels.extend({**cell, "seed": seed, **r} for r in hist)
                        times.append(t_simp)
                        times_exact.append(t_exact)
                        ratios.append(row["density_ratio"])
                        agree_all &= bool(row["agree"])
                        if max(t_simp, t_exact) > cfg.time_cap_s:
                            status = "timeout"
                            break
                    table.append({
                        **cell, "status": status, "predicted_nodes": size, "seeds_run": len(times),
                        "mean_time_simplified_s": float(np.mean(times)) if times else math.nan,
                        "mean_time_exact_s": float(np.mean(times_exact)) if times else math.nan,
                        "median_density_ratio": float(np.median(ratios)) if ratios else math.nan,
                        "all_agree": agree_all if times else "",
                    })
    res = ExperimentResult(cfg, {"plan_bench_runs": runs, "plan_bench_levels": levels},
                           {"plan_bench_timing": table})
    if out_dir is not None:
        res.write(out_dir)
    return res


def _builder_kwargs(builder, world, rollouts):
    if builder == "pomcp":
        return {"rollouts": rollouts}
    if builder == "despot":
        return {"n_obs": world.n_obs}
    return {}


def bench_tree(world: BeaconWorldConfig, builder: str, n: int, horizon: int, seed: int, rollouts: int = 5):
    """The tree a plan-bench cell plans on for ``seed``."""
    prior_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(4,)))
    root = world.prior(prior_rng, n)
    kwargs = _builder_kwargs(builder, world, rollouts)
    return build_tree(builder, root, world.action_vectors(), horizon, world.models(), _tree_rng(seed), **kwargs)


def _bench_session(world, builder, n, horizon, seed, schedule, rollouts):
    models = world.models()
    tree = bench_tree(world, builder, n, horizon, seed, rollouts)
    simp = SimplifiedPlanner(tree, models, world.goal, schedule, seed).solve()
    exact = exact_objective(tree, models, world.goal)
    row = {
        "nodes": len(tree),
        "action": simp.action, "exact_action": exact.action, "agree": simp.action == exact.action,
        "lower": simp.bounds.lower, "upper": simp.bounds.upper, "exact_value": exact.value,
        "brackets": simp.bounds.contains(exact.value, 1e-9),
        "pruned": len(simp.pruned), "escalations": simp.stats.escalations,
        "simplified_transition_evals": simp.counter.transition,
        "simplified_observation_evals": simp.counter.observation,
        "exact_transition_evals": exact.counter.transition,
        "exact_observation_evals": exact.counter.observation,
        "density_ratio": simp.counter.total / exact.counter.total,
    }
    hist = [{"depth": d, "level": s, "count": c, "fraction": c / max(sum(counts), 1)}
            for d, counts in simp.histogram.items() for s, c in enumerate(counts)]
    return row, hist, simp.wall_time, exact.wall_time


# receding-horizon runs

def run_receding(cfg: RunConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Closed-loop runs; per-step actions, level histograms and belief snapshots."""
    h = config_hash(cfg)
    schedule = cfg.simplification()
    traj, hist_rows, snaps, summary, timing = [], [], [], [], []
    for builder in cfg.builders:
        for wname, world in sorted(cfg.worlds.items()):
            for n in cfg.n_particles:
                w = dataclasses.replace(world, n_particles=n)
                for horizon in cfg.horizons[builder]:
                    for seed in cfg.seeds:
                        base = {"config_sha256": h, "builder": builder, "world": wname, "n": n,
                                "horizon": horizon, "seed": seed}
                        kwargs = _builder_kwargs(builder, w, cfg.rollouts)
                        trace = receding_horizon_run(w, builder, schedule, steps=cfg.steps, seed=seed,
                                                     compare_exact=cfg.compare_exact, goal_radius=cfg.goal_radius,
                                                     horizon=horizon, **kwargs)
                        summary.append({**base, "steps_taken": len(trace.steps), "reached_goal": trace.reached_goal,
                                        "final_x": trace.final_state[0], "final_y": trace.final_state[1]})
                        for st in trace.steps:
                            row = {**base, "step": st.step, "action": st.action,
                                   "action_name": w.actions[st.action],
                                   "exact_action": "" if st.exact_action is None else st.exact_action,
                                   "agree": "" if st.exact_action is None else st.action == st.exact_action,
                                   "true_x": st.true_state[0], "true_y": st.true_state[1],
                                   "mean_x": st.belief_mean[0], "mean_y": st.belief_mean[1],
                                   "ess": st.ess, "resampled": st.resampled,
                                   "lower": st.bounds.lower, "upper": st.bounds.upper,
                                   "simplified_evals": st.counter.total,
                                   "exact_evals": "" if st.exact_counter is None else st.exact_counter.total}
                            traj.append(row)
                            timing.append({**base, "step": st.step, "simplified_s": st.wall_time,
                                           "exact_s": "" if st.exact_wall_time is None else st.exact_wall_time,
                                           "simplified_evals": row["simplified_evals"],
                                           "exact_evals": row["exact_evals"]})
                            for d, counts in st.histogram.items():
                                total = sum(counts)
                                for s, c in enumerate(counts):
                                    hist_rows.append({**base, "step": st.step, "depth": d, "level": s,
                                                      "count": c, "fraction": c / total if total else 0.0})
                            if cfg.snapshots:
                                for i, (p, wt) in enumerate(zip(st.particles, st.weights)):
                                    snaps.append({**base, "step": st.step, "particle": i,
                                                  "x": p[0], "y": p[1], "weight": wt})
    tables = {"receding_trajectory": traj, "receding_levels": hist_rows, "receding_summary": summary}
    if cfg.snapshots:
        tables["receding_snapshots"] = snaps
    res = ExperimentResult(cfg, tables, {"receding_timing": timing})
    if out_dir is not None:
        res.write(out_dir)
    return res


RUNNERS = {
    "entropy-study": run_entropy_study,
    "plan-bench": run_plan_bench,
    "receding-run": run_receding,
}


def level_distribution(rows: list[dict], finest: int) -> dict[int, np.ndarray]:
    """Aggregate ``receding_levels`` or ``plan_bench_levels`` rows into per-depth level fractions."""
    acc: dict[int, np.ndarray] = {}
    for r in rows:
        acc.setdefault(int(r["depth"]), np.zeros(finest + 1))[int(r["level"])] += r["count"]
    return {d: v / v.sum() for d, v in sorted(acc.items()) if v.sum() > 0}
