"""Batch experiment runner: seeded figure/table reproductions with CSV output.

All dB <-> linear conversions live here; the core modules work in linear
watts against unit noise power. Every experiment is deterministic given the
root seed: user drops, fading trials and search evaluations derive their
streams from (seed, purpose tag, indices), so re-running a spec (or the
manifest it wrote) reproduces the output files byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .allocation import (
    downlink_alloc,
    equal_alloc,
    relative_gain,
    uplink_alloc_approx,
    uplink_alloc_lower_bound,
    uplink_alloc_upper_bound,
)
from .closedform import (
    downlink_lower_bound,
    downlink_profile,
    uplink_approximation,
    uplink_lower_bound,
    uplink_profile,
    uplink_upper_bound,
)
from .mcrate import PowerAllocation, downlink_rate_mc, uplink_rate_mc
from .network import network_sum_rate, run_joint, run_scheduled
from .topology import NetworkConfig, build_topology

_MASK64 = (1 << 64) - 1
EDGE_SPLIT_FACTOR = 0.8  # users beyond this fraction of the cell radius are "edge"

# stream tags for seed derivation
_TAG_DROP, _TAG_MC, _TAG_SLOT, _TAG_GAIN = 1, 2, 3, 4

KINDS = (
    "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8",
    "fig10", "fig11", "fig12", "table2", "table3a", "table3b", "custom",
)
_TABLE_KINDS = ("table2", "table3a", "table3b")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    if not x > 0:
        raise ValueError("only positive linear values have a dB representation")
    return 10.0 * np.log10(x)


def derive_seed(root: int, *parts: int) -> int:
    """Deterministic child seed for a (purpose, indices...) tuple."""
    entropy = [root & _MASK64] + [int(p) & _MASK64 for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# experiment specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0:
            raise ValueError("sweep.values must be non-empty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("sweep.values must be strictly increasing")
        object.__setattr__(self, "values", vals)


_KIND_DEFAULTS = {
    # kind: (sweep variable, sweep values, options)
    "fig2": ("bsAntennas", [20, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500],
             {"powersDb": [20, 30], "interfererUserPowerDb": 10,
              "estimators": ["mc", "lower", "upper", "approx"]}),
    "fig3": ("powerDb", [0, 5, 10, 15, 20, 25, 30],
             {"interfererUserPowerDb": 10,
              "estimators": ["mc", "lower", "upper", "approx"]}),
    "fig4": ("bsAntennas", [20, 50, 100, 150, 200, 300, 400, 500],
             {"powerDb": 20, "interfererUserPowerDb": 10, "evaluator": "approx",
              "scenarios": ["multicell", "singlecell"]}),
    "fig5": ("bsAntennas", [20, 50, 100, 150, 200, 300, 400, 500],
             {"powerDb": 20, "interfererUserPowerDb": 10, "evaluator": "approx",
              "scenarios": ["multicell", "singlecell"]}),
    "fig6": ("usersPerCell", [4, 8, 12, 16, 20],
             {"ratios": [2, 5, 10], "powerDb": 20, "interfererUserPowerDb": 10}),
    "fig7": ("ratio", [2, 4, 6, 8, 10, 14, 18, 22, 26, 30],
             {"powersDb": [10, 15, 20, 25], "interfererUserPowerDb": 10}),
    "fig8": ("bsAntennas", [20, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500],
             {"powersDb": [40, 50], "interfererCellPowerDb": 30, "estimators": ["mc", "lower"]}),
    "fig10": ("bsAntennas", [20, 50, 100, 150, 200, 300, 400, 500],
              {"powerDb": 40, "interfererCellPowerDb": 30}),
    "fig11": ("bsAntennas", [20, 50, 100, 150, 200, 300, 400, 500],
              {"powerDb": 40, "interfererCellPowerDb": 30}),
    "fig12": ("slot", list(range(1, 13)),
              {"powerW": 50.0, "initialUserPowerDb": 10, "estimator": "closedForm",
               "jointMaxIters": 800, "jointTolerance": 1e-10}),
    # table kinds bisect inside [sweep.values[0], sweep.values[-1]]
    "table2": ("ratio", [2, 120],
               {"powersDb": [10, 15, 20, 25], "thresholds": [0.10, 0.20],
                "interfererUserPowerDb": 10}),
    "table3a": ("bsAntennas", [6, 2000],
                {"usersList": [5, 10, 20], "powersDb": [35, 40, 45],
                 "thresholds": [0.10, 0.20], "interfererCellPowerDb": 30}),
    "table3b": ("usersPerCell", [1, 45],
                {"antennasList": [50, 100, 200], "powersDb": [35, 40, 45],
                 "thresholds": [0.10, 0.20], "interfererCellPowerDb": 30}),
    "custom": ("bsAntennas", [20, 100, 500],
               {"direction": "uplink", "powerDb": 20, "interfererUserPowerDb": 10,
                "interfererCellPowerDb": 30, "estimators": ["mc", "approx"]}),
}


_KIND_SWEEP_VARS = {
    "fig2": ("bsAntennas",), "fig3": ("powerDb",), "fig4": ("bsAntennas",),
    "fig5": ("bsAntennas",), "fig6": ("usersPerCell",), "fig7": ("ratio",),
    "fig8": ("bsAntennas",), "fig10": ("bsAntennas",), "fig11": ("bsAntennas",),
    "fig12": ("slot",), "table2": ("ratio",), "table3a": ("bsAntennas",),
    "table3b": ("usersPerCell",), "custom": ("bsAntennas", "powerDb"),
}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    network: NetworkConfig
    sweep: SweepSpec
    trials: int = 10_000
    drops: int = 50
    output: str = "out"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        allowed = _KIND_SWEEP_VARS[self.kind]
        if self.sweep.variable not in allowed:
            raise ValueError(
                f"kind {self.kind!r} sweeps over {' or '.join(allowed)}, "
                f"not {self.sweep.variable!r}"
            )
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.drops < 1:
            raise ValueError("drops must be >= 1")

    @classmethod
    def from_dict(cls, data: dict, overrides: dict | None = None) -> "ExperimentSpec":
        data = dict(data)
        if "spec" in data:  # manifest round-trip: accept a manifest document
            data = dict(data["spec"])
        if "kind" not in data:
            raise ValueError("experiment spec needs a 'kind' field")
        kind = data["kind"]
        if kind not in _KIND_DEFAULTS:
            raise ValueError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
        if "network" not in data:
            raise ValueError("experiment spec needs a 'network' field")
        overrides = overrides or {}
        network = NetworkConfig.from_json(data["network"])
        if "seed" in overrides and overrides["seed"] is not None:
            network = replace(network, seed=int(overrides["seed"]))
        default_var, default_vals, default_opts = _KIND_DEFAULTS[kind]
        sweep_raw = data.get("sweep") or {"variable": default_var, "values": default_vals}
        sweep = SweepSpec(sweep_raw["variable"], sweep_raw["values"])
        options = dict(default_opts)
        options.update(data.get("options") or {})
        known = {"kind", "network", "sweep", "trials", "drops", "output", "options", "spec"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown experiment spec keys: {unknown}")
        return cls(
            kind=kind,
            network=network,
            sweep=sweep,
            trials=int(overrides.get("trials") or data.get("trials", 10_000)),
            drops=int(overrides.get("drops") or data.get("drops", 50)),
            output=str(overrides.get("out") or data.get("output", "out")),
            options=options,
        )

    @classmethod
    def from_json(cls, path, overrides: dict | None = None) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()), overrides)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "network": self.network.to_json(),
            "sweep": {"variable": self.sweep.variable, "values": list(self.sweep.values)},
            "trials": self.trials,
            "drops": self.drops,
            "output": self.output,
            "options": self.options,
        }


# ---------------------------------------------------------------------------
# shared evaluation helpers
# ---------------------------------------------------------------------------

def _fixed_allocs(n_cells, n_users, direction, user_power=None, cell_power=None):
    p = user_power if direction == "uplink" else cell_power / n_users
    return [PowerAllocation(np.full(n_users, float(p)), direction) for _ in range(n_cells)]


def _uplink_cell_value(top, allocations, target, estimator, trials, mc_seed):
    """(sum rate, within-drop CI) of one cell under one estimator."""
    cfg = top.config
    if estimator == "mc":
        est = uplink_rate_mc(top, allocations, target, trials, mc_seed)
        return est.sum_rate, float(est.ci_half_width.sum())
    prof = uplink_profile(top, allocations, target)
    fn = {"lower": uplink_lower_bound, "upper": uplink_upper_bound, "approx": uplink_approximation}
    rates = fn[estimator](prof, cfg.bs_antennas, cfg.users_per_cell, allocations[target].powers)
    return float(rates.sum()), 0.0


def _downlink_cell_value(top, allocations, target, estimator, trials, mc_seed):
    cfg = top.config
    if estimator == "mc":
        est = downlink_rate_mc(top, allocations, target, trials, mc_seed)
        return est.sum_rate, float(est.ci_half_width.sum())
    if estimator != "lower":
        raise ValueError(f"downlink estimators are 'mc' and 'lower', got {estimator!r}")
    prof = downlink_profile(top, allocations, target)
    rates = downlink_lower_bound(prof, cfg.bs_antennas, cfg.users_per_cell,
                                 allocations[target].powers)
    return float(rates.sum()), 0.0


_UPLINK_STRATEGIES = {
    "lower": uplink_alloc_lower_bound,
    "upper": uplink_alloc_upper_bound,
    "approx": uplink_alloc_approx,
}


def _drop_topology(spec: ExperimentSpec, drop: int, *, users=None, antennas=None, cells=None):
    cfg = spec.network
    root = cfg.seed
    extra = [] if users is None else [int(users)]
    cfg = replace(
        cfg,
        seed=derive_seed(root, _TAG_DROP, drop, *extra),
        users_per_cell=users or cfg.users_per_cell,
        bs_antennas=antennas or cfg.bs_antennas,
        cell_count=cells or cfg.cell_count,
    )
    return build_topology(cfg)


# ---------------------------------------------------------------------------
# per-kind job runners: payload {"xIndex": i, "drop": d} -> records
# ---------------------------------------------------------------------------

def _job_equal_power(spec: ExperimentSpec, job: dict) -> list[dict]:
    """Equal-power rate curves (fig2, fig3, fig8, custom)."""
    i, d = job["xIndex"], job["drop"]
    x = spec.sweep.values[i]
    opts = spec.options
    direction = opts.get("direction", "downlink" if spec.kind == "fig8" else "uplink")
    estimators = opts["estimators"]

    sweep_m = spec.sweep.variable == "bsAntennas"
    m = int(x) if sweep_m else spec.network.bs_antennas
    top = _drop_topology(spec, d, antennas=m)
    n = top.n_users

    if "powersDb" in opts and spec.sweep.variable != "powerDb":
        panels = [(f"P{num:g}dB", db_to_linear(num)) for num in opts["powersDb"]]
    elif spec.sweep.variable == "powerDb":
        panels = [("", db_to_linear(x))]
    else:
        panels = [("", db_to_linear(opts.get("powerDb", 20)))]

    records = []
    for pi, (panel, p_lin) in enumerate(panels):
        if direction == "uplink":
            allocs = _fixed_allocs(top.n_cells, n, "uplink",
                                   user_power=db_to_linear(opts["interfererUserPowerDb"]))
        else:
            allocs = _fixed_allocs(top.n_cells, n, "downlink",
                                   cell_power=db_to_linear(opts["interfererCellPowerDb"]))
        allocs[0] = equal_alloc(n, p_lin, direction)
        for est in estimators:
            mc_seed = derive_seed(spec.network.seed, _TAG_MC, d, i, pi)
            cell_value = _uplink_cell_value if direction == "uplink" else _downlink_cell_value
            value, ci = cell_value(top, allocs, 0, est, spec.trials, mc_seed)
            records.append({"panel": panel, "label": est, "x": x, "value": value, "ci": ci})
    return records


def _job_strategies(spec: ExperimentSpec, job: dict) -> list[dict]:
    """Per-strategy sum rates (fig4) or relative gains (fig5)."""
    i, d = job["xIndex"], job["drop"]
    m = int(spec.sweep.values[i])
    opts = spec.options
    p_lin = db_to_linear(opts["powerDb"])
    evaluator = opts["evaluator"]

    records = []
    for panel in opts["scenarios"]:
        cells = 1 if panel == "singlecell" else None
        top = _drop_topology(spec, d, antennas=m, cells=cells)
        n = top.n_users
        allocs = _fixed_allocs(top.n_cells, n, "uplink",
                               user_power=db_to_linear(opts["interfererUserPowerDb"]))
        mc_seed = derive_seed(spec.network.seed, _TAG_MC, d, i, 0 if cells is None else 1)

        base = list(allocs)
        base[0] = equal_alloc(n, p_lin)
        eq_value, eq_ci = _uplink_cell_value(top, base, 0, evaluator, spec.trials, mc_seed)

        for name, strategy in _UPLINK_STRATEGIES.items():
            cand = list(allocs)
            cand[0] = strategy(top, allocs, 0, m, n, p_lin)
            value, ci = _uplink_cell_value(top, cand, 0, evaluator, spec.trials, mc_seed)
            if spec.kind == "fig5":
                records.append({"panel": panel, "label": name, "x": m,
                                "value": relative_gain(value, eq_value), "ci": 0.0})
            else:
                records.append({"panel": panel, "label": name, "x": m, "value": value, "ci": ci})
        if spec.kind == "fig4":
            records.append({"panel": panel, "label": "equal", "x": m,
                            "value": eq_value, "ci": eq_ci})
    return records


def _job_fixed_ratio(spec: ExperimentSpec, job: dict) -> list[dict]:
    """Sum rate with M and N scaled together at fixed M/N (fig6)."""
    i, d = job["xIndex"], job["drop"]
    n = int(spec.sweep.values[i])
    opts = spec.options
    p_lin = db_to_linear(opts["powerDb"])
    records = []
    for ratio in opts["ratios"]:
        m = int(ratio) * n
        top = _drop_topology(spec, d, users=n, antennas=m)
        allocs = _fixed_allocs(top.n_cells, n, "uplink",
                               user_power=db_to_linear(opts["interfererUserPowerDb"]))
        pa = list(allocs)
        pa[0] = uplink_alloc_approx(top, allocs, 0, m, n, p_lin)
        eq = list(allocs)
        eq[0] = equal_alloc(n, p_lin)
        v_pa, _ = _uplink_cell_value(top, pa, 0, "approx", spec.trials, 0)
        v_eq, _ = _uplink_cell_value(top, eq, 0, "approx", spec.trials, 0)
        panel = f"ratio{int(ratio)}"
        records.append({"panel": panel, "label": "pa", "x": m, "value": v_pa, "ci": 0.0})
        records.append({"panel": panel, "label": "eq", "x": m, "value": v_eq, "ci": 0.0})
    return records


def _uplink_gain_drop(base: NetworkConfig, m, n, p_lin, interferer_user_power, drop_seed) -> float:
    cfg = replace(base, users_per_cell=n, bs_antennas=m, seed=drop_seed)
    top = build_topology(cfg)
    allocs = _fixed_allocs(top.n_cells, n, "uplink", user_power=interferer_user_power)
    pa = list(allocs)
    pa[0] = uplink_alloc_approx(top, allocs, 0, m, n, p_lin)
    prof = uplink_profile(top, allocs, 0)
    c_pa = float(uplink_approximation(prof, m, n, pa[0].powers).sum())
    c_eq = float(uplink_approximation(prof, m, n, equal_alloc(n, p_lin).powers).sum())
    return relative_gain(c_pa, c_eq)


def _downlink_gain_drop(base, m, n, p_lin, interferer_cell_power, drop_seed,
                        edge_only=True, split=EDGE_SPLIT_FACTOR):
    cfg = replace(base, users_per_cell=n, bs_antennas=m, seed=drop_seed)
    top = build_topology(cfg)
    allocs = _fixed_allocs(top.n_cells, n, "downlink", cell_power=interferer_cell_power)
    alloc = downlink_alloc(top, allocs, 0, m, n, p_lin)
    prof = downlink_profile(top, allocs, 0)
    r_pa = downlink_lower_bound(prof, m, n, alloc.powers)
    r_eq = downlink_lower_bound(prof, m, n, equal_alloc(n, p_lin, "downlink").powers)
    if edge_only:
        mask = top.user_distances(0) > split * cfg.cell_radius
        if not mask.any():
            return None
        r_pa, r_eq = r_pa[mask], r_eq[mask]
    return relative_gain(float(r_pa.sum()), float(r_eq.sum()))


def _job_gain_vs_ratio(spec: ExperimentSpec, job: dict) -> list[dict]:
    """Relative gain against the antennas-per-user ratio (fig7)."""
    i, d = job["xIndex"], job["drop"]
    ratio = int(spec.sweep.values[i])
    opts = spec.options
    n = spec.network.users_per_cell
    drop_seed = derive_seed(spec.network.seed, _TAG_DROP, d)
    records = []
    for p_db in opts["powersDb"]:
        gain = _uplink_gain_drop(spec.network, ratio * n, n, db_to_linear(p_db),
                                 db_to_linear(opts["interfererUserPowerDb"]), drop_seed)
        records.append({"panel": f"P{p_db:g}dB", "label": "gain", "x": ratio,
                        "value": gain, "ci": 0.0})
    return records


def _job_downlink_split(spec: ExperimentSpec, job: dict) -> list[dict]:
    """Central/edge user sums (fig10) or gains (fig11) on the downlink."""
    i, d = job["xIndex"], job["drop"]
    m = int(spec.sweep.values[i])
    opts = spec.options
    p_lin = db_to_linear(opts["powerDb"])
    top = _drop_topology(spec, d, antennas=m)
    cfg = top.config
    n = top.n_users
    allocs = _fixed_allocs(top.n_cells, n, "downlink",
                           cell_power=db_to_linear(opts["interfererCellPowerDb"]))
    alloc = downlink_alloc(top, allocs, 0, m, n, p_lin)
    prof = downlink_profile(top, allocs, 0)
    r_pa = downlink_lower_bound(prof, m, n, alloc.powers)
    r_eq = downlink_lower_bound(prof, m, n, equal_alloc(n, p_lin, "downlink").powers)
    edge = top.user_distances(0) > EDGE_SPLIT_FACTOR * cfg.cell_radius

    records = []
    for cls, mask in (("central", ~edge), ("edge", edge)):
        if not mask.any():
            continue
        if spec.kind == "fig11":
            records.append({"panel": "", "label": cls, "x": m,
                            "value": relative_gain(float(r_pa[mask].sum()),
                                                   float(r_eq[mask].sum())), "ci": 0.0})
        else:
            records.append({"panel": cls, "label": "pa", "x": m,
                            "value": float(r_pa[mask].sum()), "ci": 0.0})
            records.append({"panel": cls, "label": "eq", "x": m,
                            "value": float(r_eq[mask].sum()), "ci": 0.0})
    return records


def _job_network_slots(spec: ExperimentSpec, job: dict) -> list[dict]:
    """Scheduled vs joint vs equal network sum rate per slot (fig12)."""
    s = job["drop"]
    opts = spec.options
    budget = float(opts["powerW"])
    initial = db_to_linear(opts["initialUserPowerDb"])
    estimator = "monteCarlo" if opts["estimator"] == "monteCarlo" else "closedForm"
    top = _drop_topology(spec, s)
    n = top.n_users
    slots = [int(v) for v in spec.sweep.values]

    sched = run_scheduled(top, uplink_alloc_approx, budget, initial, max(slots),
                          rate_estimator=estimator, trials=spec.trials,
                          seed=derive_seed(spec.network.seed, _TAG_SLOT, s))
    joint = run_joint(top, budget, max_iters=int(opts["jointMaxIters"]),
                      tolerance=float(opts["jointTolerance"]))
    eq_allocs = [equal_alloc(n, budget) for _ in range(top.n_cells)]
    mc_seed = derive_seed(spec.network.seed, _TAG_MC, s)
    joint_value = (network_sum_rate(top, joint.per_cell_powers, estimator, spec.trials, mc_seed)
                   if estimator == "monteCarlo" else joint.objective)
    eq_value = network_sum_rate(top, eq_allocs, estimator, spec.trials, mc_seed)

    records = []
    for slot in slots:
        records.append({"panel": "", "label": "scheduled", "x": slot,
                        "value": sched.history[slot - 1], "ci": 0.0})
        records.append({"panel": "", "label": "joint", "x": slot, "value": joint_value, "ci": 0.0})
        records.append({"panel": "", "label": "equal", "x": slot, "value": eq_value, "ci": 0.0})
    return records


_JOB_RUNNERS = {
    "fig2": _job_equal_power,
    "fig3": _job_equal_power,
    "fig8": _job_equal_power,
    "custom": _job_equal_power,
    "fig4": _job_strategies,
    "fig5": _job_strategies,
    "fig6": _job_fixed_ratio,
    "fig7": _job_gain_vs_ratio,
    "fig10": _job_downlink_split,
    "fig11": _job_downlink_split,
    "fig12": _job_network_slots,
}


def _plan_jobs(spec: ExperimentSpec) -> list[dict]:
    if spec.kind == "fig12":
        return [{"drop": s} for s in range(spec.drops)]
    return [
        {"xIndex": i, "drop": d}
        for i in range(len(spec.sweep.values))
        for d in range(spec.drops)
    ]


def _run_payload(payload: dict) -> list[dict]:
    spec = ExperimentSpec.from_dict(payload["spec"])
    return _JOB_RUNNERS[spec.kind](spec, payload["job"])


# ---------------------------------------------------------------------------
# threshold search (tables)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GainThresholdQuery:
    """Search for the largest system size still meeting a gain threshold."""

    direction: str
    threshold: float
    power_db: float
    search_range: tuple
    mode: str = "maxRatio"  # maxRatio | maxAntennas | minUsers
    fixed_users: int | None = None
    fixed_antennas: int | None = None
    drops: int = 20
    interferer_power_db: float | None = None
    edge_only: bool | None = None

    def __post_init__(self):
        if self.direction not in ("uplink", "downlink"):
            raise ValueError("direction must be 'uplink' or 'downlink'")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.mode not in ("maxRatio", "maxAntennas", "minUsers"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        lo, hi = (int(v) for v in self.search_range)
        if lo > hi:
            raise ValueError("searchRange must be [lo, hi] with lo <= hi")
        object.__setattr__(self, "search_range", (lo, hi))

    @classmethod
    def from_dict(cls, data: dict) -> "GainThresholdQuery":
        mapping = {
            "direction": "direction", "threshold": "threshold", "power": "power_db",
            "searchRange": "search_range", "mode": "mode", "fixedUsers": "fixed_users",
            "fixedAntennas": "fixed_antennas", "drops": "drops",
            "interfererPowerDb": "interferer_power_db", "edgeOnly": "edge_only",
        }
        unknown = sorted(set(data) - set(mapping))
        if unknown:
            raise ValueError(f"unknown query keys: {unknown}")
        return cls(**{mapping[k]: v for k, v in data.items()})


def find_max_ratio(query: GainThresholdQuery, base: NetworkConfig, seed: int | None = None):
    """Largest M/N ratio (or M, or smallest N) whose relative gain meets the
    threshold, by monotone integer bisection with drop averaging.

    Returns (value, at_boundary); ``at_boundary`` is True when the answer is
    pinned by the search range (the threshold was met nowhere, or everywhere).
    """
    root = base.seed if seed is None else seed
    lo, hi = query.search_range
    n0 = query.fixed_users or base.users_per_cell
    m0 = query.fixed_antennas or base.bs_antennas
    if query.mode == "maxRatio":
        lo = max(lo, 2)  # ratio 1 means M = N, where ZF allocation is undefined
    elif query.mode == "maxAntennas":
        lo = max(lo, n0 + 1)
    else:
        hi = min(hi, m0 - 1)
    if lo > hi:
        raise ValueError("search range is empty after feasibility clamping")

    edge_only = query.edge_only
    if edge_only is None:
        edge_only = query.direction == "downlink"
    p_lin = db_to_linear(query.power_db)
    interferer_db = query.interferer_power_db
    if interferer_db is None:
        interferer_db = 10.0 if query.direction == "uplink" else 30.0
    interferer_lin = db_to_linear(interferer_db)

    cache: dict[int, float] = {}

    def gain(x: int) -> float:
        if x not in cache:
            vals = []
            for d in range(query.drops):
                drop_seed = derive_seed(root, _TAG_GAIN, d)
                if query.mode == "maxRatio":
                    m, n = x * n0, n0
                elif query.mode == "maxAntennas":
                    m, n = x, n0
                else:
                    m, n = m0, x
                if query.direction == "uplink":
                    g = _uplink_gain_drop(base, m, n, p_lin, interferer_lin, drop_seed)
                else:
                    g = _downlink_gain_drop(base, m, n, p_lin, interferer_lin, drop_seed,
                                            edge_only=edge_only)
                if g is not None:
                    vals.append(g)
            cache[x] = float(np.mean(vals)) if vals else float("nan")
        return cache[x]

    th = query.threshold
    if query.mode in ("maxRatio", "maxAntennas"):  # gain decreases with x
        if gain(lo) < th:
            return lo, True
        if gain(hi) >= th:
            return hi, True
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if gain(mid) >= th:
                lo = mid
            else:
                hi = mid
        return lo, False
    # minUsers: gain increases with N
    if gain(hi) < th:
        return hi, True
    if gain(lo) >= th:
        return lo, True
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if gain(mid) >= th:
            hi = mid
        else:
            lo = mid
    return hi, False


def _run_tables(spec: ExperimentSpec) -> tuple[list[str], list[list]]:
    opts = spec.options
    lo, hi = int(spec.sweep.values[0]), int(spec.sweep.values[-1])
    rows = []
    if spec.kind == "table2":
        header = ["powerDb", "threshold", "maxRatio", "atBoundary"]
        for p_db in opts["powersDb"]:
            for th in opts["thresholds"]:
                q = GainThresholdQuery("uplink", th, p_db, (lo, hi), "maxRatio",
                                       drops=spec.drops,
                                       interferer_power_db=opts.get("interfererUserPowerDb"))
                value, boundary = find_max_ratio(q, spec.network)
                rows.append([p_db, th, value, boundary])
    elif spec.kind == "table3a":
        header = ["users", "threshold", "powerDb", "maxAntennas", "atBoundary"]
        for n in opts["usersList"]:
            for th in opts["thresholds"]:
                for p_db in opts["powersDb"]:
                    q = GainThresholdQuery("downlink", th, p_db, (lo, hi), "maxAntennas",
                                           fixed_users=int(n), drops=spec.drops,
                                           interferer_power_db=opts.get("interfererCellPowerDb"))
                    value, boundary = find_max_ratio(q, spec.network)
                    rows.append([n, th, p_db, value, boundary])
    else:
        header = ["antennas", "threshold", "powerDb", "minUsers", "atBoundary"]
        for m in opts["antennasList"]:
            for th in opts["thresholds"]:
                for p_db in opts["powersDb"]:
                    q = GainThresholdQuery("downlink", th, p_db, (lo, hi), "minUsers",
                                           fixed_antennas=int(m), drops=spec.drops,
                                           interferer_power_db=opts.get("interfererCellPowerDb"))
                    value, boundary = find_max_ratio(q, spec.network)
                    rows.append([m, th, p_db, value, boundary])
    return header, rows


# ---------------------------------------------------------------------------
# experiment driver and outputs
# ---------------------------------------------------------------------------

def _sanitize(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]", "-", name)


def _curve_filename(kind: str, panel: str, label: str) -> str:
    parts = [kind] + ([_sanitize(panel)] if panel else []) + [_sanitize(label)]
    return "__".join(parts) + ".csv"


def _aggregate(records: list[dict]) -> dict:
    """Group records into curves: (panel, label) -> sorted (x, mean, ci)."""
    z95 = NormalDist().inv_cdf(0.975)
    buckets: dict = {}
    for rec in records:
        buckets.setdefault((rec["panel"], rec["label"]), {}).setdefault(
            float(rec["x"]), []
        ).append((rec["value"], rec["ci"]))
    curves = {}
    for key, by_x in buckets.items():
        rows = []
        for x in sorted(by_x):
            samples = by_x[x]
            vals = np.array([v for v, _ in samples])
            if len(samples) > 1:
                ci = float(z95 * vals.std(ddof=1) / np.sqrt(len(samples)))
            else:
                ci = float(samples[0][1])
            rows.append((x, float(vals.mean()), ci))
        curves[key] = rows
    return curves


def _manifest_notes(spec: ExperimentSpec) -> dict:
    notes = {
        "averaging": "per point: mean over user drops; fading expectation within each drop",
        "unitNoisePower": True,
    }
    if spec.kind in ("fig8", "fig10", "fig11", "table3a", "table3b") or (
        spec.kind == "custom" and spec.options.get("direction") == "downlink"
    ):
        notes["downlinkInterfererPower"] = "per-cell total, split equally across users"
    if spec.kind in ("fig10", "fig11", "table3a", "table3b"):
        notes["edgeSplitRadiusFactor"] = EDGE_SPLIT_FACTOR
    if spec.kind == "fig12":
        notes["sumRateMethod"] = spec.options["estimator"]
    return notes


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> Path:
    """Run one experiment spec and write CSV curves plus a manifest.

    Returns the output directory. Deterministic for a fixed spec: rerunning
    (including from the manifest it wrote) reproduces identical bytes.
    """
    outdir = Path(spec.output)
    outdir.mkdir(parents=True, exist_ok=True)
    spec_dict = spec.to_dict()
    # the output directory is not an input to the computation: two runs that
    # differ only in destination carry the same content hash
    hashed = {k: v for k, v in spec_dict.items() if k != "output"}
    manifest = {
        "spec": spec_dict,
        "seed": spec.network.seed,
        "inputHash": hashlib.sha256(
            json.dumps(hashed, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest(),
        "notes": _manifest_notes(spec),
    }

    if spec.kind in _TABLE_KINDS:
        header, rows = _run_tables(spec)
        table_file = f"{spec.kind}.csv"
        with open(outdir / table_file, "w", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(str(v) for v in row) + "\n")
        manifest["tables"] = [table_file]
    else:
        payloads = [{"spec": spec_dict, "job": job} for job in _plan_jobs(spec)]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                chunks = list(pool.map(_run_payload, payloads))
        else:
            chunks = [_run_payload(p) for p in payloads]
        records = [rec for chunk in chunks for rec in chunk]
        curves = _aggregate(records)
        manifest["curves"] = []
        for (panel, label) in sorted(curves):
            fname = _curve_filename(spec.kind, panel, label)
            with open(outdir / fname, "w", newline="") as fh:
                fh.write("x,mean,ciHalfWidth\n")
                for x, mean, ci in curves[(panel, label)]:
                    fh.write(f"{x:.12g},{mean:.12g},{ci:.12g}\n")
            manifest["curves"].append({"panel": panel, "label": label, "file": fname})

    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return outdir


_AXIS_LABELS = {
    "bsAntennas": "BS antennas",
    "powerDb": "total transmit power (dB)",
    "usersPerCell": "BS antennas",  # fig6 reports x = M = ratio * N
    "ratio": "antennas per user M/N",
    "slot": "time slot",
}


def emit_plot_data(directory) -> Path:
    """Turn an experiment's manifest + CSVs into one plot-description JSON."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ValueError(f"no manifest.json in {directory}")
    manifest = json.loads(manifest_path.read_text())
    spec = manifest["spec"]

    doc = {
        "kind": spec["kind"],
        "xLabel": _AXIS_LABELS.get(spec["sweep"]["variable"], spec["sweep"]["variable"]),
        "yLabel": "relative gain" if spec["kind"] in ("fig5", "fig7", "fig11")
                  else "sum rate (bits/s/Hz)",
        "panels": [],
    }
    panels: dict[str, list] = {}
    for curve in manifest.get("curves", []):
        path = directory / curve["file"]
        lines = path.read_text().strip().splitlines()
        if not lines or lines[0].split(",") != ["x", "mean", "ciHalfWidth"]:
            raise ValueError(f"{curve['file']}: expected header 'x,mean,ciHalfWidth'")
        if len(lines) < 2:
            raise ValueError(f"{curve['file']}: no data rows")
        xs, ys, cis = [], [], []
        for line in lines[1:]:
            x, y, ci = line.split(",")
            xs.append(float(x))
            ys.append(float(y))
            cis.append(float(ci))
        panels.setdefault(curve["panel"], []).append(
            {"label": curve["label"], "file": curve["file"], "x": xs, "y": ys,
             "ciHalfWidth": cis}
        )
    if not panels and "tables" not in manifest:
        raise ValueError("manifest lists no curves or tables")
    for name in sorted(panels):
        doc["panels"].append({"name": name, "series": panels[name]})
    if "tables" in manifest:
        doc["tables"] = manifest["tables"]

    out = directory / "plotdata.json"
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mcmimo",
        description="Multicell massive-MIMO sum-rate experiments (CSV + manifest outputs).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment spec (or a manifest) JSON file")
    p_run.add_argument("spec", help="path to the experiment spec JSON")
    p_run.add_argument("--seed", type=int, default=None, help="override the network seed")
    p_run.add_argument("--trials", type=int, default=None, help="override Monte Carlo trials")
    p_run.add_argument("--drops", type=int, default=None, help="override user-drop count")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_run.add_argument("--out", default=None, help="override the output directory")

    p_table = sub.add_parser("table", help="answer one gain-threshold query JSON file")
    p_table.add_argument("query", help="path to the query JSON (with a 'network' section)")
    p_table.add_argument("--seed", type=int, default=None)
    p_table.add_argument("--drops", type=int, default=None)
    p_table.add_argument("--out", default=None, help="also append the result to this CSV file")

    p_plot = sub.add_parser("plotdata", help="emit plotdata.json for an output directory")
    p_plot.add_argument("directory")

    args = parser.parse_args(argv)

    if args.command == "run":
        overrides = {"seed": args.seed, "trials": args.trials, "drops": args.drops,
                     "out": args.out}
        spec = ExperimentSpec.from_json(args.spec, overrides)
        outdir = run_experiment(spec, jobs=args.jobs)
        print(f"wrote {outdir}/manifest.json")
        return 0

    if args.command == "table":
        data = json.loads(Path(args.query).read_text())
        network = NetworkConfig.from_json(data.pop("network"))
        if args.drops is not None:
            data["drops"] = args.drops
        query = GainThresholdQuery.from_dict(data)
        value, boundary = find_max_ratio(query, network, seed=args.seed)
        print(f"{query.mode} = {value}" + (" (at search boundary)" if boundary else ""))
        if args.out:
            path = Path(args.out)
            new = not path.exists()
            with open(path, "a", newline="") as fh:
                if new:
                    fh.write("mode,direction,powerDb,threshold,value,atBoundary\n")
                fh.write(f"{query.mode},{query.direction},{query.power_db},"
                         f"{query.threshold},{value},{boundary}\n")
        return 0

    emit_plot_data(args.directory)
    print(f"wrote {Path(args.directory) / 'plotdata.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
