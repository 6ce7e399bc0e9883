"""Network-level scheduling of per-cell power allocation and a joint
optimisation benchmark.

The scheduler divides the cells into non-interfering groups (reuse-3 for the
hexagonal layouts) and lets one group re-allocate per time slot against a
frozen snapshot of everyone else's powers, so after one round every cell has
optimised at least once. The joint benchmark runs projected-gradient ascent
on all cluster cells' powers at once against the same analytic objective.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import closedform
from .mcrate import PowerAllocation, downlink_rate_mc, uplink_rate_mc
from .topology import CellTopology, schedule_groups

_LN2 = math.log(2.0)
_MASK64 = (1 << 64) - 1


@dataclass(eq=False)
class NetworkState:
    """Result of a scheduled allocation run."""

    slot_index: int
    per_cell_powers: list
    groups: list
    history: list  # network sum rate after each slot, bits/s/Hz
    estimator: str

    def __post_init__(self):
        if len(self.history) != self.slot_index:
            raise ValueError("history length must equal the slot index")


@dataclass(eq=False)
class JointResult:
    per_cell_powers: list
    objective: float
    iterations: int
    converged: bool


def project_budget_simplex(v: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum p = budget}."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    rho = np.max(np.flatnonzero(u + (budget - css) / j > 0)) + 1
    theta = (budget - css[rho - 1]) / rho
    return np.maximum(v + theta, 0.0)


def _power_matrix(topology: CellTopology, per_cell_powers) -> np.ndarray:
    mat = np.empty((topology.n_cells, topology.n_users))
    for i in range(topology.n_cells):
        alloc = per_cell_powers[i]
        if alloc is None:
            raise ValueError(f"no PowerAllocation for cell {i}")
        mat[i] = alloc.powers if isinstance(alloc, PowerAllocation) else np.asarray(alloc)
    return mat


def _uplink_objective(topology: CellTopology, pmat: np.ndarray, with_grad: bool = False):
    """Cluster sum of the closed-form uplink approximation, vectorised.

    rate_in = log2(1 + a_in p_in / (b_i + 1)) with a_in = beta_iin (M-N+1) and
    b_i the interference power at BS i from its edge-adjacent cells.
    """
    cfg = topology.config
    m, n = cfg.bs_antennas, cfg.users_per_cell
    k = topology.cluster_size
    beta = topology.large_scale
    adj = topology.adjacency.astype(float)

    a = beta[np.arange(k), np.arange(k), :] * (m - n + 1)  # (k, N)
    contrib = np.einsum("ilc,lc->il", beta[:k], pmat)      # (k, C)
    b1 = (contrib * adj[:k]).sum(axis=1) + 1.0             # (k,)
    sinr = a * pmat[:k] / b1[:, None]
    f = float(np.log2(1.0 + sinr).sum())
    if not with_grad:
        return f

    grad = np.zeros_like(pmat)
    denom = b1[:, None] + a * pmat[:k]
    grad[:k] = a / denom / _LN2  # own-cell term
    # interference term: d b_i / d p_jm = adj[i,j] beta[i,j,m]
    u = (a * pmat[:k] / (b1[:, None] * denom)).sum(axis=1)  # (k,)
    grad -= np.einsum("i,ij,ijm->jm", u, adj[:k], beta[:k]) / _LN2
    return f, grad


def _downlink_objective(topology: CellTopology, per_cell_powers) -> float:
    cfg = topology.config
    m, n = cfg.bs_antennas, cfg.users_per_cell
    total = 0.0
    for i in range(topology.cluster_size):
        prof = closedform.downlink_profile(topology, per_cell_powers, i)
        total += float(
            closedform.downlink_lower_bound(prof, m, n, per_cell_powers[i].powers).sum()
        )
    return total


def network_sum_rate(
    topology: CellTopology,
    per_cell_powers,
    estimator: str = "closedForm",
    trials: int = 10_000,
    seed: int = 0,
) -> float:
    """Sum rate of the cluster cells under the given powers.

    ``closedForm`` uses the uplink approximation (or the downlink lower bound
    for downlink allocations); ``monteCarlo`` averages fading draws per cell.
    """
    direction = per_cell_powers[0].direction
    if estimator == "closedForm":
        if direction == "uplink":
            return _uplink_objective(topology, _power_matrix(topology, per_cell_powers))
        return _downlink_objective(topology, per_cell_powers)
    if estimator == "monteCarlo":
        mc = uplink_rate_mc if direction == "uplink" else downlink_rate_mc
        total = 0.0
        for i in range(topology.cluster_size):
            cell_seed = int(
                np.random.SeedSequence([seed & _MASK64, i]).generate_state(1, np.uint64)[0]
            )
            total += mc(topology, per_cell_powers, i, trials, cell_seed).sum_rate
        return total
    raise ValueError(f"unknown estimator {estimator!r}")


def run_scheduled(
    topology: CellTopology,
    strategy,
    budget: float,
    initial_power: float,
    slots: int,
    rate_estimator: str = "closedForm",
    trials: int = 10_000,
    seed: int = 0,
) -> NetworkState:
    """Run scheduled per-cell power allocation for ``slots`` time slots.

    In slot s only the cells of group s mod G re-allocate, each against the
    snapshot of powers taken at the start of the slot; cells of a group do not
    interfere with each other, so their updates commute. Outer-ring cells keep
    their initial power forever. The network sum rate is recorded after every
    slot with the requested estimator.
    """
    if slots < 1:
        raise ValueError("slots must be >= 1")
    cfg = topology.config
    m, n = cfg.bs_antennas, cfg.users_per_cell
    direction = getattr(strategy, "direction", "uplink")
    if initial_power * n > budget * (1.0 + 1e-9):
        raise ValueError("initial per-user power exceeds the cell budget")

    groups = schedule_groups(topology)
    allocs = [
        PowerAllocation(np.full(n, float(initial_power)), direction)
        for _ in range(topology.n_cells)
    ]
    history = []
    for slot in range(slots):
        snapshot = list(allocs)
        for cell in groups[slot % len(groups)]:
            new = strategy(topology, snapshot, cell, m, n, budget)
            new.check_budget(budget)
            allocs[cell] = new
        history.append(
            network_sum_rate(
                topology,
                allocs,
                rate_estimator,
                trials,
                int(np.random.SeedSequence([seed & _MASK64, slot]).generate_state(1, np.uint64)[0]),
            )
        )
    return NetworkState(slots, allocs, groups, history, rate_estimator)


def run_joint(
    topology: CellTopology,
    budget: float,
    max_iters: int = 500,
    tolerance: float = 1e-9,
    outer_user_power: float | None = None,
) -> JointResult:
    """Jointly optimise all cluster cells' uplink powers by projected-gradient
    ascent on the closed-form approximation objective.

    Starts from the equal split (so the result is never worse than it), takes
    Armijo-backtracked steps projected onto each cell's budget simplex, and
    stops when the relative objective improvement drops below ``tolerance``.
    The objective is not jointly concave; like any local method this returns a
    stationary point, flagged ``converged=False`` with a warning if the
    iteration cap was reached first.
    """
    cfg = topology.config
    n = cfg.users_per_cell
    k = topology.cluster_size

    pmat = np.full((topology.n_cells, n), budget / n)
    if outer_user_power is not None:
        pmat[k:] = outer_user_power

    f, grad = _uplink_objective(topology, pmat, with_grad=True)
    step = budget
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        accepted = False
        while step > 1e-16 * budget:
            cand = pmat.copy()
            for i in range(k):
                cand[i] = project_budget_simplex(pmat[i] + step * grad[i], budget)
            fc = _uplink_objective(topology, cand)
            move = float((grad[:k] * (cand[:k] - pmat[:k])).sum())
            if fc > f and fc >= f + 1e-4 * move:
                rel = (fc - f) / max(abs(f), 1e-12)
                pmat = cand
                f, grad = _uplink_objective(topology, pmat, with_grad=True)
                step *= 2.0
                accepted = True
                break
            step *= 0.5
        if not accepted or rel < tolerance:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"joint power optimisation hit the {max_iters}-iteration cap; "
            "returning the best iterate",
            RuntimeWarning,
        )
    allocs = [PowerAllocation(pmat[i], "uplink") for i in range(topology.n_cells)]
    return JointResult(allocs, f, it, converged)


def write_history_csv(path, state: NetworkState) -> None:
    """Serialise the per-slot sum-rate history as (slot, group, rate, method)."""
    with open(path, "w", newline="") as fh:
        fh.write("slot,group,networkSumRate,method\n")
        for slot, rate in enumerate(state.history, start=1):
            group = (slot - 1) % len(state.groups)
            fh.write(f"{slot},{group + 1},{rate:.12g},{state.estimator}\n")
