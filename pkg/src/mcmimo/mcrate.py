"""Monte Carlo ergodic-rate estimation with ZF receivers and precoders.

Per-user uplink SINR with a ZF receiver at the serving BS:

    SINR_n = p_n / (sum_{l,c} p_{cl} |a_n^H g_{cl}|^2 + ||a_n||^2)

and downlink SINR with per-cell ZF precoding:

    SINR_n = alpha_0^2 p_n / (sum_{l,c} p_{cl} |g_{ln}^T b_{lc}|^2 + 1)

where the interference sums run over the edge-adjacent cells only. Each trial
draws fresh Rayleigh fading from a stream keyed by (seed, trial index), so
estimates are independent of evaluation order and two allocations compared at
the same seed see identical channels (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .topology import CellTopology

CONDITION_LIMIT = 1e12
ZF_RESIDUAL_TOL = 1e-9
RESAMPLE_CAP = 100

_MASK64 = (1 << 64) - 1


class IllConditionedChannelError(RuntimeError):
    """A drawn channel matrix is too ill-conditioned for ZF processing."""


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Per-user transmit powers (linear watts) for one cell."""

    powers: np.ndarray
    direction: str  # "uplink" | "downlink"

    def __post_init__(self):
        p = np.asarray(self.powers, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("powers must be a non-empty 1-D vector")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("powers must be finite and non-negative (linear watts)")
        if self.direction not in ("uplink", "downlink"):
            raise ValueError(f"direction must be 'uplink' or 'downlink', got {self.direction!r}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "powers", p)

    @property
    def n_users(self) -> int:
        return self.powers.size

    @property
    def total(self) -> float:
        return float(self.powers.sum())

    def check_budget(self, budget: float, rtol: float = 1e-9) -> None:
        if self.total > budget * (1.0 + rtol):
            raise ValueError(f"allocation total {self.total} exceeds budget {budget}")


@dataclass(frozen=True, eq=False)
class RateEstimate:
    """Per-user rates in bits/s/Hz plus estimator metadata."""

    per_user_rate: np.ndarray
    trials: int
    ci_half_width: np.ndarray
    kind: str  # "monteCarlo" | "closedForm"

    def __post_init__(self):
        r = np.asarray(self.per_user_rate, dtype=float)
        h = np.asarray(self.ci_half_width, dtype=float)
        if np.any(r < 0) or np.any(h < 0):
            raise ValueError("rates and CI half-widths must be non-negative")
        r = r.copy()
        h = h.copy()
        r.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "per_user_rate", r)
        object.__setattr__(self, "ci_half_width", h)

    @classmethod
    def closed_form(cls, rates: np.ndarray) -> "RateEstimate":
        rates = np.asarray(rates, dtype=float)
        return cls(rates, 0, np.zeros_like(rates), "closedForm")

    @property
    def sum_rate(self) -> float:
        return float(self.per_user_rate.sum())

    def csv_rows(self) -> list[tuple]:
        return [
            (n, float(self.per_user_rate[n]), float(self.ci_half_width[n]), self.trials)
            for n in range(self.per_user_rate.size)
        ]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("user,rate,ciHalfWidth,trials\n")
            for row in self.csv_rows():
                fh.write(f"{row[0]},{row[1]:.12g},{row[2]:.12g},{row[3]}\n")


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of the fast-fading matrices needed for a single trial.

    ``fast_fading[(i, l)]`` is the M x N matrix H_il from the users of cell l
    to BS i, with i.i.d. CN(0, 1) entries (real/imag variance 1/2 each).
    """

    fast_fading: dict

    def channel(self, bs: int, cell: int, topology: CellTopology) -> np.ndarray:
        """G_il = H_il diag(beta[i, l, :])^(1/2)."""
        h = self.fast_fading[(bs, cell)]
        return h * np.sqrt(topology.large_scale[bs, cell])[None, :]


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent per-trial stream derived from (seed, trial)."""
    return np.random.default_rng([seed & _MASK64, trial & _MASK64])


def _draw_fading(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    return math.sqrt(0.5) * (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))


def draw_realization(rng: np.random.Generator, m: int, n: int, pairs) -> ChannelRealization:
    return ChannelRealization({pair: _draw_fading(rng, m, n) for pair in pairs})


def zf_receiver(G: np.ndarray) -> np.ndarray:
    """ZF receive matrix A = G (G^H G)^{-1} with A^H G = I.

    Raises IllConditionedChannelError when the Gram matrix condition number
    exceeds 1e12 or the achieved identity residual exceeds 1e-9; callers are
    expected to resample the channel.
    """
    G = np.asarray(G)
    if G.ndim != 2 or G.shape[0] < G.shape[1]:
        raise ValueError("G must be M x N with M >= N")
    gram = G.conj().T @ G
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > CONDITION_LIMIT:
        raise IllConditionedChannelError("channel Gram matrix is numerically singular")
    A = np.linalg.solve(gram.conj(), G.T).T  # G @ gram^{-1}
    resid = np.max(np.abs(A.conj().T @ G - np.eye(G.shape[1])))
    if not resid < ZF_RESIDUAL_TOL:
        raise IllConditionedChannelError(f"ZF identity residual {resid:.2e} above tolerance")
    return A


def zf_precoder(G: np.ndarray, beta_self: np.ndarray) -> tuple[np.ndarray, float]:
    """ZF precoder B = alpha * G^* (G^T G^*)^{-1} and its scaling alpha.

    alpha = sqrt((M - N) / sum_n 1/beta_n) makes the long-term average of
    tr(B B^H) equal one, i.e. the precoder meets a unit transmit-power
    constraint in expectation over the fast fading.
    """
    G = np.asarray(G)
    m, n = G.shape
    if m <= n:
        raise ValueError("ZF precoding requires M > N")
    beta_self = np.asarray(beta_self, dtype=float)
    if beta_self.shape != (n,) or np.any(beta_self <= 0):
        raise ValueError("beta_self must be a length-N positive vector")
    alpha = math.sqrt((m - n) / float(np.sum(1.0 / beta_self)))
    # G^*(G^T G^*)^{-1} is the conjugate of the ZF receiver for G.
    B = alpha * zf_receiver(G).conj()
    return B, alpha


def _check_allocations(allocations, cells, n_users: int, direction: str) -> None:
    for cell in cells:
        alloc = allocations[cell]
        if alloc is None:
            raise ValueError(f"no PowerAllocation provided for cell {cell}")
        if alloc.direction != direction:
            raise ValueError(
                f"cell {cell} allocation direction {alloc.direction!r} != {direction!r}"
            )
        if alloc.n_users != n_users:
            raise ValueError(f"cell {cell} allocation has {alloc.n_users} users, expected {n_users}")


def _ci_half_width(sum_x, sum_x2, trials: int, confidence: float) -> np.ndarray:
    mean = sum_x / trials
    if trials < 2:
        return np.zeros_like(mean)
    var = np.maximum(sum_x2 - trials * mean**2, 0.0) / (trials - 1)
    z = NormalDist().inv_cdf(0.5 + 0.5 * confidence)
    return z * np.sqrt(var / trials)


def uplink_rate_mc(
    topology: CellTopology,
    allocations,
    target_cell: int,
    trials: int,
    seed: int,
    confidence: float = 0.95,
) -> RateEstimate:
    """Monte Carlo ergodic uplink rates of the target cell's users.

    ``allocations`` is indexed by cell and must cover the target cell and all
    of its interfering (edge-adjacent) neighbours. The expectation is over
    fast fading only; the topology's large-scale fading stays fixed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = topology.config
    m, n = cfg.bs_antennas, cfg.users_per_cell
    nbrs = topology.neighbors(target_cell)
    _check_allocations(allocations, [target_cell, *nbrs], n, "uplink")

    p_own = allocations[target_cell].powers
    sqrt_beta_own = np.sqrt(topology.large_scale[target_cell, target_cell])
    if nbrs.size:
        sqrt_beta_x = np.sqrt(
            np.concatenate([topology.large_scale[target_cell, l] for l in nbrs])
        )
        p_x = np.concatenate([allocations[l].powers for l in nbrs])
    else:
        sqrt_beta_x = p_x = None

    sum_x = np.zeros(n)
    sum_x2 = np.zeros(n)
    for t in range(trials):
        rng = trial_rng(seed, t)
        for _ in range(RESAMPLE_CAP):
            try:
                A = zf_receiver(_draw_fading(rng, m, n) * sqrt_beta_own[None, :])
                break
            except IllConditionedChannelError:
                continue
        else:
            raise IllConditionedChannelError(
                f"no well-conditioned channel in {RESAMPLE_CAP} redraws (trial {t})"
            )
        noise = np.einsum("mn,mn->n", A.conj(), A).real
        if sqrt_beta_x is not None:
            Gx = _draw_fading(rng, m, p_x.size) * sqrt_beta_x[None, :]
            interference = np.abs(A.conj().T @ Gx) ** 2 @ p_x
        else:
            interference = 0.0
        rate = np.log2(1.0 + p_own / (interference + noise))
        sum_x += rate
        sum_x2 += rate * rate

    return RateEstimate(
        sum_x / trials, trials, _ci_half_width(sum_x, sum_x2, trials, confidence), "monteCarlo"
    )


def downlink_rate_mc(
    topology: CellTopology,
    allocations,
    target_cell: int,
    trials: int,
    seed: int,
    confidence: float = 0.95,
) -> RateEstimate:
    """Monte Carlo ergodic downlink rates of the target cell's users.

    The serving cell's own ZF precoding removes intracell interference and
    contributes the deterministic gain alpha_0^2; randomness enters only via
    the neighbouring cells' precoders, which are rebuilt per trial from their
    own channels.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cfg = topology.config
    m, n = cfg.bs_antennas, cfg.users_per_cell
    nbrs = topology.neighbors(target_cell)
    _check_allocations(allocations, [target_cell, *nbrs], n, "downlink")

    beta_own = topology.large_scale[target_cell, target_cell]
    alpha0_sq = (m - n) / float(np.sum(1.0 / beta_own))
    signal = alpha0_sq * allocations[target_cell].powers

    sqrt_beta_ll = [np.sqrt(topology.large_scale[l, l]) for l in nbrs]
    sqrt_beta_l0 = [np.sqrt(topology.large_scale[l, target_cell]) for l in nbrs]

    sum_x = np.zeros(n)
    sum_x2 = np.zeros(n)
    for t in range(trials):
        rng = trial_rng(seed, t)
        interference = np.zeros(n)
        for k, l in enumerate(nbrs):
            for _ in range(RESAMPLE_CAP):
                try:
                    G_ll = _draw_fading(rng, m, n) * sqrt_beta_ll[k][None, :]
                    B, _ = zf_precoder(G_ll, topology.large_scale[l, l])
                    break
                except IllConditionedChannelError:
                    continue
            else:
                raise IllConditionedChannelError(
                    f"no well-conditioned channel in {RESAMPLE_CAP} redraws (trial {t})"
                )
            G_l0 = _draw_fading(rng, m, n) * sqrt_beta_l0[k][None, :]
            interference += np.abs(G_l0.T @ B) ** 2 @ allocations[l].powers
        rate = np.log2(1.0 + signal / (interference + 1.0))
        sum_x += rate
        sum_x2 += rate * rate

    return RateEstimate(
        sum_x / trials, trials, _ci_half_width(sum_x, sum_x2, trials, confidence), "monteCarlo"
    )
