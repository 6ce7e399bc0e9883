"""Closed-form rate expressions for ZF multicell systems.

Uplink (per user n of the target cell, noise power 1):

    lower bound     log2(1 + p_n b_n (M-N)   / (S + 1))
    approximation   log2(1 + p_n b_n (M-N+1) / (S + 1))
    upper bound     log2(1 + p_n b_n (M-N+1) * E{1/(v+1)})

where b_n is the user's own-cell large-scale gain, S = sum p_cl beta_cl over
interfering users, and v is the hypoexponential interference power: a sum of
independent exponentials with means zeta_k = p_cl beta_cl. The three lie in
that order for every input (two Jensen bounds around a mean-ratio
approximation), and the gap closes as M grows.

Downlink lower bound:

    log2(1 + p_n (M-N)/L_0 / (D_n + 1)),   L_l = sum_k 1/beta_lk,
    D_n = sum_{l,c} p_cl beta_ln / (beta_lc L_l)

E{1/(v+1)} is evaluated through the characteristic-coefficient expansion of
the hypoexponential density (partial fractions of its Laplace transform),
the exponential integral E1, and per-multiplicity finite sums. Those finite
sums cancel catastrophically in some regimes, so every piece is guarded and
falls back to a numerically stable integral representation

    E{1/(v+1)} = int_0^inf e^{-s} prod_k (1 + zeta_k s)^{-1} ds

which is mathematically identical. Results are clamped to the provable
envelope [1/(1 + sum zeta), 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mcrate import PowerAllocation
from .topology import CellTopology

_EULER_GAMMA = 0.5772156649015328606065120900824024
_SERIES_SWITCH = 1.5  # series below, continued fraction at or above
_MERGE_RTOL = 1e-9
_LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# exponential integral
# ---------------------------------------------------------------------------

def exp_integral_e1(x: float) -> float:
    """Exponential integral E1(x) = int_1^inf e^(-x t)/t dt, x > 0.

    Power series for x < 1.5, Lentz continued fraction above; absolute error
    is far below the 1e-12 target across the whole domain.
    """
    x = float(x)
    if not (x > 0.0 and math.isfinite(x)):
        raise ValueError(f"E1 requires finite x > 0, got {x}")
    if x < _SERIES_SWITCH:
        return _e1_series(x)
    return math.exp(-x) * _e1_cf_scaled(x)


def _e1_series(x: float) -> float:
    # E1(x) = -gamma - ln x + sum_{k>=1} (-1)^(k+1) x^k / (k k!)
    total = -_EULER_GAMMA - math.log(x)
    term = 1.0  # holds (-x)^k / k!
    for k in range(1, 200):
        term *= -x / k
        total -= term / k
        if abs(term) / k < 1e-18:
            return total
    raise RuntimeError("E1 series did not converge")  # pragma: no cover


def _e1_cf_scaled(x: float) -> float:
    # e^x E1(x) via the modified-Lentz continued fraction; no underflow for
    # large x, which keeps products like e^(1/zeta) E1(1/zeta) computable.
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        a = -float(i * i)
        b += 2.0
        d = a * d + b
        if d == 0.0:
            d = tiny
        c = b + a / c
        if c == 0.0:
            c = tiny
        d = 1.0 / d
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise RuntimeError("E1 continued fraction did not converge")  # pragma: no cover


def _e1_scaled(x: float) -> float:
    """e^x E1(x), stable for any x > 0."""
    if x < _SERIES_SWITCH:
        return math.exp(x) * _e1_series(x)
    return _e1_cf_scaled(x)


# ---------------------------------------------------------------------------
# hypoexponential interference distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HypoexpSpec:
    """Distribution of a sum of independent exponentials with means ``zetas``.

    ``distinct`` holds the strictly decreasing distinct means (values equal
    within 1e-9 relative are merged), ``multiplicities`` their counts, and
    ``char_coeffs[h][j-1]`` the characteristic coefficient lambda_{h,j} of the
    partial-fraction expansion prod_k (1 + zeta_k s)^{-1} =
    sum_h sum_j lambda_{h,j} (1 + zeta_h s)^{-j}.
    """

    zetas: np.ndarray
    distinct: np.ndarray
    multiplicities: np.ndarray
    char_coeffs: tuple

    @property
    def mean(self) -> float:
        return float(self.zetas.sum())

    def pdf(self, v) -> np.ndarray:
        """Density f(v) = sum_{h,j} lambda_{h,j} z_h^{-j} v^{j-1} e^{-v/z_h}/(j-1)!."""
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        pos = v >= 0
        vv = v[pos]
        acc = np.zeros_like(vv)
        with np.errstate(divide="ignore"):
            logv = np.where(vv > 0, np.log(np.where(vv > 0, vv, 1.0)), -np.inf)
        for zh, lam in zip(self.distinct, self.char_coeffs):
            for j, l in enumerate(lam, start=1):
                if l == 0.0:
                    continue
                if j == 1:
                    acc += (l / zh) * np.exp(-vv / zh)
                else:
                    acc += l * np.exp(
                        (j - 1) * logv - vv / zh - j * math.log(zh) - math.lgamma(j)
                    )
        out[pos] = acc
        return out

    def cdf(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        out = np.zeros_like(v)
        pos = v > 0
        acc = np.zeros(int(pos.sum()))
        for zh, lam in zip(self.distinct, self.char_coeffs):
            x = v[pos] / zh
            for j, l in enumerate(lam, start=1):
                if l == 0.0:
                    continue
                acc += l * _erlang_cdf(j, x)
        out[pos] = acc
        return np.clip(out, 0.0, 1.0)


def _erlang_cdf(j: int, x: np.ndarray) -> np.ndarray:
    # P(Gamma(j, 1) <= x) = 1 - e^{-x} sum_{i<j} x^i/i!, in log space
    with np.errstate(divide="ignore"):
        logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)
    tail = np.zeros_like(x)
    for i in range(j):
        tail += np.exp(i * logx - x - math.lgamma(i + 1))
    return 1.0 - np.minimum(tail, 1.0)


def characteristic_coefficients(zetas) -> HypoexpSpec:
    """Partial-fraction weights of prod_k (1 + zeta_k s)^{-1}.

    Near-equal means (1e-9 relative) are merged into one value with higher
    multiplicity before expanding; the expansion is numerically meaningless
    for closer-but-unequal values and the merge is the correct limit.
    """
    z = np.asarray(zetas, dtype=float).ravel()
    if z.size == 0:
        raise ValueError("at least one zeta value is required")
    if not np.all(np.isfinite(z)) or np.any(z <= 0.0):
        raise ValueError("all zeta values must be finite and positive")

    z_sorted = np.sort(z)[::-1]
    distinct: list[float] = []
    groups: list[list[float]] = []
    for val in z_sorted:
        if distinct and (distinct[-1] - val) <= _MERGE_RTOL * distinct[-1]:
            groups[-1].append(val)
            g = groups[-1]
            # exactly equal values keep their exact representative
            distinct[-1] = g[0] if min(g) == max(g) else float(np.mean(g))
        else:
            distinct.append(float(val))
            groups.append([val])
    dist = np.array(distinct)
    mult = np.array([len(g) for g in groups], dtype=int)

    coeffs = []
    for h in range(dist.size):
        zh = dist[h]
        tau = int(mult[h])
        zg = np.delete(dist, h)
        tg = np.delete(mult, h)
        # Taylor coefficients of Gh(s) = prod_{g != h} (1 + zeta_g s)^{-tau_g}
        # around s = -1/zeta_h, in powers of u = (1 + zeta_h s): coefficient
        # c_m = Gh^(m) / (m! zeta_h^m) and lambda_{h,j} = c_{tau-j}.
        if zg.size:
            base = 1.0 - zg / zh
            sign = float(np.prod(np.sign(base) ** tg))
            g0 = sign * math.exp(-float(np.sum(tg * np.log(np.abs(base)))))
            ratio = zg * zh / (zh - zg)
        else:
            g0 = 1.0
            ratio = np.empty(0)
        G = np.zeros(tau)
        G[0] = g0
        if tau > 1:
            # log-derivatives of Gh at the expansion point
            L = [0.0] * tau
            for k in range(1, tau):
                L[k] = (-1.0) ** k * math.factorial(k - 1) * float(np.sum(tg * ratio**k))
            for m_ in range(1, tau):
                G[m_] = sum(math.comb(m_ - 1, i) * L[m_ - i] * G[i] for i in range(m_))
        lam = np.array(
            [G[tau - j] / (math.factorial(tau - j) * zh ** (tau - j)) for j in range(1, tau + 1)]
        )
        if not np.all(np.isfinite(lam)):
            raise ValueError(
                "zeta spacing too small for a stable partial-fraction expansion; "
                "values this close should be merged"
            )
        coeffs.append(lam)

    zc = z.copy()
    zc.setflags(write=False)
    dist.setflags(write=False)
    mult.setflags(write=False)
    return HypoexpSpec(zc, dist, mult, tuple(coeffs))


@lru_cache(maxsize=1)
def _gauss_legendre(nodes: int = 32):
    return np.polynomial.legendre.leggauss(nodes)


def _laplace_product_integral(zetas: np.ndarray, mults: np.ndarray) -> float:
    """int_0^inf e^{-s} prod_k (1 + zeta_k s)^{-tau_k} ds.

    Equals E{1/(v+1)} because prod (1+zeta s)^{-tau} is the Laplace transform
    of v. The integrand is positive, smooth and decreasing, integrated on
    geometrically growing panels sized to the initial decay rate.
    """
    nodes, weights = _gauss_legendre()
    rate = 1.0 + float(np.dot(mults, zetas))
    a, b = 0.0, 1.0 / rate
    total = 0.0
    while True:
        half = 0.5 * (b - a)
        s = (a + half) + half * nodes
        ln = -s - (mults[:, None] * np.log1p(np.outer(zetas, s))).sum(axis=0)
        total += half * float(weights @ np.exp(ln))
        if b >= 46.0:  # e^{-46} ~ 1e-20: tail is negligible
            return total
        a, b = b, min(2.0 * b, 46.0)


def _erlang_mean_inv_one_plus(j: int, zeta: float) -> float:
    """E{1/(V+1)} for V ~ Erlang(j) with mean j*zeta.

    Uses the closed form (j-1 alternating factorial terms against
    e^(1/zeta) E1(1/zeta)); when those terms cancel to fewer than ~3 safe
    digits the stable integral is used instead.
    """
    x = 1.0 / zeta
    e1s = _e1_scaled(x)
    if j == 1:
        return x * e1s
    s = 0.0
    comp = 0.0  # Neumaier compensation
    term = zeta  # (-1)^m zeta^(m+1) m!, starting at m = 0
    maxmag = abs(e1s)
    overflow = False
    for m_ in range(j - 1):
        if m_ > 0:
            term *= -zeta * m_
        if abs(term) > 1e280:
            overflow = True
            break
        maxmag = max(maxmag, abs(term))
        t = s + term
        if abs(s) >= abs(term):
            comp += (s - t) + term
        else:
            comp += (term - t) + s
        s = t
    if not overflow:
        bracket = (e1s - (s + comp)) * (-1.0) ** (j - 1)
        if bracket > 1e-3 * maxmag:
            log_val = math.log(bracket) - math.lgamma(j) - j * math.log(zeta)
            if log_val < 700.0:
                val = math.exp(log_val)
                if 0.0 < val <= 1.0:
                    return val
    return _laplace_product_integral(np.array([zeta]), np.array([j]))


def mean_inv_one_plus(spec: HypoexpSpec) -> float:
    """E{1/(v+1)} for a hypoexponential v.

    Combines the characteristic coefficients with the per-multiplicity closed
    forms; if the signed combination leaves the provable envelope
    [1/(1+E{v}), 1] it is recomputed from the stable Laplace-domain integral,
    and the result is clamped to that envelope either way (which also keeps
    the Jensen ordering of the rate expressions exact in floating point).
    """
    floor = 1.0 / (1.0 + spec.mean)
    total = 0.0
    comp = 0.0
    maxmag = 0.0
    for zh, lam in zip(spec.distinct, spec.char_coeffs):
        for j, l in enumerate(lam, start=1):
            if l == 0.0:
                continue
            term = l * _erlang_mean_inv_one_plus(j, float(zh))
            maxmag = max(maxmag, abs(term))
            t = total + term
            if abs(total) >= abs(term):
                comp += (total - t) + term
            else:
                comp += (term - t) + total
            total = t
    total += comp
    # the signed terms can exceed the result by many orders of magnitude
    # (close-but-unmerged means); keep the expansion only while it retains
    # ~10 reliable digits, as judged from the observed cancellation
    ill_conditioned = not math.isfinite(total) or abs(total) < 1e-6 * maxmag
    if ill_conditioned or total < floor * (1.0 - 1e-6) or total > 1.0 + 1e-6:
        total = _laplace_product_integral(spec.distinct, spec.multiplicities.astype(float))
    return min(max(total, floor), 1.0)


# ---------------------------------------------------------------------------
# interference profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterferenceProfile:
    """Uplink large-scale view of one target cell.

    ``beta_self[n]`` is user n's gain to its own BS; ``cross_powers`` and
    ``cross_betas`` list (p, beta) for every user of every interfering cell.
    The interference power seen at the BS is user-independent.
    """

    beta_self: np.ndarray
    cross_powers: np.ndarray
    cross_betas: np.ndarray

    def __post_init__(self):
        bs = np.asarray(self.beta_self, dtype=float)
        cp = np.asarray(self.cross_powers, dtype=float).ravel()
        cb = np.asarray(self.cross_betas, dtype=float).ravel()
        if bs.ndim != 1 or np.any(bs <= 0) or not np.all(np.isfinite(bs)):
            raise ValueError("beta_self must be a positive 1-D vector")
        if cp.shape != cb.shape:
            raise ValueError("cross_powers and cross_betas must have equal length")
        if np.any(cp < 0) or np.any(cb <= 0):
            raise ValueError("cross powers must be >= 0 and cross betas > 0")
        for name, arr in (("beta_self", bs), ("cross_powers", cp), ("cross_betas", cb)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_users(self) -> int:
        return self.beta_self.size

    @property
    def cross_sum(self) -> float:
        """Total interference power sum p_cl beta_cl (0 with no interferers)."""
        return float(np.dot(self.cross_powers, self.cross_betas))

    def zetas(self) -> np.ndarray:
        """Exponential means p_cl beta_cl of the active interference terms."""
        z = self.cross_powers * self.cross_betas
        return z[z > 0]


@dataclass(frozen=True, eq=False)
class DownlinkProfile:
    """Downlink large-scale view: own-cell inverse-gain sum and the per-user
    normalised interference load D_n."""

    lambda_self: float
    cross_load: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.lambda_self) and self.lambda_self > 0):
            raise ValueError("lambda_self must be finite and positive")
        cl = np.asarray(self.cross_load, dtype=float)
        if cl.ndim != 1 or np.any(cl < 0) or not np.all(np.isfinite(cl)):
            raise ValueError("cross_load must be a non-negative 1-D vector")
        cl = cl.copy()
        cl.setflags(write=False)
        object.__setattr__(self, "cross_load", cl)

    @property
    def n_users(self) -> int:
        return self.cross_load.size


def uplink_profile(topology: CellTopology, interfering_powers, target_cell: int) -> InterferenceProfile:
    """Build the uplink interference profile of ``target_cell`` from the
    current powers of its edge-adjacent neighbours."""
    nbrs = topology.neighbors(target_cell)
    beta_self = topology.large_scale[target_cell, target_cell]
    powers, betas = [], []
    for l in nbrs:
        alloc = interfering_powers[l]
        if alloc is None:
            raise ValueError(f"no PowerAllocation provided for interfering cell {l}")
        if isinstance(alloc, PowerAllocation):
            if alloc.direction != "uplink":
                raise ValueError(f"cell {l} allocation is not an uplink allocation")
            p = alloc.powers
        else:
            p = np.asarray(alloc, dtype=float)
        powers.append(p)
        betas.append(topology.large_scale[target_cell, l])
    if powers:
        return InterferenceProfile(beta_self, np.concatenate(powers), np.concatenate(betas))
    return InterferenceProfile(beta_self, np.empty(0), np.empty(0))


def downlink_profile(topology: CellTopology, interfering_powers, target_cell: int) -> DownlinkProfile:
    beta_own = topology.large_scale[target_cell, target_cell]
    lam_self = float(np.sum(1.0 / beta_own))
    load = np.zeros(topology.n_users)
    for l in topology.neighbors(target_cell):
        alloc = interfering_powers[l]
        if alloc is None:
            raise ValueError(f"no PowerAllocation provided for interfering cell {l}")
        if isinstance(alloc, PowerAllocation):
            if alloc.direction != "downlink":
                raise ValueError(f"cell {l} allocation is not a downlink allocation")
            p = alloc.powers
        else:
            p = np.asarray(alloc, dtype=float)
        beta_ll = topology.large_scale[l, l]
        lam_l = float(np.sum(1.0 / beta_ll))
        # sum_c p_c / beta_lc, shared by all target users; beta_ln scales it.
        load += topology.large_scale[l, target_cell] * float(np.sum(p / beta_ll)) / lam_l
    return DownlinkProfile(lam_self, load)


# ---------------------------------------------------------------------------
# rate expressions
# ---------------------------------------------------------------------------

def _check_powers(powers, n: int) -> np.ndarray:
    p = np.asarray(powers, dtype=float)
    if p.shape != (n,):
        raise ValueError(f"powers must have shape ({n},)")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("powers must be finite and non-negative")
    return p


def uplink_lower_bound(profile: InterferenceProfile, m: int, n: int, powers) -> np.ndarray:
    """Jensen lower bound on the per-user ergodic ZF uplink rate."""
    if m < n:
        raise ValueError("uplink lower bound requires M >= N")
    p = _check_powers(powers, profile.n_users)
    return np.log2(1.0 + p * profile.beta_self * (m - n) / (profile.cross_sum + 1.0))


def uplink_approximation(profile: InterferenceProfile, m: int, n: int, powers) -> np.ndarray:
    """Mean-ratio approximation of the per-user ergodic ZF uplink rate.

    Identical to the lower bound with M-N replaced by M-N+1; lies between the
    lower and upper bounds and becomes exact as M grows.
    """
    if m < n:
        raise ValueError("uplink approximation requires M >= N")
    p = _check_powers(powers, profile.n_users)
    return np.log2(1.0 + p * profile.beta_self * (m - n + 1) / (profile.cross_sum + 1.0))


def uplink_upper_bound(profile: InterferenceProfile, m: int, n: int, powers) -> np.ndarray:
    """Jensen upper bound on the per-user ergodic ZF uplink rate.

    With no active interferers the hypoexponential machinery degenerates and
    the bound reduces to log2(1 + p beta (M-N+1)), i.e. E{1/(v+1)} = 1.
    """
    if m < n:
        raise ValueError("uplink upper bound requires M >= N")
    p = _check_powers(powers, profile.n_users)
    zetas = profile.zetas()
    eta = 1.0 if zetas.size == 0 else mean_inv_one_plus(characteristic_coefficients(zetas))
    return np.log2(1.0 + p * profile.beta_self * (m - n + 1) * eta)


def downlink_lower_bound(profile: DownlinkProfile, m: int, n: int, powers) -> np.ndarray:
    """Jensen lower bound on the per-user ergodic ZF downlink rate."""
    if m < n:
        raise ValueError("downlink lower bound requires M >= N")
    p = _check_powers(powers, profile.n_users)
    return np.log2(1.0 + p * ((m - n) / profile.lambda_self) / (profile.cross_load + 1.0))
