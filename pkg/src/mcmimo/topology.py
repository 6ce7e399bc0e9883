"""Hexagonal multicell geometry: cell layout, user drops, large-scale fading.

Distances are in meters and gains are linear power ratios. Noise power is
normalised to one everywhere, so linear transmit powers double as SNRs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

_SQRT3 = math.sqrt(3.0)
_MASK64 = (1 << 64) - 1

# Supported hexagonal-disk layouts: cell count -> disk radius in rings.
_LAYOUT_RADIUS = {1: 0, 7: 1, 19: 2}

# JSON documents use these exact key names; anything else is rejected.
_JSON_FIELDS = {
    "cellRadius": "cell_radius",
    "exclusionRadius": "exclusion_radius",
    "shadowStdDb": "shadow_std_db",
    "pathLossExponent": "path_loss_exponent",
    "cellCount": "cell_count",
    "usersPerCell": "users_per_cell",
    "bsAntennas": "bs_antennas",
    "seed": "seed",
    "outerRingCells": "outer_ring_cells",
}
_FIELD_TO_JSON = {v: k for k, v in _JSON_FIELDS.items()}


@dataclass(frozen=True)
class NetworkConfig:
    """Static parameters of one multicell deployment.

    ``users_per_cell`` (N) and ``bs_antennas`` (M) are mandatory; the
    remaining fields default to the standard macro-cell setup: 1000 m cells,
    100 m exclusion disk around each BS, 8 dB log-normal shadowing and a 3.8
    path-loss exponent. ``outer_ring_cells`` adds that many fixed-power cells
    on the next hexagon ring; they interfere but are never optimised.
    """

    users_per_cell: int
    bs_antennas: int
    seed: int = 0
    cell_radius: float = 1000.0
    exclusion_radius: float = 100.0
    shadow_std_db: float = 8.0
    path_loss_exponent: float = 3.8
    cell_count: int = 19
    outer_ring_cells: int = 0

    def __post_init__(self):
        if self.users_per_cell < 1:
            raise ValueError("usersPerCell must be a positive integer")
        if self.bs_antennas < self.users_per_cell + 1:
            raise ValueError(
                f"bsAntennas must be at least usersPerCell+1 for ZF processing "
                f"(got M={self.bs_antennas}, N={self.users_per_cell})"
            )
        if self.cell_count not in _LAYOUT_RADIUS:
            raise ValueError(
                f"cellCount must be one of {sorted(_LAYOUT_RADIUS)} "
                f"(hexagonal disk layouts), got {self.cell_count}"
            )
        if not (0.0 < self.exclusion_radius < self.cell_radius):
            raise ValueError("exclusionRadius must satisfy 0 < r_h < cellRadius")
        if self.shadow_std_db < 0.0:
            raise ValueError("shadowStdDb must be >= 0")
        if self.path_loss_exponent < 0.0:
            raise ValueError("pathLossExponent must be >= 0")
        ring = 6 * (_LAYOUT_RADIUS[self.cell_count] + 1)
        if not (0 <= self.outer_ring_cells <= ring):
            raise ValueError(
                f"outerRingCells must be in [0, {ring}] for a {self.cell_count}-cell layout"
            )

    @classmethod
    def from_json(cls, source) -> "NetworkConfig":
        """Load a config from a JSON file path, JSON string, or dict.

        Keys must match the documented names exactly; unknown keys are errors.
        """
        if isinstance(source, (str, Path)):
            text = Path(source).read_text() if Path(str(source)).exists() else str(source)
            data = json.loads(text)
        else:
            data = dict(source)
        if not isinstance(data, dict):
            raise ValueError("network config JSON must be an object")
        unknown = sorted(set(data) - set(_JSON_FIELDS))
        if unknown:
            raise ValueError(f"unknown network config keys: {unknown}")
        kwargs = {_JSON_FIELDS[k]: v for k, v in data.items()}
        try:
            return cls(**kwargs)
        except TypeError as exc:  # missing required field
            raise ValueError(f"invalid network config: {exc}") from exc

    def to_json(self) -> dict:
        return {_FIELD_TO_JSON[name]: getattr(self, name) for name in _FIELD_TO_JSON}


def _axial_disk(radius: int) -> list[tuple[int, int]]:
    """Axial coordinates of a hexagonal disk, ordered centre-out then (q, r)."""
    cells = []
    for q in range(-radius, radius + 1):
        for r in range(-radius, radius + 1):
            if max(abs(q), abs(r), abs(q + r)) <= radius:
                cells.append((q, r))
    cells.sort(key=lambda c: (max(abs(c[0]), abs(c[1]), abs(c[0] + c[1])), c[0], c[1]))
    return cells


def _axial_ring(radius: int) -> list[tuple[int, int]]:
    return [c for c in _axial_disk(radius) if max(abs(c[0]), abs(c[1]), abs(c[0] + c[1])) == radius]


def _axial_to_xy(axial: np.ndarray, cell_radius: float) -> np.ndarray:
    # Flat-top hexagons with circumradius cell_radius; neighbours sit at
    # distance sqrt(3)*cell_radius, i.e. cells share an edge.
    q = axial[:, 0].astype(float)
    r = axial[:, 1].astype(float)
    return np.column_stack((1.5 * cell_radius * q, _SQRT3 * cell_radius * (r + 0.5 * q)))


def _hex_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dq = a[..., 0] - b[..., 0]
    dr = a[..., 1] - b[..., 1]
    return (np.abs(dq) + np.abs(dr) + np.abs(dq + dr)) // 2


def _in_hexagon(x: np.ndarray, y: np.ndarray, circumradius: float) -> np.ndarray:
    """Point-in-flat-top-hexagon test (boundary counts as inside)."""
    r = circumradius
    return (
        (np.abs(y) <= 0.5 * _SQRT3 * r)
        & (np.abs(y + _SQRT3 * x) <= _SQRT3 * r)
        & (np.abs(y - _SQRT3 * x) <= _SQRT3 * r)
    )


@dataclass(frozen=True, eq=False)
class CellTopology:
    """One realisation of the network geometry and its large-scale fading.

    ``large_scale[i, l, c]`` is the linear power gain from user c of cell l to
    BS i. The first ``cluster_size`` cells are the optimisable cluster; any
    further cells are the fixed-power outer ring. Arrays are read-only, so a
    topology can be shared freely across threads.
    """

    config: NetworkConfig
    axial: np.ndarray          # (C, 2) int axial coordinates
    bs_positions: np.ndarray   # (C, 2) metres
    user_positions: np.ndarray  # (C, N, 2) metres
    large_scale: np.ndarray    # (C, C, N) linear gains
    shadowing: np.ndarray      # (C, C, N) linear shadow gains actually drawn
    adjacency: np.ndarray      # (C, C) bool, True iff cells share an edge
    cluster_size: int

    @property
    def n_cells(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[1]

    def neighbors(self, cell: int) -> np.ndarray:
        """Indices of the cells that interfere with ``cell`` (edge-sharing)."""
        return np.flatnonzero(self.adjacency[cell])

    def user_distances(self, cell: int) -> np.ndarray:
        """Distance of each of ``cell``'s users to its own BS, in metres."""
        d = self.user_positions[cell] - self.bs_positions[cell]
        return np.hypot(d[:, 0], d[:, 1])

    def with_antennas(self, bs_antennas: int) -> "CellTopology":
        """Same geometry and fading with a different BS array size.

        Large-scale gains do not depend on M, so antenna sweeps can reuse one
        drop instead of rebuilding it.
        """
        return replace(self, config=replace(self.config, bs_antennas=bs_antennas))


def large_scale_gain(distance: float, shadow: float, cfg: NetworkConfig) -> float:
    """Linear link gain shadow / (distance / r_h)^v at the given distance.

    ``distance`` must not be inside the exclusion disk; ``shadow`` is a linear
    (not dB) shadow-fading gain.
    """
    if not distance >= cfg.exclusion_radius:
        raise ValueError(
            f"distance {distance} m is inside the {cfg.exclusion_radius} m exclusion disk"
        )
    if not shadow > 0:
        raise ValueError("shadow gain must be positive")
    return shadow / (distance / cfg.exclusion_radius) ** cfg.path_loss_exponent


def sample_shadowing(rng: np.random.Generator, cfg: NetworkConfig, size) -> np.ndarray:
    """Linear log-normal shadow gains: 10^(sigma_dB * g / 10), g ~ N(0, 1)."""
    return 10.0 ** (cfg.shadow_std_db * rng.standard_normal(size) / 10.0)


def _sample_users_in_cell(rng: np.random.Generator, cfg: NetworkConfig, n: int) -> np.ndarray:
    """Uniform points in the hexagon minus the central exclusion disk."""
    R = cfg.cell_radius
    rh2 = cfg.exclusion_radius**2
    out = np.empty((n, 2))
    got = 0
    while got < n:
        m = max(2 * (n - got), 8)
        x = rng.uniform(-R, R, m)
        y = rng.uniform(-0.5 * _SQRT3 * R, 0.5 * _SQRT3 * R, m)
        ok = _in_hexagon(x, y, R) & (x * x + y * y >= rh2)
        take = min(int(ok.sum()), n - got)
        idx = np.flatnonzero(ok)[:take]
        out[got : got + take, 0] = x[idx]
        out[got : got + take, 1] = y[idx]
        got += take
    return out


def build_topology(cfg: NetworkConfig) -> CellTopology:
    """Build the hexagonal layout, drop users, and draw large-scale fading.

    Deterministic for a fixed ``cfg.seed``: the seed is split into independent
    sub-streams for user placement and shadowing, so enabling or disabling one
    consumer never perturbs the other. Fast fading is *not* drawn here; the
    Monte Carlo estimators derive their own streams from the seed they are
    given.
    """
    radius = _LAYOUT_RADIUS[cfg.cell_count]
    axial = _axial_disk(radius)
    if cfg.outer_ring_cells:
        axial = axial + _axial_ring(radius + 1)[: cfg.outer_ring_cells]
    axial = np.asarray(axial, dtype=int)
    n_cells = axial.shape[0]
    n = cfg.users_per_cell

    bs = _axial_to_xy(axial, cfg.cell_radius)

    root = np.random.SeedSequence(cfg.seed & _MASK64)
    place_ss, shadow_ss = root.spawn(2)
    place_rng = np.random.default_rng(place_ss)
    shadow_rng = np.random.default_rng(shadow_ss)

    users = np.empty((n_cells, n, 2))
    for l in range(n_cells):
        users[l] = bs[l] + _sample_users_in_cell(place_rng, cfg, n)

    # One independent shadow draw per (BS, user) link.
    shadows = sample_shadowing(shadow_rng, cfg, (n_cells, n_cells, n))

    # distances[i, l, c]: BS i to user c of cell l
    diff = users[None, :, :, :] - bs[:, None, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    beta = shadows / (dist / cfg.exclusion_radius) ** cfg.path_loss_exponent

    adj = _hex_distance(axial[:, None, :], axial[None, :, :]) == 1

    for arr in (axial, bs, users, beta, shadows, adj):
        arr.setflags(write=False)

    return CellTopology(
        config=cfg,
        axial=axial,
        bs_positions=bs,
        user_positions=users,
        large_scale=beta,
        shadowing=shadows,
        adjacency=adj,
        cluster_size=cfg.cell_count,
    )


def schedule_groups(topology: CellTopology) -> list[list[int]]:
    """Partition the cluster cells into mutually non-interfering groups.

    Hexagonal layouts get the reuse-3 colouring (q - r) mod 3, which yields
    exactly 3 groups for the 19-cell disk. If that colouring is somehow
    invalid for the topology's adjacency, a greedy colouring is used instead
    and the returned list may be longer. Outer-ring cells never allocate and
    are not included.
    """
    cells = range(topology.cluster_size)
    colors = [(int(topology.axial[i, 0]) - int(topology.axial[i, 1])) % 3 for i in cells]
    if not _coloring_valid(topology, colors):
        colors = _greedy_coloring(topology)
    groups: dict[int, list[int]] = {}
    for i, c in zip(cells, colors):
        groups.setdefault(c, []).append(i)
    return [groups[c] for c in sorted(groups)]


def _coloring_valid(topology: CellTopology, colors: Sequence[int]) -> bool:
    k = topology.cluster_size
    for i in range(k):
        for j in topology.neighbors(i):
            if j < k and j != i and colors[i] == colors[int(j)]:
                return False
    return True


def _greedy_coloring(topology: CellTopology) -> list[int]:
    k = topology.cluster_size
    colors = [-1] * k
    for i in range(k):
        used = {colors[int(j)] for j in topology.neighbors(i) if j < k and colors[int(j)] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[i] = c
    return colors
