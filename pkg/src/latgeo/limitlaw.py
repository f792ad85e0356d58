"""Three estimators of the universal hitting-time law, plus comparison.

(a) average over the target-size parameter l at a fixed scene point,
(b) average over scene points at a fixed large l,
(c) direct Monte Carlo over random affine lattices (d = 2 only),

all reporting the joint probability P(tau_n <= T_n for all n) and marginal
CDFs of each tau_n on a shared T-grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ConfigError
from ._parallel import parallel_map
from .lattice import AffineGrid, UnimodularLattice, grid_points_in_region, sample_unimodular_2d
from .regions import TimesInterval, negate
from .torus import (
    Scene,
    hit_times,
    mean_return_sigma,
    normalized_target,
    normalized_times,
    rational_relation_witness,
)

DEFAULT_L_STEP = 1.0 / 32.0
SCREEN_HEIGHT = 10**4


@dataclass(frozen=True)
class LimitLawSpec:
    """Joint thresholds T_1..T_N plus estimator resolution knobs."""

    scene: Scene
    s: np.ndarray
    thresholds: np.ndarray  # T_n, n = 1..N
    t_grid: np.ndarray  # shared marginal-CDF grid
    l_horizon: float = 8.0
    l_step: float = DEFAULT_L_STEP
    l_fixed: float = 3.0
    mc_samples: int = 10**4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "s", np.atleast_1d(np.asarray(self.s, dtype=float)))
        thresholds = np.asarray(self.thresholds, dtype=float)
        if thresholds.ndim != 1 or len(thresholds) < 1 or np.any(thresholds <= 0):
            raise ConfigError("thresholds must be a nonempty vector of positive reals")
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "t_grid", np.asarray(self.t_grid, dtype=float))

    @property
    def n_joint(self) -> int:
        return len(self.thresholds)


@dataclass
class DistEstimate:
    method: str
    t_grid: np.ndarray
    joint_prob: float
    joint_stderr: float
    marginals: np.ndarray  # shape (N, len(t_grid)): P(tau_n <= T)
    stderr: np.ndarray
    n_samples: int
    meta: dict = field(default_factory=dict)


def _tau_statistics(taus: np.ndarray, thresholds: np.ndarray, t_grid: np.ndarray):
    """Joint indicator and per-n marginal indicators from one tau sequence."""
    n_joint = len(thresholds)
    joint = len(taus) >= n_joint and bool(np.all(taus[:n_joint] <= thresholds))
    marg = np.zeros((n_joint, len(t_grid)))
    for n in range(n_joint):
        if len(taus) > n:
            marg[n] = taus[n] <= t_grid
    return joint, marg


def _tau_task(_index, payload):
    """Hit statistics for one (s, l) pair; shared by estimators (a) and (b)."""
    scene, s, l, thresholds, t_grid, screen = payload
    if screen and rational_relation_witness(scene.f.vector(s), SCREEN_HEIGHT) is not None:
        return None
    t_cap = float(max(thresholds.max(), t_grid.max()))
    sigma = mean_return_sigma(scene.at(s))
    t_max = (t_cap + 1.0) * math.exp((scene.d - 1) * l) * sigma
    series = hit_times(scene, s, l, t_max)
    taus = normalized_times(series, scene, s, l)
    return _tau_statistics(taus, thresholds, t_grid)


def empirical_birkhoff_cdf(spec: LimitLawSpec, workers: int = 1) -> DistEstimate:
    """Fraction of the l-grid of [0, L] where all normalized hit times meet
    their thresholds; the single scene point must pass rational screening."""
    witness = rational_relation_witness(spec.scene.f.vector(spec.s), SCREEN_HEIGHT)
    if witness is not None:
        raise ConfigError(f"scene point fails rational screening: relation {witness.tolist()}")
    n_l = int(round(spec.l_horizon / spec.l_step)) + 1
    ls = np.arange(n_l) * spec.l_step
    payloads = [(spec.scene, spec.s, float(l), spec.thresholds, spec.t_grid, False) for l in ls]
    stats = parallel_map(_tau_task, payloads, workers)
    joints = np.array([s[0] for s in stats], dtype=float)
    margs = np.stack([s[1] for s in stats])
    return _estimate_from_indicators(
        "birkhoff_l", spec, joints, margs, {"l_horizon": spec.l_horizon, "l_step": spec.l_step}
    )


def estimate_limit_cdf_s_average(spec: LimitLawSpec, s_grid: np.ndarray, workers: int = 1) -> DistEstimate:
    """Average of the same statistics over screened scene points at fixed l."""
    if spec.l_fixed < 2:
        raise ConfigError(f"fixed l must be at least 2, got {spec.l_fixed}")
    s_grid = np.atleast_2d(np.asarray(s_grid, dtype=float))
    payloads = [(spec.scene, s, spec.l_fixed, spec.thresholds, spec.t_grid, True) for s in s_grid]
    stats = [st for st in parallel_map(_tau_task, payloads, workers) if st is not None]
    if not stats:
        raise ConfigError("every grid point failed rational screening")
    joints = np.array([s[0] for s in stats], dtype=float)
    margs = np.stack([s[1] for s in stats])
    return _estimate_from_indicators(
        "s_average", spec, joints, margs, {"l_fixed": spec.l_fixed, "screened_out": len(s_grid) - len(stats)}
    )


def count_hits_random_grid(lattice: UnimodularLattice, offsets_unit: np.ndarray, scene: Scene, s, t_values) -> np.ndarray:
    """Counts sum_j #{grid-j points in (0, T) x (-normalized target j)} per T.

    ``offsets_unit`` holds the k fiber coordinates in [0,1)^d; the affine
    parts are their images under the lattice basis.
    """
    at = scene.at(s)
    grid = AffineGrid(lattice, lattice.basis @ offsets_unit)
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    t_top = float(t_values.max())
    counts = np.zeros(len(t_values))
    for j in range(scene.k):
        region = TimesInterval(0.0, t_top, negate(normalized_target(at, j)))
        pts = grid_points_in_region(grid, j, region)
        for idx, t_val in enumerate(t_values):
            counts[idx] += int(np.sum(pts[:, 0] < t_val))
    return counts


def _mc_task(index, payload):
    scene, s, thresholds, t_grid, seed = payload
    rng = np.random.default_rng([seed, 867, index])
    lattice = sample_unimodular_2d(rng)
    offsets = rng.random((2, scene.k))
    n_joint = len(thresholds)
    counts = count_hits_random_grid(lattice, offsets, scene, s, np.concatenate([thresholds, t_grid]))
    joint = bool(np.all(counts[:n_joint] >= np.arange(1, n_joint + 1)))
    marg = counts[None, n_joint:] >= np.arange(1, n_joint + 1)[:, None]
    return joint, marg.astype(float)


def estimate_limit_cdf_mc(spec: LimitLawSpec, workers: int = 1) -> DistEstimate:
    """Monte Carlo over Haar-random affine lattices (d = 2 only).

    Per sample the base lattice is Haar and each offset is uniform on the
    fiber; the count event asks for at least n points in (0, T_n) x
    (-normalized target), jointly over n."""
    if spec.scene.d != 2:
        raise ConfigError("the direct Monte Carlo route is only available for d = 2")
    payloads = [(spec.scene, spec.s, spec.thresholds, spec.t_grid, spec.seed)] * spec.mc_samples
    stats = parallel_map(_mc_task, payloads, workers, chunk=256)
    joints = np.array([s[0] for s in stats], dtype=float)
    margs = np.stack([s[1] for s in stats])
    return _estimate_from_indicators("haar_mc", spec, joints, margs, {"mc_samples": spec.mc_samples, "seed": spec.seed})


def _estimate_from_indicators(method, spec, joints, margs, meta) -> DistEstimate:
    n = len(joints)
    joint_p = float(joints.mean())
    marginal = margs.mean(axis=0)
    stderr = np.sqrt(np.maximum(marginal * (1 - marginal), 0.0) / n)
    return DistEstimate(
        method=method,
        t_grid=spec.t_grid.copy(),
        joint_prob=joint_p,
        joint_stderr=float(math.sqrt(max(joint_p * (1 - joint_p), 0.0) / n)),
        marginals=marginal,
        stderr=stderr,
        n_samples=n,
        meta=meta,
    )


def ks_distance(a: DistEstimate, b: DistEstimate) -> float:
    """Max absolute difference of the marginal CDF estimates on the shared grid."""
    if a.t_grid.shape != b.t_grid.shape or not np.allclose(a.t_grid, b.t_grid):
        raise ValueError("estimates use different threshold grids")
    if a.marginals.shape != b.marginals.shape:
        raise ValueError("estimates cover different joint depths")
    return float(np.abs(a.marginals - b.marginals).max())
