"""Phase-averaged Monte-Carlo ensembles over the initial oscillator angles.

Each trajectory draws its angles from a counter-based stream keyed by
(seed, trajectory index), so the ensemble is reproducible for any chunking
or thread count, and any subset of trajectories can be re-run in isolation.
Aggregation always reduces in trajectory-index order.

Trajectories start from prescribed actions at t_start, sweep the physical
path at fixed eps to t_end, and the invariant jump of every degree of
freedom is extracted from a densely recorded tail window (loop method with
the drifting-center correction for the condensate).  Diverged or
unextractable trajectories are counted, not silently dropped; more than 1%
failures aborts the run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import actions as act
from . import _kernels
from .actions import ExtractionError
from .model import ModelParams
from .pathintegrate import PathSpec, evolve_path, physical_path, SegmentSettings

__all__ = [
    "EnsembleConfig",
    "EnsembleResult",
    "EnsembleError",
    "run_ensemble",
    "sweep",
    "sweep_to_csv",
    "result_to_dict",
]

MAX_FAILURE_FRACTION = 0.01


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    """One phase-averaged run: model, initial actions, sweep window, sampling."""

    params: ModelParams
    i_initial: tuple[float, ...]
    t_start: float = -500.0
    t_end: float = 1500.0
    n_traj: int = 600
    seed: int = 0
    dt: float = 0.002
    eps: float | None = None                    # path eps; default params.epsilon
    tail_window: float | None = None            # extraction window length (auto)
    tail_samples_per_period: int = 28           # of the fastest post-transition mode
    condensate_dofs: tuple[int, ...] = (0,)
    chunk_size: int = 150
    threads: int | None = None
    path: PathSpec | None = None                # overrides the physical path

    def __post_init__(self):
        object.__setattr__(self, "i_initial", tuple(float(v) for v in self.i_initial))
        if len(self.i_initial) != self.params.n_dof:
            raise ValueError("i_initial must have n_dof entries")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not (self.t_start < self.t_end):
            raise ValueError("t_start must be < t_end")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")

    @property
    def path_eps(self) -> float:
        return self.params.epsilon if self.eps is None else self.eps

    def resolve_tail(self) -> tuple[float, int]:
        """(window length, record-every-n-steps) for invariant extraction."""
        params, eps = self.params, self.path_eps
        s_end = self.t_end - 2.0 * eps * params.e[0]
        t_fast = 2.0 * np.pi / np.sqrt(2.0 * s_end)
        if params.n_dof > 1:
            w_slow = act.confined_frequency(params, 1, eps)
            t_slow = 2.0 * np.pi / w_slow
        else:
            t_slow = t_fast
        window = self.tail_window
        if window is None:
            window = max(3.25 * t_slow, 60.0 * t_fast)
            window = min(window, 0.45 * (self.t_end - self.t_start))
        rec_every = max(1, int(round(t_fast / self.tail_samples_per_period / self.dt)))
        return float(window), rec_every


@dataclass(frozen=True)
class EnsembleResult:
    mean_delta_i: np.ndarray
    stderr: np.ndarray
    n_traj: int
    n_failed: int
    config: EnsembleConfig
    wall_time: float
    delta_i_all: np.ndarray | None = None        # (n_traj, N), NaN rows = failed

    def __post_init__(self):
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be non-negative")
        if self.n_failed > self.n_traj:
            raise ValueError("n_failed cannot exceed n_traj")


def _angles_for(seed: int, index: int, n_dof: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    rng = np.random.Generator(np.random.Philox(ss))
    return rng.uniform(0.0, 2.0 * np.pi, n_dof)


def _init_chunk(config: EnsembleConfig, indices) -> tuple[np.ndarray, np.ndarray]:
    params = config.params
    n = params.n_dof
    w = act.harmonic_frequencies(params, config.t_start, config.path_eps)
    i0 = np.asarray(config.i_initial)
    x = np.empty((len(indices), n))
    p = np.empty((len(indices), n))
    for row, idx in enumerate(indices):
        phi = _angles_for(config.seed, int(idx), n)
        x[row] = np.sqrt(2.0 * i0 / w) * np.sin(phi)
        p[row] = np.sqrt(2.0 * i0 * w) * np.cos(phi)
    return x, p


def _extract_lane(params, eps, tt, x, p, condensate_dofs):
    """Final invariants of one recorded lane; raises ExtractionError."""
    n = params.n_dof
    iv = np.empty(n)
    for k in range(n):
        if k in condensate_dofs:
            sign = act.detect_branch(x[:, k])
            center = act.condensate_center(params, tt, eps, k, sign)
            drift = act.condensate_drift(params, tt, eps, k, sign)
        else:
            center = None
            drift = None
        iv[k], _, _ = act.loop_action(tt, x[:, k], p[:, k], center, drift)
    return iv


def _run_chunk_kernel(config: EnsembleConfig, indices):
    """Fast path: physical sweep via the compiled splitting kernel."""
    params = config.params
    eps = config.path_eps
    e = params.e_arr
    x, p = _init_chunk(config, indices)
    alive = np.ones(len(indices), dtype=np.bool_)

    window, rec_every = config.resolve_tail()
    span = config.t_end - config.t_start
    n_total = int(np.ceil(span / config.dt))
    # tail step count: multiple of rec_every so both endpoints are recorded
    n_tail = min(n_total, int(np.ceil(window / config.dt / rec_every)) * rec_every)
    n_main = n_total - n_tail
    dt = span / n_total
    t_tail = config.t_start + n_main * dt

    if n_main > 0:
        _kernels.evolve_batch(x, p, e, eps, config.t_start, dt, n_main, alive,
                              max(1, n_main // 64))
    m = n_tail // rec_every + 1
    rec_x = np.zeros((m, len(indices), params.n_dof))
    rec_p = np.zeros_like(rec_x)
    _kernels.evolve_record_batch(x, p, e, eps, t_tail, dt, n_tail, rec_every,
                                 rec_x, rec_p, alive)
    tt = t_tail + dt * rec_every * np.arange(m)

    delta = np.full((len(indices), params.n_dof), np.nan)
    i0 = np.asarray(config.i_initial)
    for row in range(len(indices)):
        if not alive[row]:
            continue
        try:
            i_fin = _extract_lane(params, eps, tt, rec_x[:, row], rec_p[:, row],
                                  config.condensate_dofs)
        except ExtractionError:
            alive[row] = False
            continue
        delta[row] = act.delta_invariants(params, i0, i_fin, config.condensate_dofs)
    return delta


def _run_chunk_generic(config: EnsembleConfig, indices):
    """Arbitrary-path ensembles: per-trajectory evolve_path (slow)."""
    params = config.params
    path = config.path
    end = path.waypoints[-1]
    window, rec_every = config.resolve_tail()
    delta = np.full((len(indices), params.n_dof), np.nan)
    i0 = np.asarray(config.i_initial)
    n_samples = max(2000, int(20 * path.n_segments / max(config.dt, 1e-6)))
    for row, idx in enumerate(indices):
        phi = _angles_for(config.seed, int(idx), params.n_dof)
        state = act.init_from_action_angle(params, path.waypoints[0].t, i0, phi,
                                           eps=path.waypoints[0].eps)
        try:
            rec = evolve_path(params, state, path, n_samples=n_samples)
            tail = rec.window(end.t - window, end.t)
            i_fin = _extract_lane(params, end.eps, tail.t, tail.x, tail.p,
                                  config.condensate_dofs)
        except (ExtractionError, RuntimeError):
            continue
        delta[row] = act.delta_invariants(params, i0, i_fin, config.condensate_dofs)
    return delta


def run_ensemble(config: EnsembleConfig) -> EnsembleResult:
    """Run all trajectories and aggregate the invariant jumps.

    Deterministic for a given config: angle streams are keyed by
    (seed, trajectory index) and the reduction order is fixed.
    """
    t_begin = time.perf_counter()
    if config.threads is not None:
        import numba
        numba.set_num_threads(max(1, min(config.threads,
                                         numba.config.NUMBA_NUM_THREADS)))
    all_idx = np.arange(config.n_traj)
    rows = []
    runner = _run_chunk_generic if config.path is not None else _run_chunk_kernel
    for lo in range(0, config.n_traj, config.chunk_size):
        rows.append(runner(config, all_idx[lo:lo + config.chunk_size]))
    delta = np.vstack(rows)
    good = ~np.any(np.isnan(delta), axis=1)
    n_failed = int(np.sum(~good))
    if n_failed > MAX_FAILURE_FRACTION * config.n_traj:
        raise EnsembleError(
            f"{n_failed}/{config.n_traj} trajectories failed "
            f"(> {MAX_FAILURE_FRACTION:.0%})")
    ok = delta[good]
    mean = ok.mean(axis=0)
    if ok.shape[0] >= 2:
        stderr = ok.std(axis=0, ddof=1) / np.sqrt(ok.shape[0])
    else:
        stderr = np.zeros(config.params.n_dof)
    return EnsembleResult(
        mean_delta_i=mean, stderr=stderr, n_traj=config.n_traj,
        n_failed=n_failed, config=config,
        wall_time=time.perf_counter() - t_begin, delta_i_all=delta,
    )


SWEEP_AXES = ("epsilon", "i_initial")


def sweep(config: EnsembleConfig, axis: str, values) -> list[EnsembleResult]:
    """One ensemble per value of the chosen axis.

    Each value gets seed = config.seed + its index, so single points can be
    reproduced independently with run_ensemble.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}")
    values = list(values)
    if not values:
        raise ValueError("values must be nonempty")
    results = []
    for i, v in enumerate(values):
        if axis == "epsilon":
            params = replace(config.params, epsilon=float(v))
            cfg = replace(config, params=params, eps=None, seed=config.seed + i)
        else:
            if not (v > 0):
                raise ValueError("initial actions must be positive")
            i0 = (float(v),) * config.params.n_dof
            cfg = replace(config, i_initial=i0, seed=config.seed + i)
        results.append(run_ensemble(cfg))
    return results


def config_to_dict(config: EnsembleConfig) -> dict:
    d = {
        "model": config.params.to_config_dict(),
        "i_initial": list(config.i_initial),
        "t_start": config.t_start,
        "t_end": config.t_end,
        "n_traj": config.n_traj,
        "seed": config.seed,
        "dt": config.dt,
        "eps": config.path_eps,
        "tail_window": config.resolve_tail()[0],
        "condensate_dofs": list(config.condensate_dofs),
        "chunk_size": config.chunk_size,
    }
    if config.path is not None:
        d["path"] = [[w.t, w.eps] for w in config.path.waypoints]
    return d


def result_to_dict(result: EnsembleResult) -> dict:
    return {
        "mean_delta_i": [float(v) for v in result.mean_delta_i],
        "stderr": [float(v) for v in result.stderr],
        "n_traj": result.n_traj,
        "n_failed": result.n_failed,
        "wall_time": result.wall_time,
        "config": config_to_dict(result.config),
    }


def sweep_to_csv(axis_values, results: list[EnsembleResult]) -> str:
    """CSV rows "axis_value,mean_dI1,stderr_dI1,...,n_failed"."""
    n = results[0].config.params.n_dof
    cols = ["axis_value"]
    for k in range(n):
        cols += [f"mean_dI{k + 1}", f"stderr_dI{k + 1}"]
    cols.append("n_failed")
    lines = [",".join(cols)]
    for v, r in zip(axis_values, results):
        row = [repr(float(v))]
        for k in range(n):
            row += [repr(float(r.mean_delta_i[k])), repr(float(r.stderr[k]))]
        row.append(str(r.n_failed))
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
