"""Autoregressive replay of trained networks and ensemble comparison analytics:
window-binned population deviations, per-DOF mean absolute errors at selected
times, and time-resolved coordinate distributions.
"""

import concurrent.futures
from dataclasses import dataclass

import numpy as np

from mmsqc.arrayio import write_atomic
from mmsqc.models import SiteExcitonModel
from mmsqc.sqc import (
    PopulationSeries,
    Trajectory,
    TrajectoryEnsemble,
    WindowConfig,
    _worker_chunks,
    pack_state,
    populations,
    sample_initial,
)
from mmsqc.surrogate import LstmParams, _FastParams, _forward
from mmsqc.streams import substream


class RolloutError(RuntimeError):
    """Non-finite prediction during autoregressive replay."""

    def __init__(self, step: int, trajectory: int | None = None):
        self.step = step
        self.trajectory = trajectory
        where = f" in trajectory {trajectory}" if trajectory is not None else ""
        super().__init__(f"non-finite prediction at step {step}{where}")

    def __reduce__(self):
        return (RolloutError, (self.step, self.trajectory))


@dataclass(frozen=True)
class RolloutConfig:
    n_traj: int
    total_steps: int
    seq_len: int           # chunk length, must match the checkpoint
    seed: int = 0
    init_state: int = 0
    record_dt: float = 1.0
    workers: int = 1

    def __post_init__(self):
        if min(self.n_traj, self.total_steps) < 1 or self.seq_len < 2:
            raise ValueError("n_traj, total_steps must be >= 1 and seq_len >= 2")
        if self.record_dt <= 0.0:
            raise ValueError("record_dt must be positive")


def _rollout_vectors(x0: np.ndarray, fp: _FastParams, total_steps: int,
                     seq_len: int) -> np.ndarray:
    """Chunked autoregression: (total_steps + 1, D) including x0 at step 0."""
    out = np.empty((total_steps + 1, x0.shape[0]))
    out[0] = x0
    x = x0[None]
    done = 0
    # a diverging prediction overflows to inf; the finite check reports it
    with np.errstate(over="ignore", invalid="ignore"):
        while done < total_steps:
            ys, _ = _forward(fp, x, seq_len)
            ys = ys[0]                                    # (L-1, D)
            take = min(len(ys), total_steps - done)
            if not np.all(np.isfinite(ys[:take])):
                bad = np.flatnonzero(~np.all(np.isfinite(ys[:take]), axis=1))[0]
                raise RolloutError(done + int(bad) + 1)
            out[done + 1:done + 1 + take] = ys[:take]
            done += take
            x = ys[-1][None]   # last forecast of the chunk seeds the next one
    return out


def rollout_trajectory(x0, params: LstmParams, total_steps: int, seq_len: int,
                       n_states: int, record_dt: float = 1.0) -> Trajectory:
    """Replay one trajectory from a single state vector."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (params.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, network expects ({params.dim},)")
    data = _rollout_vectors(x0, _FastParams(params), total_steps, seq_len)
    return Trajectory(record_dt, data, n_states)


def _rollout_chunk(params: LstmParams, starts: np.ndarray, total_steps: int,
                   seq_len: int, offset: int) -> np.ndarray:
    fp = _FastParams(params)
    out = np.empty((starts.shape[0], total_steps + 1, starts.shape[1]))
    for i in range(starts.shape[0]):
        try:
            out[i] = _rollout_vectors(starts[i], fp, total_steps, seq_len)
        except RolloutError as exc:
            raise RolloutError(exc.step, trajectory=offset + i) from None
    return out


def rollout_ensemble(model: SiteExcitonModel, params: LstmParams,
                     cfg: RolloutConfig,
                     window: WindowConfig = WindowConfig()) -> TrajectoryEnsemble:
    """Sample cfg.n_traj fresh initial conditions and replay each with the
    network. Initial draws use the same (seed, "sampling", i) streams as
    direct dynamics, so a reference ensemble with the same seed starts from
    identical conditions.
    """
    if params.dim != model.dim:
        raise ValueError(
            f"checkpoint dimension {params.dim} does not match model "
            f"{model.label} dimension {model.dim}"
        )
    starts = np.empty((cfg.n_traj, model.dim))
    for i in range(cfg.n_traj):
        rng = substream(cfg.seed, "sampling", i)
        starts[i] = pack_state(sample_initial(model, cfg.init_state, window, rng))

    data = np.empty((cfg.n_traj, cfg.total_steps + 1, model.dim))
    chunks = _worker_chunks(cfg.n_traj, cfg.workers)
    if len(chunks) == 1:
        a, b = chunks[0]
        data[a:b] = _rollout_chunk(params, starts[a:b], cfg.total_steps, cfg.seq_len, a)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [(a, b, pool.submit(_rollout_chunk, params, starts[a:b],
                                          cfg.total_steps, cfg.seq_len, a))
                       for a, b in chunks]
            for a, b, fut in futures:
                data[a:b] = fut.result()
    return TrajectoryEnsemble(cfg.record_dt, data, model.n_states,
                              model_label=model.label, seed=cfg.seed)


# ---------------------------------------------------------------------------
# comparisons


@dataclass
class PopulationDeviation:
    """Per-state absolute deviation between two binned population series."""

    mean_abs: np.ndarray   # (n_states,)
    max_abs: np.ndarray    # (n_states,)
    n_times: int           # time points compared (defined in both series)
    n_undefined: int       # time points skipped


def _check_same_grid(a: TrajectoryEnsemble, b: TrajectoryEnsemble) -> None:
    if a.n_records != b.n_records or a.record_dt != b.record_dt:
        raise ValueError(
            f"time grids differ: {a.n_records} x {a.record_dt} fs vs "
            f"{b.n_records} x {b.record_dt} fs"
        )
    if a.n_states != b.n_states or a.dim != b.dim:
        raise ValueError("ensembles come from different models")


def compare_populations(pred: TrajectoryEnsemble, ref: TrajectoryEnsemble,
                        window: WindowConfig = WindowConfig()) -> PopulationDeviation:
    """Window-bin both ensembles and report per-state |P_pred - P_ref| stats."""
    _check_same_grid(pred, ref)
    pop_pred = populations(pred, window)
    pop_ref = populations(ref, window)
    both = pop_pred.defined & pop_ref.defined
    if not np.any(both):
        raise ValueError("populations undefined at every time point")
    diff = np.abs(pop_pred.values[both] - pop_ref.values[both])
    return PopulationDeviation(diff.mean(axis=0), diff.max(axis=0),
                               int(both.sum()), int((~both).sum()))


@dataclass
class DofErrorTable:
    """Mean absolute error of each nuclear variable at selected times."""

    slice_times: np.ndarray   # (n_slices,) fs
    labels: list[str]         # 2*N_v labels, Q block then P block
    mae: np.ndarray           # (n_slices, 2*N_v)


def _time_indices(ensemble: TrajectoryEnsemble, slice_times) -> np.ndarray:
    idx = []
    for t in np.atleast_1d(np.asarray(slice_times, dtype=float)):
        i = round(t / ensemble.record_dt)
        if not (0 <= i < ensemble.n_records) or abs(i * ensemble.record_dt - t) > 1e-9:
            raise ValueError(f"slice time {t} fs is not on the ensemble grid")
        idx.append(i)
    return np.array(idx, dtype=int)


def dof_mae(pred: TrajectoryEnsemble, ref: TrajectoryEnsemble,
            slice_times) -> DofErrorTable:
    """Per-DOF MAE over index-aligned trajectories (trajectory i of both
    ensembles starts from the same initial condition)."""
    _check_same_grid(pred, ref)
    if pred.n_traj != ref.n_traj:
        raise ValueError(f"trajectory counts differ: {pred.n_traj} vs {ref.n_traj}")
    idx = _time_indices(pred, slice_times)
    ne = pred.n_states
    n_v = (pred.dim - 2 * ne) // 2
    nuclear_pred = pred.data[:, idx, 2 * ne:]
    nuclear_ref = ref.data[:, idx, 2 * ne:]
    mae = np.mean(np.abs(nuclear_pred - nuclear_ref), axis=0)
    labels = [f"Q{j}" for j in range(n_v)] + [f"P{j}" for j in range(n_v)]
    times = idx * pred.record_dt
    return DofErrorTable(times, labels, mae)


@dataclass
class CoordinateHistogram:
    """Time-resolved distribution of one state-vector variable; each time
    column is mass-normalized."""

    times: np.ndarray          # (n_times,)
    bin_centers: np.ndarray    # (bins,)
    density: np.ndarray        # (n_times, bins)
    variable: int


def coordinate_histogram(ensemble: TrajectoryEnsemble, variable: int,
                         bins: int = 50, value_range: tuple[float, float] = (-3.0, 3.0),
                         slice_times=None) -> CoordinateHistogram:
    """Histogram one variable over trajectories at each requested time
    (default: every recorded time)."""
    if not 0 <= variable < ensemble.dim:
        raise ValueError(f"variable index {variable} out of range for dim {ensemble.dim}")
    lo, hi = value_range
    if not lo < hi:
        raise ValueError(f"empty histogram range [{lo}, {hi})")
    if bins < 1:
        raise ValueError("need at least one bin")
    idx = (np.arange(ensemble.n_records) if slice_times is None
           else _time_indices(ensemble, slice_times))
    edges = np.linspace(lo, hi, bins + 1)
    density = np.empty((len(idx), bins))
    for row, i in enumerate(idx):
        counts, _ = np.histogram(ensemble.data[:, i, variable], bins=edges)
        total = counts.sum()
        density[row] = counts / total if total > 0 else 0.0
    return CoordinateHistogram(idx * ensemble.record_dt,
                               0.5 * (edges[:-1] + edges[1:]), density, variable)


# ---------------------------------------------------------------------------
# CSV output (fixed headers)


def _fmt(x) -> str:
    return repr(float(x))


def write_populations_csv(path: str, series: PopulationSeries) -> None:
    cols = ["time"] + [f"P{k + 1}" for k in range(series.n_states)] + ["unassigned"]
    lines = [",".join(cols)]
    for i, t in enumerate(series.times):
        row = [_fmt(t)] + [_fmt(v) for v in series.values[i]] + [_fmt(series.unassigned[i])]
        lines.append(",".join(row))
    write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_compare_csv(path: str, dev: PopulationDeviation) -> None:
    lines = ["state,mean_abs_dev,max_abs_dev"]
    for k in range(len(dev.mean_abs)):
        lines.append(f"P{k + 1},{_fmt(dev.mean_abs[k])},{_fmt(dev.max_abs[k])}")
    write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_mae_csv(path: str, table: DofErrorTable) -> None:
    header = ["dof_label"] + [f"t{t:g}" for t in table.slice_times]
    lines = [",".join(header)]
    for j, label in enumerate(table.labels):
        lines.append(",".join([label] + [_fmt(v) for v in table.mae[:, j]]))
    write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_histogram_csv(path: str, hist: CoordinateHistogram) -> None:
    lines = ["time,bin_center,density"]
    for i, t in enumerate(hist.times):
        for c, d in zip(hist.bin_centers, hist.density[i]):
            lines.append(f"{_fmt(t)},{_fmt(c)},{_fmt(d)}")
    write_atomic(path, ("\n".join(lines) + "\n").encode("utf-8"))
