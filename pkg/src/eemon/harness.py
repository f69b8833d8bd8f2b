"""Experiment scaffolding: geometry, channel draws, sweeps, and records.

The reference scenario places the five nodes in a plane and draws every
link i.i.d. circular complex Gaussian with per-entry variance following a
distance power law. Sweeps run the solvers over a parameter grid times a
trial count; records are plain rows, aggregation belongs to the plotting
layer. Everything downstream is deterministic in the master seed.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .model import (
    ChannelSet,
    DelayMode,
    SystemParams,
    circuit_power,
    nee,
    rate_monitor,
    rate_secondary,
    rate_suspicious,
    transmit_power,
    zf_nullspace,
)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0 - 3.0)


class AntennaDims(NamedTuple):
    """Array sizes: T transmit / T receive / monitor antennas."""

    n_tx: int
    n_rx: int
    n_mon: int


@dataclass(frozen=True)
class Topology:
    """Planar node positions plus the distance gain law.

    A link of length d has per-entry channel variance
    ``gain_ref * d ** -pl_exponent``. The loopback channel at T has no
    distance; its entries are unit variance (the zero-forcing basis is all
    that survives of it, and that basis is scale-invariant).
    """

    source: tuple[float, float]
    destination: tuple[float, float]
    transmitter: tuple[float, float]
    receiver: tuple[float, float]
    monitor: tuple[float, float]
    gain_ref: float = 1.0
    pl_exponent: float = 3.0

    def __post_init__(self):
        if self.gain_ref <= 0:
            raise ValueError("gain_ref must be strictly positive")
        for name, other in self._links():
            if self._distance(name, other) <= 0:
                raise ValueError(f"{other}->{name} link has zero length")

    @staticmethod
    def _links():
        # receiver-sender pairs of every drawn link
        return (
            ("destination", "source"),
            ("receiver", "source"),
            ("transmitter", "source"),
            ("destination", "transmitter"),
            ("receiver", "transmitter"),
            ("monitor", "transmitter"),
        )

    def _distance(self, a: str, b: str) -> float:
        xa, ya = getattr(self, a)
        xb, yb = getattr(self, b)
        return float(np.hypot(xa - xb, ya - yb))

    def link_std(self, a: str, b: str) -> float:
        """Per-entry standard deviation of the channel from node b to a."""
        var = self.gain_ref * self._distance(a, b) ** (-self.pl_exponent)
        return float(np.sqrt(var))


def generate_channels(
    topology: Topology, dims: AntennaDims, seed: int | np.random.SeedSequence
) -> ChannelSet:
    """Draw one ChannelSet for the given geometry, deterministic in seed."""
    rng = np.random.default_rng(seed)

    def draw(std, *shape):
        re = rng.standard_normal(shape)
        im = rng.standard_normal(shape)
        return std * (re + 1j * im) / np.sqrt(2.0)

    return ChannelSet(
        h_ds=complex(draw(topology.link_std("destination", "source"))),
        h_rs=complex(draw(topology.link_std("receiver", "source"))),
        h_ts=draw(topology.link_std("transmitter", "source"), dims.n_rx),
        h_dt=draw(topology.link_std("destination", "transmitter"), dims.n_tx),
        h_rt=draw(topology.link_std("receiver", "transmitter"), dims.n_tx),
        h_mt=draw(topology.link_std("monitor", "transmitter"), dims.n_mon, dims.n_tx),
        h_tt=draw(1.0, dims.n_rx, dims.n_tx),
    )


def default_params() -> tuple[SystemParams, Topology, AntennaDims]:
    """Reference-scenario defaults: geometry, powers, and array sizes."""
    params = SystemParams(
        p_s=dbm_to_watts(10.0),
        p_max=dbm_to_watts(25.0),
        r_th=0.5,
    )
    topology = Topology(
        source=(-0.5, 0.0),
        destination=(0.5, 0.0),
        transmitter=(0.0, 1.0),
        receiver=(0.0, 0.3),
        monitor=(0.0, 2.0),
    )
    return params, topology, AntennaDims(n_tx=5, n_rx=3, n_mon=4)


# -- sweeps and records --------------------------------------------------------


_PARAM_FIELDS = {f.name for f in fields(SystemParams)}

# preset sweeps: the named experiments with their default grids, designers,
# and trial counts; grids and trials stay overridable from the config
_PRESETS: dict[str, dict] = {
    "fig3": dict(designs=("nee",), trials=1, trace=True, grid={"p_max_dbm": (25.0,)}),
    "fig4": dict(
        designs=("nee", "wsr"),
        trials=100,
        grid={"p_max_dbm": (10.0, 15.0, 20.0, 25.0, 30.0)},
    ),
    "fig5": dict(
        designs=("nee", "dinkelbach"),
        trials=100,
        grid={"r_th": (0.5, 1.0, 1.5, 2.0, 2.5)},
    ),
    "fig6": dict(
        designs=("nee",),
        trials=100,
        grid={"alpha_d": (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)},
    ),
    "fig7": dict(
        designs=("nee",),
        trials=100,
        grid={
            "d_t": (-1.0, -0.5, 0.0, 0.5, 1.0),
            "d_m": (1.0, 1.5, 2.0, 2.5, 3.0),
        },
    ),
    "fig8": dict(designs=("robust",), trials=1, trace=True, grid={"eps": (0.02,)}),
    "fig9": dict(
        designs=("robust", "nee"), trials=100, grid={"eps": (0.01, 0.02, 0.05)}
    ),
    "fig10": dict(
        designs=("robust", "nonrobust"),
        trials=100,
        grid={"eps": (0.01, 0.02, 0.05, 0.1)},
        overrides={"r_th": 1.5},
        truth_draw=True,
    ),
    "custom": dict(designs=("nee",), trials=100, grid=None),
}

_DESIGNS = ("nee", "wsr", "dinkelbach", "robust", "nonrobust")
_GEOMETRY_KEYS = {"d_t", "d_m"}


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep: what to run, over which grid, how many trials, where to.

    ``grid`` maps swept names to value tuples; names are SystemParams
    fields (append ``_dbm`` to give a power in dBm, converted on entry),
    ``eps`` for the error-radius scale, or ``d_t``/``d_m`` for the
    transmitter and monitor positions. None takes the experiment preset.
    ``overrides`` pins unswept SystemParams fields, including
    ``delay_mode`` to run a single mode. ``designs`` replaces the preset
    designer list; ``custom`` sweeps need an explicit grid.
    """

    experiment: str
    grid: Mapping[str, tuple[float, ...]] | None = None
    trials: int | None = None
    seed: int = 0
    overrides: Mapping[str, object] = field(default_factory=dict)
    designs: tuple[str, ...] | None = None
    eps: float | None = None
    dims: AntennaDims | None = None
    out: str | None = None

    def __post_init__(self):
        if self.experiment not in _PRESETS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.trials is not None and self.trials < 1:
            raise ValueError("trials must be at least 1")
        grid = self.grid
        if grid is None and _PRESETS[self.experiment]["grid"] is None:
            raise ValueError("a custom sweep needs an explicit grid")
        if grid is not None:
            if not grid or any(len(v) == 0 for v in grid.values()):
                raise ValueError("swept grids must be non-empty")
            for key in grid:
                self._check_key(key)
        for key in self.overrides:
            if key == "delay_mode":
                continue
            self._check_key(key)
        if self.designs is not None:
            bad = set(self.designs) - set(_DESIGNS)
            if bad:
                raise ValueError(f"unknown designs {sorted(bad)}")
            if not self.designs:
                raise ValueError("designs must be non-empty when given")
        if self.eps is not None and self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.dims is not None and self.dims.n_tx <= self.dims.n_rx:
            raise ValueError("zero-forcing needs more transmit than receive antennas")

    @staticmethod
    def _check_key(key: str) -> None:
        base = key[:-4] if key.endswith("_dbm") else key
        if base in _PARAM_FIELDS or key in _GEOMETRY_KEYS or key == "eps":
            return
        raise ValueError(f"unknown swept parameter {key!r}")


@dataclass(frozen=True)
class ResultRecord:
    """One designer on one instance at one grid point, flattened.

    ``eta_d`` and ``eta_r`` are the unweighted per-link efficiencies, so
    a feasible row satisfies nee = alpha_d * eta_d + alpha_r * eta_r with
    the weights the run used. ``status`` is "ok" for a solved design,
    "trace" for per-iteration rows, "outage"/"ok" for truth-draw rows,
    "infeasible" when initialization proved hopeless, and "failed" when a
    step aborted. Wall time never reaches the CSV; rows are functions of
    (config, seed) alone.
    """

    experiment: str
    seed: int
    swept: Mapping[str, float]
    delay_mode: str
    design: str
    nee: float
    eta_d: float
    eta_r: float
    rate_dest: float
    rate_relay: float
    rate_monitor: float
    power: float
    iterations: int
    status: str
    wall_time: float = 0.0

    def __post_init__(self):
        if self.status == "ok" and not math.isfinite(self.nee):
            raise ValueError("a solved record needs a finite efficiency")


_CSV_FIELDS = (
    "nee",
    "eta_d",
    "eta_r",
    "rate_dest",
    "rate_relay",
    "rate_monitor",
    "power",
    "iterations",
    "status",
)


def _apply_point(point, params, topology):
    """Grid values onto the parameter set and geometry; eps rides apart."""
    eps = None
    for key, value in point.items():
        if key == "eps":
            eps = float(value)
        elif key == "d_t":
            topology = replace(topology, transmitter=(float(value), 1.0))
        elif key == "d_m":
            topology = replace(topology, monitor=(0.0, float(value)))
        elif key.endswith("_dbm"):
            params = replace(params, **{key[:-4]: dbm_to_watts(float(value))})
        else:
            params = replace(params, **{key: value})
    return params, topology, eps


def _swept_values(point):
    """What the record stores: powers in watts, everything else as given."""
    out = {}
    for key, value in point.items():
        if key.endswith("_dbm"):
            out[key[:-4]] = dbm_to_watts(float(value))
        else:
            out[key] = float(value)
    return out


class _Plan(NamedTuple):
    config: ExperimentConfig
    params: SystemParams
    topology: Topology
    dims: AntennaDims
    points: tuple
    designs: tuple
    modes: tuple
    trials: int
    trace: bool
    truth_draw: bool
    eps: float


def _resolve(config: ExperimentConfig) -> _Plan:
    preset = _PRESETS[config.experiment]
    params, topology, dims = default_params()
    merged = dict(preset.get("overrides", {}))
    merged.update(config.overrides)
    modes = (DelayMode.NNPD, DelayMode.NPD)
    for key, value in merged.items():
        if key == "delay_mode":
            mode = DelayMode(value) if not isinstance(value, DelayMode) else value
            modes = (mode,)
            continue
        if key.endswith("_dbm"):
            params = replace(params, **{key[:-4]: dbm_to_watts(float(value))})
        else:
            params = replace(params, **{key: value})
    grid = dict(config.grid if config.grid is not None else preset["grid"])
    keys = list(grid)
    points = tuple(
        dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))
    )
    return _Plan(
        config=config,
        params=params,
        topology=topology,
        dims=config.dims if config.dims is not None else dims,
        points=points,
        designs=tuple(config.designs or preset["designs"]),
        modes=modes,
        trials=config.trials if config.trials is not None else preset["trials"],
        trace=preset.get("trace", False),
        truth_draw=preset.get("truth_draw", False),
        eps=config.eps if config.eps is not None else 0.0,
    )


def _finished_record(plan, point, trial, mode, design_kind, values, iters, wall):
    (r_d, r_r, r_m, p_t, total, eta_d, eta_r, status) = values
    return ResultRecord(
        experiment=plan.config.experiment,
        seed=trial,
        swept=_swept_values(point),
        delay_mode=mode.value,
        design=design_kind,
        nee=total,
        eta_d=eta_d,
        eta_r=eta_r,
        rate_dest=r_d,
        rate_relay=r_r,
        rate_monitor=r_m,
        power=p_t,
        iterations=iters,
        status=status,
        wall_time=wall,
    )


def _failure_record(plan, point, trial, mode, design_kind, status, wall):
    nan = float("nan")
    values = (nan, nan, nan, nan, nan, nan, nan, status)
    return _finished_record(plan, point, trial, mode, design_kind, values, 0, wall)


def _evaluate_design(design, channels, params, zf):
    """True rates, power and efficiencies of a fixed design on channels."""
    r_d = rate_suspicious(design.G, design.v, channels, params, zf)
    r_r = rate_secondary(design.G, design.v, channels, params, zf)
    r_m = rate_monitor(design.G, design.v, design.u, channels, params, zf)
    p_t = transmit_power(design.G, design.v, channels, params)
    val = nee(design.G, design.v, channels, params, zf)
    return r_d, r_r, r_m, p_t, val.total, val.eta_d, val.eta_r


def _run_point_design(plan, point, trial, mode, design_kind, channels, zf, cache):
    from .pathfollow import (
        InitializationError,
        SolverConfig,
        StepError,
        solve_dinkelbach_ica,
        solve_nee_perfect,
        solve_wsr,
    )
    from .robust import AoConfig, UncertaintyModel, solve_robust

    params, _, eps = _apply_point(point, plan.params, plan.topology)
    params = replace(params, delay_mode=mode)
    if eps is None:
        eps = plan.eps
    # the exact-knowledge designs do not depend on the error level, so one
    # solve serves every eps point of this trial
    cache_key = (
        design_kind,
        mode,
        tuple(sorted((k, v) for k, v in point.items() if k != "eps")),
    )
    start = time.perf_counter()
    try:
        if design_kind == "robust":
            unc = UncertaintyModel.scaled(channels, eps)
            design, dink, trace = solve_robust(
                channels, unc, params, zf, AoConfig(seed=trial)
            )
            solved = (design, dink, trace)
        elif cache_key in cache:
            solved = cache[cache_key]
        else:
            solver = {
                "nee": solve_nee_perfect,
                "nonrobust": solve_nee_perfect,
                "wsr": solve_wsr,
                "dinkelbach": solve_dinkelbach_ica,
            }[design_kind]
            solved = cache[cache_key] = solver(
                channels, params, zf, SolverConfig(seed=trial)
            )
    except InitializationError:
        wall = time.perf_counter() - start
        return [_failure_record(plan, point, trial, mode, design_kind, "infeasible", wall)]
    except StepError:
        wall = time.perf_counter() - start
        return [_failure_record(plan, point, trial, mode, design_kind, "failed", wall)]
    wall = time.perf_counter() - start

    if design_kind == "robust":
        design, dink, trace = solved
        iters = trace.outer_iterations
        if plan.trace:
            return [
                _finished_record(
                    plan,
                    {**point, "iteration": k},
                    trial,
                    mode,
                    design_kind,
                    (math.nan,) * 4 + (price, math.nan, math.nan, "trace"),
                    iters,
                    wall,
                )
                for k, price in enumerate(trace.prices)
            ]
        if plan.truth_draw:
            return [
                _truth_record(
                    plan, point, trial, mode, design_kind, design, eps, params, zf,
                    iters, wall, channels,
                )
            ]
        # certified values: the ratio prices certified rates against the
        # certified consumption, so the row stays an efficiency identity.
        # t_pow covers the forwarded signal only; noise forwarding and
        # jamming spend power deterministically on top of it
        G = np.asarray(design.G)
        p_cert = (
            dink.t_pow
            + params.sigma2_t * float(np.real(np.vdot(G, G)))
            + float(np.real(np.vdot(design.v, design.v)))
        )
        q_cert = p_cert / params.xi + circuit_power(channels, params)
        r_d_cert = (
            dink.t_dest / params.alpha_d
            if params.alpha_d > 0
            else rate_suspicious(design.G, design.v, channels, params, zf)
        )
        r_r_cert = (
            dink.t_sec / params.alpha_r
            if params.alpha_r > 0
            else rate_secondary(design.G, design.v, channels, params, zf)
        )
        r_m = rate_monitor(design.G, design.v, design.u, channels, params, zf)
        values = (
            r_d_cert,
            r_r_cert,
            r_m,
            p_cert,
            dink.ratio,
            r_d_cert / q_cert,
            r_r_cert / q_cert,
            "ok",
        )
        return [_finished_record(plan, point, trial, mode, design_kind, values, iters, wall)]

    design, trace = solved
    if plan.trace:
        return [
            _finished_record(
                plan,
                {**point, "iteration": k},
                trial,
                mode,
                design_kind,
                (math.nan,) * 4 + (obj, math.nan, math.nan, "trace"),
                trace.iterations,
                wall,
            )
            for k, obj in enumerate(trace.objectives)
        ]
    if plan.truth_draw:
        return [
            _truth_record(
                plan, point, trial, mode, design_kind, design, eps, params, zf,
                trace.iterations, wall, channels,
            )
        ]
    values = _evaluate_design(design, channels, params, zf) + ("ok",)
    return [_finished_record(plan, point, trial, mode, design_kind, values, trace.iterations, wall)]


def _truth_record(
    plan, point, trial, mode, design_kind, design, eps, params, zf, iters, wall, channels
):
    """Evaluate the fixed design at one in-ball truth; flag misses.

    The truth direction is a function of the trial alone, so across the
    eps grid each trial sees the same error scaled to the radius and the
    designer comparison stays paired.
    """
    from .robust import UncertaintyModel, sample_perturbations

    unc = UncertaintyModel.scaled(channels, eps)
    truth_seed = int(
        np.random.SeedSequence(
            entropy=plan.config.seed, spawn_key=(trial, 7)
        ).generate_state(1)[0]
    )
    sample = sample_perturbations(unc, 1, seed=truth_seed, sphere_every=None)[0]
    truth = sample.apply(channels)
    r_d, r_r, r_m, p_t, total, eta_d, eta_r = _evaluate_design(
        design, truth, params, zf
    )
    missed = r_r < params.r_th - 1e-6 or r_m < r_d - 1e-6
    values = (r_d, r_r, r_m, p_t, total, eta_d, eta_r, "outage" if missed else "ok")
    return _finished_record(plan, point, trial, mode, design_kind, values, iters, wall)


def _run_trial(plan: _Plan, trial: int) -> list[ResultRecord]:
    records = []
    cache: dict = {}
    child = np.random.SeedSequence(entropy=plan.config.seed, spawn_key=(trial,))
    for point in plan.points:
        _, topology, _ = _apply_point(point, plan.params, plan.topology)
        channels = generate_channels(topology, plan.dims, child)
        zf = zf_nullspace(channels.h_tt)
        for design_kind in plan.designs:
            for mode in plan.modes:
                records.extend(
                    _run_point_design(
                        plan, point, trial, mode, design_kind, channels, zf, cache
                    )
                )
    return records


def run_experiment(config: ExperimentConfig, workers: int = 1) -> list[ResultRecord]:
    """Run one sweep: every grid point times trial times designer and mode.

    Per-trial sub-seeds come from a splittable scheme keyed on the trial
    index, so any record is a function of (config, trial) alone and the
    execution order never matters. Failures become records, not crashes.
    When the config names an output path the records are also written
    there with their metadata sidecar.
    """
    plan = _resolve(config)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_run_trial, plan, trial) for trial in range(plan.trials)
            ]
            per_trial = [f.result() for f in futures]
    else:
        per_trial = [_run_trial(plan, trial) for trial in range(plan.trials)]
    records = [record for batch in per_trial for record in batch]
    if config.out is not None:
        write_records(records, config.out, config)
    return records


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_records(records, path, config: ExperimentConfig | None = None):
    """Records to CSV (12 significant digits) plus a metadata sidecar.

    Rows carry no wall time, so identical (config, seed) reruns produce
    byte-identical files; aggregate timing lands in the sidecar instead.
    """
    path = Path(path)
    swept_keys = sorted({key for record in records for key in record.swept})
    header = ["experiment", "seed", *swept_keys, "delay_mode", "design", *_CSV_FIELDS]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for record in records:
            row = [record.experiment, record.seed]
            row += [_fmt(record.swept.get(key, math.nan)) for key in swept_keys]
            row += [record.delay_mode, record.design]
            row += [_fmt(getattr(record, name)) for name in _CSV_FIELDS]
            writer.writerow(row)
    sidecar = path.with_suffix(".meta.json")
    meta = {
        "version": _version(),
        "records": len(records),
        "wall_time": round(sum(record.wall_time for record in records), 3),
    }
    if config is not None:
        meta["config"] = {
            "experiment": config.experiment,
            "grid": None
            if config.grid is None
            else {key: list(values) for key, values in config.grid.items()},
            "trials": config.trials,
            "seed": config.seed,
            "overrides": {
                key: getattr(value, "value", value)
                for key, value in config.overrides.items()
            },
            "designs": None if config.designs is None else list(config.designs),
            "eps": config.eps,
            "dims": None if config.dims is None else list(config.dims),
        }
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _version() -> str:
    from . import __version__

    return __version__
