"""Command line front end.

Every subcommand is addressable by seed, so any printed figure can be
regenerated exactly. Solvers and the sweep machinery are imported lazily
inside the handlers; `--help` stays instant.

    eemon solve-perfect --seed 3 --mode npd
    eemon solve-robust --eps 0.02 --dims 3,2,2 --out design.json
    eemon sweep fig4 --trials 20 --out fig4.csv
    eemon sweep custom --config sweep.toml
    eemon outage --eps 0.05 --trials 20 --design both
    eemon lemma-check --trials 10000
    eemon selftest

A sweep config is TOML mirroring ExperimentConfig: scalar keys at the top
level, swept values under [grid], pinned fields under [overrides]. Flags
given on the command line win over file values.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness import (
    AntennaDims,
    ExperimentConfig,
    default_params,
    generate_channels,
    run_experiment,
    write_records,
)
from .model import DelayMode, nee, transmit_power, zf_nullspace


def _parse_dims(text: str) -> AntennaDims:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("dims must be n_tx,n_rx,n_mon")
    try:
        dims = AntennaDims(*(int(p) for p in parts))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if dims.n_tx <= dims.n_rx:
        raise argparse.ArgumentTypeError(
            "zero-forcing needs more transmit than receive antennas"
        )
    return dims


def _scenario(args):
    """Default scenario with the command's mode/dims/seed applied."""
    params, topology, dims = default_params()
    if getattr(args, "mode", None):
        params = replace(params, delay_mode=DelayMode(args.mode))
    if getattr(args, "dims", None):
        dims = args.dims
    channels = generate_channels(topology, dims, args.seed)
    return params, topology, dims, channels


def _carray(x) -> dict:
    arr = np.asarray(x, dtype=complex)
    return {"re": arr.real.tolist(), "im": arr.imag.tolist()}


def _dump_design(path: str, design, metrics: dict) -> None:
    payload = dict(metrics)
    payload["G"] = _carray(design.G)
    payload["v"] = _carray(design.v)
    if design.u is not None:
        payload["u"] = _carray(design.u)
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def _print_kv(pairs) -> None:
    width = max(len(k) for k, _ in pairs)
    for key, value in pairs:
        print(f"{key:<{width}}  {value}")


# -- single instances ----------------------------------------------------------


def cmd_gen_channels(args) -> int:
    _, topology, dims, channels = _scenario(args)
    fields = {
        name: np.asarray(getattr(channels, name))
        for name in ("h_ds", "h_rs", "h_ts", "h_dt", "h_rt", "h_mt", "h_tt")
    }
    np.savez(args.out, seed=args.seed, dims=np.asarray(dims), **fields)
    _print_kv(
        [("written", args.out), ("seed", args.seed)]
        + [(k, f"norm {np.linalg.norm(v):.6g}  shape {v.shape}") for k, v in fields.items()]
    )
    return 0


def cmd_solve_perfect(args) -> int:
    from .pathfollow import InitializationError, SolverConfig, solve_nee_perfect

    params, _, _, channels = _scenario(args)
    zf = zf_nullspace(channels.h_tt)
    try:
        design, trace = solve_nee_perfect(
            channels, params, zf, SolverConfig(seed=args.seed)
        )
    except InitializationError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    value = nee(design.G, design.v, channels, params, zf)
    metrics = {
        "nee": value.total,
        "eta_d": value.eta_d,
        "eta_r": value.eta_r,
        "power": transmit_power(design.G, design.v, channels, params),
        "iterations": trace.iterations,
        "converged": trace.converged,
        "seed": args.seed,
        "delay_mode": params.delay_mode.value,
    }
    _print_kv([(k, f"{v:.6g}" if isinstance(v, float) else v) for k, v in metrics.items()])
    if args.out:
        _dump_design(args.out, design, metrics)
    return 0


def cmd_solve_robust(args) -> int:
    from .pathfollow import InitializationError
    from .robust import AoConfig, UncertaintyModel, solve_robust, worst_case_check

    params, _, _, channels = _scenario(args)
    zf = zf_nullspace(channels.h_tt)
    unc = UncertaintyModel.scaled(channels, args.eps)
    try:
        design, state, trace = solve_robust(channels, unc, params, zf, AoConfig(seed=args.seed))
    except InitializationError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    stats = worst_case_check(design, unc, params, zf, n_samples=args.check_samples, seed=args.seed)
    metrics = {
        "worst_case_nee": state.ratio,
        "t_dest": state.t_dest,
        "t_sec": state.t_sec,
        "t_pow": state.t_pow,
        "outer_iterations": trace.outer_iterations,
        "converged": trace.converged,
        "check_violations": f"{stats.violations}/{stats.n_samples}",
        "eps": args.eps,
        "seed": args.seed,
        "delay_mode": params.delay_mode.value,
    }
    _print_kv([(k, f"{v:.6g}" if isinstance(v, float) else v) for k, v in metrics.items()])
    if args.out:
        _dump_design(args.out, design, metrics)
    return int(stats.violations > 0)


# -- sweeps --------------------------------------------------------------------


def _load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
        import tomli as tomllib
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _config_from_file(data: dict) -> dict:
    """TOML tables to ExperimentConfig keywords, with shape normalization."""
    known = {"experiment", "grid", "trials", "seed", "overrides", "designs", "eps", "dims", "out"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown config keys {sorted(unknown)}")
    kwargs = dict(data)
    if "grid" in kwargs:
        kwargs["grid"] = {
            key: tuple(val) if isinstance(val, (list, tuple)) else (val,)
            for key, val in kwargs["grid"].items()
        }
    if "designs" in kwargs:
        kwargs["designs"] = tuple(kwargs["designs"])
    if "dims" in kwargs:
        dims = kwargs["dims"]
        if not (isinstance(dims, (list, tuple)) and len(dims) == 3):
            raise ValueError("dims must be a three-element list [n_tx, n_rx, n_mon]")
        kwargs["dims"] = AntennaDims(*(int(d) for d in dims))
    return kwargs


def cmd_sweep(args) -> int:
    try:
        kwargs = _config_from_file(_load_toml(args.config)) if args.config else {}
    except (OSError, ValueError) as exc:
        print(f"bad sweep config: {exc}", file=sys.stderr)
        return 2
    if args.experiment:
        kwargs["experiment"] = args.experiment
    if "experiment" not in kwargs:
        print("no experiment named on the command line or in the config", file=sys.stderr)
        return 2
    for flag in ("trials", "seed", "eps", "out"):
        value = getattr(args, flag)
        if value is not None:
            kwargs[flag] = value
    if args.mode:
        overrides = dict(kwargs.get("overrides", {}))
        overrides["delay_mode"] = args.mode
        kwargs["overrides"] = overrides
    kwargs.setdefault("seed", 0)
    kwargs.setdefault("out", f"{kwargs['experiment']}.csv")
    try:
        config = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        print(f"bad sweep config: {exc}", file=sys.stderr)
        return 2
    start = time.perf_counter()
    records = run_experiment(config, workers=args.workers)
    elapsed = time.perf_counter() - start
    statuses = sorted({r.status for r in records})
    _print_kv(
        [
            ("experiment", config.experiment),
            ("records", len(records)),
            ("statuses", ", ".join(statuses)),
            ("out", config.out),
            ("wall_time", f"{elapsed:.1f} s"),
        ]
    )
    return 0


def cmd_outage(args) -> int:
    from .robust import AoConfig, outage_probability

    params, topology, dims = default_params()
    if args.mode:
        params = replace(params, delay_mode=DelayMode(args.mode))
    if args.dims:
        dims = args.dims
    if args.r_th is not None:
        params = replace(params, r_th=args.r_th)
    rules = ("robust", "nonrobust") if args.design == "both" else (args.design,)
    cfg = AoConfig(seed=args.seed)
    for rule in rules:
        prob = outage_probability(
            rule, args.eps, params, topology, dims, n_trials=args.trials, seed=args.seed, cfg=cfg
        )
        print(f"{rule:<10}  outage {prob:.4f}  (eps {args.eps}, {args.trials} trials)")
    return 0


# -- self checks ---------------------------------------------------------------


def _bound_families(rng, dim=4):
    """Samplers for each inequality: name, direction, point/query factory."""
    from .surrogate import BoundKind

    def positive():
        return float(rng.lognormal(mean=0.0, sigma=1.2))

    def cvec():
        return rng.standard_normal(dim) + 1j * rng.standard_normal(dim)

    def hpd(n=3):
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        return a @ a.conj().T + 0.1 * np.eye(n)

    return (
        (BoundKind.LOG_UPPER, "upper", lambda: (positive(), positive())),
        (BoundKind.INV_PRODUCT_LOWER, "lower", lambda: ((positive(), positive()), (positive(), positive()))),
        (BoundKind.LOG_OVER_LIN_LOWER, "lower", lambda: ((positive(), positive()), (positive(), positive()))),
        (BoundKind.NORM_LOWER, "lower", lambda: (cvec(), cvec())),
        ("matrix_rate", "lower", lambda: ((cvec(), hpd(dim)), (cvec(), hpd(dim)))),
    )


def _check_bounds(trials: int, seed: int, tol: float):
    """Worst signed violation and worst tangency gap per inequality."""
    from .surrogate import matrix_rate_lower_bound, scalar_lemma_bounds

    rng = np.random.default_rng(seed)
    rows = []
    failed = False
    for kind, direction, draw in _bound_families(rng):
        evaluate = (
            matrix_rate_lower_bound
            if kind == "matrix_rate"
            else lambda p, q, k=kind: scalar_lemma_bounds(k, p, q)
        )
        violation = -np.inf
        tangency = 0.0
        for _ in range(trials):
            point, query = draw()
            exact, bound = evaluate(point, query)
            gap = exact - bound if direction == "upper" else bound - exact
            violation = max(violation, gap)
            at_point, bound_at_point = evaluate(point, point)
            tangency = max(tangency, abs(at_point - bound_at_point))
        name = kind.value if hasattr(kind, "value") else kind
        bad = violation > tol or tangency > tol
        failed |= bad
        rows.append((name, violation, tangency, bad))
    return rows, failed


def cmd_lemma_check(args) -> int:
    rows, failed = _check_bounds(args.trials, args.seed, args.tol)
    for name, violation, tangency, bad in rows:
        flag = "FAIL" if bad else "ok"
        print(
            f"{name:<22}  {flag:<4}  worst violation {violation: .3e}  "
            f"tangency gap {tangency:.3e}"
        )
    print(f"{args.trials} samples per inequality, tolerance {args.tol:g}")
    return int(failed)


def cmd_selftest(args) -> int:
    from .pathfollow import SolverConfig, solve_nee_perfect
    from .robust import (
        AoConfig,
        UncertaintyModel,
        solve_robust,
        wmmse_identities,
        worst_case_check,
    )

    t0 = time.perf_counter()
    failures = 0

    def report(name: str, ok: bool, detail: str):
        nonlocal failures
        failures += not ok
        print(f"{name:<14} {'ok' if ok else 'FAIL'}  {detail}")

    rows, failed = _check_bounds(trials=500, seed=args.seed, tol=1e-9)
    worst = max(max(v, t) for _, v, t, _ in rows)
    report("bounds", not failed, f"500 samples x {len(rows)} inequalities, worst gap {worst:.2e}")

    rng = np.random.default_rng(args.seed)
    err = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        rate, variational = wmmse_identities("sinr", (b, a @ a.conj().T + 0.2 * np.eye(n)))
        err = max(err, abs(rate - variational))
        rate, variational = wmmse_identities("neglog", float(rng.lognormal()))
        err = max(err, abs(rate - variational))
    report("identities", err <= 1e-9, f"100 draws, max mismatch {err:.2e}")

    params, topology, _ = default_params()
    dims = AntennaDims(3, 1, 1)
    channels = generate_channels(topology, dims, args.seed)
    zf = zf_nullspace(channels.h_tt)
    design, trace = solve_nee_perfect(channels, params, zf, SolverConfig(seed=args.seed))
    steps = np.diff(np.asarray(trace.objectives))
    monotone = bool(steps.min() >= -1e-7) if steps.size else True
    value = nee(design.G, design.v, channels, params, zf)
    report(
        "perfect",
        trace.converged and monotone and value.total > 0,
        f"nee {value.total:.4g}, {trace.iterations} iterations, monotone ascent",
    )

    unc = UncertaintyModel.scaled(channels, 0.02)
    cfg = AoConfig(seed=args.seed, max_inner=15, inner_tol=1e-3, max_outer=12)
    rdesign, state, rtrace = solve_robust(channels, unc, params, zf, cfg)
    stats = worst_case_check(rdesign, unc, params, zf, n_samples=300, seed=args.seed)
    prices = np.asarray(rtrace.prices)
    climbing = bool(np.diff(prices).min() >= -1e-9) if prices.size > 1 else True
    report(
        "robust",
        stats.violations == 0 and climbing and state.ratio > 0,
        f"certified nee {state.ratio:.4g}, {stats.n_samples} clean samples",
    )

    import tempfile

    config = ExperimentConfig(
        experiment="custom",
        grid={"r_th": (0.5,)},
        trials=1,
        seed=args.seed,
        dims=dims,
    )
    with tempfile.TemporaryDirectory() as tmp:
        paths = [Path(tmp) / f"run{i}.csv" for i in range(2)]
        for path in paths:
            write_records(run_experiment(config), path, config)
        identical = paths[0].read_bytes() == paths[1].read_bytes()
    report("sweep", identical, "one-trial rerun byte-identical")

    print(f"{'passed' if failures == 0 else 'FAILED'} in {time.perf_counter() - t0:.1f} s")
    return int(failures > 0)


# -- parser --------------------------------------------------------------------


def _add_common(sub, *, dims=False, mode=True):
    sub.add_argument("--seed", type=int, default=0, help="base RNG seed")
    if mode:
        sub.add_argument("--mode", choices=[m.value for m in DelayMode], help="processing delay mode")
    if dims:
        sub.add_argument("--dims", type=_parse_dims, help="antenna counts n_tx,n_rx,n_mon")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eemon",
        description="Energy-efficient legitimate monitoring: solvers, sweeps, checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-channels", help="draw one channel set to an .npz file")
    _add_common(p, dims=True, mode=False)
    p.add_argument("--out", required=True, help="output .npz path")
    p.set_defaults(func=cmd_gen_channels)

    p = sub.add_parser("solve-perfect", help="efficiency design with trusted estimates")
    _add_common(p, dims=True)
    p.add_argument("--out", help="write design and metrics as JSON")
    p.set_defaults(func=cmd_solve_perfect)

    p = sub.add_parser("solve-robust", help="worst-case design over an error ball")
    _add_common(p, dims=True)
    p.add_argument("--eps", type=float, default=0.02, help="error radius relative to link norm")
    p.add_argument("--check-samples", type=int, default=500, help="in-ball feasibility replays")
    p.add_argument("--out", help="write design and metrics as JSON")
    p.set_defaults(func=cmd_solve_robust)

    p = sub.add_parser("sweep", help="run a named experiment to CSV")
    p.add_argument("experiment", nargs="?", help="preset name (fig3..fig10) or custom")
    p.add_argument("--config", help="TOML sweep description; flags given here win")
    p.add_argument("--trials", type=int, help="independent channel draws per grid point")
    p.add_argument("--seed", type=int, default=None, help="base RNG seed")
    p.add_argument("--mode", choices=[m.value for m in DelayMode], help="restrict to one delay mode")
    p.add_argument("--eps", type=float, default=None, help="error radius for robust designers")
    p.add_argument("--out", help="CSV path (default <experiment>.csv)")
    p.add_argument("--workers", type=int, default=1, help="parallel trial threads")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("outage", help="Monte Carlo outage probability of a designer")
    _add_common(p, dims=True)
    p.add_argument("--design", choices=["robust", "nonrobust", "both"], default="both")
    p.add_argument("--eps", type=float, default=0.02, help="error radius relative to link norm")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--r-th", type=float, default=None, help="secondary rate floor override")
    p.set_defaults(func=cmd_outage)

    p = sub.add_parser("lemma-check", help="sample the bound inequalities and tangency")
    p.add_argument("--trials", type=int, default=10000, help="samples per inequality")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_lemma_check)

    p = sub.add_parser("selftest", help="fast end-to-end battery on a miniature scenario")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
