"""Path-following designs under perfect channel knowledge.

Each solver alternates between freezing the tangent bounds at the current
iterate and maximizing the resulting cone program. Because every bound
touches its true function at the iterate, the true objective can only go
up from step to step; the loop stops when it stops moving.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .conic import SolveStatus, solve, validate
from .model import (
    BeamDesign,
    ChannelSet,
    DelayMode,
    SystemParams,
    ZFBasis,
    check_feasible,
    dest_interference,
    dest_signal,
    energy_consumption,
    nee,
    optimal_receiver,
    rate_secondary,
    rate_suspicious,
    transmit_power,
)
from .surrogate import (
    ExpansionPoint,
    SurrogateDomainError,
    build_coeffs,
    build_feasibility_subproblem,
    build_rate_subproblem,
    build_subproblem,
)


class InitializationError(RuntimeError):
    """No feasible starting design was found within the iteration budget."""


class StepError(RuntimeError):
    """A per-iteration cone program failed to solve."""


def _solve_step(program, cfg):
    """Solve one step, relaxing the backend tolerance on numerical trouble.

    Near-stationary iterates sit on thin feasible wedges (the surveillance
    constraint binds) where the tightest tolerance can stall; a ladder up
    to 100x the configured tolerance recovers those deterministically.
    """
    sol = None
    for factor in (1.0, 10.0, 100.0):
        sol = solve(program, tol=cfg.tol * factor, backend=cfg.backend)
        if sol.ok or sol.status is not SolveStatus.NUMERICAL_FAILURE:
            return sol
    return sol


def _usable(sub, sol):
    """Whether a step solution can seed the next iterate.

    A solver that gives up near stationarity still hands back its last
    iterate; if that iterate sits in the cones to working precision it is
    a perfectly good candidate, since the acceptance path re-checks true
    feasibility and refuses any step that fails to improve.
    """
    if sol.ok:
        return True
    return sol.x is not None and validate(sub.program, sol.x).ok(1e-6)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budgets, stopping thresholds, backend knobs, rng seed.

    ``obj_tol`` is the relative objective-change threshold; a design loop
    stops once the change stays below it across a trailing window of
    ``stall_iters`` iterations (averaged, so one slow step inside a climb
    does not end the run). ``tol`` is the cone backend's accuracy target
    and ``seed`` fixes the initializer's random start.
    """

    max_iters: int = 150
    obj_tol: float = 1e-4
    init_max_iters: int = 30
    stall_iters: int = 4
    tol: float = 1e-8
    backend: str = "clarabel"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.init_max_iters < 1:
            raise ValueError("iteration budgets must be positive")
        if not 0 < self.obj_tol <= 1e-2:
            raise ValueError("obj_tol must lie in (0, 1e-2]")
        if self.stall_iters < 1:
            raise ValueError("stall_iters must be positive")
        if not 0 < self.tol < 1:
            raise ValueError("backend tolerance must lie in (0, 1)")


@dataclass(frozen=True)
class SolveTrace:
    """Objective and constraint slacks per iterate, starting point included."""

    objectives: tuple
    slacks_monitor: tuple
    slacks_secondary: tuple
    slacks_power: tuple
    converged: bool
    wall_time: float

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1


class _TraceRecorder:
    def __init__(self):
        self.objectives = []
        self.slack_m = []
        self.slack_r = []
        self.slack_p = []
        self.t0 = time.perf_counter()

    def record(self, value, point, channels, params, zf):
        report = check_feasible(point.G, point.v, None, channels, params, zf)
        self.objectives.append(float(value))
        self.slack_m.append(report.slack_monitor)
        self.slack_r.append(report.slack_secondary)
        self.slack_p.append(report.slack_power)

    def freeze(self, converged: bool) -> SolveTrace:
        return SolveTrace(
            objectives=tuple(self.objectives),
            slacks_monitor=tuple(self.slack_m),
            slacks_secondary=tuple(self.slack_r),
            slacks_power=tuple(self.slack_p),
            converged=converged,
            wall_time=time.perf_counter() - self.t0,
        )


# A freshly restored design must clear the constraints by this much (in
# nats) before the design loop takes over. Accepting a start that merely
# touches the boundary leaves it outside the next step's conservative
# constraint set at solver accuracy, and the first step then pays for it.
_INIT_SLACK_MARGIN = 1e-3

# Restoration happily zeroes the suspicious link (an empty link makes the
# surveillance slack trivial), but a start with vanishing destination SINR
# puts coefficients tens of orders apart into the first cone program. The
# initializer blends such a start toward the strongest forwarded stream
# until the SINR clears this floor.
_DEST_SINR_FLOOR = 0.1


def _rescue_destination(point, channels, params, zf):
    """Blend a destination-dead restored design toward a live one.

    The blend target maximizes the forwarded destination signal at the
    restored factor's own transmit power (for the delay-free mode the
    target is simply no forwarding, which faces the destination's direct
    link). Candidates walk up a fixed blend ladder; the first one clearing
    the SINR floor with real margins wins. Failing all, the restored
    design stands.
    """
    sig = dest_signal(point.G, point.v, channels, params, zf)
    noise = dest_interference(point.G, point.v, channels, params, zf)
    if sig >= _DEST_SINR_FLOOR * noise:
        return point
    if params.delay_mode is DelayMode.NNPD:
        target = np.zeros_like(point.G)
    else:
        a = (channels.h_dt @ zf.V0).conj()
        target = np.outer(a, channels.h_ts.conj())
        if abs(channels.h_ds) > 0:
            target = target * (channels.h_ds / abs(channels.h_ds))
        no_jam = np.zeros(channels.n_tx)
        t_power = transmit_power(target, no_jam, channels, params)
        g_power = transmit_power(point.G, no_jam, channels, params)
        if t_power > 0:
            target = target * np.sqrt(g_power / t_power)
    for beta in (0.05, 0.1, 0.2, 0.35, 0.5, 0.7):
        g = (1.0 - beta) * point.G + beta * target
        if dest_signal(g, point.v, channels, params, zf) < _DEST_SINR_FLOOR * (
            dest_interference(g, point.v, channels, params, zf)
        ):
            continue
        report = check_feasible(g, point.v, None, channels, params, zf)
        if not (
            report.feasible
            and report.slack_monitor >= _INIT_SLACK_MARGIN
            and report.slack_secondary >= _INIT_SLACK_MARGIN
        ):
            continue
        candidate = ExpansionPoint(g, point.v)
        try:
            build_coeffs(candidate, channels, params, zf)
        except SurrogateDomainError:
            continue
        return candidate
    return point


def _initial_guess(rng, channels, params):
    """A fresh expansion point spending half the power budget, split evenly
    between a random relay factor and an own-stream precoder matched to the
    secondary receiver."""
    m = channels.n_tx - channels.n_rx
    g = (rng.standard_normal((m, channels.n_rx))
         + 1j * rng.standard_normal((m, channels.n_rx)))
    g_power = transmit_power(g, np.zeros(channels.n_tx), channels, params)
    g = g * np.sqrt(params.p_max / 4.0 / g_power)
    if params.alpha_r == 0.0 and params.r_th == 0.0:
        # the own stream earns nothing and owes nothing; starting it hot
        # only invites spending it on interference
        v = np.zeros(channels.n_tx, dtype=complex)
    else:
        v = channels.h_rt.conj().astype(complex)
        v = v * np.sqrt(params.p_max / 4.0) / np.linalg.norm(v)
    return ExpansionPoint(g, v)


def find_initial_point(
    channels: ChannelSet, params: SystemParams, zf: ZFBasis, cfg: SolverConfig
) -> BeamDesign:
    """Drive the constraint-restoration step to a feasible (G, v).

    Each restoration step maximizes the smallest constraint slack; the
    sequence of optima is non-decreasing, so an attempt runs until the
    slack clears a margin or stops improving. An attempt that plateaus
    infeasible restarts from a fresh random draw on the same rng stream,
    with the step budget init_max_iters shared across attempts, so a
    genuinely infeasible instance still fails fast and deterministically.
    """
    rng = np.random.default_rng(cfg.seed)
    steps = 0
    while steps < cfg.init_max_iters:
        point = _initial_guess(rng, channels, params)
        prev_slack = None
        while steps < cfg.init_max_iters:
            steps += 1
            sub = build_feasibility_subproblem(point, channels, params, zf)
            sol = _solve_step(sub.program, cfg)
            if not sol.ok:
                raise InitializationError(
                    f"restoration step failed: {sol.status.value}"
                )
            point = ExpansionPoint(*sub.design(sol.x))
            slack = sub.objective(sol.x)
            plateaued = prev_slack is not None and abs(slack - prev_slack) <= (
                cfg.obj_tol * max(abs(prev_slack), 1.0)
            )
            if slack >= _INIT_SLACK_MARGIN or plateaued:
                if slack >= -cfg.tol:
                    report = check_feasible(
                        point.G, point.v, None, channels, params, zf
                    )
                    if report.feasible:
                        if params.alpha_d > 0:
                            point = _rescue_destination(point, channels, params, zf)
                        return BeamDesign(G=point.G, v=point.v)
                if plateaued:
                    break
            prev_slack = slack
    raise InitializationError(
        f"no feasible design within {cfg.init_max_iters} restoration steps"
    )


# Acceptance margin for true-constraint checks on iterates. Much tighter
# than the reported feasibility tolerance so that a whole run's worth of
# accepted steps stays comfortably inside it.
_FEAS_TOL = 1e-9


def _truly_feasible(pt, channels, params, zf):
    return check_feasible(
        pt.G, pt.v, None, channels, params, zf, tol=_FEAS_TOL
    ).feasible


def _pull_feasible(point, candidate, channels, params, zf):
    """Bisect the candidate back toward the previous (feasible) iterate
    until the true constraints hold.

    A minorant step is feasible for the surrogate constraints, which imply
    the true ones only up to the cone backend's own tolerance; near a
    binding constraint that residual shows up as a slack of about -1e-5.
    The violation is tiny, so the bisection ends within a hair of the
    candidate and costs a handful of closed-form rate evaluations.
    """
    if _truly_feasible(candidate, channels, params, zf):
        return candidate
    lo, hi = 0.0, 1.0
    for _ in range(20):
        mid = (lo + hi) / 2.0
        probe = ExpansionPoint(
            point.G + mid * (candidate.G - point.G),
            point.v + mid * (candidate.v - point.v),
        )
        if _truly_feasible(probe, channels, params, zf):
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        return point
    return ExpansionPoint(
        point.G + lo * (candidate.G - point.G),
        point.v + lo * (candidate.v - point.v),
    )


def _step_back(point, candidate, channels, params, zf, q_ref=None):
    """Accept the candidate iterate, halving the step toward the previous
    point while the next expansion would leave the bounds' domain, then
    pulling it back onto the true feasible set."""
    for _ in range(10):
        next_point = _pull_feasible(
            point, ExpansionPoint(*candidate), channels, params, zf
        )
        try:
            return next_point, build_coeffs(next_point, channels, params, zf, q_ref)
        except SurrogateDomainError:
            candidate = (
                (candidate[0] + point.G) / 2.0,
                (candidate[1] + point.v) / 2.0,
            )
    raise StepError("iterate stuck outside the surrogate domain")


def _advance(point, candidate, merit, channels, params, zf, coeffs, q_ref=None):
    """Move to the candidate, over-relaxing the step when that pays off.

    Close to a binding surveillance constraint the minorant step direction
    stays good while its length collapses, which drags the loop through a
    long geometric crawl. Probing 8x/4x/2x along the step and keeping the
    first stretch that is still feasible, still inside the bounds' domain,
    and strictly better replaces dozens of cone programs with one check.
    Every accepted iterate passes the true feasibility test, and a step
    that fails to improve the true objective (possible only when the step
    program was solved loosely) is refused outright, so the trace is
    non-decreasing by construction.
    """
    base = merit(point)
    accepted, acc_coeffs = _step_back(point, candidate, channels, params, zf, q_ref)
    best = merit(accepted)
    d_g = accepted.G - point.G
    d_v = accepted.v - point.v
    for factor in (8.0, 4.0, 2.0):
        probe = ExpansionPoint(point.G + factor * d_g, point.v + factor * d_v)
        if merit(probe) <= best:
            continue
        # a stretch that left the feasible set comes back along the same ray
        probe = _pull_feasible(point, probe, channels, params, zf)
        val = merit(probe)
        if val <= best:
            continue
        try:
            probe_coeffs = build_coeffs(probe, channels, params, zf, q_ref)
        except SurrogateDomainError:
            continue
        accepted, acc_coeffs, best = probe, probe_coeffs, val
        break
    if best < base:
        return point, coeffs, base
    return accepted, acc_coeffs, best


def _cross_probe(older, point, coeffs, value, merit, channels, params, zf, q_ref=None):
    """Probe along the line through the iterate from two steps back.

    When the path zigzags along a curved binding constraint, the
    same-direction stretch in _advance stops paying off while the secant
    through alternating iterates still points down the valley. Accepting
    a secant probe follows the usual rules: truly feasible, inside the
    bounds' domain, strictly better.
    """
    d_g = point.G - older.G
    d_v = point.v - older.v
    for stretch in (2.5, 1.5):
        probe = ExpansionPoint(older.G + stretch * d_g, older.v + stretch * d_v)
        if merit(probe) <= value:
            continue
        # point sits on the same secant, so the pull stays on it
        probe = _pull_feasible(point, probe, channels, params, zf)
        val = merit(probe)
        if val <= value:
            continue
        try:
            probe_coeffs = build_coeffs(probe, channels, params, zf, q_ref)
        except SurrogateDomainError:
            continue
        return probe, probe_coeffs, val
    return point, coeffs, value


def _finish_design(point, channels, params, zf):
    u = optimal_receiver(point.G, point.v, channels, params, zf)
    return BeamDesign(G=point.G, v=point.v, u=u)


# An iteration whose gain falls inside this band (in units of the stopping
# threshold) gets one extra polishing step before the stall counter moves.
_POLISH_BAND = 5.0


def _polish_step(point, value, merit, channels, params, zf, cfg):
    """One efficiency-priced rate step from a near-stalled iterate.

    Freezing the current efficiency as a power price turns the ratio
    objective into a difference whose tangent program sees the remaining
    ascent directly: any design with a positive priced surplus is a design
    with a better ratio. Near a binding surveillance constraint this step
    often keeps moving after the ratio program's own minorant has gone
    flat. Opportunistic by design: any trouble leaves the iterate as is.
    """
    try:
        coeffs = build_coeffs(point, channels, params, zf, q_ref=1.0)
        sub = build_rate_subproblem(
            point, channels, params, zf, coeffs, power_price=value
        )
        sol = _solve_step(sub.program, cfg)
        if not _usable(sub, sol):
            return point, value
        nxt, _, val = _advance(
            point, sub.design(sol.x), merit, channels, params, zf, coeffs,
            q_ref=1.0,
        )
        nxt, _, val = _cross_probe(
            point, nxt, None, val, merit, channels, params, zf, q_ref=1.0
        )
    except (SurrogateDomainError, StepError):
        return point, value
    nxt, val = _shrink_own_stream(nxt, val, merit, channels, params, zf)
    if val > value:
        return nxt, val
    return point, value


def _shrink_own_stream(point, value, merit, channels, params, zf):
    """Probe scaling the own-stream beamformer down, zero included.

    When the secondary rate earns less than the stream's power overhead
    costs, the surrogate steps shrink v only geometrically; testing the
    scaled-down candidates outright removes that tail in one move. Usual
    acceptance rules apply, so the probe is a no-op whenever v pays for
    itself.
    """
    for scale in (0.0, 0.25, 0.5):
        probe = ExpansionPoint(point.G, scale * point.v)
        val = merit(probe)
        if val <= value:
            continue
        if not _truly_feasible(probe, channels, params, zf):
            continue
        return probe, val
    return point, value


def _climb_nee(point, channels, params, zf, cfg, rec=None):
    """Path-following ascent of the weighted efficiency from a feasible
    iterate. Returns the final iterate and the convergence flag."""
    coeffs = build_coeffs(point, channels, params, zf)

    def merit(pt):
        return nee(pt.G, pt.v, channels, params, zf).total

    prev = merit(point)
    if rec is not None:
        rec.record(prev, point, channels, params, zf)
    converged = False
    window = deque(maxlen=cfg.stall_iters)
    older = point
    for _ in range(cfg.max_iters):
        sub = build_subproblem(point, channels, params, zf, coeffs)
        sol = _solve_step(sub.program, cfg)
        if not _usable(sub, sol):
            raise StepError(f"design step failed: {sol.status.value}")
        nxt, nxt_coeffs, cur = _advance(
            point, sub.design(sol.x), merit, channels, params, zf, coeffs
        )
        nxt, nxt_coeffs, cur = _cross_probe(
            older, nxt, nxt_coeffs, cur, merit, channels, params, zf
        )
        older, point, coeffs = point, nxt, nxt_coeffs
        threshold = cfg.obj_tol * max(abs(prev), 1.0)
        if cur - prev <= _POLISH_BAND * threshold:
            polished, val = _polish_step(
                point, cur, merit, channels, params, zf, cfg
            )
            if polished is not point:
                try:
                    pol_coeffs = build_coeffs(polished, channels, params, zf)
                except SurrogateDomainError:
                    pass
                else:
                    older, point, coeffs, cur = point, polished, pol_coeffs, val
        window.append((cur - prev) / threshold)
        if rec is not None:
            rec.record(cur, point, channels, params, zf)
        prev = cur
        if len(window) == cfg.stall_iters and sum(window) / len(window) < 1.0:
            converged = True
            break
    return point, converged


# Stage-to-stage growth of the power cap during budget continuation.
_WALK_FACTOR = 4.0


def _budget_walk(channels, params, zf, cfg):
    """Feasible start grown by climbing under a rising power budget.

    The efficiency surface saturates once the forwarded signal covers the
    surveillance constraint, so with a generous budget the whole interior
    is flat enough that a climb from an arbitrary start can park on a
    dominated shoulder. Climbing under caps that grow geometrically from
    the source power up to the real budget follows the saturating optimum
    instead; each stage starts from the previous one, which remains
    feasible because only the cap grows. Returns None when the budget is
    already at the source-power scale or no stage yields a usable point.
    """
    cap = min(params.p_s, params.p_max)
    point = None
    while cap < params.p_max:
        stage = replace(params, p_max=cap)
        if point is None:
            try:
                start = find_initial_point(channels, stage, zf, cfg)
            except InitializationError:
                cap *= _WALK_FACTOR
                continue
            point = ExpansionPoint(start.G, start.v)
        try:
            point, _ = _climb_nee(point, channels, stage, zf, cfg)
        except StepError:
            pass  # keep the last iterate; it stays feasible as the cap grows
        cap *= _WALK_FACTOR
    return point


def solve_nee_perfect(
    channels: ChannelSet, params: SystemParams, zf: ZFBasis, cfg: SolverConfig
) -> tuple[BeamDesign, SolveTrace]:
    """Maximize the weighted efficiency by successive minorant maximization.

    An iteration is one minorant program plus its safeguards; when the gain
    lands near the stopping threshold the iteration also runs one
    efficiency-priced polish step before counting toward a stall.
    Convergence is declared once the relative objective change falls below
    obj_tol averaged over the trailing stall_iters iterations, which keeps
    a single slow step in the middle of a climb from ending the run early.
    Budgets above the source power also get a continuation start from
    _budget_walk; the better of the cold and continuation climbs is
    returned, and the reported trace covers that climb alone.
    """

    def merit(pt):
        return nee(pt.G, pt.v, channels, params, zf).total

    runs = []
    walk = _budget_walk(channels, params, zf, cfg)
    if walk is not None:
        rec = _TraceRecorder()
        try:
            runs.append((*_climb_nee(walk, channels, params, zf, cfg, rec), rec))
        except StepError:
            pass
    try:
        start = find_initial_point(channels, params, zf, cfg)
        rec = _TraceRecorder()
        cold = ExpansionPoint(start.G, start.v)
        runs.append((*_climb_nee(cold, channels, params, zf, cfg, rec), rec))
    except (InitializationError, StepError):
        if not runs:
            raise
    point, converged, rec = max(runs, key=lambda run: merit(run[0]))
    return _finish_design(point, channels, params, zf), rec.freeze(converged)


def solve_wsr(
    channels: ChannelSet, params: SystemParams, zf: ZFBasis, cfg: SolverConfig
) -> tuple[BeamDesign, SolveTrace]:
    """Maximize the weighted sum rate: the same steps with the power
    coupling dropped from the objective. The trace reports true rates."""
    start = find_initial_point(channels, params, zf, cfg)
    point = ExpansionPoint(start.G, start.v)
    coeffs = build_coeffs(point, channels, params, zf)

    def wsr(pt):
        return params.alpha_d * rate_suspicious(
            pt.G, pt.v, channels, params, zf
        ) + params.alpha_r * rate_secondary(pt.G, pt.v, channels, params, zf)

    rec = _TraceRecorder()
    prev = wsr(point)
    rec.record(prev, point, channels, params, zf)
    converged = False
    window = deque(maxlen=cfg.stall_iters)
    older = point
    for _ in range(cfg.max_iters):
        sub = build_rate_subproblem(point, channels, params, zf, coeffs)
        sol = _solve_step(sub.program, cfg)
        if not _usable(sub, sol):
            raise StepError(f"design step failed: {sol.status.value}")
        nxt, nxt_coeffs, cur = _advance(
            point, sub.design(sol.x), wsr, channels, params, zf, coeffs
        )
        nxt, nxt_coeffs, cur = _cross_probe(
            older, nxt, nxt_coeffs, cur, wsr, channels, params, zf
        )
        older, point, coeffs = point, nxt, nxt_coeffs
        window.append((cur - prev) / (cfg.obj_tol * max(abs(prev), 1.0)))
        rec.record(cur, point, channels, params, zf)
        prev = cur
        if len(window) == cfg.stall_iters and sum(window) / len(window) < 1.0:
            converged = True
            break
    return _finish_design(point, channels, params, zf), rec.freeze(converged)


def solve_dinkelbach_ica(
    channels: ChannelSet, params: SystemParams, zf: ZFBasis, cfg: SolverConfig
) -> tuple[BeamDesign, SolveTrace]:
    """Ratio-parametric outer loop around inner convex-approximation passes.

    The outer parameter is the efficiency of the current design; the inner
    pass is the textbook one, maximizing a tangent minorant of the
    subtractive objective (weighted rates minus the parameter times
    consumed power) from the current iterate until it stalls. The step
    safeguards of the path-following designs stay out of it. The outer
    sequence is non-decreasing and stops when it moves by less than
    obj_tol.
    """
    start = find_initial_point(channels, params, zf, cfg)
    point = ExpansionPoint(start.G, start.v)

    def ratio(pt):
        return nee(pt.G, pt.v, channels, params, zf).total

    def subtractive(pt, price):
        r_d = rate_suspicious(pt.G, pt.v, channels, params, zf)
        r_r = rate_secondary(pt.G, pt.v, channels, params, zf)
        q = energy_consumption(pt.G, pt.v, channels, params)
        return params.alpha_d * r_d + params.alpha_r * r_r - price * q

    rec = _TraceRecorder()
    lam = ratio(point)
    rec.record(lam, point, channels, params, zf)
    converged = False
    for _ in range(cfg.max_iters):
        # inner pass at the frozen price
        inner_prev = subtractive(point, lam)
        for _ in range(cfg.max_iters):
            coeffs = build_coeffs(point, channels, params, zf, q_ref=1.0)
            sub = build_rate_subproblem(
                point, channels, params, zf, coeffs, power_price=lam
            )
            sol = _solve_step(sub.program, cfg)
            if not _usable(sub, sol):
                raise StepError(f"inner step failed: {sol.status.value}")
            try:
                nxt, _ = _step_back(
                    point, sub.design(sol.x), channels, params, zf, q_ref=1.0
                )
            except StepError:
                break
            inner_cur = subtractive(nxt, lam)
            if inner_cur < inner_prev:
                # a loosely solved step may point downhill; ending the pass
                # here keeps the price sequence non-decreasing
                break
            point = nxt
            if abs(inner_cur - inner_prev) <= cfg.obj_tol * max(abs(inner_prev), 1.0):
                break
            inner_prev = inner_cur
        lam_next = ratio(point)
        rec.record(lam_next, point, channels, params, zf)
        if abs(lam_next - lam) < cfg.obj_tol:
            lam = lam_next
            converged = True
            break
        lam = lam_next
    return _finish_design(point, channels, params, zf), rec.freeze(converged)
