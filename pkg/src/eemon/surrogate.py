"""Tangent convex bounds of the rate and efficiency functions, and the
cone-program step of the path-following designs.

Around a feasible iterate, each nonconvex piece of the design problem is
replaced by a bound that touches it at that point: minorants for the
quantities being maximized or kept large (weighted efficiency, relay rate,
monitor rate) and a majorant for the suspicious-link rate that the monitor
must dominate. The resulting restriction is a cone program over (G, v)
whose solution can only improve the true objective, which is what drives
the outer iteration.

The scalar and matrix bound primitives are exposed directly so their
directions and tangency can be certified by sampling, independently of the
assembled surrogates.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .affine import ProgramBuilder, Recovery, as_raff, ccat, creal
from .conic import ConeProgram
from .model import (
    ChannelSet,
    DelayMode,
    SystemParams,
    ZFBasis,
    _abs2,
    circuit_power,
    dest_interference,
    dest_signal,
    energy_consumption,
    monitor_covariance,
    monitor_signal,
    relay_interference,
)

# affine lower bounds of squared magnitudes may go nonpositive away from the
# expansion point; every fraction denominator is kept at least this large
DELTA_MIN = 1e-9

# a ratio term whose tangent cannot exceed this anywhere is left out of the
# step objective: its curvature coefficient would sit tens of orders below
# the other cost entries and wreck the solver's equilibration, while the
# term itself moves the step objective by less than the stopping tolerance
_TINY_TERM = 1e-8


class SurrogateDomainError(ValueError):
    """Expansion point or query lies outside a bound's validity region."""


class BoundKind(str, enum.Enum):
    """The four scalar inequalities underlying the surrogates."""

    LOG_UPPER = "log_upper"
    INV_PRODUCT_LOWER = "inv_product_lower"
    LOG_OVER_LIN_LOWER = "log_over_lin_lower"
    NORM_LOWER = "norm_lower"


def scalar_lemma_bounds(kind: BoundKind, point, query):
    """Evaluate one scalar inequality, returning (exact, bound).

    LOG_UPPER            ln(1+x) <= bound, tangent at x0; point=x0, query=x.
    INV_PRODUCT_LOWER    ln(1+1/(xy)) >= bound; point=(x0,y0), query=(x,y).
    LOG_OVER_LIN_LOWER   ln(1+x)/y >= bound; point=(x0,y0), query=(x,y).
    NORM_LOWER           ||x||^2 >= bound; point=x0, query=x (complex ok).

    Scalar kinds require strictly positive arguments.
    """
    kind = BoundKind(kind)
    if kind is BoundKind.NORM_LOWER:
        x0 = np.asarray(point, dtype=complex).ravel()
        x = np.asarray(query, dtype=complex).ravel()
        exact = float(np.real(np.vdot(x, x)))
        bound = 2.0 * float(np.real(np.vdot(x0, x))) - float(np.real(np.vdot(x0, x0)))
        return exact, bound

    if kind is BoundKind.LOG_UPPER:
        x0, x = float(point), float(query)
        _require_positive(x0=x0, x=x)
        return float(np.log1p(x)), float(np.log1p(x0) + (x - x0) / (1.0 + x0))

    x0, y0 = map(float, point)
    x, y = map(float, query)
    _require_positive(x0=x0, y0=y0, x=x, y=y)
    if kind is BoundKind.INV_PRODUCT_LOWER:
        exact = float(np.log1p(1.0 / (x * y)))
        s0 = 1.0 / (x0 * y0)
        bound = float(np.log1p(s0) + s0 / (1.0 + s0) * (2.0 - x / x0 - y / y0))
        return exact, bound
    exact = float(np.log1p(x) / y)
    bound = float(
        2.0 * np.log1p(x0) / y0
        + x0 / (y0 * (1.0 + x0))
        - x0 ** 2 / (y0 * (1.0 + x0)) / x
        - np.log1p(x0) / y0 ** 2 * y
    )
    return exact, bound


def _require_positive(**vals):
    for name, val in vals.items():
        if not val > 0:
            raise SurrogateDomainError(f"{name} must be strictly positive, got {val}")


def matrix_rate_lower_bound(point, query):
    """(exact, bound) for ln(1 + s^H Y^{-1} s), Y Hermitian positive definite.

    point = (s0, Y0), query = (s, Y). The bound is affine in (s s^H + Y) up
    to the linear cross term, touches the exact value at the point, and
    stays below it everywhere on the HPD domain.
    """
    s0, y0 = point
    s, y = query
    s0 = np.asarray(s0, dtype=complex).ravel()
    s = np.asarray(s, dtype=complex).ravel()
    y0 = np.asarray(y0, dtype=complex)
    y = np.asarray(y, dtype=complex)

    y0_inv = np.linalg.inv(y0)
    q0 = float(np.real(s0.conj() @ y0_inv @ s0))
    exact = float(np.log1p(np.real(s.conj() @ np.linalg.solve(y, s))))
    gap = y0_inv - np.linalg.inv(y0 + np.outer(s0, s0.conj()))
    quad = np.outer(s, s.conj()) + y
    bound = (
        float(np.log1p(q0))
        - q0
        + 2.0 * float(np.real(s0.conj() @ y0_inv @ s))
        - float(np.real(np.trace(gap.conj().T @ quad)))
    )
    return exact, bound


@dataclass(frozen=True)
class ExpansionPoint:
    """The iterate (G, v) around which the bounds are constructed."""

    G: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "G", np.asarray(self.G, dtype=complex))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=complex))


@dataclass(frozen=True)
class SurrogateCoeffs:
    """Scalar coefficients and monitor-side matrices frozen at the point.

    The three (scale, curv, power) triples define ratio minorants of the
    form scale - curv * inverse_sinr_term - power * consumed_power; with
    q_ref = 1 they reduce to plain rate minorants. gamma_* are the SINRs at
    the expansion point.
    """

    mode: DelayMode
    q_ref: float

    gamma_dest: float
    dest_scale: float
    dest_curv: float
    dest_power: float
    dest_signal_point: float
    j_dest_point: float

    gamma_relay: float
    relay_scale: float
    relay_curv: float
    relay_power: float
    relay_gain_point: float
    j_relay_point: float

    gamma_mon: float
    mon_linear: np.ndarray
    mon_diff: np.ndarray
    mon_factor: np.ndarray
    mon_const: float


def build_coeffs(
    point: ExpansionPoint,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
    q_ref: float | None = None,
) -> SurrogateCoeffs:
    """Freeze all bound coefficients at the expansion point.

    q_ref defaults to the consumed power at the point, giving efficiency
    surrogates; pass q_ref = 1 for rate-only minorants (the power coupling
    is then handled by the caller, as in the parametric subtractive form).
    """
    g_l, v_l = point.G, point.v
    if q_ref is None:
        q_ref = energy_consumption(g_l, v_l, channels, params)
    if not q_ref > 0:
        raise SurrogateDomainError("reference power must be positive")

    sig_d = dest_signal(g_l, v_l, channels, params, zf)
    j_d = dest_interference(g_l, v_l, channels, params, zf)
    gamma_d = sig_d / j_d

    gain_r = _abs2(channels.h_rt @ v_l)
    j_r = relay_interference(g_l, channels, params, zf)
    gamma_r = gain_r / j_r
    if params.r_th > 0 and gain_r <= 0:
        raise SurrogateDomainError(
            "expansion point carries no secondary stream but r_th > 0"
        )

    a_l = monitor_signal(g_l, channels, zf)
    phi_l = monitor_covariance(g_l, v_l, channels, params, zf)
    phi_inv = np.linalg.inv(phi_l)
    mon_linear = phi_inv @ a_l
    gamma_m = params.p_s * float(np.real(a_l.conj() @ mon_linear))
    mon_diff = phi_inv - np.linalg.inv(phi_l + params.p_s * np.outer(a_l, a_l.conj()))
    mon_diff = (mon_diff + mon_diff.conj().T) / 2
    vals, vecs = np.linalg.eigh(mon_diff)
    mon_factor = (vecs * np.sqrt(np.clip(vals, 0.0, None))).conj().T
    mon_const = (
        float(np.log1p(gamma_m))
        - gamma_m
        - params.sigma2_m * float(np.real(np.trace(mon_diff)))
    )

    def ratio_coeffs(gamma):
        scale = 2.0 * np.log1p(gamma) / q_ref + gamma / (q_ref * (1.0 + gamma))
        curv = gamma ** 2 / (q_ref * (1.0 + gamma))
        power = np.log1p(gamma) / q_ref ** 2
        return float(scale), float(curv), float(power)

    dest_scale, dest_curv, dest_power = ratio_coeffs(gamma_d)
    relay_scale, relay_curv, relay_power = ratio_coeffs(gamma_r)

    return SurrogateCoeffs(
        mode=params.delay_mode,
        q_ref=float(q_ref),
        gamma_dest=float(gamma_d),
        dest_scale=dest_scale,
        dest_curv=dest_curv,
        dest_power=dest_power,
        dest_signal_point=float(sig_d),
        j_dest_point=float(j_d),
        gamma_relay=float(gamma_r),
        relay_scale=relay_scale,
        relay_curv=relay_curv,
        relay_power=relay_power,
        relay_gain_point=float(gain_r),
        j_relay_point=float(j_r),
        gamma_mon=float(gamma_m),
        mon_linear=mon_linear,
        mon_diff=mon_diff,
        mon_factor=mon_factor,
        mon_const=float(mon_const),
    )


def _lin_abs2(center, query):
    """Affine minorant of |query|^2 (entrywise squared norm), tangent at center.

    Dual use: numpy in, numpy out; affine in, affine out.
    """
    c = np.asarray(center, dtype=complex)
    if c.ndim == 0:
        inner = complex(c).conjugate() * query
    else:
        inner = np.conj(c) @ query
    return 2.0 * creal(inner) - float(np.real(np.vdot(c, c)))


class SurrogateValues(NamedTuple):
    """The five bounds at a query design, in objective-then-constraints order."""

    dest_efficiency: float
    relay_efficiency: float
    relay_rate: float
    monitor_rate: float
    dest_rate: float


def eval_surrogates(
    point: ExpansionPoint,
    coeffs: SurrogateCoeffs,
    G,
    v,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
) -> SurrogateValues:
    """Numerically evaluate all five bounds at a query design.

    Raises SurrogateDomainError when a linearized denominator is
    nonpositive at the query. This is the reference evaluation used by
    tests; the solver consumes the cone encoding instead.
    """
    G = np.asarray(G, dtype=complex)
    v = np.asarray(v, dtype=complex)
    q = energy_consumption(G, v, channels, params)
    w_l = zf.V0 @ point.G
    w_q = zf.V0 @ G

    # destination efficiency minorant
    j_dest = dest_interference(G, v, channels, params, zf)
    frac_dest = 0.0
    if coeffs.dest_curv > 0:
        if coeffs.mode is DelayMode.NNPD:
            denom = coeffs.dest_signal_point
        else:
            eff_point = channels.h_ds + channels.h_dt @ w_l @ channels.h_ts
            eff_query = channels.h_ds + channels.h_dt @ w_q @ channels.h_ts
            denom = params.p_s * float(_lin_abs2(eff_point, eff_query))
            if denom <= 0:
                raise SurrogateDomainError("forwarded-signal linearization nonpositive")
        frac_dest = j_dest / denom
    g_val = coeffs.dest_scale - coeffs.dest_curv * frac_dest - coeffs.dest_power * q

    # relay efficiency and rate minorants
    delta_r = float(_lin_abs2(channels.h_rt @ point.v, channels.h_rt @ v))
    j_relay = relay_interference(G, channels, params, zf)
    if coeffs.gamma_relay > 0:
        if delta_r <= 0:
            raise SurrogateDomainError("secondary-gain linearization nonpositive")
        pi_val = (
            coeffs.relay_scale
            - coeffs.relay_curv * j_relay / delta_r
            - coeffs.relay_power * q
        )
        shrink = coeffs.gamma_relay / (1.0 + coeffs.gamma_relay)
        upsilon = float(np.log1p(coeffs.gamma_relay)) + shrink * (
            2.0 - j_relay / coeffs.j_relay_point - coeffs.relay_gain_point / delta_r
        )
    else:
        pi_val = -coeffs.relay_power * q
        upsilon = 0.0

    # monitor rate minorant
    a_q = monitor_signal(G, channels, zf)
    fac = coeffs.mon_factor
    quad = (
        params.p_s * float(np.real(np.vdot(fac @ a_q, fac @ a_q)))
        + params.sigma2_t * float(np.linalg.norm(fac @ channels.h_mt @ w_q, "fro") ** 2)
        + float(np.real(np.vdot(fac @ channels.h_mt @ v, fac @ channels.h_mt @ v)))
    )
    rho = (
        coeffs.mon_const
        + 2.0 * params.p_s * float(np.real(np.conj(coeffs.mon_linear) @ a_q))
        - quad
    )

    # suspicious-rate majorant
    dest_row_l = channels.h_dt @ w_l
    dest_row_q = channels.h_dt @ w_q
    delta_dt = float(_lin_abs2(dest_row_l, dest_row_q))
    delta_d = float(_lin_abs2(channels.h_dt @ point.v, channels.h_dt @ v))
    if coeffs.mode is DelayMode.NNPD:
        delta_ds = float(_lin_abs2(dest_row_l @ channels.h_ts, dest_row_q @ channels.h_ts))
        denom = params.p_s * delta_ds + params.sigma2_t * delta_dt + delta_d + params.sigma2_d
        numer = params.p_s * _abs2(channels.h_ds)
    else:
        denom = params.sigma2_t * delta_dt + delta_d + params.sigma2_d
        numer = params.p_s * _abs2(channels.h_ds + dest_row_q @ channels.h_ts)
    if denom <= 0:
        raise SurrogateDomainError("interference linearization nonpositive")
    chi = numer / denom
    sigma_rate = float(np.log1p(coeffs.gamma_dest)) + (chi - coeffs.gamma_dest) / (
        1.0 + coeffs.gamma_dest
    )

    return SurrogateValues(
        dest_efficiency=float(g_val),
        relay_efficiency=float(pi_val),
        relay_rate=float(upsilon),
        monitor_rate=float(rho),
        dest_rate=float(sigma_rate),
    )


@dataclass(frozen=True)
class Subproblem:
    """A built cone program together with its variable recovery."""

    program: ConeProgram
    recovery: Recovery
    point: ExpansionPoint
    coeffs: SurrogateCoeffs

    def design(self, x):
        return self.recovery.value(x, "G"), self.recovery.value(x, "v")

    def objective(self, x) -> float:
        return self.recovery.objective(x)


class _Pieces(NamedTuple):
    G: object
    v: object
    q: object
    frac_dest: object
    relay_frac: object
    upsilon: object
    rho: object
    dest_rate: object
    relay_active: bool


def _encode_core(
    b: ProgramBuilder,
    point: ExpansionPoint,
    coeffs: SurrogateCoeffs,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
    want_dest_frac: bool,
    want_relay_frac: bool,
) -> _Pieces:
    """Variables, power model and the shared bound encodings of one step."""
    v0 = zf.V0
    n_free = channels.n_tx - channels.n_rx
    G = b.complex_var("G", (n_free, channels.n_rx))
    v = b.complex_var("v", (channels.n_tx,))
    sqrt_ps = np.sqrt(params.p_s)
    sqrt_st = np.sqrt(params.sigma2_t)

    dest_row = (channels.h_dt @ v0) @ G
    dest_fwd = dest_row @ channels.h_ts
    dest_jam = channels.h_dt @ v
    relay_row = (channels.h_rt @ v0) @ G
    relay_fwd = relay_row @ channels.h_ts
    relay_gain = channels.h_rt @ v
    mon_rows = (channels.h_mt @ v0) @ G
    mon_sig = mon_rows @ channels.h_ts
    mon_jam = channels.h_mt @ v

    # transmit power epigraph and cap
    p_t = b.real_var("p_t")
    b.add_rsoc(p_t, 0.5, ccat(sqrt_ps * (G @ channels.h_ts), sqrt_st * G.vec(), v))
    b.add_nonneg(params.p_max - p_t)
    q_aff = p_t / params.xi + circuit_power(channels, params)

    # destination inverse-SINR epigraph (objective pressure keeps it tight)
    frac_dest = as_raff(0.0)
    if want_dest_frac and coeffs.dest_curv > 0:
        if coeffs.mode is DelayMode.NNPD:
            z_dest = ccat(sqrt_ps * dest_fwd, sqrt_st * dest_row, dest_jam,
                          np.sqrt(params.sigma2_d))
            j_dest = b.real_var("j_dest")
            b.add_rsoc(j_dest, 0.5, z_dest)
            frac_dest = j_dest / coeffs.dest_signal_point
        else:
            eff_point = channels.h_ds + channels.h_dt @ (v0 @ point.G) @ channels.h_ts
            eff_query = channels.h_ds + dest_fwd
            delta_eff = _lin_abs2(eff_point, eff_query)
            b.add_nonneg(delta_eff - DELTA_MIN)
            z_dest = ccat(sqrt_st * dest_row, dest_jam, np.sqrt(params.sigma2_d))
            f_dest = b.real_var("f_dest")
            b.add_rsoc(f_dest, delta_eff * (params.p_s / 2.0), z_dest)
            frac_dest = f_dest

    # secondary-stream bounds
    relay_active = coeffs.gamma_relay > 0
    relay_frac = as_raff(0.0)
    upsilon = as_raff(0.0)
    if relay_active:
        delta_r = _lin_abs2(channels.h_rt @ point.v, relay_gain)
        b.add_nonneg(delta_r - DELTA_MIN)
        z_relay = ccat(
            sqrt_ps * relay_fwd,
            sqrt_st * relay_row,
            np.sqrt(params.p_s * _abs2(channels.h_rs) + params.sigma2_r),
        )
        if want_relay_frac and coeffs.relay_curv > 0:
            f_relay = b.real_var("f_relay")
            b.add_rsoc(f_relay, delta_r / 2.0, z_relay)
            relay_frac = f_relay
        j_relay = b.real_var("j_relay")
        b.add_rsoc(j_relay, 0.5, z_relay)
        gain_frac = b.real_var("gain_frac")
        b.add_rsoc(gain_frac, delta_r / 2.0, np.sqrt(coeffs.relay_gain_point))
        shrink = coeffs.gamma_relay / (1.0 + coeffs.gamma_relay)
        upsilon = np.log1p(coeffs.gamma_relay) + shrink * (
            2.0 - j_relay / coeffs.j_relay_point - gain_frac
        )

    # monitor-rate minorant: linear part minus a norm epigraph
    fac = coeffs.mon_factor
    z_mon = ccat(
        sqrt_ps * (fac @ mon_sig),
        sqrt_st * (fac @ channels.h_mt @ v0 @ G).vec(),
        fac @ mon_jam,
    )
    s_mon = b.real_var("s_mon")
    b.add_rsoc(s_mon, 0.5, z_mon)
    rho = (
        coeffs.mon_const
        + 2.0 * params.p_s * creal(np.conj(coeffs.mon_linear) @ mon_sig)
        - s_mon
    )

    # suspicious-rate majorant via a quadratic-over-linear epigraph
    w_l = zf.V0 @ point.G
    dest_row_l = channels.h_dt @ w_l
    delta_dt = _lin_abs2(dest_row_l, dest_row)
    delta_d = _lin_abs2(channels.h_dt @ point.v, dest_jam)
    chi = b.real_var("chi")
    b.add_nonneg(chi)
    if coeffs.mode is DelayMode.NNPD:
        delta_ds = _lin_abs2(dest_row_l @ channels.h_ts, dest_fwd)
        denom = (
            params.p_s * delta_ds
            + params.sigma2_t * delta_dt
            + delta_d
            + params.sigma2_d
        )
        b.add_nonneg(denom - DELTA_MIN)
        numer = params.p_s * _abs2(channels.h_ds)
        if numer > 0:
            b.add_rsoc(chi, denom / 2.0, np.sqrt(numer))
    else:
        denom = params.sigma2_t * delta_dt + delta_d + params.sigma2_d
        b.add_nonneg(denom - DELTA_MIN)
        b.add_rsoc(chi, denom / 2.0, sqrt_ps * (channels.h_ds + dest_fwd))
    dest_rate = np.log1p(coeffs.gamma_dest) + (chi - coeffs.gamma_dest) / (
        1.0 + coeffs.gamma_dest
    )

    return _Pieces(
        G=G,
        v=v,
        q=q_aff,
        frac_dest=frac_dest,
        relay_frac=relay_frac,
        upsilon=upsilon,
        rho=rho,
        dest_rate=dest_rate,
        relay_active=relay_active,
    )


def _finish(b, pieces, point, coeffs) -> Subproblem:
    program, recovery = b.build()
    return Subproblem(program=program, recovery=recovery, point=point, coeffs=coeffs)


def _dest_term_on(params: SystemParams, coeffs: SurrogateCoeffs) -> bool:
    """Whether the destination ratio term earns a place in the objective.

    Dropping a term capped below _TINY_TERM keeps the minorant property
    (the term is nonnegative) and costs the step objective nothing at the
    stopping tolerance.
    """
    return params.alpha_d > 0 and coeffs.dest_scale > _TINY_TERM


def _relay_term_on(params: SystemParams, coeffs: SurrogateCoeffs) -> bool:
    return params.alpha_r > 0 and coeffs.relay_scale > _TINY_TERM


def build_subproblem(
    point: ExpansionPoint,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
    coeffs: SurrogateCoeffs | None = None,
) -> Subproblem:
    """One efficiency-maximization step: maximize the weighted minorant of
    the network energy efficiency subject to the surveillance, secondary
    rate and power constraints, all in their bound-encoded forms."""
    if coeffs is None:
        coeffs = build_coeffs(point, channels, params, zf)
    b = ProgramBuilder()
    dest_on = _dest_term_on(params, coeffs)
    relay_on = _relay_term_on(params, coeffs)
    pieces = _encode_core(
        b, point, coeffs, channels, params, zf,
        want_dest_frac=dest_on,
        want_relay_frac=relay_on,
    )
    b.add_nonneg(pieces.rho - pieces.dest_rate)
    if pieces.relay_active:
        b.add_nonneg(pieces.upsilon - params.r_th)
    obj = as_raff(0.0)
    if dest_on:
        obj = obj + params.alpha_d * (
            coeffs.dest_scale
            - coeffs.dest_curv * pieces.frac_dest
            - coeffs.dest_power * pieces.q
        )
    if relay_on:
        obj = obj + params.alpha_r * (
            coeffs.relay_scale
            - coeffs.relay_curv * pieces.relay_frac
            - coeffs.relay_power * pieces.q
        )
    b.maximize(obj)
    return _finish(b, pieces, point, coeffs)


def build_rate_subproblem(
    point: ExpansionPoint,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
    coeffs: SurrogateCoeffs | None = None,
    power_price: float = 0.0,
) -> Subproblem:
    """Rate-objective step: the power-coupling terms are dropped from the
    objective, optionally replaced by a linear charge power_price * Q. With
    price zero this is the weighted sum-rate step; with the efficiency
    ratio as the price it is the subtractive-form inner step."""
    if coeffs is None:
        coeffs = build_coeffs(point, channels, params, zf)
    b = ProgramBuilder()
    dest_on = _dest_term_on(params, coeffs)
    relay_on = _relay_term_on(params, coeffs)
    pieces = _encode_core(
        b, point, coeffs, channels, params, zf,
        want_dest_frac=dest_on,
        want_relay_frac=relay_on,
    )
    b.add_nonneg(pieces.rho - pieces.dest_rate)
    if pieces.relay_active:
        b.add_nonneg(pieces.upsilon - params.r_th)
    obj = as_raff(0.0)
    if dest_on:
        obj = obj + params.alpha_d * (
            coeffs.dest_scale - coeffs.dest_curv * pieces.frac_dest
        )
    if relay_on:
        obj = obj + params.alpha_r * (
            coeffs.relay_scale - coeffs.relay_curv * pieces.relay_frac
        )
    if power_price != 0.0:
        obj = obj - power_price * pieces.q
    b.maximize(obj)
    return _finish(b, pieces, point, coeffs)


def build_feasibility_subproblem(
    point: ExpansionPoint,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
    coeffs: SurrogateCoeffs | None = None,
) -> Subproblem:
    """Constraint-restoration step: maximize the common slack t with
    t <= monitor bound - suspicious bound and t <= secondary bound - r_th,
    under the power cap. A nonnegative optimum certifies feasibility of the
    true constraints at the returned design."""
    if coeffs is None:
        coeffs = build_coeffs(point, channels, params, zf)
    b = ProgramBuilder()
    pieces = _encode_core(
        b, point, coeffs, channels, params, zf,
        want_dest_frac=False,
        want_relay_frac=False,
    )
    t = b.real_var("t")
    b.add_nonneg(pieces.rho - pieces.dest_rate - t)
    b.add_nonneg(pieces.upsilon - params.r_th - t)
    b.maximize(t)
    return _finish(b, pieces, point, coeffs)
