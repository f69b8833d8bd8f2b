"""Worst-case beam design under norm-bounded channel errors.

The perfect-CSI solvers trust the channel draw. Here the links that T
cannot sound directly -- S->D, S->T, T->D and S->R -- carry additive
estimation errors bounded in euclidean norm, and a design must satisfy
the surveillance, secondary-rate and power constraints for every error
in the ball. Three moves make that tractable:

* each rate is rewritten through its MSE variational identity, so it
  appears as a maximum over an equalizer and a positive weight with the
  channel entering the MSE quadratically (`wmmse_identities`),
* each quadratic constraint, required over the whole error ball, is
  replaced by a single linear matrix inequality with one nonnegative
  multiplier per error direction (`build_lmis` evaluates the very same
  stacks the solver emits),
* the efficiency ratio is driven by an outer price iteration whose
  inner problem alternates conic solves over the weight, equalizer,
  combiner and beam blocks (`inner_ao_solve`, `solve_robust`).

`worst_case_check` and `certificate_residuals` sample the certified
statements after the fact: the former replays true rates and powers at
perturbed channels, the latter replays each certificate's own quadratic
form. `outage_probability` wraps the whole pipeline in a Monte Carlo
over estimate draws and in-ball truths.

Weights alpha_d/alpha_r equal to zero drop the matching rate family
from the problem (mirroring the perfect-CSI solvers); the suspicious
link's own families stay, since surveillance needs them regardless.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from .affine import ProgramBuilder, ccat, cblock, ccol, crow, hconj, _is_aff
from .conic import validate
from .model import (
    BeamDesign,
    ChannelSet,
    DelayMode,
    SystemParams,
    ZFBasis,
    ZeroSignalError,
    circuit_power,
    monitor_covariance,
    monitor_signal,
    optimal_receiver,
    rate_monitor,
    rate_secondary,
    rate_suspicious,
    transmit_power,
    zf_nullspace,
)
from .pathfollow import InitializationError, StepError, _initial_guess, _solve_step

if TYPE_CHECKING:
    from .harness import AntennaDims, Topology


def _norm2(x) -> float:
    x = np.asarray(x)
    return float(np.real(np.vdot(x, x)))


# -- uncertainty description -------------------------------------------------


_LINKS = ("ds", "ts", "dt", "rs")


@dataclass(frozen=True)
class UncertaintyModel:
    """Estimated channels plus one error-ball radius per unsounded link.

    ``channels`` holds the estimates; the true link equals the estimate
    plus an error of norm at most the matching radius. Links T can sound
    itself (T->R, M-side, loopback) carry no error.
    """

    channels: ChannelSet
    eps_ds: float = 0.0
    eps_ts: float = 0.0
    eps_dt: float = 0.0
    eps_rs: float = 0.0

    def __post_init__(self):
        for link in _LINKS:
            r = getattr(self, f"eps_{link}")
            if not (np.isfinite(r) and r >= 0.0):
                raise ValueError(f"radius eps_{link} must be finite and >= 0")

    @classmethod
    def scaled(cls, channels: ChannelSet, eps: float) -> "UncertaintyModel":
        """Radii proportional to the estimated link norms, one factor for all."""
        return cls(
            channels=channels,
            eps_ds=eps * abs(channels.h_ds),
            eps_ts=eps * float(np.linalg.norm(channels.h_ts)),
            eps_dt=eps * float(np.linalg.norm(channels.h_dt)),
            eps_rs=eps * abs(channels.h_rs),
        )

    def radii(self) -> dict:
        return {link: float(getattr(self, f"eps_{link}")) for link in _LINKS}

    @property
    def is_exact(self) -> bool:
        return all(r == 0.0 for r in self.radii().values())


@dataclass(frozen=True)
class PerturbationSample:
    """One in-ball error draw per uncertain link."""

    dh_ds: complex
    dh_ts: np.ndarray
    dh_dt: np.ndarray
    dh_rs: complex

    def apply(self, channels: ChannelSet) -> ChannelSet:
        """The true channels this sample encodes, given the estimates."""
        return replace(
            channels,
            h_ds=channels.h_ds + self.dh_ds,
            h_ts=channels.h_ts + self.dh_ts,
            h_dt=channels.h_dt + self.dh_dt,
            h_rs=channels.h_rs + self.dh_rs,
        )


def _ball_draws(rng, dim, radius, count, sphere_every=4):
    """Columns drawn uniformly from the complex ball of the given radius.

    Every ``sphere_every``-th draw is pushed onto the sphere so that the
    boundary, where certified constraints bind, is always exercised;
    pass None to sample the plain uniform law.
    """
    g = rng.standard_normal((dim, count)) + 1j * rng.standard_normal((dim, count))
    g /= np.maximum(np.linalg.norm(g, axis=0, keepdims=True), 1e-300)
    r = radius * rng.random(count) ** (1.0 / (2 * dim))
    if sphere_every is not None:
        r[::sphere_every] = radius
    return g * r


def sample_perturbations(
    uncertainty: UncertaintyModel, n_samples: int, seed: int, sphere_every: int | None = 4
) -> list[PerturbationSample]:
    """Joint error draws for validation, one fixed draw order per link."""
    chn = uncertainty.channels
    rng = np.random.default_rng(seed)
    ds = _ball_draws(rng, 1, uncertainty.eps_ds, n_samples, sphere_every)
    ts = _ball_draws(rng, chn.n_rx, uncertainty.eps_ts, n_samples, sphere_every)
    dt = _ball_draws(rng, chn.n_tx, uncertainty.eps_dt, n_samples, sphere_every)
    rs = _ball_draws(rng, 1, uncertainty.eps_rs, n_samples, sphere_every)
    return [
        PerturbationSample(
            dh_ds=complex(ds[0, k]),
            dh_ts=ts[:, k].copy(),
            dh_dt=dt[:, k].copy(),
            dh_rs=complex(rs[0, k]),
        )
        for k in range(n_samples)
    ]


# -- variational state --------------------------------------------------------


def wmmse_identities(kind: str, inputs):
    """Evaluate one of the two rate identities and its variational maximum.

    ``kind="sinr"``: ``inputs = (B, R)`` with R Hermitian positive
    definite; returns ``(ln(1 + B^H R^-1 B), max-form value)`` where the
    maximum over the equalizer D and weight S is taken analytically
    (D at the MMSE equalizer, S at the inverse MSE). ``kind="neglog"``:
    ``inputs = T > 0``; returns ``(-ln T, max_S (ln S - S T + 1))``.
    The two members of each pair agree; exposing both keeps the identity
    testable rather than assumed.
    """
    if kind == "neglog":
        (t,) = np.atleast_1d(inputs).ravel()
        t = float(np.real(t))
        if t <= 0.0:
            raise ValueError("neglog identity needs T > 0")
        s = 1.0 / t
        return -math.log(t), math.log(s) - s * t + 1.0
    if kind != "sinr":
        raise ValueError(f"unknown identity kind {kind!r}")
    b, r = inputs
    b = np.atleast_1d(np.asarray(b, dtype=complex)).ravel()
    r = np.asarray(r, dtype=complex)
    if r.ndim == 0:
        r = r.reshape(1, 1)
    if float(np.linalg.eigvalsh((r + r.conj().T) / 2).min()) <= 0.0:
        raise ValueError("sinr identity needs R positive definite")
    rate = float(np.log1p(np.real(b.conj() @ np.linalg.solve(r, b))))
    d = np.linalg.solve(np.outer(b, b.conj()) + r, b).conj()  # MMSE equalizer row
    err = complex(d @ b) - 1.0
    mse = abs(err) ** 2 + float(np.real(d @ r @ d.conj()))
    s = 1.0 / mse
    return rate, math.log(s) - s * mse + 1.0


@dataclass(frozen=True)
class WMMSEState:
    """Weights and equalizers of the five MSE families.

    ``e_*`` are the square roots of the variational weights (the LMIs are
    affine in them), ``d_*`` the equalizers; ``beta_*`` the certified
    worst-case weighted MSEs. The total family has no equalizer; the
    floor family's equalizer is a row over the stacked interference
    components, shorter by one entry under negligible delay.
    """

    e_dest: float
    e_sec: float
    e_mon: float
    e_total: float
    e_floor: float
    d_dest: complex
    d_sec: complex
    d_mon: complex
    d_floor: np.ndarray
    beta_dest: float = 0.0
    beta_sec: float = 0.0
    beta_mon: float = 0.0
    beta_total: float = 0.0
    beta_floor: float = 0.0

    def __post_init__(self):
        for f in ("dest", "sec", "mon", "total", "floor"):
            e = getattr(self, f"e_{f}")
            if not (np.isfinite(e) and e > 0.0):
                raise ValueError(f"weight e_{f} must be positive")
            b = getattr(self, f"beta_{f}")
            if b < -1e-6:
                raise ValueError(f"budget beta_{f} must be nonnegative")
            if b < 0.0:
                object.__setattr__(self, f"beta_{f}", 0.0)
        object.__setattr__(
            self, "d_floor", np.asarray(self.d_floor, dtype=complex).ravel()
        )


@dataclass(frozen=True)
class SlackSet:
    """Nonnegative certificate multipliers, one per family/error direction.

    ``floor_ts`` is None under negligible delay, where the floor family
    carries no S->T direction.
    """

    sec_ts: float = 0.0
    sec_rs: float = 0.0
    mon_ts: float = 0.0
    pow_ts: float = 0.0
    dest_ds: float = 0.0
    dest_dt: float = 0.0
    dest_ts: float = 0.0
    total_dt: float = 0.0
    total_ts: float = 0.0
    total_ds: float = 0.0
    floor_dt: float = 0.0
    floor_ts: float | None = 0.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value is None:
                continue
            if value < -1e-9:
                raise ValueError(f"multiplier {name} must be nonnegative")
            if value < 0.0:
                object.__setattr__(self, name, 0.0)


@dataclass(frozen=True)
class DinkelbachState:
    """Outer ratio-iteration state: the price and the epigraph values."""

    ratio: float
    t_dest: float
    t_sec: float
    t_pow: float
    outer_tol: float

    def __post_init__(self):
        if self.ratio < 0.0 or self.t_pow < -1e-9:
            raise ValueError("ratio and forwarded-power budget must be nonnegative")


def mmse_state(design: BeamDesign, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> WMMSEState:
    """Exact-CSI MMSE weights and equalizers at a fixed design.

    This is the variational optimum of every family at zero error radii;
    each budget then equals the weighted MSE at its optimum, which is 1.
    Used to seed the alternating solver.
    """
    if design.u is None:
        raise ValueError("a receive combiner is required")
    G = np.asarray(design.G, dtype=complex)
    v = np.asarray(design.v, dtype=complex)
    u = np.asarray(design.u, dtype=complex)
    sp = math.sqrt(params.p_s)
    npd = params.delay_mode is DelayMode.NPD

    hdt_w = channels.h_dt @ zf.V0 @ G
    fwd = complex(hdt_w @ channels.h_ts)
    hdt_v = complex(channels.h_dt @ v)
    floor_parts = [math.sqrt(params.sigma2_t) * hdt_w, [hdt_v]]
    if not npd:
        floor_parts.insert(0, [sp * fwd])
    bracket = np.concatenate([np.atleast_1d(p) for p in floor_parts])
    # the bracket already carries the forwarded copy when it interferes,
    # so its power plus receiver noise is the whole interference either way
    floor_pow = _norm2(bracket) + params.sigma2_d
    b_dest = sp * (channels.h_ds + fwd) if npd else sp * channels.h_ds
    r_dest = floor_pow

    hrt_w = channels.h_rt @ zf.V0 @ G
    b_sec = complex(channels.h_rt @ v)
    r_sec = (
        params.p_s * abs(complex(hrt_w @ channels.h_ts)) ** 2
        + params.sigma2_t * _norm2(hrt_w)
        + params.p_s * abs(channels.h_rs) ** 2
        + params.sigma2_r
    )

    b_mon = sp * complex(u.conj() @ monitor_signal(G, channels, zf))
    r_mon = float(np.real(u.conj() @ monitor_covariance(G, v, channels, params, zf) @ u))

    def scalar_mmse(b, r):
        d = np.conj(b) / (abs(b) ** 2 + r)
        m = r / (abs(b) ** 2 + r)
        return complex(d), 1.0 / math.sqrt(m)

    d_dest, e_dest = scalar_mmse(b_dest, r_dest)
    d_sec, e_sec = scalar_mmse(b_sec, r_sec)
    d_mon, e_mon = scalar_mmse(b_mon, r_mon)

    # total family: full received power over noise at D, no equalizer
    m_total = (abs(b_dest) ** 2 + r_dest) / params.sigma2_d
    e_total = 1.0 / math.sqrt(m_total)

    d_floor = bracket / floor_pow
    e_floor = math.sqrt(floor_pow / params.sigma2_d)

    return WMMSEState(
        e_dest=e_dest,
        e_sec=e_sec,
        e_mon=e_mon,
        e_total=e_total,
        e_floor=e_floor,
        d_dest=d_dest,
        d_sec=d_sec,
        d_mon=d_mon,
        d_floor=d_floor,
        beta_dest=1.0,
        beta_sec=1.0,
        beta_mon=1.0,
        beta_total=1.0,
        beta_floor=1.0,
    )


# -- certificate assembly -----------------------------------------------------


_FAMILIES = ("destination", "secondary", "monitor", "total", "floor", "power")

# multiplier field on SlackSet for each (family, direction) pair
_SLACK_FIELDS = {
    ("destination", "ds"): "dest_ds",
    ("destination", "dt"): "dest_dt",
    ("destination", "ts"): "dest_ts",
    ("secondary", "ts"): "sec_ts",
    ("secondary", "rs"): "sec_rs",
    ("monitor", "ts"): "mon_ts",
    ("total", "dt"): "total_dt",
    ("total", "ts"): "total_ts",
    ("total", "ds"): "total_ds",
    ("floor", "dt"): "floor_dt",
    ("floor", "ts"): "floor_ts",
    ("power", "ts"): "pow_ts",
}


def _family_links(name: str, npd: bool) -> tuple[str, ...]:
    if name == "destination":
        return ("ds", "dt", "ts")
    if name == "secondary":
        return ("ts", "rs")
    if name in ("monitor", "power"):
        return ("ts",)
    if name == "total":
        return ("dt", "ts", "ds")
    if name == "floor":
        return ("dt",) if npd else ("dt", "ts")
    raise ValueError(f"unknown family {name!r}")


class _Geometry(NamedTuple):
    W: object  # V0 G, n_tx x n_rx
    hdt_w: object  # h_DT V0 G, length n_rx
    hrt_w: object
    g_ts: object  # G h_TS, length n_tx - n_rx
    vg_ts: object  # V0 G h_TS, length n_tx
    fwd: object  # h_DT V0 G h_TS
    hdt_v: object
    hrt_v: object
    umt_w: object  # u^H H_MT V0 G, length n_rx
    umt_v: object  # u^H H_MT v
    b_mon: object  # u^H H_MT V0 G h_TS


def _geometry(G, v, u, channels: ChannelSet, zf: ZFBasis) -> _Geometry:
    V0 = zf.V0
    hdt_v0 = channels.h_dt @ V0
    hrt_v0 = channels.h_rt @ V0
    W = V0 @ G
    hdt_w = hdt_v0 @ G
    hrt_w = hrt_v0 @ G
    g_ts = G @ channels.h_ts
    vg_ts = V0 @ g_ts
    umt = hconj(u) @ channels.h_mt
    umt_w = (umt @ V0) @ G
    return _Geometry(
        W=W,
        hdt_w=hdt_w,
        hrt_w=hrt_w,
        g_ts=g_ts,
        vg_ts=vg_ts,
        fwd=hdt_w @ channels.h_ts,
        hdt_v=channels.h_dt @ v,
        hrt_v=channels.h_rt @ v,
        umt_w=umt_w,
        umt_v=umt @ v,
        b_mon=umt_w @ channels.h_ts,
    )


def _family_stacks(name, geo, st, u, G, channels, params):
    """Nominal stack and per-direction perturbation matrices of one family.

    ``st`` maps weight/equalizer names to numbers or affine expressions;
    at most one of (weights, equalizers, combiner, beams) may be affine
    at a time, which is exactly what the alternating solver guarantees.
    Returns ``(phi, [(link, omega), ...])`` with omegas ordered as the
    certificate stacks them.
    """
    sp = math.sqrt(params.p_s)
    s_t = math.sqrt(params.sigma2_t)
    s_d = math.sqrt(params.sigma2_d)
    s_r = math.sqrt(params.sigma2_r)
    s_m = math.sqrt(params.sigma2_m)
    nt, nr, nm = channels.n_tx, channels.n_rx, channels.n_mon
    npd = params.delay_mode is DelayMode.NPD

    if name == "secondary":
        e, d = st["e_sec"], st["d_sec"]
        ed = e * d
        phi = ccat(
            e * (d * geo.hrt_v - 1.0),
            ed * (sp * (geo.hrt_w @ channels.h_ts)),
            (s_t * e) * (d * hconj(geo.hrt_w)),
            ed * (sp * channels.h_rs),
            (s_r * e) * d,
        )
        om_ts = cblock(
            [
                [np.zeros((1, nr))],
                [(sp * e) * (d * crow(geo.hrt_w))],
                [np.zeros((nr + 2, nr))],
            ]
        )
        om_rs = cblock(
            [[np.zeros((nr + 2, 1))], [_cell(sp * ed)], [np.zeros((1, 1))]]
        )
        return phi, [("ts", om_ts), ("rs", om_rs)]

    if name == "monitor":
        e, d = st["e_mon"], st["d_mon"]
        phi = ccat(
            e * (d * (sp * geo.b_mon) - 1.0),
            (s_t * e) * (d * hconj(geo.umt_w)),
            e * (d * geo.umt_v),
            (s_m * e) * (d * u),
        )
        om_ts = cblock(
            [
                [(sp * e) * (d * crow(geo.umt_w))],
                [np.zeros((nr + nm + 1, nr))],
            ]
        )
        return phi, [("ts", om_ts)]

    if name == "power":
        phi = sp * geo.g_ts
        return phi, [("ts", sp * G)]

    if name == "destination":
        e, d = st["e_dest"], st["d_dest"]
        ed = e * d
        if npd:
            phi = ccat(
                e * (d * (sp * (channels.h_ds + geo.fwd)) - 1.0),
                (s_t * e) * (d * hconj(geo.hdt_w)),
                ed * geo.hdt_v,
                (s_d * e) * d,
            )
            om_ds = cblock([[_cell(sp * ed)], [np.zeros((nr + 2, 1))]])
            om_dt = cblock(
                [
                    [(sp * e) * (d * crow(hconj(geo.vg_ts)))],
                    [(s_t * e) * (d * hconj(geo.W))],
                    [e * (d * crow(hconj(st["v"])))],
                    [np.zeros((1, nt))],
                ]
            )
            om_ts = cblock(
                [[(sp * e) * (d * crow(geo.hdt_w))], [np.zeros((nr + 2, nr))]]
            )
        else:
            phi = ccat(
                e * (d * (sp * channels.h_ds) - 1.0),
                ed * (sp * geo.fwd),
                (s_t * e) * (d * hconj(geo.hdt_w)),
                ed * geo.hdt_v,
                (s_d * e) * d,
            )
            om_ds = cblock([[_cell(sp * ed)], [np.zeros((nr + 3, 1))]])
            om_dt = cblock(
                [
                    [np.zeros((1, nt))],
                    [(sp * e) * (d * crow(hconj(geo.vg_ts)))],
                    [(s_t * e) * (d * hconj(geo.W))],
                    [e * (d * crow(hconj(st["v"])))],
                    [np.zeros((1, nt))],
                ]
            )
            om_ts = cblock(
                [
                    [np.zeros((1, nr))],
                    [(sp * e) * (d * crow(geo.hdt_w))],
                    [np.zeros((nr + 2, nr))],
                ]
            )
        return phi, [("ds", om_ds), ("dt", om_dt), ("ts", om_ts)]

    if name == "total":
        e = st["e_total"]
        if npd:
            phi = ccat(
                e,
                (sp / s_d * e) * (channels.h_ds + geo.fwd),
                (s_t / s_d * e) * hconj(geo.hdt_w),
                (e / s_d) * geo.hdt_v,
            )
            om_dt = cblock(
                [
                    [np.zeros((1, nt))],
                    [(sp / s_d * e) * crow(hconj(geo.vg_ts))],
                    [(s_t / s_d * e) * hconj(geo.W)],
                    [(e / s_d) * crow(hconj(st["v"]))],
                ]
            )
            om_ts = cblock(
                [
                    [np.zeros((1, nr))],
                    [(sp / s_d * e) * crow(geo.hdt_w)],
                    [np.zeros((nr + 1, nr))],
                ]
            )
            om_ds = cblock(
                [[np.zeros((1, 1))], [_cell(sp / s_d * e)], [np.zeros((nr + 1, 1))]]
            )
        else:
            phi = ccat(
                e,
                (sp / s_d * e) * geo.fwd,
                (s_t / s_d * e) * hconj(geo.hdt_w),
                (e / s_d) * geo.hdt_v,
                (sp / s_d * e) * channels.h_ds,
            )
            om_dt = cblock(
                [
                    [np.zeros((1, nt))],
                    [(sp / s_d * e) * crow(hconj(geo.vg_ts))],
                    [(s_t / s_d * e) * hconj(geo.W)],
                    [(e / s_d) * crow(hconj(st["v"]))],
                    [np.zeros((1, nt))],
                ]
            )
            om_ts = cblock(
                [
                    [np.zeros((1, nr))],
                    [(sp / s_d * e) * crow(geo.hdt_w)],
                    [np.zeros((nr + 2, nr))],
                ]
            )
            om_ds = cblock([[np.zeros((nr + 3, 1))], [_cell(sp / s_d * e)]])
        return phi, [("dt", om_dt), ("ts", om_ts), ("ds", om_ds)]

    if name == "floor":
        e, d = st["e_floor"], st["d_floor"]
        v = st["v"]
        if npd:
            smat = cblock([[s_t * geo.W, ccol(v)]])
        else:
            smat = cblock([[ccol(sp * geo.vg_ts), s_t * geo.W, ccol(v)]])
        bracket = channels.h_dt @ smat
        width = nr + (1 if npd else 2)
        phi = ccat(
            e * ((d @ hconj(bracket)) - 1.0),
            (s_d * e) * hconj(d),
        )
        om_dt = cblock(
            [[e * crow(d @ hconj(smat))], [np.zeros((width, nt))]]
        )
        pairs = [("dt", om_dt)]
        if not npd:
            om_ts = cblock(
                [
                    [(sp * e) * (d[0] * crow(geo.hdt_w))],
                    [np.zeros((width, nr))],
                ]
            )
            pairs.append(("ts", om_ts))
        return phi, pairs

    raise ValueError(f"unknown family {name!r}")


def _cell(x):
    if _is_aff(x):
        return x.reshape((1, 1))
    return np.asarray(x, dtype=complex).reshape(1, 1)


def _stack_len(phi) -> int:
    return phi.size if _is_aff(phi) else int(np.asarray(phi).size)


def _certificate(corner, phi, pairs, radii, mults):
    """Assemble one worst-case certificate matrix.

    ``corner`` is the bounded scalar minus its multipliers; ``pairs`` the
    (direction, omega) list; PSD-ness of the result certifies the scalar
    inequality over the whole product of error balls. Directions with a
    zero radius are dropped by the callers before reaching here, so every
    block present is load-bearing.
    """
    L = _stack_len(phi)
    head = [_cell(corner), crow(hconj(phi))]
    body = [ccol(phi), np.eye(L)]
    for (_, om), r in zip(pairs, radii):
        d = om.shape[1]
        head.append(np.zeros((1, d)))
        body.append((-r) * om)
    rows = [head, body]
    for i, ((_, om), r, m) in enumerate(zip(pairs, radii, mults)):
        d = om.shape[1]
        row = [np.zeros((d, 1)), (-r) * hconj(om)]
        for j, (_, oj) in enumerate(pairs):
            dj = oj.shape[1]
            row.append(m * np.eye(d) if j == i else np.zeros((d, dj)))
        rows.append(row)
    return cblock(rows)


@dataclass(frozen=True)
class LmiBlock:
    """One evaluated certificate: matrix, stacks, and what it bounds."""

    name: str
    matrix: np.ndarray
    budget: float
    phi: np.ndarray
    links: tuple[str, ...]
    radii: tuple[float, ...]
    omegas: tuple[np.ndarray, ...]
    multipliers: tuple[float, ...]

    def eigmin(self) -> float:
        m = (self.matrix + self.matrix.conj().T) / 2
        return float(np.linalg.eigvalsh(m)[0])

    def quad_value(self, directions: dict) -> float:
        """The certified quadratic form at one joint error direction."""
        stack = self.phi.astype(complex).copy()
        for link, om in zip(self.links, self.omegas):
            stack = stack + om @ np.atleast_1d(directions[link])
        return _norm2(stack)


def _family_budget(phi, pairs, radii_of, cfg) -> tuple[float, dict]:
    """Smallest certifiable budget for one family at fixed stacks.

    Minimizes the bounded scalar over the certificate multipliers; with
    no error directions this is just the squared stack norm. Returns the
    budget and the multiplier per direction.
    """
    if not pairs:
        return _norm2(phi), {}
    b = ProgramBuilder()
    beta = b.real_var("beta")
    mults = []
    for link, _ in pairs:
        m = b.real_var(f"m_{link}")
        b.add_nonneg(m)
        mults.append(m)
    corner = beta - sum(mults)
    b.add_psd(_certificate(corner, phi, pairs, [radii_of[link] for link, _ in pairs], mults))
    b.minimize(beta)
    program, rec = b.build()
    sol = _solve_step(program, cfg)
    if not _accept(program, sol):
        raise StepError(f"budget certification failed: {sol.status.value}")
    vals = rec.extract(sol.x)
    return float(vals["beta"]), {
        link: max(0.0, float(vals[f"m_{link}"])) for link, _ in pairs
    }


def _cert_direction(link: str, sample: PerturbationSample):
    """Map a channel error onto the direction the certificate stacks.

    The T->D link enters the stacks through its conjugate transpose, so
    the matching direction is the conjugated error (same norm, and the
    ball is closed under conjugation).
    """
    if link == "dt":
        return np.conj(sample.dh_dt)
    if link == "ts":
        return sample.dh_ts
    if link == "ds":
        return np.atleast_1d(sample.dh_ds)
    if link == "rs":
        return np.atleast_1d(sample.dh_rs)
    raise ValueError(f"unknown link {link!r}")


def build_lmis(
    design: BeamDesign,
    state: WMMSEState,
    slacks: SlackSet,
    uncertainty: UncertaintyModel,
    params: SystemParams,
    zf: ZFBasis,
    t_power: float | None = None,
) -> list[LmiBlock]:
    """Evaluate all six certificate families at a numeric point.

    Emits exactly the matrices the solver constrains, so eigenvalue
    checks here audit the solver's constraint assembly. ``t_power``
    defaults to the smallest certifiable worst-case forwarded power at
    the given beams (the power family is then boundary-tight). Zero-radius
    directions are omitted from the certificates, which is what makes the
    zero-radii blocks reduce to plain Schur complements.
    """
    if design.u is None:
        raise ValueError("a receive combiner is required")
    chn = uncertainty.channels
    radii = uncertainty.radii()
    npd = params.delay_mode is DelayMode.NPD
    G = np.asarray(design.G, dtype=complex)
    v = np.asarray(design.v, dtype=complex)
    u = np.asarray(design.u, dtype=complex)
    geo = _geometry(G, v, u, chn, zf)
    st = {
        "e_dest": state.e_dest,
        "d_dest": state.d_dest,
        "e_sec": state.e_sec,
        "d_sec": state.d_sec,
        "e_mon": state.e_mon,
        "d_mon": state.d_mon,
        "e_total": state.e_total,
        "e_floor": state.e_floor,
        "d_floor": state.d_floor,
        "v": v,
    }
    if t_power is None:
        t_power = _worst_quad(
            math.sqrt(params.p_s) * geo.g_ts, math.sqrt(params.p_s) * G, radii["ts"]
        )

    blocks = []
    for name in _FAMILIES:
        phi, pairs = _family_stacks(name, geo, st, u, G, chn, params)
        pairs = [(link, om) for link, om in pairs if radii[link] > 0.0]
        budget = t_power if name == "power" else getattr(state, f"beta_{_short(name)}")
        mults = []
        for link, _ in pairs:
            field = _SLACK_FIELDS[(name, link)]
            value = getattr(slacks, field)
            mults.append(0.0 if value is None else float(value))
        corner = budget - sum(mults)
        matrix = _certificate(
            corner, phi, pairs, [radii[link] for link, _ in pairs], mults
        )
        blocks.append(
            LmiBlock(
                name=name,
                matrix=np.asarray(matrix, dtype=complex),
                budget=float(budget),
                phi=np.asarray(phi, dtype=complex).ravel(),
                links=tuple(link for link, _ in pairs),
                radii=tuple(float(radii[link]) for link, _ in pairs),
                omegas=tuple(np.asarray(om, dtype=complex) for _, om in pairs),
                multipliers=tuple(mults),
            )
        )
    return blocks


def certificate_residuals(
    blocks: list[LmiBlock], n_samples: int, seed: int
) -> dict[str, float]:
    """Largest sampled violation of each certified quadratic inequality.

    For every block, draws joint in-ball directions (quarter of them on
    the sphere) and returns max over samples of (quadratic form - budget);
    any value above solver accuracy means the certificate failed to cover
    its ball.
    """
    out = {}
    ss = np.random.SeedSequence(seed)
    for block, child in zip(blocks, ss.spawn(len(blocks))):
        rng = np.random.default_rng(child)
        stack = np.repeat(block.phi[:, None], n_samples, axis=1)
        for om, radius in zip(block.omegas, block.radii):
            stack = stack + om @ _ball_draws(rng, om.shape[1], radius, n_samples)
        worst = float(np.max(np.sum(np.abs(stack) ** 2, axis=0))) if n_samples else 0.0
        out[block.name] = worst - block.budget
    return out


def _worst_quad(phi, om, eps: float) -> float:
    """Exact sup of ||phi + om x||^2 over the complex ball ||x|| <= eps.

    Maximizing a convex quadratic over a ball: the optimum sits on the
    sphere and solves (mu I - om^H om) x = om^H phi for a scalar
    multiplier mu at least the top eigenvalue, found by bisection; when
    the linear term is orthogonal to the top eigenspace the multiplier
    pins to that eigenvalue and the remaining norm goes to the top
    eigenvector (the classic degenerate branch).
    """
    phi = np.asarray(phi, dtype=complex).ravel()
    base = _norm2(phi)
    om = np.asarray(om, dtype=complex)
    if eps <= 0.0 or om.size == 0:
        return base
    h = om.conj().T @ om
    b = om.conj().T @ phi
    w, vecs = np.linalg.eigh((h + h.conj().T) / 2)
    bt = vecs.conj().T @ b
    lam1 = float(w[-1])
    scale = max(1.0, abs(lam1))
    top = w >= lam1 - 1e-12 * scale

    def value(xhat) -> float:
        return (
            base
            + 2.0 * float(np.real(np.vdot(bt, xhat)))
            + float(np.real(np.sum(w * np.abs(xhat) ** 2)))
        )

    if np.linalg.norm(bt[top]) <= 1e-12 * max(1.0, np.linalg.norm(bt)):
        xhat = np.zeros_like(bt)
        low = ~top
        xhat[low] = bt[low] / (lam1 - w[low])
        slack = eps**2 - _norm2(xhat)
        if slack >= 0.0:
            pad = np.zeros_like(bt)
            pad[np.argmax(w)] = math.sqrt(slack)
            return value(xhat + pad)
    lo, hi = lam1, lam1 + np.linalg.norm(bt) / eps
    with np.errstate(divide="ignore", over="ignore"):
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lam1 or np.sum(np.abs(bt) ** 2 / (mid - w) ** 2) > eps**2:
                lo = mid
            else:
                hi = mid
    return value(bt / (hi - w))


# -- alternating solver -------------------------------------------------------


@dataclass(frozen=True)
class AoConfig:
    """Knobs of the alternating/ratio solver."""

    max_outer: int = 30
    max_inner: int = 50
    inner_tol: float = 1e-4
    outer_tol: float = 1e-3
    init_max_iters: int = 20
    tol: float = 1e-8
    backend: str = "clarabel"
    seed: int = 0

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 1 or self.init_max_iters < 1:
            raise ValueError("iteration budgets must be at least 1")
        if not (0.0 < self.inner_tol <= 1e-2) or not (0.0 < self.outer_tol <= 1e-1):
            raise ValueError("stopping tolerances out of range")
        if not (0.0 < self.tol < 1.0):
            raise ValueError("backend tolerance out of range")


@dataclass(frozen=True)
class AoIterate:
    """Warm-start bundle: beams plus the variational state."""

    design: BeamDesign
    state: WMMSEState


@dataclass(frozen=True)
class InnerTrace:
    """Objective after each accepted block step of one inner solve."""

    objectives: tuple[float, ...]
    cycles: int
    converged: bool
    skipped: int
    wall_time: float
    slacks: SlackSet | None


@dataclass(frozen=True)
class RobustTrace:
    """Price path of the outer iteration plus the final certificates."""

    prices: tuple[float, ...]
    inner: tuple[InnerTrace, ...]
    state: WMMSEState
    slacks: SlackSet | None
    converged: bool
    wall_time: float

    @property
    def outer_iterations(self) -> int:
        return len(self.prices) - 1


_BLOCKS = ("weights", "equalizers", "combiner", "beams")


def _active_families(params: SystemParams) -> tuple[str, ...]:
    fams = []
    if params.alpha_d > 0.0:
        fams.append("destination")
    if params.alpha_r > 0.0 or params.r_th > 0.0:
        fams.append("secondary")
    return tuple(fams) + ("monitor", "total", "floor", "power")


def _step_program(block, goal, price, point, channels, radii, params, zf):
    """Cone program for the equalizer or beam block at fixed remainder.

    ``goal="ratio"`` maximizes the priced surplus t_dest + t_sec -
    price * consumption; ``goal="margin"`` maximizes the common
    feasibility margin used to enter the ratio iteration. Budgets,
    multipliers and epigraphs are free in both blocks. The equalizer
    block additionally maximizes the surveillance-row slack: its
    variables split into disjoint groups on the two objective parts, so
    the joint maximization is exact and pins the families the surplus
    itself leaves free. (The weight block has a closed-form optimum and
    never builds a program; the combiner block has its own reduced one.)
    """
    b = ProgramBuilder()
    st8 = point.state
    des = point.design
    npd = params.delay_mode is DelayMode.NPD
    fams = _active_families(params)
    nt, nr = channels.n_tx, channels.n_rx
    width = nr + (1 if npd else 2)

    if block == "beams":
        G = b.complex_var("G", (nt - nr, nr))
        v = b.complex_var("v", (nt,))
        pg = b.real_var("pg")
        pv = b.real_var("pv")
        b.add_rsoc(pg, 0.5, G.vec())
        b.add_rsoc(pv, 0.5, v)
        amp_g, amp_v = pg, pv
    else:
        G = np.asarray(des.G, dtype=complex)
        v = np.asarray(des.v, dtype=complex)
        amp_g, amp_v = _norm2(G), _norm2(v)
    # the combiner block never reaches here; it has its own reduced problem
    u = np.asarray(des.u, dtype=complex)

    rate_fams = [f for f in fams if f != "power"]
    e = {f: getattr(st8, f"e_{_short(f)}") for f in rate_fams}
    lne = {f: math.log(e[f]) for f in rate_fams}
    if block == "equalizers":
        d = {
            "destination": b.complex_var("d_dest"),
            "secondary": b.complex_var("d_sec"),
            "monitor": b.complex_var("d_mon"),
            "floor": b.complex_var("d_floor", (width,)),
        }
    else:
        d = {
            "destination": st8.d_dest,
            "secondary": st8.d_sec,
            "monitor": st8.d_mon,
            "floor": st8.d_floor,
        }

    beta = {f: b.real_var(f"beta_{f}") for f in rate_fams}
    for f in rate_fams:
        b.add_nonneg(beta[f])

    t_pow = b.real_var("t_pow")
    b.add_nonneg(t_pow)
    consumption = t_pow + params.sigma2_t * amp_g + amp_v
    b.add_nonneg(params.p_max - consumption)

    include_dest = "destination" in fams
    include_sec = "secondary" in fams
    surv = 3.0
    for f in ("monitor", "total", "floor"):
        surv = surv + 2.0 * lne[f] - beta[f]

    if goal == "ratio":
        t_dest = b.real_var("t_dest") if include_dest else 0.0
        t_sec = (
            b.real_var("t_sec") if include_sec and params.alpha_r > 0.0 else 0.0
        )
        if include_dest:
            b.add_nonneg(2.0 * lne["destination"] - beta["destination"] + 1.0 - t_dest / params.alpha_d)
        if include_sec:
            if params.alpha_r > 0.0:
                b.add_nonneg(2.0 * lne["secondary"] - beta["secondary"] + 1.0 - t_sec / params.alpha_r)
                b.add_nonneg(t_sec - params.alpha_r * params.r_th)
            else:
                b.add_nonneg(2.0 * lne["secondary"] - beta["secondary"] + 1.0 - params.r_th)
        b.add_nonneg(surv)
        objective = (
            t_dest
            + t_sec
            - (price / params.xi) * consumption
            - price * circuit_power(channels, params)
        )
    else:
        margin = b.real_var("t_margin")
        if include_dest:
            b.add_nonneg(
                2.0 * lne["destination"] - beta["destination"] + 1.0 - margin / params.alpha_d
            )
        if include_sec:
            b.add_nonneg(
                2.0 * lne["secondary"] - beta["secondary"] + 1.0 - params.r_th - margin
            )
        b.add_nonneg(surv - margin)
        objective = margin
    if block == "equalizers":
        objective = objective + surv

    geo = _geometry(G, v, u, channels, zf)
    st_map = {
        "e_dest": e.get("destination", st8.e_dest),
        "d_dest": d["destination"],
        "e_sec": e.get("secondary", st8.e_sec),
        "d_sec": d["secondary"],
        "e_mon": e["monitor"],
        "d_mon": d["monitor"],
        "e_total": e["total"],
        "e_floor": e["floor"],
        "d_floor": d["floor"],
        "v": v,
    }
    for name in fams:
        phi, pairs = _family_stacks(name, geo, st_map, u, G, channels, params)
        pairs = [(link, om) for link, om in pairs if radii[link] > 0.0]
        mults = []
        for link, _ in pairs:
            m = b.real_var(f"m_{_SLACK_FIELDS[(name, link)]}")
            b.add_nonneg(m)
            mults.append(m)
        budget = t_pow if name == "power" else beta[name]
        corner = budget - sum(mults) if mults else budget
        b.add_psd(
            _certificate(corner, phi, pairs, [radii[link] for link, _ in pairs], mults)
        )

    b.maximize(objective)
    return b.build()


_SHORT = {
    "destination": "dest",
    "secondary": "sec",
    "monitor": "mon",
    "total": "total",
    "floor": "floor",
}


def _short(family: str) -> str:
    return _SHORT[family]


def _slacks_from(vals: dict, npd: bool) -> SlackSet:
    kw = {}
    for (_, _), field in _SLACK_FIELDS.items():
        name = f"m_{field}"
        if name in vals:
            kw[field] = max(0.0, float(vals[name]))
        else:
            kw[field] = 0.0
    if npd:
        kw["floor_ts"] = None
    return SlackSet(**kw)


def _apply_block(block, vals, point) -> AoIterate:
    st8 = point.state
    des = point.design
    upd = {}
    for f in ("destination", "secondary", "monitor", "total", "floor"):
        key = f"e_{f}"
        if key in vals:
            upd[f"e_{_short(f)}"] = float(vals[key])
        key = f"beta_{f}"
        if key in vals:
            upd[f"beta_{_short(f)}"] = max(0.0, float(vals[key]))
    for key, field in (
        ("d_dest", "d_dest"),
        ("d_sec", "d_sec"),
        ("d_mon", "d_mon"),
        ("d_floor", "d_floor"),
    ):
        if key in vals:
            upd[field] = vals[key]
    state = replace(st8, **upd) if upd else st8
    if block == "beams":
        des = replace(des, G=vals["G"], v=vals["v"])
    elif block == "combiner":
        des = replace(des, u=vals["u"])
    return AoIterate(design=des, state=state)


def _priced_surplus(point, tvals, price, channels, params) -> float:
    t_dest, t_sec, t_pow = tvals
    consumption = (
        t_pow
        + params.sigma2_t * _norm2(point.design.G)
        + _norm2(point.design.v)
    )
    return (
        t_dest
        + t_sec
        - price * (consumption / params.xi + circuit_power(channels, params))
    )


def _tvals_from(vals: dict, old: tuple) -> tuple:
    return (
        float(vals.get("t_dest", old[0])),
        float(vals.get("t_sec", old[1])),
        float(vals.get("t_pow", old[2])),
    )


def _weights_update(point, channels, radii, params, zf, cfg, goal="ratio"):
    """Exact weight-block optimum, no cone program over the weights.

    Every family stack is linear in its own weight, so the certified
    budget scales with the squared weight and maximizing 2 ln e - beta
    lands at the inverse square root of the unit-weight certified MSE.
    One tiny certification solve per family recovers that MSE and its
    multipliers; budgets normalize to 1. Returns the updated point, the
    epigraph values and the multipliers; raises StepError when a
    certification solve fails or (secondary rate, surveillance) rows
    come back infeasible, which a feasible warm start rules out beyond
    solver noise.
    """
    des = point.design
    G = np.asarray(des.G, dtype=complex)
    v = np.asarray(des.v, dtype=complex)
    u = np.asarray(des.u, dtype=complex)
    st8 = point.state
    geo = _geometry(G, v, u, channels, zf)
    st_unit = {
        "e_dest": 1.0,
        "d_dest": st8.d_dest,
        "e_sec": 1.0,
        "d_sec": st8.d_sec,
        "e_mon": 1.0,
        "d_mon": st8.d_mon,
        "e_total": 1.0,
        "e_floor": 1.0,
        "d_floor": st8.d_floor,
        "v": v,
    }
    fams = _active_families(params)
    rows = {}
    upd = {}
    mult_map = {}
    t_pow = 0.0
    for name in fams:
        phi, pairs = _family_stacks(name, geo, st_unit, u, G, channels, params)
        pairs = [(link, om) for link, om in pairs if radii[link] > 0.0]
        w, mults = _family_budget(phi, pairs, radii, cfg)
        if name == "power":
            t_pow = max(0.0, w)
            mult_map[name] = mults
            continue
        if w <= 0.0:
            raise StepError(f"nonpositive certified MSE in family {name}")
        short = _short(name)
        upd[f"e_{short}"] = 1.0 / math.sqrt(w)
        upd[f"beta_{short}"] = 1.0
        rows[name] = -math.log(w)  # the family's 2 ln e - beta + 1 at optimum
        mult_map[name] = {link: m / w for link, m in mults.items()}

    if goal == "ratio":
        # a feasible warm start keeps these rows clear; a miss means the
        # incumbent was not actually certified and the step must not land
        if rows["monitor"] + rows["total"] + rows["floor"] < -1e-6:
            raise StepError("surveillance row infeasible after weight update")
        if "secondary" in rows and rows["secondary"] < params.r_th - 1e-6:
            raise StepError("secondary-rate row infeasible after weight update")
    t_dest = params.alpha_d * rows["destination"] if "destination" in rows else 0.0
    t_sec = 0.0
    if "secondary" in rows and params.alpha_r > 0.0:
        t_sec = params.alpha_r * rows["secondary"]
    kw = {}
    for (fam, link), field in _SLACK_FIELDS.items():
        kw[field] = mult_map.get(fam, {}).get(link, 0.0)
    if params.delay_mode is DelayMode.NPD:
        kw["floor_ts"] = None
    slacks = SlackSet(**kw)
    new_point = AoIterate(design=des, state=replace(st8, **upd))
    return new_point, (t_dest, t_sec, t_pow), slacks


def receiver_subproblem(
    state: WMMSEState,
    design: BeamDesign,
    uncertainty: UncertaintyModel,
    params: SystemParams,
    zf: ZFBasis,
    cfg: AoConfig | None = None,
) -> tuple[np.ndarray, float, float]:
    """Best monitor combiner at fixed everything else.

    Minimizes the monitor family's certified worst-case weighted MSE over
    combiners in the unit ball; returns (u, budget, multiplier). Feasible
    for any inputs (the budget is free), so failures are backend-only.
    """
    cfg = cfg or AoConfig()
    chn = uncertainty.channels
    radii = uncertainty.radii()
    b = ProgramBuilder()
    u = b.complex_var("u", (chn.n_mon,))
    b.add_soc(1.0, u)
    beta = b.real_var("beta")
    b.add_nonneg(beta)
    G = np.asarray(design.G, dtype=complex)
    v = np.asarray(design.v, dtype=complex)
    geo = _geometry(G, v, u, chn, zf)
    st_map = {"e_mon": state.e_mon, "d_mon": state.d_mon}
    phi, pairs = _family_stacks("monitor", geo, st_map, u, G, chn, params)
    pairs = [(link, om) for link, om in pairs if radii[link] > 0.0]
    mults = []
    for link, _ in pairs:
        m = b.real_var(f"m_{link}")
        b.add_nonneg(m)
        mults.append(m)
    corner = beta - sum(mults) if mults else beta
    b.add_psd(_certificate(corner, phi, pairs, [radii[link] for link, _ in pairs], mults))
    b.minimize(beta)
    program, rec = b.build()
    sol = _solve_step(program, cfg)
    if not _accept(program, sol):
        raise StepError(f"combiner step failed: {sol.status.value}")
    vals = rec.extract(sol.x)
    slack = max(0.0, float(vals["m_ts"])) if "m_ts" in vals else 0.0
    return vals["u"], float(vals["beta"]), slack


def _accept(program, sol) -> bool:
    if sol.ok:
        return True
    return sol.x is not None and validate(program, sol.x).ok(1e-6)


def inner_ao_solve(
    price: float,
    warm: AoIterate,
    channels_est: ChannelSet,
    uncertainty: UncertaintyModel,
    params: SystemParams,
    zf: ZFBasis,
    cfg: AoConfig | None = None,
) -> tuple[BeamDesign, WMMSEState, tuple[float, float, float], InnerTrace]:
    """Maximize the priced surplus by cycling the four variable blocks.

    Each cycle updates weights, equalizers, combiner and beams in turn;
    every block solve contains the incumbent point, so the surplus is
    non-decreasing along accepted steps, and a candidate that fails the
    backend or regresses numerically is skipped rather than patched.
    Stops when the cycle-to-cycle surplus change falls below inner_tol
    (relative) or after max_inner cycles.
    """
    cfg = cfg or AoConfig()
    start = time.perf_counter()
    radii = uncertainty.radii()
    npd = params.delay_mode is DelayMode.NPD
    point = warm
    tvals = None
    surplus = None
    slacks = None
    objectives: list[float] = []
    skipped = 0
    converged = False
    cycles = 0
    prev_cycle = None
    for _ in range(cfg.max_inner):
        cycles += 1
        for block in _BLOCKS:
            if block == "combiner":
                try:
                    u_new, beta_mon, mon_ts = receiver_subproblem(
                        point.state, point.design, _with_channels(uncertainty, channels_est), params, zf, cfg
                    )
                except StepError:
                    skipped += 1
                    continue
                point = AoIterate(
                    design=replace(point.design, u=u_new),
                    state=replace(point.state, beta_mon=max(0.0, beta_mon)),
                )
                if slacks is not None:
                    slacks = replace(slacks, mon_ts=mon_ts)
                if tvals is not None:
                    objectives.append(surplus)
                continue
            if block == "weights":
                try:
                    cand_point, cand_tvals, cand_slacks = _weights_update(
                        point, channels_est, radii, params, zf, cfg
                    )
                except StepError:
                    skipped += 1
                    continue
            else:
                program, rec = _step_program(
                    block, "ratio", price, point, channels_est, radii, params, zf
                )
                sol = _solve_step(program, cfg)
                if not _accept(program, sol):
                    skipped += 1
                    continue
                vals = rec.extract(sol.x)
                cand_point = _apply_block(block, vals, point)
                cand_tvals = _tvals_from(vals, tvals or (0.0, 0.0, 0.0))
                cand_slacks = _slacks_from(vals, npd)
            cand = _priced_surplus(cand_point, cand_tvals, price, channels_est, params)
            if surplus is not None and cand < surplus - 1e-9 * max(1.0, abs(surplus)):
                skipped += 1
                continue
            point, tvals, surplus = cand_point, cand_tvals, cand
            slacks = cand_slacks
            objectives.append(surplus)
        if tvals is None:
            raise StepError("no block step succeeded in the first cycle")
        if prev_cycle is not None and abs(surplus - prev_cycle) <= cfg.inner_tol * max(
            1.0, abs(prev_cycle)
        ):
            converged = True
            break
        prev_cycle = surplus
    trace = InnerTrace(
        objectives=tuple(objectives),
        cycles=cycles,
        converged=converged,
        skipped=skipped,
        wall_time=time.perf_counter() - start,
        slacks=slacks,
    )
    return point.design, point.state, tvals, trace


def _with_channels(uncertainty: UncertaintyModel, channels: ChannelSet) -> UncertaintyModel:
    if uncertainty.channels is channels:
        return uncertainty
    return replace(uncertainty, channels=channels)


def find_start(
    channels: ChannelSet,
    uncertainty: UncertaintyModel,
    params: SystemParams,
    zf: ZFBasis,
    cfg: AoConfig | None = None,
) -> AoIterate:
    """Alternating feasibility search for a certified starting point.

    Draws random beams, seeds the variational state at its exact-CSI
    optimum, then cycles the same four blocks on the common-margin
    objective until the margin clears zero. A run that plateaus below
    zero restarts from a fresh draw on the same stream; the cycle budget
    is shared across restarts so infeasible instances fail fast.
    """
    cfg = cfg or AoConfig()
    radii = uncertainty.radii()
    rng = np.random.default_rng(cfg.seed)
    cycles = 0
    last_error = "margin never reached zero"
    while cycles < cfg.init_max_iters:
        guess = _initial_guess(rng, channels, params)
        try:
            u0 = optimal_receiver(guess.G, guess.v, channels, params, zf)
        except ZeroSignalError:
            cycles += 1
            continue
        design = BeamDesign(G=guess.G, v=guess.v, u=u0)
        point = AoIterate(design=design, state=mmse_state(design, channels, params, zf))
        prev = None
        while cycles < cfg.init_max_iters:
            cycles += 1
            margin = None
            for block in _BLOCKS:
                if block == "combiner":
                    try:
                        u_new, beta_mon, _ = receiver_subproblem(
                            point.state, point.design, _with_channels(uncertainty, channels), params, zf, cfg
                        )
                    except StepError:
                        continue
                    point = AoIterate(
                        design=replace(point.design, u=u_new),
                        state=replace(point.state, beta_mon=max(0.0, beta_mon)),
                    )
                    continue
                if block == "weights":
                    try:
                        point, _, _ = _weights_update(
                            point, channels, radii, params, zf, cfg, goal="margin"
                        )
                    except StepError as err:
                        last_error = str(err)
                    continue
                program, rec = _step_program(
                    block, "margin", 0.0, point, channels, radii, params, zf
                )
                sol = _solve_step(program, cfg)
                if not _accept(program, sol):
                    last_error = f"start step failed: {sol.status.value}"
                    continue
                vals = rec.extract(sol.x)
                point = _apply_block(block, vals, point)
                margin = float(vals["t_margin"])
            if margin is None:
                break
            if margin >= 0.0:
                return point
            if prev is not None and abs(margin - prev) <= cfg.inner_tol * max(
                1.0, abs(prev)
            ):
                break
            prev = margin
    raise InitializationError(
        f"no certified feasible start within {cfg.init_max_iters} cycles ({last_error})"
    )


def solve_robust(
    channels_est: ChannelSet,
    uncertainty: UncertaintyModel,
    params: SystemParams,
    zf: ZFBasis,
    cfg: AoConfig | None = None,
) -> tuple[BeamDesign, DinkelbachState, RobustTrace]:
    """Worst-case efficiency design by ratio iteration over inner AO solves.

    The price starts at zero, each inner solve maximizes the priced
    surplus, and the price updates to the certified efficiency of the
    returned point (with the forwarded-power budget re-tightened to its
    exact worst case, which the single-ball certificate attains). The
    price sequence is non-decreasing; iteration stops once it moves by
    at most outer_tol.
    """
    cfg = cfg or AoConfig()
    start_time = time.perf_counter()
    unc = _with_channels(uncertainty, channels_est)
    point = find_start(channels_est, unc, params, zf, cfg)
    sp = math.sqrt(params.p_s)
    price = 0.0
    prices = [0.0]
    inners: list[InnerTrace] = []
    tvals = (0.0, 0.0, 0.0)
    converged = False
    for _ in range(cfg.max_outer):
        design, state, tvals, itrace = inner_ao_solve(
            price, point, channels_est, unc, params, zf, cfg
        )
        point = AoIterate(design=design, state=state)
        inners.append(itrace)
        G = np.asarray(design.G, dtype=complex)
        t_pow = min(
            tvals[2],
            _worst_quad(sp * (G @ channels_est.h_ts), sp * G, unc.eps_ts),
        )
        tvals = (tvals[0], tvals[1], max(0.0, t_pow))
        consumption = tvals[2] + params.sigma2_t * _norm2(G) + _norm2(design.v)
        new_price = (tvals[0] + tvals[1]) / (
            consumption / params.xi + circuit_power(channels_est, params)
        )
        prices.append(new_price)
        if abs(new_price - price) <= cfg.outer_tol:
            price = new_price
            converged = True
            break
        price = new_price
    # the monitor rate ignores combiner scale; hand back a unit-norm u and
    # rescale its equalizer so every certificate stays bitwise equivalent
    u_norm = float(np.linalg.norm(point.design.u))
    if u_norm > 0.0 and abs(u_norm - 1.0) > 1e-12:
        point = AoIterate(
            design=replace(point.design, u=np.asarray(point.design.u) / u_norm),
            state=replace(point.state, d_mon=point.state.d_mon * u_norm),
        )
    trace = RobustTrace(
        prices=tuple(prices),
        inner=tuple(inners),
        state=point.state,
        slacks=inners[-1].slacks if inners else None,
        converged=converged,
        wall_time=time.perf_counter() - start_time,
    )
    dk = DinkelbachState(
        ratio=price,
        t_dest=tvals[0],
        t_sec=tvals[1],
        t_pow=tvals[2],
        outer_tol=cfg.outer_tol,
    )
    return point.design, dk, trace


# -- after-the-fact validation ------------------------------------------------


@dataclass(frozen=True)
class WorstCaseStats:
    """Smallest sampled design-constraint slacks under in-ball truths."""

    min_slack_monitor: float
    min_slack_secondary: float
    min_slack_power: float
    violations: int
    n_samples: int

    @property
    def worst(self) -> float:
        return min(self.min_slack_monitor, self.min_slack_secondary, self.min_slack_power)


def worst_case_check(
    design: BeamDesign,
    uncertainty: UncertaintyModel,
    params: SystemParams,
    zf: ZFBasis,
    n_samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-6,
) -> WorstCaseStats:
    """Replay the true design constraints at sampled in-ball channels.

    Evaluates the suspicious, secondary and monitor rates and the
    transmit power at each perturbed channel with the fixed design and
    reports the smallest slacks; ``violations`` counts samples where any
    slack falls below -tol. At zero radii this reduces to the single
    nominal point, matching `model.check_feasible`.
    """
    if design.u is None:
        raise ValueError("a receive combiner is required")
    chn = uncertainty.channels
    samples = sample_perturbations(uncertainty, n_samples, seed)
    mins = [math.inf, math.inf, math.inf]
    violations = 0
    for sample in samples:
        truth = sample.apply(chn)
        r_d = rate_suspicious(design.G, design.v, truth, params, zf)
        r_r = rate_secondary(design.G, design.v, truth, params, zf)
        r_m = rate_monitor(design.G, design.v, design.u, truth, params, zf)
        p_t = transmit_power(design.G, design.v, truth, params)
        slacks = (r_m - r_d, r_r - params.r_th, params.p_max - p_t)
        mins = [min(a, s) for a, s in zip(mins, slacks)]
        if min(slacks) < -tol:
            violations += 1
    return WorstCaseStats(
        min_slack_monitor=mins[0],
        min_slack_secondary=mins[1],
        min_slack_power=mins[2],
        violations=violations,
        n_samples=n_samples,
    )


class DesignRule(str, enum.Enum):
    """Which designer the outage Monte Carlo exercises."""

    ROBUST = "robust"
    NONROBUST = "nonrobust"


def outage_probability(
    design_source: DesignRule | str,
    eps: float,
    params: SystemParams,
    topology: "Topology",
    dims: "AntennaDims",
    n_trials: int = 50,
    seed: int = 0,
    cfg: AoConfig | None = None,
) -> float:
    """Outage rate of a designer under estimation errors.

    Each trial draws an estimated channel set, designs beams on the
    estimates (worst-case design with radii ``eps`` times the link
    norms, or the perfect-CSI design that trusts them), then draws one
    uniform in-ball truth and flags an outage when the secondary rate
    misses its floor or the monitor rate falls below the suspicious
    rate (1e-6 slack; an exactly binding constraint is not an outage).
    Trials whose design step proves infeasible are excluded from the
    denominator under either rule, keeping shared-seed runs paired.
    """
    from .harness import generate_channels

    from .pathfollow import SolverConfig, solve_nee_perfect

    rule = DesignRule(design_source)
    cfg = cfg or AoConfig()
    outages = 0
    effective = 0
    for child in np.random.SeedSequence(seed).spawn(n_trials):
        est_seed, truth_seed = child.spawn(2)
        est = generate_channels(topology, dims, est_seed)
        zf = zf_nullspace(est.h_tt)
        unc = UncertaintyModel.scaled(est, eps)
        try:
            if rule is DesignRule.ROBUST:
                design, _, _ = solve_robust(est, unc, params, zf, cfg)
            else:
                design, _ = solve_nee_perfect(
                    est, params, zf, SolverConfig(seed=cfg.seed, backend=cfg.backend)
                )
        except (InitializationError, StepError):
            continue
        effective += 1
        rng = np.random.default_rng(truth_seed)
        truth = PerturbationSample(
            dh_ds=complex(_ball_draws(rng, 1, unc.eps_ds, 1, None)[0, 0]),
            dh_ts=_ball_draws(rng, est.n_rx, unc.eps_ts, 1, None)[:, 0],
            dh_dt=_ball_draws(rng, est.n_tx, unc.eps_dt, 1, None)[:, 0],
            dh_rs=complex(_ball_draws(rng, 1, unc.eps_rs, 1, None)[0, 0]),
        ).apply(est)
        r_r = rate_secondary(design.G, design.v, truth, params, zf)
        r_d = rate_suspicious(design.G, design.v, truth, params, zf)
        r_m = rate_monitor(design.G, design.v, design.u, truth, params, zf)
        if r_r < params.r_th - 1e-6 or r_m < r_d - 1e-6:
            outages += 1
    if effective == 0:
        raise InitializationError("every trial failed to produce a design")
    return outages / effective
