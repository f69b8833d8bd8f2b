"""Physical-layer model of the monitored relay network.

A suspicious source S transmits to its destination D. A full-duplex
secondary transmitter T (N_T transmit / N_R receive antennas)
amplify-forwards the suspicious signal through the precoder W = V0 G while
sending its own stream v to the secondary receiver R; a legitimate monitor
M with N_M antennas decodes the suspicious message to surveil the link.
Loopback self-interference at T is removed by restricting W to the null
space of the T-to-T channel, which is what the V0 factor encodes.

Two relay processing-delay regimes are supported: with non-negligible
delay (NNPD) the forwarded copy arrives out of symbol sync and acts as
interference at D; with negligible delay (NPD) it combines coherently and
can spoof D into a higher rate.

Rates are natural-log (nats/s/Hz); powers are watts throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class DelayMode(str, enum.Enum):
    """Relay processing-delay regime."""

    NNPD = "nnpd"
    NPD = "npd"


class RankDeficiencyError(ValueError):
    """Loopback channel has too little row rank for zero-forcing."""


class ZeroSignalError(ValueError):
    """No forwarded signal reaches the monitor (A = 0)."""


def _abs2(x) -> float:
    z = complex(x)
    return z.real * z.real + z.imag * z.imag


def _norm2(x):
    x = np.asarray(x)
    return float(np.real(np.vdot(x, x)))


@dataclass(frozen=True)
class SystemParams:
    """Powers, noise variances, weights and energy-model constants.

    ``p_a`` / ``p_r_ant`` are per-antenna circuit powers on the transmit and
    receive sides of T, ``p_c`` the static circuit power, ``xi`` the power
    amplifier efficiency.
    """

    p_s: float
    p_max: float
    r_th: float
    alpha_d: float = 1.0
    alpha_r: float = 1.0
    sigma2_t: float = 1e-3
    sigma2_d: float = 1e-3
    sigma2_r: float = 1e-3
    sigma2_m: float = 1e-3
    xi: float = 0.4
    p_a: float = 0.04
    p_r_ant: float = 0.02
    p_c: float = 0.05
    delay_mode: DelayMode = DelayMode.NNPD

    def __post_init__(self):
        for name in ("p_s", "p_max", "sigma2_t", "sigma2_d", "sigma2_r", "sigma2_m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 < self.xi <= 1:
            raise ValueError("xi must lie in (0, 1]")
        if self.alpha_d < 0 or self.alpha_r < 0 or self.alpha_d + self.alpha_r == 0:
            raise ValueError("weights must be nonnegative and not both zero")
        if self.r_th < 0:
            raise ValueError("r_th must be nonnegative")
        if min(self.p_a, self.p_r_ant, self.p_c) < 0:
            raise ValueError("circuit powers must be nonnegative")
        object.__setattr__(self, "delay_mode", DelayMode(self.delay_mode))


@dataclass(frozen=True)
class ChannelSet:
    """One realization of every link in the network.

    h_ds, h_rs: scalars (S->D, S->R). h_ts: S->T receive array, length N_R.
    h_dt, h_rt: T->D and T->R rows over the N_T transmit antennas.
    h_mt: T->M matrix (N_M x N_T). h_tt: loopback T->T (N_R x N_T).
    """

    h_ds: complex
    h_rs: complex
    h_ts: np.ndarray
    h_dt: np.ndarray
    h_rt: np.ndarray
    h_mt: np.ndarray
    h_tt: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h_ds", complex(self.h_ds))
        object.__setattr__(self, "h_rs", complex(self.h_rs))
        for name in ("h_ts", "h_dt", "h_rt", "h_mt", "h_tt"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex))
        if self.h_ts.ndim != 1 or self.h_dt.ndim != 1 or self.h_rt.ndim != 1:
            raise ValueError("h_ts, h_dt, h_rt must be vectors")
        if self.h_mt.ndim != 2 or self.h_tt.ndim != 2:
            raise ValueError("h_mt, h_tt must be matrices")
        n_tx, n_rx = self.n_tx, self.n_rx
        if self.h_rt.shape != (n_tx,) or self.h_mt.shape[1] != n_tx:
            raise ValueError("transmit-side dimensions disagree")
        if self.h_tt.shape != (n_rx, n_tx):
            raise ValueError("loopback channel must be N_R x N_T")
        if n_tx <= n_rx:
            raise ValueError("model requires N_T > N_R")

    @property
    def n_tx(self) -> int:
        return self.h_dt.shape[0]

    @property
    def n_rx(self) -> int:
        return self.h_ts.shape[0]

    @property
    def n_mon(self) -> int:
        return self.h_mt.shape[0]


@dataclass(frozen=True)
class ZFBasis:
    """Orthonormal basis V0 of the loopback channel's null space, N_T x (N_T - N_R)."""

    V0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "V0", np.asarray(self.V0, dtype=complex))


@dataclass(frozen=True)
class BeamDesign:
    """Decision variables: relay factor G, own-stream precoder v, monitor combiner u."""

    G: np.ndarray
    v: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "G", np.asarray(self.G, dtype=complex))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=complex))
        if self.u is not None:
            object.__setattr__(self, "u", np.asarray(self.u, dtype=complex))


def zf_nullspace(h_tt: np.ndarray, rank_rtol: float = 1e-12) -> ZFBasis:
    """Orthonormal kernel basis of the loopback channel, via SVD.

    Raises RankDeficiencyError when the numerical row rank of ``h_tt``
    falls below N_R (singular values under ``rank_rtol`` times the largest
    count as zero). Any orthonormal kernel basis is acceptable downstream:
    the free factor G absorbs the rotation.
    """
    h_tt = np.asarray(h_tt, dtype=complex)
    n_rx, n_tx = h_tt.shape
    if n_tx <= n_rx:
        raise ValueError("zero-forcing needs N_T > N_R")
    _, s, vh = np.linalg.svd(h_tt)
    if s.size and s[-1] <= rank_rtol * s[0]:
        raise RankDeficiencyError("loopback channel is numerically rank deficient")
    return ZFBasis(V0=vh[n_rx:].conj().T)


def transmit_power(G, v, channels: ChannelSet, params: SystemParams) -> float:
    """P_S ||G h_TS||^2 + sigma_T^2 ||G||_F^2 + ||v||^2.

    Equals the power radiated through the explicit precoder W = V0 G plus
    the own-stream power; V0 semi-unitarity collapses the V0 factors.
    """
    G = np.asarray(G, dtype=complex)
    v = np.asarray(v, dtype=complex)
    return (
        params.p_s * _norm2(G @ channels.h_ts)
        + params.sigma2_t * _norm2(G)
        + _norm2(v)
    )


def _dest_terms(G, v, channels, params, zf):
    hdt_w = channels.h_dt @ zf.V0 @ G
    forwarded = hdt_w @ channels.h_ts
    floor = (
        params.sigma2_t * _norm2(hdt_w)
        + _abs2(channels.h_dt @ v)
        + params.sigma2_d
    )
    return forwarded, floor


def rate_suspicious(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Achievable rate of the suspicious link S->D for the active delay mode."""
    forwarded, floor = _dest_terms(G, v, channels, params, zf)
    if params.delay_mode is DelayMode.NNPD:
        signal = params.p_s * _abs2(channels.h_ds)
        interference = params.p_s * _abs2(forwarded) + floor
    else:
        signal = params.p_s * _abs2(channels.h_ds + forwarded)
        interference = floor
    return float(np.log1p(signal / interference))


def dest_signal(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Received signal power at D: mode-dependent numerator of the S->D SINR."""
    forwarded, _ = _dest_terms(G, v, channels, params, zf)
    if params.delay_mode is DelayMode.NNPD:
        return params.p_s * _abs2(channels.h_ds)
    return params.p_s * _abs2(channels.h_ds + forwarded)


def dest_interference(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Interference-plus-noise power at D (the S->D SINR denominator)."""
    forwarded, floor = _dest_terms(G, v, channels, params, zf)
    if params.delay_mode is DelayMode.NNPD:
        return params.p_s * _abs2(forwarded) + floor
    return floor


def relay_interference(G, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Interference-plus-noise power at R (the T->R SINR denominator)."""
    hrt_w = channels.h_rt @ zf.V0 @ np.asarray(G, dtype=complex)
    return (
        params.p_s * _abs2(hrt_w @ channels.h_ts)
        + params.sigma2_t * _norm2(hrt_w)
        + params.p_s * _abs2(channels.h_rs)
        + params.sigma2_r
    )


def rate_secondary(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Achievable rate of the secondary stream T->R."""
    hrt_w = channels.h_rt @ zf.V0 @ np.asarray(G, dtype=complex)
    j_r = (
        params.p_s * _abs2(hrt_w @ channels.h_ts)
        + params.sigma2_t * _norm2(hrt_w)
        + params.p_s * _abs2(channels.h_rs)
        + params.sigma2_r
    )
    return float(np.log1p(_abs2(channels.h_rt @ np.asarray(v, dtype=complex)) / j_r))


def _monitor_terms(G, v, channels, params, zf):
    hmt_w = channels.h_mt @ zf.V0 @ np.asarray(G, dtype=complex)  # N_M x N_R
    a_vec = hmt_w @ channels.h_ts
    hmt_v = channels.h_mt @ np.asarray(v, dtype=complex)
    phi = (
        params.sigma2_t * hmt_w @ hmt_w.conj().T
        + np.outer(hmt_v, hmt_v.conj())
        + params.sigma2_m * np.eye(channels.n_mon)
    )
    return a_vec, phi


def monitor_signal(G, channels: ChannelSet, zf: ZFBasis) -> np.ndarray:
    """Forwarded-signal steering vector A = H_MT V0 G h_TS seen by M."""
    return channels.h_mt @ zf.V0 @ np.asarray(G, dtype=complex) @ channels.h_ts


def monitor_covariance(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> np.ndarray:
    """Interference-plus-noise covariance at M (relay noise, jamming, thermal)."""
    _, phi = _monitor_terms(G, v, channels, params, zf)
    return phi


def rate_monitor(G, v, u, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Monitor rate for a given combiner u (scale of u is immaterial)."""
    u = np.asarray(u, dtype=complex)
    if _norm2(u) == 0:
        raise ValueError("receiver u must be nonzero")
    a_vec, phi = _monitor_terms(G, v, channels, params, zf)
    # u^H Phi u collapses the three interference-plus-noise terms at once
    j_m = float(np.real(u.conj() @ phi @ u))
    return float(np.log1p(params.p_s * _abs2(u.conj() @ a_vec) / j_m))


def optimal_receiver(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> np.ndarray:
    """MVDR-style combiner: u* = Phi^{-1} A normalized to unit norm.

    Maximizes the monitor SINR (a generalized Rayleigh quotient).
    Raises ZeroSignalError when no forwarded signal reaches M.
    """
    a_vec, phi = _monitor_terms(G, v, channels, params, zf)
    if np.linalg.norm(a_vec) <= 1e-12:
        raise ZeroSignalError("monitor receives no forwarded signal (A = 0)")
    u = np.linalg.solve(phi, a_vec)
    return u / np.linalg.norm(u)


def rate_monitor_opt(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> float:
    """Monitor rate under the optimal combiner: ln(1 + P_S A^H Phi^{-1} A)."""
    a_vec, phi = _monitor_terms(G, v, channels, params, zf)
    if np.linalg.norm(a_vec) <= 1e-14:
        return 0.0
    quad = float(np.real(a_vec.conj() @ np.linalg.solve(phi, a_vec)))
    return float(np.log1p(params.p_s * quad))


def energy_consumption(G, v, channels: ChannelSet, params: SystemParams) -> float:
    """Total power drawn by T: amplifier draw plus antenna/static circuits."""
    p_t = transmit_power(G, v, channels, params)
    return (
        p_t / params.xi
        + channels.n_tx * params.p_a
        + channels.n_rx * params.p_r_ant
        + params.p_c
    )


def circuit_power(channels: ChannelSet, params: SystemParams) -> float:
    """The design-independent part of the energy consumption."""
    return channels.n_tx * params.p_a + channels.n_rx * params.p_r_ant + params.p_c


class NeeValue(NamedTuple):
    total: float
    eta_d: float
    eta_r: float


def nee(G, v, channels: ChannelSet, params: SystemParams, zf: ZFBasis) -> NeeValue:
    """Network energy efficiency (alpha_D R_D + alpha_R R_R) / Q and its split.

    The split satisfies total = alpha_D * eta_d + alpha_R * eta_r.
    """
    q = energy_consumption(G, v, channels, params)
    r_d = rate_suspicious(G, v, channels, params, zf)
    r_r = rate_secondary(G, v, channels, params, zf)
    return NeeValue(
        total=(params.alpha_d * r_d + params.alpha_r * r_r) / q,
        eta_d=r_d / q,
        eta_r=r_r / q,
    )


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed slacks of the design constraints (positive = satisfied)."""

    slack_monitor: float
    slack_secondary: float
    slack_power: float
    zf_residual: float
    receiver_norm_error: float
    feasible: bool

    rate_suspicious: float = 0.0
    rate_secondary: float = 0.0
    rate_monitor: float = 0.0


def check_feasible(
    G,
    v,
    u,
    channels: ChannelSet,
    params: SystemParams,
    zf: ZFBasis,
    tol: float = 1e-6,
) -> FeasibilityReport:
    """Evaluate all design constraints and report signed slacks.

    With u = None the monitor rate uses the optimal combiner and the
    unit-norm check is waived.
    """
    r_d = rate_suspicious(G, v, channels, params, zf)
    r_r = rate_secondary(G, v, channels, params, zf)
    if u is None:
        r_m = rate_monitor_opt(G, v, channels, params, zf)
        u_err = 0.0
    else:
        r_m = rate_monitor(G, v, u, channels, params, zf)
        u_err = abs(float(np.linalg.norm(u)) - 1.0)
    p_t = transmit_power(G, v, channels, params)
    w = zf.V0 @ np.asarray(G, dtype=complex)
    zf_res = float(np.linalg.norm(channels.h_tt @ w))
    slack_m = r_m - r_d
    slack_r = r_r - params.r_th
    slack_p = params.p_max - p_t
    feasible = (
        slack_m >= -tol
        and slack_r >= -tol
        and slack_p >= -tol
        and zf_res <= tol
        and u_err <= tol
    )
    return FeasibilityReport(
        slack_monitor=slack_m,
        slack_secondary=slack_r,
        slack_power=slack_p,
        zf_residual=zf_res,
        receiver_norm_error=u_err,
        feasible=feasible,
        rate_suspicious=r_d,
        rate_secondary=r_r,
        rate_monitor=r_m,
    )
