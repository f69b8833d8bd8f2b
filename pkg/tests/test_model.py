import numpy as np
import pytest
import scipy.linalg

from eemon.model import (
    ChannelSet,
    DelayMode,
    RankDeficiencyError,
    SystemParams,
    ZeroSignalError,
    ZFBasis,
    check_feasible,
    energy_consumption,
    nee,
    optimal_receiver,
    rate_monitor,
    rate_monitor_opt,
    rate_secondary,
    rate_suspicious,
    transmit_power,
    zf_nullspace,
)

from conftest import crandn, default_test_params, random_channels


def random_design(rng, channels, scale=0.1):
    m = channels.n_tx - channels.n_rx
    G = scale * crandn(rng, m, channels.n_rx)
    v = scale * crandn(rng, channels.n_tx)
    return G, v


# --- brute-force rate formulas through the explicit precoder W = V0 G ---

def rates_unreduced(G, v, ch, p, zf):
    W = zf.V0 @ G
    h_dt_w = ch.h_dt @ W
    fwd = h_dt_w @ ch.h_ts
    jam_d = abs(ch.h_dt @ v) ** 2
    if p.delay_mode is DelayMode.NNPD:
        sig_d = p.p_s * abs(ch.h_ds) ** 2
        j_d = p.p_s * abs(fwd) ** 2 + p.sigma2_t * np.linalg.norm(h_dt_w) ** 2 + jam_d + p.sigma2_d
    else:
        sig_d = p.p_s * abs(ch.h_ds + fwd) ** 2
        j_d = p.sigma2_t * np.linalg.norm(h_dt_w) ** 2 + jam_d + p.sigma2_d
    h_rt_w = ch.h_rt @ W
    j_r = (
        p.p_s * abs(h_rt_w @ ch.h_ts) ** 2
        + p.sigma2_t * np.linalg.norm(h_rt_w) ** 2
        + p.p_s * abs(ch.h_rs) ** 2
        + p.sigma2_r
    )
    r_d = np.log(1 + sig_d / j_d)
    r_r = np.log(1 + abs(ch.h_rt @ v) ** 2 / j_r)
    p_t = (
        p.p_s * np.linalg.norm(W @ ch.h_ts) ** 2
        + p.sigma2_t * np.linalg.norm(W, "fro") ** 2
        + np.linalg.norm(v) ** 2
    )
    return r_d, r_r, p_t


class TestZfNullspace:
    def test_canonical_kernel(self):
        h_tt = np.hstack([np.eye(3), np.zeros((3, 2))]).astype(complex)
        zf = zf_nullspace(h_tt)
        assert zf.V0.shape == (5, 2)
        assert np.linalg.norm(h_tt @ zf.V0) < 1e-14
        # span of the last two coordinate axes, up to rotation
        proj = zf.V0 @ zf.V0.conj().T
        assert np.allclose(proj, np.diag([0, 0, 0, 1, 1]), atol=1e-12)

    def test_random_kernel_property(self):
        for seed in range(40):
            ch = random_channels(seed)
            zf = zf_nullspace(ch.h_tt)
            assert np.linalg.norm(ch.h_tt @ zf.V0, "fro") <= 1e-10 * np.linalg.norm(
                ch.h_tt, "fro"
            )
            gram = zf.V0.conj().T @ zf.V0
            assert np.allclose(gram, np.eye(2), atol=1e-10)

    def test_rank_deficient_raises(self):
        rng = np.random.default_rng(0)
        row = crandn(rng, 5)
        h_tt = np.vstack([row, row, crandn(rng, 5)])
        with pytest.raises(RankDeficiencyError):
            zf_nullspace(h_tt)

    def test_wide_requirement(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError):
            zf_nullspace(crandn(rng, 3, 3))


class TestTransmitPower:
    def test_zero_design(self, channels5, params_default):
        assert transmit_power(np.zeros((2, 3)), np.zeros(5), channels5, params_default) == 0.0

    def test_unit_precoder_only(self, channels5, params_default):
        v = np.zeros(5, complex)
        v[2] = 1.0
        assert transmit_power(np.zeros((2, 3)), v, channels5, params_default) == pytest.approx(1.0)

    def test_matches_unreduced_formula(self, channels5, params_default):
        zf = zf_nullspace(channels5.h_tt)
        rng = np.random.default_rng(3)
        for _ in range(20):
            G, v = random_design(rng, channels5, scale=0.5)
            _, _, p_t = rates_unreduced(G, v, channels5, params_default, zf)
            assert transmit_power(G, v, channels5, params_default) == pytest.approx(
                p_t, rel=1e-10
            )


class TestRates:
    def test_no_relay_path_modes_coincide(self):
        ch = random_channels(11)
        ch = ChannelSet(
            h_ds=1.0, h_rs=ch.h_rs, h_ts=ch.h_ts, h_dt=ch.h_dt,
            h_rt=ch.h_rt, h_mt=ch.h_mt, h_tt=ch.h_tt,
        )
        zf = zf_nullspace(ch.h_tt)
        G0, v0 = np.zeros((2, 3)), np.zeros(5)
        for mode in DelayMode:
            p = default_test_params(sigma2_d=1e-3, delay_mode=mode)
            assert rate_suspicious(G0, v0, ch, p, zf) == pytest.approx(np.log(11.0), rel=1e-12)

    def test_npd_constructive_forwarding_raises_rate(self):
        ch = random_channels(13)
        p = default_test_params(sigma2_t=1e-9, delay_mode=DelayMode.NPD)
        zf = zf_nullspace(ch.h_tt)
        # pick G so that the forwarded copy lands exactly on h_ds
        a = ch.h_dt @ zf.V0
        G = np.outer(a.conj(), ch.h_ts.conj()) * ch.h_ds
        G /= np.linalg.norm(a) ** 2 * np.linalg.norm(ch.h_ts) ** 2
        fwd = (ch.h_dt @ zf.V0 @ G) @ ch.h_ts
        assert fwd == pytest.approx(ch.h_ds, rel=1e-10)
        v0 = np.zeros(5)
        boosted = rate_suspicious(G, v0, ch, p, zf)
        baseline = rate_suspicious(np.zeros_like(G), v0, ch, p, zf)
        assert boosted > baseline

    def test_nnpd_jamming_lowers_rate(self):
        ch = random_channels(17)
        p = default_test_params()
        zf = zf_nullspace(ch.h_tt)
        G0 = np.zeros((2, 3))
        v_jam = 3.0 * ch.h_dt.conj()
        assert rate_suspicious(G0, v_jam, ch, p, zf) < rate_suspicious(G0, np.zeros(5), ch, p, zf)

    def test_secondary_zero_precoder(self, channels5, params_default, zf5):
        rng = np.random.default_rng(5)
        G = 0.3 * crandn(rng, 2, 3)
        assert rate_secondary(G, np.zeros(5), channels5, params_default, zf5) == 0.0

    def test_secondary_matched_precoder(self):
        ch = random_channels(19)
        ch = ChannelSet(
            h_ds=ch.h_ds, h_rs=0.0, h_ts=ch.h_ts, h_dt=ch.h_dt,
            h_rt=ch.h_rt, h_mt=ch.h_mt, h_tt=ch.h_tt,
        )
        p = default_test_params()
        zf = zf_nullspace(ch.h_tt)
        v = ch.h_rt.conj() / np.linalg.norm(ch.h_rt)
        got = rate_secondary(np.zeros((2, 3)), v, ch, p, zf)
        want = np.log(1 + np.linalg.norm(ch.h_rt) ** 2 / p.sigma2_r)
        assert got == pytest.approx(want, rel=1e-12)

    def test_rates_match_unreduced_formulas(self):
        rng = np.random.default_rng(23)
        for seed in range(10):
            ch = random_channels(100 + seed)
            zf = zf_nullspace(ch.h_tt)
            G, v = random_design(rng, ch, scale=0.4)
            for mode in DelayMode:
                p = default_test_params(delay_mode=mode)
                r_d, r_r, _ = rates_unreduced(G, v, ch, p, zf)
                assert rate_suspicious(G, v, ch, p, zf) == pytest.approx(r_d, rel=1e-10)
                assert rate_secondary(G, v, ch, p, zf) == pytest.approx(r_r, rel=1e-10)

    def test_rates_nonnegative(self):
        rng = np.random.default_rng(29)
        ch = random_channels(31)
        zf = zf_nullspace(ch.h_tt)
        for _ in range(50):
            G, v = random_design(rng, ch, scale=1.0)
            for mode in DelayMode:
                p = default_test_params(delay_mode=mode)
                assert rate_suspicious(G, v, ch, p, zf) >= 0.0
                assert rate_secondary(G, v, ch, p, zf) >= 0.0


class TestMonitor:
    def test_zero_relay_zero_rate(self, channels5, params_default, zf5):
        rng = np.random.default_rng(37)
        u = crandn(rng, 4)
        v = crandn(rng, 5)
        assert rate_monitor(np.zeros((2, 3)), v, u, channels5, params_default, zf5) == 0.0
        assert rate_monitor_opt(np.zeros((2, 3)), v, channels5, params_default, zf5) == 0.0

    def test_zero_receiver_rejected(self, channels5, params_default, zf5):
        with pytest.raises(ValueError):
            rate_monitor(np.ones((2, 3)), np.zeros(5), np.zeros(4), channels5, params_default, zf5)

    def test_scale_invariance(self, channels5, params_default, zf5):
        rng = np.random.default_rng(41)
        G, v = random_design(rng, channels5)
        u = crandn(rng, 4)
        base = rate_monitor(G, v, u, channels5, params_default, zf5)
        for c in (2.0, -0.5j, 0.3 + 0.4j):
            assert rate_monitor(G, v, c * u, channels5, params_default, zf5) == pytest.approx(
                base, rel=1e-12
            )

    def test_matched_filter_limit(self):
        ch = random_channels(43)
        p = default_test_params(sigma2_t=1e-13)
        zf = zf_nullspace(ch.h_tt)
        rng = np.random.default_rng(47)
        G = 0.2 * crandn(rng, 2, 3)
        u = optimal_receiver(G, np.zeros(5), ch, p, zf)
        a_vec = ch.h_mt @ zf.V0 @ G @ ch.h_ts
        cosine = abs(u.conj() @ a_vec) / np.linalg.norm(a_vec)
        assert cosine == pytest.approx(1.0, abs=1e-6)

    def test_optimal_receiver_beats_random_and_matches_eigensolver(self):
        rng = np.random.default_rng(53)
        for seed in range(5):
            ch = random_channels(200 + seed)
            p = default_test_params()
            zf = zf_nullspace(ch.h_tt)
            G, v = random_design(rng, ch, scale=0.5)
            u_star = optimal_receiver(G, v, ch, p, zf)
            assert np.linalg.norm(u_star) == pytest.approx(1.0, abs=1e-12)
            best = rate_monitor(G, v, u_star, ch, p, zf)
            # closed form agrees
            assert rate_monitor_opt(G, v, ch, p, zf) == pytest.approx(best, rel=1e-9)
            # generalized eigenpair of (P_S A A^H, Phi) gives the same rate
            a_vec = ch.h_mt @ zf.V0 @ G @ ch.h_ts
            hmt_w = ch.h_mt @ zf.V0 @ G
            hmt_v = ch.h_mt @ v
            phi = (
                p.sigma2_t * hmt_w @ hmt_w.conj().T
                + np.outer(hmt_v, hmt_v.conj())
                + p.sigma2_m * np.eye(4)
            )
            vals, vecs = scipy.linalg.eigh(p.p_s * np.outer(a_vec, a_vec.conj()), phi)
            u_eig = vecs[:, -1]
            assert rate_monitor(G, v, u_eig, ch, p, zf) == pytest.approx(best, rel=1e-10)
            assert np.log1p(vals[-1]) == pytest.approx(best, rel=1e-10)
            for _ in range(200):
                u = crandn(rng, 4)
                u /= np.linalg.norm(u)
                assert rate_monitor(G, v, u, ch, p, zf) <= best + 1e-9

    def test_receiver_optimality_margin_thousand_samples(self):
        ch = random_channels(59)
        p = default_test_params()
        zf = zf_nullspace(ch.h_tt)
        rng = np.random.default_rng(61)
        G, v = random_design(rng, ch, scale=0.3)
        best = rate_monitor_opt(G, v, ch, p, zf)
        for _ in range(1000):
            u = crandn(rng, 4)
            assert rate_monitor(G, v, u, ch, p, zf) <= best + 1e-9

    def test_zero_signal_error(self, channels5, params_default, zf5):
        with pytest.raises(ZeroSignalError):
            optimal_receiver(np.zeros((2, 3)), np.ones(5), channels5, params_default, zf5)

    def test_diagonal_phi_case(self):
        # engineer A = e_1 with negligible relay-noise covariance
        rng = np.random.default_rng(67)
        h_tt = crandn(rng, 3, 5)
        zf = zf_nullspace(h_tt)
        G = crandn(rng, 2, 3)
        h_ts = crandn(rng, 3)
        w_vec = zf.V0 @ G @ h_ts
        h_mt = np.zeros((2, 5), complex)
        h_mt[0] = w_vec.conj() / np.linalg.norm(w_vec) ** 2
        ch = ChannelSet(
            h_ds=1.0, h_rs=0.0, h_ts=h_ts, h_dt=crandn(rng, 5),
            h_rt=crandn(rng, 5), h_mt=h_mt, h_tt=h_tt,
        )
        p = default_test_params(sigma2_t=1e-15)
        got = rate_monitor_opt(G, np.zeros(5), ch, p, zf)
        assert got == pytest.approx(np.log(1 + p.p_s / p.sigma2_m), rel=1e-6)


class TestEnergyAndNee:
    def test_idle_consumption_paper_constants(self, channels5, params_default):
        q = energy_consumption(np.zeros((2, 3)), np.zeros(5), channels5, params_default)
        assert q == pytest.approx(0.31, rel=1e-12)

    def test_consumption_arithmetic(self, channels5, params_default):
        # P_T = 0.1 W through the precoder alone
        v = np.zeros(5, complex)
        v[0] = np.sqrt(0.1)
        q = energy_consumption(np.zeros((2, 3)), v, channels5, params_default)
        assert q == pytest.approx(0.1 / 0.4 + 0.31, rel=1e-12)

    def test_consumption_composes_with_transmit_power(self, channels5, params_default, zf5):
        rng = np.random.default_rng(71)
        G, v = random_design(rng, channels5)
        q = energy_consumption(G, v, channels5, params_default)
        p_t = transmit_power(G, v, channels5, params_default)
        assert q == pytest.approx(p_t / params_default.xi + 0.31, rel=1e-12)

    def test_floor_on_consumption(self, channels5, params_default):
        rng = np.random.default_rng(73)
        for _ in range(20):
            G, v = random_design(rng, channels5)
            assert energy_consumption(G, v, channels5, params_default) >= 0.31

    def test_nee_zero_design_value(self):
        ch = random_channels(79)
        ch = ChannelSet(
            h_ds=1.0, h_rs=ch.h_rs, h_ts=ch.h_ts, h_dt=ch.h_dt,
            h_rt=ch.h_rt, h_mt=ch.h_mt, h_tt=ch.h_tt,
        )
        p = default_test_params()
        zf = zf_nullspace(ch.h_tt)
        val = nee(np.zeros((2, 3)), np.zeros(5), ch, p, zf)
        assert val.total == pytest.approx(np.log(11.0) / 0.31, rel=1e-12)
        assert val.total == pytest.approx(7.735, abs=5e-4)

    def test_nee_weight_degeneracy(self, channels5, zf5):
        p = default_test_params(alpha_d=0.0, alpha_r=2.5)
        rng = np.random.default_rng(83)
        G, v = random_design(rng, channels5)
        val = nee(G, v, channels5, p, zf5)
        assert val.total == pytest.approx(2.5 * val.eta_r, rel=1e-12)

    def test_nee_split_identity(self, channels5, zf5):
        rng = np.random.default_rng(89)
        for _ in range(20):
            G, v = random_design(rng, channels5)
            p = default_test_params(alpha_d=rng.uniform(0.1, 3), alpha_r=rng.uniform(0.1, 3))
            val = nee(G, v, channels5, p, zf5)
            assert val.total == pytest.approx(
                p.alpha_d * val.eta_d + p.alpha_r * val.eta_r, rel=1e-12
            )


class TestFeasibility:
    def test_zero_design_infeasible(self, channels5, params_default, zf5):
        rep = check_feasible(np.zeros((2, 3)), np.zeros(5), None, channels5, params_default, zf5)
        assert not rep.feasible
        assert rep.slack_monitor == pytest.approx(-rep.rate_suspicious)
        assert rep.slack_monitor < 0
        assert rep.slack_secondary == pytest.approx(-params_default.r_th)

    def test_power_boundary(self, channels5, params_default, zf5):
        v = np.zeros(5, complex)
        v[1] = np.sqrt(params_default.p_max)
        rep = check_feasible(np.zeros((2, 3)), v, None, channels5, params_default, zf5)
        assert rep.slack_power == pytest.approx(0.0, abs=1e-12)

    def test_unit_norm_flagging(self, channels5, params_default, zf5):
        rng = np.random.default_rng(97)
        G, v = random_design(rng, channels5)
        u = 2.0 * optimal_receiver(G, v, channels5, params_default, zf5)
        rep = check_feasible(G, v, u, channels5, params_default, zf5)
        assert rep.receiver_norm_error == pytest.approx(1.0)
        assert not rep.feasible


class TestValidation:
    def test_params_validation(self):
        with pytest.raises(ValueError):
            SystemParams(p_s=0.0, p_max=1.0, r_th=0.5)
        with pytest.raises(ValueError):
            SystemParams(p_s=0.01, p_max=1.0, r_th=0.5, xi=1.5)
        with pytest.raises(ValueError):
            SystemParams(p_s=0.01, p_max=1.0, r_th=0.5, alpha_d=0.0, alpha_r=0.0)

    def test_channel_dim_validation(self):
        rng = np.random.default_rng(101)
        with pytest.raises(ValueError):
            ChannelSet(
                h_ds=1.0, h_rs=1.0, h_ts=crandn(rng, 3), h_dt=crandn(rng, 5),
                h_rt=crandn(rng, 4), h_mt=crandn(rng, 4, 5), h_tt=crandn(rng, 3, 5),
            )
        with pytest.raises(ValueError):
            ChannelSet(
                h_ds=1.0, h_rs=1.0, h_ts=crandn(rng, 5), h_dt=crandn(rng, 5),
                h_rt=crandn(rng, 5), h_mt=crandn(rng, 4, 5), h_tt=crandn(rng, 5, 5),
            )
