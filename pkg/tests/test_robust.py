"""Worst-case design: identities, certificates, and the alternating solver."""

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import default_test_params

from eemon.harness import AntennaDims, default_params, generate_channels
from eemon.model import (
    BeamDesign,
    DelayMode,
    check_feasible,
    nee,
    optimal_receiver,
    rate_monitor,
    rate_secondary,
    rate_suspicious,
    zf_nullspace,
)
from eemon.pathfollow import InitializationError, SolverConfig, StepError, solve_nee_perfect, solve_wsr
from eemon.robust import (
    AoConfig,
    DesignRule,
    DinkelbachState,
    SlackSet,
    UncertaintyModel,
    WMMSEState,
    _family_budget,
    _family_stacks,
    _geometry,
    _worst_quad,
    build_lmis,
    certificate_residuals,
    find_start,
    inner_ao_solve,
    mmse_state,
    outage_probability,
    receiver_subproblem,
    sample_perturbations,
    solve_robust,
    wmmse_identities,
    worst_case_check,
)

_, TOPOLOGY, _ = default_params()
MODES = [DelayMode.NNPD, DelayMode.NPD]
DIMS_SMALL = AntennaDims(3, 2, 2)
DIMS_TINY = AntennaDims(3, 1, 1)


def scenario(dims, seed, **overrides):
    channels = generate_channels(TOPOLOGY, dims, seed)
    params = default_test_params(**overrides)
    return channels, params, zf_nullspace(channels.h_tt)


def crandn(rng, *shape):
    out = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return out if shape else complex(out)


def random_design(channels, zf, seed, power=0.05):
    """A generic full-rank design with its best nominal combiner."""
    rng = np.random.default_rng(seed)
    n_out = zf.V0.shape[1]
    G = power * crandn(rng, n_out, channels.n_rx)
    v = power * crandn(rng, channels.n_tx)
    params = default_test_params()
    u = optimal_receiver(G, v, channels, params, zf)
    return BeamDesign(G=G, v=v, u=u)


def state_dict(state, v):
    """The numeric point `_family_stacks` expects, keyed like the solver."""
    return {
        "e_dest": state.e_dest,
        "d_dest": state.d_dest,
        "e_sec": state.e_sec,
        "d_sec": state.d_sec,
        "e_mon": state.e_mon,
        "d_mon": state.d_mon,
        "e_total": state.e_total,
        "e_floor": state.e_floor,
        "d_floor": state.d_floor,
        "v": np.asarray(v, dtype=complex),
    }


def family_budget_at(name, design, state, uncertainty, params, zf, cfg=None):
    """Certified worst-case budget of one family at a fixed numeric point."""
    G = np.asarray(design.G, dtype=complex)
    v = np.asarray(design.v, dtype=complex)
    u = np.asarray(design.u, dtype=complex)
    geo = _geometry(G, v, u, uncertainty.channels, zf)
    phi, pairs = _family_stacks(
        name, geo, state_dict(state, v), u, G, uncertainty.channels, params
    )
    radii = uncertainty.radii()
    pairs = [(link, om) for link, om in pairs if radii[link] > 0.0]
    return _family_budget(phi, pairs, radii, cfg or AoConfig()), (phi, pairs)


@pytest.fixture(scope="module")
def robust_runs():
    """Full worst-case solves on the reference geometry, both delay modes."""
    out = {}
    for mode in MODES:
        channels, params, zf = scenario(DIMS_SMALL, 0, delay_mode=mode)
        uncertainty = UncertaintyModel.scaled(channels, 0.02)
        design, dink, trace = solve_robust(channels, uncertainty, params, zf, AoConfig())
        out[mode] = SimpleNamespace(
            channels=channels,
            params=params,
            zf=zf,
            uncertainty=uncertainty,
            design=design,
            dink=dink,
            trace=trace,
        )
    return out


@pytest.fixture(scope="module")
def perfect_run():
    """The trusting design on the same estimate the robust fixture uses."""
    channels, params, zf = scenario(DIMS_SMALL, 0)
    design, trace = solve_nee_perfect(channels, params, zf, SolverConfig(seed=0))
    value = nee(design.G, design.v, channels, params, zf).total
    return SimpleNamespace(
        channels=channels, params=params, zf=zf, design=design, value=value
    )


def refine_max(f, lo, hi, rounds=40):
    """Golden-section maximum of a unimodal scalar function."""
    ratio = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - ratio * (b - a), a + ratio * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(rounds):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - ratio * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + ratio * (b - a)
            fd = f(d)
    return max(fc, fd)


class TestIdentities:
    def test_neglog_unit_value_is_zero(self):
        rate, variational = wmmse_identities("neglog", 1.0)
        assert rate == 0.0
        assert variational == 0.0

    def test_neglog_matches_search(self):
        # maximize ln s - s t + 1 over s numerically and against -ln t
        for t in (0.2, 1.7, 9.0):
            rate, variational = wmmse_identities("neglog", t)
            best = refine_max(lambda s: math.log(s) - s * t + 1.0, 1e-4, 50.0)
            assert abs(rate + math.log(t)) <= 1e-12
            assert abs(variational - rate) <= 1e-12
            assert abs(best - rate) <= 1e-9

    def test_scalar_sinr_is_log_two(self):
        rate, variational = wmmse_identities("sinr", (1.0, 1.0))
        assert abs(rate - math.log(2.0)) <= 1e-12
        assert abs(variational - math.log(2.0)) <= 1e-12
        # independent route: the equalizer d can be taken real by phase
        # alignment, leaving a one-dimensional concave search
        best = refine_max(
            lambda d: -math.log((1.0 - d) ** 2 + d * d), 0.0, 0.999
        )
        assert abs(best - math.log(2.0)) <= 1e-9

    def test_sinr_members_agree_on_random_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            b = crandn(rng, n)
            a = crandn(rng, n, n)
            r = a @ a.conj().T + 0.1 * np.eye(n)
            rate, variational = wmmse_identities("sinr", (b, r))
            assert rate > 0.0
            assert abs(rate - variational) <= 1e-12 * max(1.0, rate)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            wmmse_identities("neglog", 0.0)
        with pytest.raises(ValueError):
            wmmse_identities("neglog", -2.0)
        with pytest.raises(ValueError):
            wmmse_identities("sinr", (1.0, -1.0))
        with pytest.raises(ValueError):
            wmmse_identities("mystery", 1.0)


class TestMmseState:
    @pytest.mark.parametrize("mode", MODES)
    def test_rows_reproduce_rates(self, mode):
        """At its own best equalizers every family row equals a true rate.

        The destination rate also splits as the difference between the
        full-signal row and the interference-floor row, which is the
        decomposition the certificates bound side by side.
        """
        for seed in range(50):
            channels, params, zf = scenario(DIMS_SMALL, 100 + seed, delay_mode=mode)
            design = random_design(channels, zf, seed)
            st = mmse_state(design, channels, params, zf)
            r_d = rate_suspicious(design.G, design.v, channels, params, zf)
            r_r = rate_secondary(design.G, design.v, channels, params, zf)
            r_m = rate_monitor(design.G, design.v, design.u, channels, params, zf)
            assert abs(2.0 * math.log(st.e_dest) - r_d) <= 1e-9 * max(1.0, r_d)
            assert abs(2.0 * math.log(st.e_sec) - r_r) <= 1e-9 * max(1.0, r_r)
            assert abs(2.0 * math.log(st.e_mon) - r_m) <= 1e-9 * max(1.0, r_m)
            split = -2.0 * math.log(st.e_total) - 2.0 * math.log(st.e_floor)
            assert abs(split - r_d) <= 1e-9 * max(1.0, r_d)

    def test_budgets_start_at_one(self):
        channels, params, zf = scenario(DIMS_SMALL, 5)
        st = mmse_state(random_design(channels, zf, 5), channels, params, zf)
        for short in ("dest", "sec", "mon", "total", "floor"):
            assert getattr(st, f"beta_{short}") == 1.0
            assert getattr(st, f"e_{short}") > 0.0

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ValueError):
            WMMSEState(
                e_dest=0.0,
                e_sec=1.0,
                e_mon=1.0,
                e_total=1.0,
                e_floor=1.0,
                d_dest=0.1 + 0j,
                d_sec=0.1 + 0j,
                d_mon=0.1 + 0j,
                d_floor=np.zeros(3, dtype=complex),
            )


class TestUncertaintyModel:
    def test_scaled_radii_follow_link_norms(self):
        channels, _, _ = scenario(DIMS_SMALL, 2)
        unc = UncertaintyModel.scaled(channels, 0.05)
        radii = unc.radii()
        assert set(radii) == {"ds", "ts", "dt", "rs"}
        assert radii["ds"] == pytest.approx(0.05 * abs(channels.h_ds))
        assert radii["ts"] == pytest.approx(0.05 * np.linalg.norm(channels.h_ts))
        assert radii["dt"] == pytest.approx(0.05 * np.linalg.norm(channels.h_dt))
        assert radii["rs"] == pytest.approx(0.05 * abs(channels.h_rs))
        assert not unc.is_exact
        assert UncertaintyModel.scaled(channels, 0.0).is_exact

    def test_rejects_negative_radius(self):
        channels, _, _ = scenario(DIMS_SMALL, 2)
        with pytest.raises(ValueError):
            UncertaintyModel(channels, eps_ts=-0.1)


class TestSamplePerturbations:
    def test_deterministic_and_in_ball(self):
        channels, _, _ = scenario(DIMS_SMALL, 3)
        unc = UncertaintyModel.scaled(channels, 0.05)
        radii = unc.radii()
        a = sample_perturbations(unc, 64, seed=9)
        b = sample_perturbations(unc, 64, seed=9)
        c = sample_perturbations(unc, 64, seed=10)
        assert all(
            np.array_equal(x.dh_ts, y.dh_ts) and x.dh_ds == y.dh_ds
            for x, y in zip(a, b)
        )
        assert any(not np.array_equal(x.dh_ts, y.dh_ts) for x, y in zip(a, c))
        for s in a:
            assert abs(s.dh_ds) <= radii["ds"] + 1e-12
            assert np.linalg.norm(s.dh_ts) <= radii["ts"] + 1e-12
            assert np.linalg.norm(s.dh_dt) <= radii["dt"] + 1e-12
            assert abs(s.dh_rs) <= radii["rs"] + 1e-12

    def test_every_fourth_draw_sits_on_the_sphere(self):
        channels, _, _ = scenario(DIMS_SMALL, 3)
        unc = UncertaintyModel.scaled(channels, 0.05)
        r_ts = unc.radii()["ts"]
        draws = sample_perturbations(unc, 32, seed=4)
        for k in range(0, 32, 4):
            assert np.linalg.norm(draws[k].dh_ts) == pytest.approx(r_ts, rel=1e-9)
        interior = [
            np.linalg.norm(draws[k].dh_ts) < r_ts * (1.0 - 1e-9)
            for k in range(32)
            if k % 4
        ]
        assert any(interior)

    def test_zero_radius_link_stays_put(self):
        channels, _, _ = scenario(DIMS_SMALL, 3)
        unc = UncertaintyModel(channels, eps_ts=0.1)
        for s in sample_perturbations(unc, 16, seed=0):
            assert s.dh_ds == 0.0
            assert s.dh_rs == 0.0
            assert not s.dh_dt.any()


class TestWorstQuad:
    def test_single_direction_closed_form(self):
        # one ball admits the exact maximum by aligning the error with
        # the stack: |phi|^2 + 2 eps |om^H phi| + eps^2 |om|^2 when om is
        # a single column
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(1, 7))
            phi = crandn(rng, n)
            om = crandn(rng, n, 1)
            eps = float(rng.uniform(0.01, 2.0))
            closed = (
                np.linalg.norm(phi) ** 2
                + 2.0 * eps * abs(om[:, 0].conj() @ phi)
                + eps**2 * np.linalg.norm(om) ** 2
            )
            assert _worst_quad(phi, om, eps) == pytest.approx(closed, rel=1e-10)

    def test_between_sampled_max_and_triangle_bound(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            n = int(rng.integers(2, 6))
            d = int(rng.integers(2, 4))
            phi = crandn(rng, n)
            om = crandn(rng, n, d)
            eps = float(rng.uniform(0.05, 1.0))
            exact = _worst_quad(phi, om, eps)
            dirs = rng.standard_normal((d, 4000)) + 1j * rng.standard_normal((d, 4000))
            dirs *= eps / np.linalg.norm(dirs, axis=0, keepdims=True)
            sampled = np.linalg.norm(phi[:, None] + om @ dirs, axis=0).max() ** 2
            loose = (np.linalg.norm(phi) + eps * np.linalg.norm(om, 2)) ** 2
            assert sampled <= exact * (1.0 + 1e-9)
            assert exact <= loose * (1.0 + 1e-9)


class TestCertificates:
    def test_schur_boundary_flip(self):
        """The single-ball-free block is tight exactly at the squared norm."""
        rng = np.random.default_rng(21)
        for _ in range(20):
            phi = crandn(rng, int(rng.integers(1, 6)))
            base = float(np.linalg.norm(phi) ** 2)
            L = phi.size
            for shift, sign in ((1e-8, 1.0), (-1e-8, -1.0)):
                m = np.zeros((L + 1, L + 1), dtype=complex)
                m[0, 0] = base + shift
                m[0, 1:] = phi.conj()
                m[1:, 0] = phi
                m[1:, 1:] = np.eye(L)
                lead = float(np.linalg.eigvalsh(m)[0])
                assert math.copysign(1.0, lead) == sign or abs(lead) <= 1e-10

    def test_zero_radius_budget_is_squared_norm(self):
        rng = np.random.default_rng(22)
        phi = crandn(rng, 5)
        value, mults = _family_budget(phi, [], {"ts": 0.0}, AoConfig())
        assert value == pytest.approx(np.linalg.norm(phi) ** 2, rel=1e-12)
        assert mults == {}

    def test_single_ball_budget_is_lossless(self):
        # dual route: the certified budget from the semidefinite program
        # against the exact worst case from the trust-region maximizer
        rng = np.random.default_rng(23)
        cfg = AoConfig()
        for _ in range(10):
            n = int(rng.integers(2, 6))
            phi = crandn(rng, n)
            om = crandn(rng, n, int(rng.integers(1, 4)))
            eps = float(rng.uniform(0.05, 0.8))
            value, mults = _family_budget(phi, [("ts", om)], {"ts": eps}, cfg)
            exact = _worst_quad(phi, om, eps)
            assert value == pytest.approx(exact, rel=1e-5)
            assert mults["ts"] >= 0.0

    def test_multi_ball_budget_dominates_samples(self):
        rng = np.random.default_rng(24)
        phi = crandn(rng, 6)
        pairs = [("ts", crandn(rng, 6, 2)), ("dt", crandn(rng, 6, 3))]
        radii = {"ts": 0.3, "dt": 0.2}
        value, _ = _family_budget(phi, pairs, radii, AoConfig())
        best = 0.0
        for _ in range(500):
            stack = phi.copy()
            for link, om in pairs:
                d = crandn(rng, om.shape[1])
                stack = stack + om @ (radii[link] * d / np.linalg.norm(d))
            best = max(best, float(np.linalg.norm(stack) ** 2))
        assert value >= best * (1.0 - 1e-9)

    @pytest.mark.parametrize("mode", MODES)
    def test_block_shapes_on_reference_dims(self, mode):
        """Certificate sizes at the full reference antenna counts.

        The secondary block is 2 N_R + 6 on the nose; the interference
        floor in the pre-decoding mode loses its listener-side error
        direction and nothing else, so it is the only family that
        changes across the modes apart from the forwarded-copy row.
        """
        dims = AntennaDims(5, 3, 4)
        channels, params, zf = scenario(dims, 7, delay_mode=mode)
        design = random_design(channels, zf, 7)
        st = mmse_state(design, channels, params, zf)
        unc = UncertaintyModel.scaled(channels, 0.02)
        slacks = SlackSet(
            sec_ts=0.0,
            sec_rs=0.0,
            mon_ts=0.0,
            pow_ts=0.0,
            dest_ds=0.0,
            dest_dt=0.0,
            dest_ts=0.0,
            total_dt=0.0,
            total_ts=0.0,
            total_ds=0.0,
            floor_dt=0.0,
            floor_ts=None if mode is DelayMode.NPD else 0.0,
        )
        blocks = {b.name: b for b in build_lmis(design, st, slacks, unc, params, zf)}
        npd = mode is DelayMode.NPD
        expected = {
            "destination": 16 if npd else 17,
            "secondary": 12,
            "monitor": 13,
            "total": 16 if npd else 17,
            "floor": 11 if npd else 15,
            "power": 6,
        }
        for name, size in expected.items():
            assert blocks[name].matrix.shape == (size, size), name
        assert blocks["secondary"].matrix.shape[0] == 2 * dims.n_rx + 6
        assert blocks["floor"].links == (("dt",) if npd else ("dt", "ts"))
        n_pairs = sum(len(b.links) for b in blocks.values())
        assert n_pairs == (11 if npd else 12)

    @pytest.mark.parametrize("mode", MODES)
    def test_zero_radius_blocks_sit_on_the_boundary(self, mode):
        # with no error directions the best equalizers make each block
        # exactly singular, the variational optimum leaves no slack
        channels, params, zf = scenario(DIMS_SMALL, 8, delay_mode=mode)
        design = random_design(channels, zf, 8)
        st = mmse_state(design, channels, params, zf)
        unc = UncertaintyModel(channels)
        slacks = SlackSet(
            sec_ts=0.0,
            sec_rs=0.0,
            mon_ts=0.0,
            pow_ts=0.0,
            dest_ds=0.0,
            dest_dt=0.0,
            dest_ts=0.0,
            total_dt=0.0,
            total_ts=0.0,
            total_ds=0.0,
            floor_dt=0.0,
            floor_ts=None if mode is DelayMode.NPD else 0.0,
        )
        for block in build_lmis(design, st, slacks, unc, params, zf):
            assert block.links == ()
            if block.name == "power":
                continue
            assert abs(block.eigmin()) <= 1e-8, block.name


class TestWeightsAgainstCertificates:
    def test_monitor_and_power_budgets_match_exact_sup(self, robust_runs):
        """Families with one uncertain link certify the true worst case."""
        run = robust_runs[DelayMode.NNPD]
        st = mmse_state(run.design, run.channels, run.params, run.zf)
        radii = run.uncertainty.radii()
        for name in ("monitor", "power"):
            (value, _), (phi, pairs) = family_budget_at(
                name, run.design, st, run.uncertainty, run.params, run.zf
            )
            assert len(pairs) == 1
            link, om = pairs[0]
            exact = _worst_quad(phi, om, radii[link])
            assert value == pytest.approx(exact, rel=1e-4)

    def test_combiner_scale_freedom(self, robust_runs):
        """Splitting scale between combiner and its equalizer changes nothing.

        The monitor stacks only see the product of the two, so pushing the
        combiner back to unit norm while its equalizer absorbs the factor
        must leave the certified budget untouched.
        """
        run = robust_runs[DelayMode.NNPD]
        st = mmse_state(run.design, run.channels, run.params, run.zf)
        (base, _), _ = family_budget_at(
            "monitor", run.design, st, run.uncertainty, run.params, run.zf
        )
        # the estimate is d u^H y, so dividing the combiner by c means the
        # equalizer absorbs the conjugate factor
        for c in (0.37, 0.37 * np.exp(0.4j)):
            scaled_design = replace(run.design, u=run.design.u / c)
            scaled_state = replace(st, d_mon=st.d_mon * np.conj(c))
            (moved, _), _ = family_budget_at(
                "monitor",
                scaled_design,
                scaled_state,
                run.uncertainty,
                run.params,
                run.zf,
            )
            assert moved == pytest.approx(base, rel=1e-8, abs=1e-10)


class TestReceiverSubproblem:
    def test_zero_radius_matches_closed_form(self):
        channels, params, zf = scenario(DIMS_SMALL, 9)
        design = random_design(channels, zf, 9)
        st = mmse_state(design, channels, params, zf)
        # push the unconstrained optimum inside the unit ball so the
        # certified minimizer is the plain quadratic one
        st = replace(st, d_mon=st.d_mon * 4.0)
        u, beta, slack = receiver_subproblem(
            st, design, UncertaintyModel(channels), params, zf
        )
        ref = optimal_receiver(design.G, design.v, channels, params, zf)
        align = abs(u.conj() @ ref) / (np.linalg.norm(u) * np.linalg.norm(ref))
        assert align >= 1.0 - 1e-6
        assert beta >= 0.0
        assert slack == 0.0

    def test_unitary_monitor_rotation_maps_the_combiner(self):
        channels, params, zf = scenario(DIMS_SMALL, 10)
        design = random_design(channels, zf, 10)
        st = mmse_state(design, channels, params, zf)
        unc = UncertaintyModel.scaled(channels, 0.05)
        u1, beta1, _ = receiver_subproblem(st, design, unc, params, zf)
        q, _ = np.linalg.qr(
            np.random.default_rng(1).standard_normal((2, 2))
            + 1j * np.random.default_rng(2).standard_normal((2, 2))
        )
        rotated = replace(channels, h_mt=q @ channels.h_mt)
        unc_rot = UncertaintyModel.scaled(rotated, 0.05)
        design_rot = replace(design, u=q @ design.u)
        u2, beta2, _ = receiver_subproblem(st, design_rot, unc_rot, params, zf)
        assert beta2 == pytest.approx(beta1, rel=1e-6, abs=1e-9)
        align = abs(u2.conj() @ (q @ u1)) / (np.linalg.norm(u1) * np.linalg.norm(u2))
        assert align >= 1.0 - 1e-5

    def test_budget_grows_with_listener_radius(self):
        # half the estimated listener-link norm is a serious error ball,
        # the certified monitor budget must not improve under it
        channels, params, zf = scenario(DIMS_SMALL, 11)
        design = random_design(channels, zf, 11)
        st = mmse_state(design, channels, params, zf)
        _, beta0, _ = receiver_subproblem(
            st, design, UncertaintyModel(channels), params, zf
        )
        wide = UncertaintyModel(
            channels, eps_ts=0.5 * float(np.linalg.norm(channels.h_ts))
        )
        _, beta1, _ = receiver_subproblem(st, design, wide, params, zf)
        assert beta1 >= beta0 - 1e-9


class TestInnerLoop:
    def test_zero_radius_price_free_surplus_meets_sum_rate(self):
        """At zero radii and zero price the loop solves the sum-rate design.

        Two different algorithms on the same landscape: the variational
        alternation against the minorant path-follower. They agree on the
        small instances to a few percent, which ties the certified rows to
        the true rates end to end.
        """
        matched = 0
        for seed in (1, 2, 4):
            channels, params, zf = scenario(DIMS_TINY, seed)
            unc = UncertaintyModel(channels)
            try:
                warm = find_start(channels, unc, params, zf, AoConfig(seed=seed))
            except InitializationError:
                continue
            # the alternation's tail is slow, give it room to flatten out
            deep = AoConfig(seed=seed, max_inner=150, inner_tol=1e-6)
            design, st, tvals, trace = inner_ao_solve(
                0.0, warm, channels, unc, params, zf, deep
            )
            _, wsr_trace = solve_wsr(channels, params, zf, SolverConfig(seed=seed))
            reference = wsr_trace.objectives[-1]
            assert tvals[0] + tvals[1] == pytest.approx(reference, rel=5e-2)
            matched += 1
        assert matched >= 2

    def test_terminates_cleanly_across_seeds(self):
        """One inner pass per seed at the working error level, wide sweep.

        The loop must come back on every instance that admits a start,
        inside the cycle cap. The cap is a safeguard, not the common
        exit: most instances settle well before it.
        """
        cfg = AoConfig()
        started = converged = 0
        for seed in range(100):
            channels, params, zf = scenario(DIMS_TINY, seed)
            unc = UncertaintyModel.scaled(channels, 0.02)
            try:
                warm = find_start(channels, unc, params, zf, cfg)
            except InitializationError:
                continue
            started += 1
            design, st, tvals, trace = inner_ao_solve(
                0.0, warm, channels, unc, params, zf, cfg
            )
            assert trace.cycles <= cfg.max_inner
            assert np.all(np.diff(trace.objectives) >= -1e-7)
            assert tvals[2] >= 0.0
            converged += trace.converged
        assert started >= 60
        assert converged >= started // 2

    def test_surplus_ignores_inactive_terms(self):
        channels, params, zf = scenario(DIMS_TINY, 1)
        unc = UncertaintyModel(channels)
        cfg = AoConfig(max_inner=6, inner_tol=1e-3)
        quiet = replace(params, alpha_d=0.0)
        warm = find_start(channels, unc, quiet, zf, cfg)
        _, _, tvals, _ = inner_ao_solve(0.0, warm, channels, unc, quiet, zf, cfg)
        assert tvals[0] == 0.0
        assert tvals[1] > 0.0
        solo = replace(params, alpha_r=0.0, r_th=0.0)
        warm = find_start(channels, unc, solo, zf, cfg)
        _, _, tvals, _ = inner_ao_solve(0.0, warm, channels, unc, solo, zf, cfg)
        assert tvals[0] > 0.0
        assert tvals[1] == 0.0


class TestSolveRobust:
    @pytest.mark.parametrize("mode", MODES)
    def test_prices_climb_and_settle(self, robust_runs, mode):
        run = robust_runs[mode]
        prices = np.asarray(run.trace.prices)
        assert prices[0] == 0.0
        assert np.all(np.diff(prices) > 0.0)
        assert run.trace.converged
        assert run.trace.outer_iterations <= 10
        assert abs(prices[-1] - prices[-2]) <= 1e-3
        assert run.dink.ratio == prices[-1]
        assert run.dink.t_pow >= 0.0

    @pytest.mark.parametrize("mode", MODES)
    def test_inner_passes_are_monotone(self, robust_runs, mode):
        run = robust_runs[mode]
        assert len(run.trace.inner) == run.trace.outer_iterations
        for inner in run.trace.inner:
            assert np.all(np.diff(inner.objectives) >= -1e-7)
            assert inner.cycles <= AoConfig().max_inner

    @pytest.mark.parametrize("mode", MODES)
    def test_design_is_nominally_feasible(self, robust_runs, mode):
        run = robust_runs[mode]
        assert np.linalg.norm(run.design.u) == pytest.approx(1.0, abs=1e-9)
        report = check_feasible(
            run.design.G, run.design.v, run.design.u, run.channels, run.params, run.zf
        )
        assert report.feasible

    @pytest.mark.parametrize("mode", MODES)
    def test_certificates_hold_at_the_solution(self, robust_runs, mode):
        run = robust_runs[mode]
        blocks = build_lmis(
            run.design,
            run.trace.state,
            run.trace.slacks,
            run.uncertainty,
            run.params,
            run.zf,
            t_power=run.dink.t_pow,
        )
        for block in blocks:
            assert block.eigmin() >= -1e-6, block.name
        residuals = certificate_residuals(blocks, n_samples=2000, seed=0)
        for name, worst in residuals.items():
            assert worst <= 1e-6, name

    @pytest.mark.parametrize("mode", MODES)
    def test_sampled_truths_never_break_the_design(self, robust_runs, mode):
        run = robust_runs[mode]
        stats = worst_case_check(
            run.design, run.uncertainty, run.params, run.zf, n_samples=2000, seed=1
        )
        assert stats.n_samples == 2000
        assert stats.violations == 0
        assert stats.worst >= -1e-6

    def test_caution_costs_efficiency(self, robust_runs, perfect_run):
        """Certified designs pay for the error balls twice over.

        The worst-case ratio sits below the exact-knowledge efficiency on
        the shared estimate, and widening the balls pushes it further down.
        """
        run = robust_runs[DelayMode.NNPD]
        assert run.dink.ratio <= perfect_run.value + 1e-6
        wider = UncertaintyModel.scaled(run.channels, 0.05)
        _, dink5, _ = solve_robust(run.channels, wider, run.params, run.zf, AoConfig())
        assert dink5.ratio <= run.dink.ratio + 1e-6
        assert dink5.ratio > 0.0

    def test_reference_scale_run(self):
        """The full reference antenna counts, working error level, 25 dBm."""
        channels, params, zf = scenario(AntennaDims(5, 3, 4), 0)
        unc = UncertaintyModel.scaled(channels, 0.02)
        design, dink, trace = solve_robust(channels, unc, params, zf, AoConfig())
        assert trace.converged
        assert trace.outer_iterations <= 10
        assert np.all(np.diff(trace.prices) > 0.0)
        stats = worst_case_check(design, unc, params, zf, n_samples=400, seed=2)
        assert stats.violations == 0

    def test_same_seed_same_run(self):
        channels, params, zf = scenario(DIMS_TINY, 1)
        unc = UncertaintyModel.scaled(channels, 0.02)
        _, dink_a, trace_a = solve_robust(channels, unc, params, zf, AoConfig())
        _, dink_b, trace_b = solve_robust(channels, unc, params, zf, AoConfig())
        assert trace_a.prices == trace_b.prices
        assert dink_a.ratio == dink_b.ratio


class TestWorstCaseCheck:
    def test_zero_radii_reduce_to_the_nominal_point(self, robust_runs):
        run = robust_runs[DelayMode.NNPD]
        stats = worst_case_check(
            run.design, UncertaintyModel(run.channels), run.params, run.zf, n_samples=3
        )
        report = check_feasible(
            run.design.G, run.design.v, run.design.u, run.channels, run.params, run.zf
        )
        assert stats.min_slack_monitor == pytest.approx(report.slack_monitor, abs=1e-9)
        assert stats.min_slack_secondary == pytest.approx(
            report.slack_secondary, abs=1e-9
        )
        assert stats.min_slack_power == pytest.approx(report.slack_power, abs=1e-9)

    def test_trusting_design_breaks_under_errors(self, perfect_run):
        # the exact-knowledge optimum rides its binding constraints, so a
        # tenth-of-the-norm error ball has to produce violations
        unc = UncertaintyModel.scaled(perfect_run.channels, 0.1)
        stats = worst_case_check(
            perfect_run.design,
            unc,
            perfect_run.params,
            perfect_run.zf,
            n_samples=800,
            seed=3,
        )
        assert stats.violations > 0
        assert stats.worst < 0.0


class TestOutage:
    def test_no_errors_no_outage(self):
        p = outage_probability(
            DesignRule.ROBUST, 0.0, default_test_params(), TOPOLOGY, DIMS_TINY,
            n_trials=3, seed=5,
        )
        assert p <= 1e-3

    def test_trusting_designs_degrade_with_the_error_level(self):
        params = default_test_params(r_th=1.5)
        lo, hi = (
            outage_probability(
                DesignRule.NONROBUST, eps, params, TOPOLOGY, DIMS_SMALL,
                n_trials=8, seed=5,
            )
            for eps in (0.02, 0.1)
        )
        assert 0.0 <= lo <= 1.0
        assert 0.0 <= hi <= 1.0
        assert hi >= lo

    def test_certified_designs_hold_the_line(self):
        """Paired trials at a demanding rate floor, certified versus trusting."""
        params = default_test_params(r_th=1.5)
        fast = AoConfig(max_inner=12, inner_tol=1e-3, max_outer=12)
        robust = outage_probability(
            DesignRule.ROBUST, 0.1, params, TOPOLOGY, DIMS_SMALL,
            n_trials=4, seed=5, cfg=fast,
        )
        trusting = outage_probability(
            DesignRule.NONROBUST, 0.1, params, TOPOLOGY, DIMS_SMALL,
            n_trials=4, seed=5, cfg=fast,
        )
        assert robust <= trusting

    def test_accepts_plain_strings(self):
        p = outage_probability(
            "robust", 0.0, default_test_params(), TOPOLOGY, DIMS_TINY,
            n_trials=2, seed=7,
        )
        assert 0.0 <= p <= 1.0


class TestConfigsAndStates:
    @pytest.mark.parametrize(
        "field, value",
        [
            ("max_outer", 0),
            ("max_inner", 0),
            ("inner_tol", 0.0),
            ("outer_tol", -1e-3),
            ("init_max_iters", 0),
            ("tol", 0.0),
        ],
    )
    def test_config_rejects_out_of_range(self, field, value):
        with pytest.raises(ValueError):
            AoConfig(**{field: value})

    def test_config_frozen(self):
        cfg = AoConfig()
        with pytest.raises(AttributeError):
            cfg.max_outer = 3

    def test_slacks_reject_negative_multipliers(self):
        with pytest.raises(ValueError):
            SlackSet(
                sec_ts=-1.0,
                sec_rs=0.0,
                mon_ts=0.0,
                pow_ts=0.0,
                dest_ds=0.0,
                dest_dt=0.0,
                dest_ts=0.0,
                total_dt=0.0,
                total_ts=0.0,
                total_ds=0.0,
                floor_dt=0.0,
            )

    def test_price_state_rejects_negative_ratio(self):
        with pytest.raises(ValueError):
            DinkelbachState(
                ratio=-1.0, t_dest=0.0, t_sec=0.0, t_pow=0.0, outer_tol=1e-3
            )

    def test_find_start_gives_up_on_hopeless_floors(self):
        channels, params, zf = scenario(DIMS_TINY, 1, r_th=6.0)
        unc = UncertaintyModel.scaled(channels, 0.02)
        with pytest.raises(InitializationError):
            find_start(channels, unc, params, zf, AoConfig(init_max_iters=4))
