import itertools
import math

import numpy as np
import pytest

from lipase.config import TrackerConfig, replace_config
from lipase.geometry import CartesianState, Geometry, Observation, invert_position, measure
from lipase.track import (
    H_BISTATIC,
    Tracker,
    TrackingError,
    assign,
    bistatic_to_cartesian,
    correct,
    gate_and_cost,
    init_track,
    measurement_model,
    predict,
    track_to_position,
    transition,
)

G = Geometry((255.0, 0.0), (0.0, 0.0))
CART = TrackerConfig(mode="cartesian", slot_duration=0.2)
BIST = TrackerConfig(mode="bistatic", slot_duration=0.2)


def is_psd(P, tol=1e-9):
    return np.allclose(P, P.T, atol=tol) and np.linalg.eigvalsh(P).min() >= -tol


# -- initialisation ---------------------------------------------------------------


class TestInit:
    def test_bistatic_embedding(self):
        s, P = init_track(Observation(300.0, -2.0, 0.5), BIST, G)
        np.testing.assert_array_equal(s, [300.0, -2.0, 0.0, 0.5, 0.0])
        np.testing.assert_allclose(np.diag(P), [49.0, 1.0, 100.0, math.radians(3) ** 2, math.radians(3) ** 2])
        assert np.count_nonzero(P - np.diag(np.diag(P))) == 0

    def test_cartesian_state_inverts(self):
        z = measure(CartesianState((40.0, 120.0), (3.0, -1.0)), G)
        s, P = init_track(z, CART, G)
        assert measure(CartesianState.from_vector(s), G).as_vector() == pytest.approx(z.as_vector(), abs=1e-9)
        assert is_psd(P)

    def test_cartesian_covariance_vanishes_with_noise(self):
        z = Observation(373.9069, 0.0, math.pi / 2)
        tiny = replace_config(CART, sigma_range=1e-9, sigma_aoa=1e-12)
        _, P = init_track(z, tiny, G)
        assert max(abs(P[0, 0]), abs(P[2, 2]), abs(P[0, 2])) < 1e-12

    def test_cartesian_covariance_monte_carlo(self):
        pos = np.array([0.0, 100.0])
        z0 = measure(CartesianState(tuple(pos), (0.0, 0.0)), G)
        _, P = init_track(z0, CART, G)
        rng = np.random.default_rng(7)
        n = 100_000
        dR = rng.normal(0.0, CART.sigma_range, n)
        dth = rng.normal(0.0, CART.sigma_aoa, n)
        pts = np.array([invert_position(z0.bistatic_range + a, z0.aoa + b, G) for a, b in zip(dR, dth)])
        C = np.cov(pts.T)
        assert C[0, 0] == pytest.approx(P[0, 0], rel=0.1)
        assert C[1, 1] == pytest.approx(P[2, 2], rel=0.1)
        scale = math.sqrt(P[0, 0] * P[2, 2])
        assert abs(C[0, 1] - P[0, 2]) < 0.1 * scale

    def test_velocity_variance(self):
        z = measure(CartesianState((0.0, 100.0), (0.0, 0.0)), G)
        _, P = init_track(z, CART, G)
        pos = np.array([0.0, 100.0])
        u = pos / np.linalg.norm(pos) + (pos - G.tx) / np.linalg.norm(pos - G.tx)
        expect = CART.sigma_range_rate**2 / (u @ u) + CART.v_max**2 / 3
        assert P[1, 1] == pytest.approx(expect)
        assert P[3, 3] == pytest.approx(expect)


# -- prediction -------------------------------------------------------------------


class TestPredict:
    def test_constant_velocity(self):
        s, _ = predict(np.array([0.0, 1.0, 0.0, 2.0]), np.zeros((4, 4)), CART)
        np.testing.assert_allclose(s, [0.2, 1.0, 0.4, 2.0])

    def test_bistatic_range_row(self):
        s, _ = predict(np.array([100.0, 5.0, 2.0, 0.0, 0.0]), np.zeros((5, 5)), BIST)
        assert s[0] == pytest.approx(101.04)

    def test_zero_noise_keeps_zero_covariance(self):
        quiet = replace_config(CART, sigma_x_acc=1e-300, sigma_y_acc=1e-300)
        _, P = predict(np.zeros(4), np.zeros((4, 4)), quiet)
        assert not np.any(P)

    def test_process_noise_blocks(self):
        T = 0.2
        _, Q = transition(CART)
        np.testing.assert_allclose(Q[:2, :2], 16 * np.array([[T**4 / 4, T**3 / 2], [T**3 / 2, T**2]]))
        assert not np.any(Q[:2, 2:])
        F, Q = transition(BIST)
        np.testing.assert_allclose(np.linalg.matrix_power(F, 3)[0, :3], [1, 3 * T, 4.5 * T**2])
        assert is_psd(Q)

    def test_process_noise_is_white_acceleration(self):
        # Q equals Cov(G a) for a unit-variance acceleration a, G = [T^2/2, T]
        T = CART.slot_duration
        g = np.array([T**2 / 2, T])
        _, Q = transition(CART)
        np.testing.assert_allclose(Q[:2, :2], CART.sigma_x_acc**2 * np.outer(g, g))


# -- gating -----------------------------------------------------------------------


class TestGate:
    def _track(self):
        s = np.array([60.0, 3.0, 200.0, -2.0])
        return s, np.diag([25.0, 4.0, 25.0, 4.0])

    def test_exact_prediction(self):
        s, P = self._track()
        z = Observation.from_vector(measurement_model(s, CART, G)[0])
        g = gate_and_cost(z, s, P, CART, G)
        assert g.distance2 == pytest.approx(0.0, abs=1e-20) and g.inside

    def test_inflating_noise_decreases_distance(self):
        s, P = self._track()
        hs = measurement_model(s, CART, G)[0]
        z = Observation.from_vector(hs + np.array([10.0, 1.0, 0.05]))
        d1 = gate_and_cost(z, s, P, CART, G).distance2
        loose = replace_config(CART, sigma_range=14.0, sigma_range_rate=2.0, sigma_aoa=2 * CART.sigma_aoa)
        assert gate_and_cost(z, s, P, loose, G).distance2 < d1

    def test_one_sigma_each(self):
        s = np.array([300.0, 1.0, 0.0, 0.4, 0.0])
        sig = np.array([BIST.sigma_range, BIST.sigma_range_rate, BIST.sigma_aoa])
        z = Observation.from_vector(H_BISTATIC @ s + sig)
        g = gate_and_cost(z, s, np.zeros((5, 5)), BIST, G)
        assert g.distance2 == pytest.approx(3.0)
        assert g.cost == pytest.approx(3.0 + np.log(np.prod(sig**2)))

    def test_aoa_wraps(self):
        s = np.array([300.0, 0.0, 0.0, math.pi - 0.01, 0.0])
        z = Observation(300.0, 0.0, -math.pi + 0.01)
        assert gate_and_cost(z, s, np.zeros((5, 5)), BIST, G).distance2 == pytest.approx(
            (0.02 / BIST.sigma_aoa) ** 2)

    def test_outside(self):
        s, P = self._track()
        z = Observation.from_vector(measurement_model(s, CART, G)[0] + np.array([500.0, 0.0, 0.0]))
        assert not gate_and_cost(z, s, P, CART, G).inside


# -- assignment -------------------------------------------------------------------


def brute_assign(C):
    """Exhaustive search: most feasible pairs, then least total cost."""
    n, m = C.shape
    best = (0, 0.0)
    for k in range(1, min(n, m) + 1):
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.permutations(range(m), k):
                vals = [C[r, c] for r, c in zip(rows, cols)]
                if all(np.isfinite(vals)):
                    cand = (k, sum(vals))
                    if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                        best = cand
    return best


class TestAssign:
    def test_diagonal(self):
        pairs = assign([[1.0, 2.0], [2.0, 1.0]])
        assert sorted(pairs) == [(0, 0), (1, 1)]

    def test_all_infeasible(self):
        assert assign(np.full((3, 2), np.inf)) == []
        assert assign(np.zeros((0, 3))) == []

    def test_infeasible_pair_never_used(self):
        C = np.array([[1.0, np.inf], [np.inf, np.inf]])
        assert assign(C) == [(0, 0)]

    def test_brute_force_random(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            n, m = rng.integers(1, 6, 2)
            C = rng.uniform(-5.0, 20.0, (n, m))
            C[rng.random((n, m)) < 0.3] = np.inf
            pairs = assign(C)
            assert len({r for r, _ in pairs}) == len(pairs) == len({c for _, c in pairs})
            assert all(np.isfinite(C[r, c]) for r, c in pairs)
            k, total = brute_assign(C)
            assert len(pairs) == k
            assert sum(C[r, c] for r, c in pairs) == pytest.approx(total, abs=1e-9)

    def test_square_4x4(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            C = rng.uniform(0.0, 10.0, (4, 4))
            pairs = assign(C)
            best = min(sum(C[i, p[i]] for i in range(4)) for p in itertools.permutations(range(4)))
            assert sum(C[r, c] for r, c in pairs) == pytest.approx(best)


# -- correction -------------------------------------------------------------------


class TestCorrect:
    def test_precise_measurement_pins_state(self):
        exact = replace_config(BIST, sigma_range=1e-9, sigma_range_rate=1e-9, sigma_aoa=1e-9)
        s = np.array([300.0, 1.0, 0.5, 0.4, 0.01])
        P = np.diag([100.0, 4.0, 1.0, 0.01, 0.001])
        z = Observation(310.0, -1.0, 0.45)
        s2, _ = correct(s, P, z, exact, G)
        np.testing.assert_allclose(H_BISTATIC @ s2, z.as_vector(), atol=1e-6)

    @pytest.mark.parametrize("cfg", [CART, BIST])
    def test_zero_innovation(self, cfg):
        s = np.array([60.0, 3.0, 200.0, -2.0]) if cfg.mode == "cartesian" else np.array([300.0, 1.0, 0.0, 1.2, 0.0])
        P = np.eye(s.size) * 9.0
        z = Observation.from_vector(measurement_model(s, cfg, G)[0])
        s2, P2 = correct(s, P, z, cfg, G)
        np.testing.assert_allclose(s2, s, atol=1e-9)
        assert np.trace(P2) < np.trace(P)

    @pytest.mark.parametrize("cfg", [CART, BIST])
    def test_joseph_equals_simple_form(self, cfg, rng):
        for _ in range(20):
            k = 4 if cfg.mode == "cartesian" else 5
            A = rng.standard_normal((k, k))
            P = A @ A.T + np.eye(k)
            s = np.array([rng.uniform(-50, 150), 2.0, rng.uniform(100, 300), -1.0])
            if cfg.mode == "bistatic":
                s = np.array([400.0, 2.0, 0.1, 1.0, 0.01])
            hs, H = measurement_model(s, cfg, G)
            z = Observation.from_vector(hs + rng.standard_normal(3) * [5, 1, 0.02])
            W = cfg.meas_noise + H @ P @ H.T
            K = P @ H.T @ np.linalg.inv(W)
            simple = (np.eye(k) - K @ H) @ P
            s2, P2 = correct(s, P, z, cfg, G)
            np.testing.assert_allclose(P2, simple, rtol=1e-8, atol=1e-8 * np.abs(P).max())
            np.testing.assert_allclose(s2, s + K @ (z.as_vector() - hs), rtol=1e-9)

    @staticmethod
    def _ekf_runs(n_runs, n_slots, seed):
        rng = np.random.default_rng(seed)
        L = np.linalg.cholesky(CART.meas_noise)
        prior_err, post_err = [], []
        for _ in range(n_runs):
            p0 = np.array([rng.uniform(-100, 300), rng.uniform(150, 400)])
            v = rng.uniform(-10, 10, 2)

            def noisy(k):
                t = CartesianState(tuple(p0 + v * k * CART.slot_duration), tuple(v))
                return t, Observation.from_vector(measure(t, G).as_vector() + L @ rng.standard_normal(3))

            s, P = init_track(noisy(0)[1], CART, G)
            for k in range(1, n_slots + 1):
                t, z = noisy(k)
                s, P = predict(s, P, CART)
                prior_err.append(math.hypot(s[0] - t.pos[0], s[2] - t.pos[1]))
                s, P = correct(s, P, z, CART, G)
                post_err.append(math.hypot(s[0] - t.pos[0], s[2] - t.pos[1]))
        return np.array(prior_err), np.array(post_err)

    def test_ekf_improves_on_prior_95_percent(self):
        # Stated target. A consistent filter cannot meet it per realisation:
        # the correction beats the prior only when the measurement error is
        # smaller than the prior error, which holds ~60% of the time here.
        prior, post = self._ekf_runs(50, 10, 3)
        assert np.mean(post < prior) >= 0.95

    def test_ekf_reduces_error_on_average(self):
        prior, post = self._ekf_runs(50, 10, 3)
        assert np.sqrt(np.mean(post**2)) < np.sqrt(np.mean(prior**2))
        assert np.mean(post < prior) > 0.5

    def test_covariance_stays_psd(self, rng):
        for cfg in (CART, BIST):
            s = np.array([50.0, 1.0, 150.0, 1.0]) if cfg.mode == "cartesian" else np.array([350.0, 1.0, 0.0, 1.0, 0.0])
            s0, P = init_track(Observation.from_vector(measurement_model(s, cfg, G)[0]), cfg, G)
            s = s0
            for k in range(300):
                s, P = predict(s, P, cfg)
                if rng.random() < 0.7:
                    hs = measurement_model(s, cfg, G)[0]
                    s, P = correct(s, P, Observation.from_vector(hs + rng.standard_normal(3) * [7, 1, 0.05]), cfg, G)
                assert is_psd(P)
                assert np.array_equal(P, P.T)


# -- tracker lifecycle ------------------------------------------------------------


def feed_own_prediction(tracker, track):
    s, P = predict(track.state, track.cov, tracker.cfg)
    return Observation.from_vector(measurement_model(s, tracker.cfg, G)[0])


class TestTracker:
    def test_first_slot_all_tentative(self):
        tr = Tracker(CART, G)
        obs = [measure(CartesianState((x, 200.0), (0.0, 0.0)), G) for x in (0.0, 100.0, 200.0)]
        res = tr.step(obs, 0)
        assert len(res.tentative) == 3 and res.confirmed == []
        assert [t.id for t in res.tentative] == [1, 2, 3]

    @pytest.mark.parametrize("cfg", [CART, BIST])
    def test_confirm_at_fifth_slot_then_delete_after_fourteen(self, cfg):
        tr = Tracker(cfg, G)
        tr.step([measure(CartesianState((80.0, 200.0), (2.0, 1.0)), G)], 0)
        t = tr.tracks[0]
        for m in range(1, 5):
            assert t.status == "tentative"
            res = tr.step([feed_own_prediction(tr, t)], m)
            assert res.associations == {t.id: 0}
        assert t.status == "confirmed"
        assert [r.status for r in t.history] == ["tentative"] * 4 + ["confirmed"]

        F, _ = transition(cfg)
        s_ref = t.state.copy()
        for k in range(1, 15):
            res = tr.step([], 4 + k)
            if k < 14:
                assert t in tr.tracks
                s_ref = F @ s_ref
                np.testing.assert_allclose(t.state, s_ref, rtol=1e-12)
                assert not t.history[-1].associated
        assert res.deleted == [t] and tr.tracks == [] and tr.deleted == [t]
        assert len(t.history) == 5 + 13

    def test_one_miss_keeps_tentative(self):
        tr = Tracker(CART, G)
        tr.step([measure(CartesianState((80.0, 200.0), (2.0, 1.0)), G)], 0)
        t = tr.tracks[0]
        tr.step([feed_own_prediction(tr, t)], 1)
        tr.step([], 2)
        for m in range(3, 7):
            tr.step([feed_own_prediction(tr, t)], m)
        assert t.status == "tentative"
        tr.step([feed_own_prediction(tr, t)], 7)
        assert t.status == "confirmed"

    def test_skipped_slots_predict_each_slot(self):
        tr = Tracker(CART, G)
        tr.step([measure(CartesianState((80.0, 200.0), (2.0, 1.0)), G)], 0)
        t = tr.tracks[0]
        s, P = predict(*predict(t.state, t.cov, CART), CART)
        tr.step([], 2)
        np.testing.assert_allclose(t.state, s)
        np.testing.assert_allclose(t.cov, P)

    def test_slots_must_increase(self):
        tr = Tracker(CART, G)
        tr.step([], 3)
        with pytest.raises(TrackingError):
            tr.step([], 3)
        assert tr.step([]).slot == 4

    def test_degenerate_observation_spawns_nothing(self):
        tr = Tracker(CART, G)
        res = tr.step([Observation(100.0, 0.0, 0.3)], 0)  # shorter than the baseline
        assert res.tentative == [] and tr.tracks == []

    def _scene(self, n_targets, seed):
        rng = np.random.default_rng(seed)
        starts = [np.array([x, 250.0]) for x in np.linspace(-150, 350, n_targets)]
        vel = [rng.uniform(-5, 5, 2) for _ in starts]
        L = np.linalg.cholesky(CART.meas_noise)
        per_slot = []
        for m in range(25):
            obs = []
            for p0, v in zip(starts, vel):
                s = CartesianState(tuple(p0 + v * m * 0.2), tuple(v))
                obs.append(Observation.from_vector(measure(s, G).as_vector() + L @ rng.standard_normal(3)))
            per_slot.append(obs)
        return per_slot

    def test_order_determinism(self):
        per_slot = self._scene(4, 11)
        perm_rng = np.random.default_rng(0)
        ref_tracker, perm_tracker = Tracker(CART, G), Tracker(CART, G)
        for m, obs in enumerate(per_slot):
            perm = perm_rng.permutation(len(obs))
            a = ref_tracker.step(obs, m)
            b = perm_tracker.step([obs[i] for i in perm], m)
            assert {k: obs[v] for k, v in a.associations.items()} == \
                {k: obs[perm[v]] for k, v in b.associations.items()}
        for t1, t2 in zip(ref_tracker.all_tracks(), perm_tracker.all_tracks()):
            np.testing.assert_array_equal(t1.state, t2.state)

    def test_assignments_respect_gate(self):
        tr = Tracker(CART, G)
        for m, obs in enumerate(self._scene(3, 5)):
            preds = {t.id: predict(t.state, t.cov, CART) for t in tr.tracks}
            res = tr.step(obs, m)
            for tid, i in res.associations.items():
                assert gate_and_cost(obs[i], *preds[tid], CART, G).inside

    def test_single_target_one_confirmed(self):
        tr = Tracker(CART, G)
        for m, obs in enumerate(self._scene(1, 8)):
            res = tr.step(obs, m)
            assert len(res.confirmed) == (1 if m >= 4 else 0)
        assert len(tr.all_tracks()) == 1


# -- conversions ------------------------------------------------------------------


class TestConversions:
    def test_cartesian_position(self):
        np.testing.assert_array_equal(track_to_position(np.array([3.0, 0.0, 4.0, 0.0]), G), [3.0, 4.0])

    def test_bistatic_position(self):
        s = np.array([373.905, 0.0, 0.0, math.pi / 2, 0.0])
        np.testing.assert_allclose(track_to_position(s, G), [0.0, 100.0], atol=5e-3)

    def test_roundtrip(self, rng):
        for _ in range(100):
            p = np.array([rng.uniform(-300, 500), rng.uniform(20, 500)])
            z = measure(CartesianState(tuple(p), (0.0, 0.0)), G)
            s = H_BISTATIC.T @ z.as_vector()
            np.testing.assert_allclose(track_to_position(s, G, "bistatic"), p, atol=1e-8)

    def test_bistatic_velocity_chain_rule(self, rng):
        h = 1e-4
        for _ in range(30):
            p = np.array([rng.uniform(-200, 400), rng.uniform(50, 400)])
            v = rng.uniform(-10, 10, 2)
            at = [measure(CartesianState(tuple(p + v * dt), tuple(v)), G) for dt in (-h, 0.0, h)]
            thetadot = (at[2].aoa - at[0].aoa) / (2 * h)
            state = np.array([at[1].bistatic_range, at[1].range_rate, 0.0, at[1].aoa, thetadot])
            np.testing.assert_allclose(bistatic_to_cartesian(state, G).vel, v, rtol=1e-5, atol=1e-6)
