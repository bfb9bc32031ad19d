import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from grl import gpr
from grl.actions import clock_angle, clock_navigation_model
from grl.envs.tasks import TaskServerWorld
from grl.errors import ConfigurationError, PreconditionError
from grl.g_sarsa import (
    OUT_OF_CONTEXT,
    AbstractActionSet,
    GSarsaConfig,
    _choose,
    abstract_policy,
    action_resolution,
    assign_cluster,
    g_sarsa_update,
    out_of_context_fallback,
    reformulate,
    run_g_sarsa,
)
from grl.harness.config import default_kernel
from grl.kernels import AugmentedState, KernelHyperparameters
from grl.memory import ExperienceParticle, GridGeometry, WorkingMemory
from grl.rf_sarsa import FitnessField, TemperatureSchedule

H = KernelHyperparameters(1.0, 0.1, (1.0, 1.0, 0.5, 0.5), "se", 2, 2)
MODEL = clock_navigation_model()


def nav_particle(s, prim, birth=0, q=0.0, cluster=None):
    w = ExperienceParticle(AugmentedState(s, [1.0, clock_angle(prim)]), q, 0.0, birth_step=birth)
    w.cluster_id = cluster
    return w


def task_hyper():
    k = default_kernel("task_assign")
    return KernelHyperparameters(k["signal_amplitude"], k["noise_scale"], tuple(k["length_scales"]), "se", 3, 6)


def small_task_cfg(**kw):
    base = dict(p=4, warmup=30, episodes=40, period=5, period_growth=5, period_cap=20,
                pos_quota=4, neg_quota=4, ard=gpr.ArdConfig(max_iters=3),
                temperature=TemperatureSchedule(50.0, 0.9, 1.0), kmeans_restarts=3)
    base.update(kw)
    return GSarsaConfig(**base)


class TestResolution:
    def test_exact_context_match(self):
        w = nav_particle([2.0, 2.0], 5)
        res = action_resolution([2.0, 2.0], [w], MODEL, H, 0.5)
        assert res.primitive == 5 and res.donor is w and res.correlation == 1.0

    def test_empty_cluster(self):
        assert action_resolution([1.0, 1.0], [], MODEL, H, 0.5) is OUT_OF_CONTEXT
        assert not OUT_OF_CONTEXT

    def test_below_threshold(self):
        assert action_resolution([0.0, 0.0], [nav_particle([4.0, 4.0], 1)], MODEL, H, 0.5) is OUT_OF_CONTEXT

    @pytest.mark.parametrize("seed", range(8))
    def test_brute_force_scan(self, seed):
        r = np.random.default_rng(seed)
        members = [nav_particle(r.uniform(0, 5, 2), int(r.integers(1, 13)), birth=int(r.integers(0, 4)))
                   for _ in range(int(r.integers(1, 15)))]
        s = r.uniform(0, 5, 2)
        tau = 0.2
        best = None
        for k, w in enumerate(members):
            hyp = np.concatenate([s, w.aug.action_vec])
            rho = oracles.se(hyp, w.aug.joint, 1.0, H.length_scales)
            key = (-rho, w.birth_step, k)
            if best is None or key < best[0]:
                best = (key, w, rho)
        res = action_resolution(s, members, MODEL, H, tau)
        if best[2] < tau:
            assert res is OUT_OF_CONTEXT
        else:
            assert res.donor is best[1]
            assert res.correlation == pytest.approx(best[2], rel=1e-12)
            assert res.primitive == MODEL.resolve_primitive(best[1].aug.action_vec)
            assert res.primitive in MODEL.indices

    def test_tie_prefers_older_donor(self):
        young, old = nav_particle([1.0, 1.0], 3, birth=9), nav_particle([1.0, 1.0], 6, birth=2)
        assert action_resolution([1.0, 1.0], [young, old], MODEL, H, 0.5).donor is old


class TestAbstractPolicy:
    def test_uniform_when_equal(self, rng):
        _, p = abstract_policy(AbstractActionSet(4), 0, 1.0, rng)
        np.testing.assert_allclose(p, 0.25)

    def test_two_way_values(self, rng):
        a = AbstractActionSet(2)
        a.q[(0, 0)] = 1.0
        _, p = abstract_policy(a, 0, 1.0, rng)
        assert p == pytest.approx([0.7311, 0.2689], abs=1e-4)

    @given(st.lists(st.floats(-20, 20), min_size=2, max_size=8), st.floats(-50, 50))
    def test_shift_invariant(self, qs, c):
        a, b = AbstractActionSet(len(qs)), AbstractActionSet(len(qs))
        for k, v in enumerate(qs):
            a.q[(3, k)] = v
            b.q[(3, k)] = v + c
        r = np.random.default_rng(0)
        np.testing.assert_allclose(abstract_policy(a, 3, 2.0, r)[1], abstract_policy(b, 3, 2.0, r)[1],
                                   rtol=1e-9, atol=1e-12)


class TestUpdate:
    def test_hand_arithmetic_and_mirror(self):
        a = AbstractActionSet(3, alpha=0.5, gamma=0.9)
        q, td = g_sarsa_update(a, 0, 1, 10.0, 2, 2, primitive=7)
        assert (q, td) == (5.0, 10.0)
        assert a.q[(0, 1)] == 5.0 and a.primitive_q[(0, 7)] == 5.0

    def test_zero_alpha(self):
        a = AbstractActionSet(3, alpha=0.0, gamma=0.9)
        a.q[(0, 1)] = 4.0
        assert g_sarsa_update(a, 0, 1, 10.0, 2, 2)[0] == 4.0

    def test_fixed_point(self):
        a = AbstractActionSet(3, alpha=0.5, gamma=0.9)
        a.q[(0, 1)], a.q[(2, 2)] = 2.0, 1.0
        q, td = g_sarsa_update(a, 0, 1, 2.0 - 0.9, 2, 2)
        assert td == pytest.approx(0.0, abs=1e-15) and q == pytest.approx(2.0)

    def test_index_validation(self):
        with pytest.raises(ConfigurationError):
            g_sarsa_update(AbstractActionSet(2), 0, 2, 1.0, 0, 0)


class TestAssignCluster:
    def test_nearest_neighbours_in_one_cluster(self):
        d = math.sqrt(-2 * math.log(0.8))  # unit length scale -> correlation 0.8
        centre = [2.0, 2.0]
        near = [nav_particle([2.0 + d, 2.0], 3), nav_particle([2.0 - d, 2.0], 3), nav_particle([2.0, 2.0 + d], 3)]
        far = [[nav_particle([0.0, 0.0], 9)], [nav_particle([4.5, 0.0], 9)]]
        w = nav_particle(centre, 3)
        h = KernelHyperparameters(1.0, 0.0, (1.0,) * 4, "se", 2, 2)
        assert assign_cluster(w, far + [near], h, k=3, tau=0.5) == 2

    def test_empty_cluster_when_nothing_correlates(self):
        clusters = [[nav_particle([0.0, 0.0], 1)], [nav_particle([5.0, 0.0], 1)], [], [nav_particle([0.0, 5.0], 1)], []]
        assert assign_cluster(nav_particle([2.5, 2.5], 7), clusters, H, tau=0.9) == 2

    def test_best_anyway_without_empties(self):
        clusters = [[nav_particle([0.0, 0.0], 1)], [nav_particle([3.0, 3.0], 1)]]
        assert assign_cluster(nav_particle([2.5, 2.5], 7), clusters, H, tau=0.99) == 1

    def test_fewer_members_than_k(self):
        clusters = [[nav_particle([1.0, 1.0], 3)], [nav_particle([4.0, 4.0], 3)] * 6]
        assert assign_cluster(nav_particle([1.0, 1.0], 3), clusters, H, k=5, tau=0.5) == 0

    def test_no_clusters(self):
        with pytest.raises(PreconditionError):
            assign_cluster(nav_particle([1.0, 1.0], 3), [], H)


class TestFallback:
    def test_uniform_frequencies_model(self):
        r = np.random.default_rng(11)
        counts = {i: 0 for i in MODEL.indices}
        for _ in range(10_000):
            i, x = out_of_context_fallback(MODEL, r)
            counts[i] += 1
            assert MODEL.contains(i, x)
        for c in counts.values():
            assert abs(c / 10_000 - 1 / 12) <= 0.02

    def test_env_source_returns_live_profile(self):
        env = TaskServerWorld()
        r = np.random.default_rng(2)
        env.reset(r)
        i, x = out_of_context_fallback(env, r)
        np.testing.assert_array_equal(x, env.action_vector(i))

    def test_out_of_context_choice_records_failure(self, rng):
        env = TaskServerWorld()
        s = env.reset(rng)
        mem = WorkingMemory(env.geometry)
        aset = AbstractActionSet(3)
        cfg = small_task_cfg(p=3)
        A, prim, x, ctx = _choose(env, s, 0, aset, mem, FitnessField(mem, task_hyper()), cfg, 1.0, rng)
        assert ctx is False and prim in env.primitives
        assert aset.selections[A] == 1 and aset.successes[A] == 0 and aset.beta[A] == 0.0


class TestBookkeeping:
    def test_beta_is_exact_ratio(self):
        a = AbstractActionSet(3)
        for idx, ok in [(0, True), (0, False), (0, True), (2, False)]:
            a.record(idx, ok)
        np.testing.assert_array_equal(a.beta, [2 / 3, 0.0, 0.0])

    def test_clusters_group_by_id(self):
        ws = [nav_particle([0.5, 0.5], 1, cluster=c) for c in (1, 0, 1, None, 2)]
        groups = AbstractActionSet(3).clusters(ws)
        assert [len(g) for g in groups] == [1, 2, 1]
        ids = [id(w) for g in groups for w in g]
        assert len(ids) == len(set(ids))

    def test_config_guards(self):
        with pytest.raises(ConfigurationError):
            GSarsaConfig(p=1)
        assert [GSarsaConfig().next_period(T) for T in (10, 90, 100)] == [20, 100, 100]


def clustered_memory(r, n_per=6):
    geo = GridGeometry([0.0, 0.0], [5.0, 5.0], [1, 1])
    mem = WorkingMemory(geo, 100, 100)
    for k, c in enumerate([(1.0, 1.0), (4.0, 1.0), (2.5, 4.0)]):
        for j in range(n_per):
            s = np.array(c) + r.normal(scale=0.1, size=2)
            mem.insert(ExperienceParticle(AugmentedState(s, [1.0, 0.0]), float(k), 1.0, birth_step=k * n_per + j))
    return mem


class TestReformulate:
    def test_preserves_particles_and_labels_everyone(self, rng):
        mem = clustered_memory(rng)
        before = [id(w) for w in mem.all_particles]
        aset = AbstractActionSet(3)
        cfg = GSarsaConfig(p=3, ard=gpr.ArdConfig(max_iters=2))
        reformulate(mem, FitnessField(mem, H), aset, cfg, rng)
        assert [id(w) for w in mem.all_particles] == before
        assert all(w.cluster_id in (0, 1, 2) for w in mem.all_particles)
        assert sorted(len(g) for g in aset.clusters(mem.all_particles)) == [6, 6, 6]

    def test_second_pass_keeps_labels(self, rng):
        mem = clustered_memory(rng)
        aset = AbstractActionSet(3)
        fld = FitnessField(mem, H)
        cfg = GSarsaConfig(p=3)
        reformulate(mem, fld, aset, cfg, np.random.default_rng(1), run_ard=False)
        first = [w.cluster_id for w in mem.all_particles]
        for seed in range(2, 6):
            reformulate(mem, fld, aset, cfg, np.random.default_rng(seed), run_ard=False)
            assert [w.cluster_id for w in mem.all_particles] == first

    def test_too_few_particles_get_own_clusters(self, rng):
        mem = clustered_memory(rng, n_per=1)
        aset = AbstractActionSet(5)
        assert reformulate(mem, FitnessField(mem, H), aset, GSarsaConfig(p=5), rng) is None
        assert sorted(w.cluster_id for w in mem.all_particles) == [0, 1, 2]


class TestRun:
    def test_log_contents(self):
        cfg = small_task_cfg(episodes=80)
        log = run_g_sarsa(TaskServerWorld(), cfg, task_hyper(), seed=3)
        assert log.error is None and len(log.rows) == cfg.episodes
        aset = log.aset
        # one decision per one-step episode
        assert aset.selections.sum() == cfg.episodes
        assert aset.successes.sum() == sum(r.extra["in_context"] for r in log.rows)
        assert np.all((aset.beta >= 0) & (aset.beta <= 1))
        assert log.reindex_maps[0][0] == 0
        assert sum(r.extra["reindex_events"] for r in log.rows) == len(log.reindex_maps) - 1
        gaps = np.diff([t for t, _ in log.reindex_maps])
        assert list(gaps) == [5, 10, 15, 20, 20]
        for r, sizes in zip(log.rows, log.cluster_sizes):
            assert sum(sizes) == r.memory_size
            assert r.extra["resolved_primitive"] in TaskServerWorld().primitives

    def test_same_seed_same_log(self):
        a = run_g_sarsa(TaskServerWorld(), small_task_cfg(), task_hyper(), seed=4)
        b = run_g_sarsa(TaskServerWorld(), small_task_cfg(), task_hyper(), seed=4)
        assert [(r.total_reward, r.lml, r.extra) for r in a.rows] == [(r.total_reward, r.lml, r.extra) for r in b.rows]

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            run_g_sarsa(TaskServerWorld(), small_task_cfg(), H, seed=0)
