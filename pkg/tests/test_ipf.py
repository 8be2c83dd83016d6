"""Companion tables, closed-form updates, and the maximum likelihood fit loop."""

import itertools
import math  # noqa: F401  (used in finite-difference helpers)

import numpy as np
import pytest

import chainfit as cf
from chainfit import (
    Dataset,
    Evidence,
    FitConfig,
    Record,
    VariableSpace,
    bayes_net,
    undirected_model,
)
from chainfit.inference import completed_marginal, completed_marginals, log_likelihood
from chainfit.ipf import fit_ml, g_alpha, ipf_update, random_schedule

from conftest import (
    oracle_joint,
    oracle_marginal,
    random_bayes_net,
    random_chain_graph,
    random_complete_dataset,
    random_complete_rows,
    random_partial_dataset,
    random_undirected,
)


class TestGAlpha:
    def test_bayes_component_broadcasts_parent_ratio(self, rng):
        g = random_bayes_net(rng, n_vars=3, max_parents=2)
        ds = random_complete_dataset(rng, g.space, 25)
        comp = next(c for c in g.components if c.parent_vars)
        cid = comp.member_ids[0]
        pi = comp.parents_sorted
        p_pi = completed_marginal(g, ds, pi)
        got = g_alpha(g, p_pi, cid)
        # single member: the table is the parent marginal over the normalizer,
        # constant along the chain coordinate
        table = g.potentials[cid]
        z = np.zeros(p_pi.probabilities.shape)
        for cfg in itertools.product(*(range(g.space.dims[v]) for v in pi)):
            z[cfg] = cf.component_normalizer(g, comp.id, dict(zip(pi, cfg)))
        ratio = p_pi.probabilities / z
        for idx in itertools.product(*(range(s) for s in table.values.shape)):
            assign = dict(zip(table.variables, idx))
            want = ratio[tuple(assign[v] for v in pi)]
            assert got[idx] == pytest.approx(want, abs=1e-12)

    def test_single_cluster_constant(self, rng):
        space = VariableSpace.binary("a", "b")
        g = undirected_model(space, [("a", "b")], tables=[rng.uniform(0.5, 2, (2, 2))])
        ds = random_complete_dataset(rng, space, 10)
        cid = g.cluster_schedule()[0]
        got = g_alpha(g, None, cid)
        z = cf.component_normalizer(g, "all", {})
        assert np.abs(got - 1.0 / z).max() < 1e-12

    def test_pairwise_cluster_matches_brute_force(self, rng):
        # child with two parents, pairwise members; compare against a full
        # enumeration of the defining sum
        net = cf.SigmoidNet.zeros(2, 1).with_params(
            rng.normal(size=(1, 2)), rng.normal(size=1)
        )
        g = cf.weights_to_graph(net)
        for cid in ("pair_y1_x1", "pair_y1_x2"):
            t = g.potentials[cid]
            g = g.with_potential(
                cid, cf.PotentialTable(cid, t.variables, rng.uniform(0.2, 2.0, (2, 2)))
            )
        ds = random_complete_dataset(rng, g.space, 12)
        comp = g.owner_of("pair_y1_x1")
        pi = comp.parents_sorted
        p_pi = completed_marginal(g, ds, pi)
        got = g_alpha(g, p_pi, "pair_y1_x1")

        table = g.potentials["pair_y1_x1"]
        other = g.potentials["pair_y1_x2"]
        brute = np.zeros(table.values.shape)
        for cfg_tuple in itertools.product(range(2), range(2), range(2)):
            cfg = dict(zip(comp.all_vars, cfg_tuple))
            z = sum(
                table.values[tuple({**cfg, 2: y}[v] for v in table.variables)]
                * other.values[tuple({**cfg, 2: y}[v] for v in other.variables)]
                for y in range(2)
            )
            rest = other.values[tuple(cfg[v] for v in other.variables)]
            pd = p_pi.probabilities[tuple(cfg[v] for v in pi)]
            brute[tuple(cfg[v] for v in table.variables)] += pd * rest / z
        assert np.abs(got - brute).max() < 1e-12


class TestIpfUpdate:
    def test_single_cluster_matches_target_margin(self):
        space = VariableSpace.binary("x")
        g = undirected_model(space, [("x",)], tables=[np.array([1.0, 1.0])])
        ds = cf.complete_dataset(1, [(0,), (1,), (1,), (1,)])
        cid = g.cluster_schedule()[0]
        p_hat = completed_marginal(g, ds, (0,))
        new = ipf_update(g, cid, p_hat, g_alpha(g, None, cid))
        g2 = g.with_potential(cid, new)
        marg = oracle_marginal(oracle_joint(g2), (0,))
        assert np.abs(marg - np.array([0.25, 0.75])).max() < 1e-12

    def test_bayes_update_is_empirical_conditional(self, rng):
        g = random_bayes_net(rng, n_vars=4, max_card=3)
        rows = random_complete_rows(rng, g.space, 120)
        ds = cf.complete_dataset(len(g.space), rows)
        comp = next(c for c in g.components if c.parent_vars)
        cid = comp.member_ids[0]
        table = g.potentials[cid]
        p_hat, p_pi = completed_marginals(g, ds, [table.variables, comp.parents_sorted])
        new = ipf_update(g, cid, p_hat, g_alpha(g, p_pi, cid))
        g2 = g.with_potential(cid, new)
        child = comp.chain_vars[0]
        pi = comp.parents_sorted
        counts = np.zeros(tuple(g.space.dims[v] for v in pi) + (g.space.dims[child],))
        for r in rows:
            counts[tuple(r[v] for v in pi) + (r[child],)] += 1
        for pcfg in itertools.product(*(range(g.space.dims[v]) for v in pi)):
            total = counts[pcfg].sum()
            if total == 0:
                continue
            for s in range(g.space.dims[child]):
                got = cf.component_conditional(
                    g2, comp.id, {**dict(zip(pi, pcfg)), child: s}
                )
                assert got == pytest.approx(counts[pcfg][s] / total, abs=1e-14)

    def test_loopy_model_margin_fit_and_conditional_invariance(self, rng):
        # three pairwise clusters on a triangle
        space = VariableSpace.binary("a", "b", "c")
        g = undirected_model(
            space,
            [("a", "b"), ("b", "c"), ("a", "c")],
            tables=[rng.uniform(0.5, 2.0, (2, 2)) for _ in range(3)],
        )
        ds = random_partial_dataset(rng, space, 20, p_observe=0.8)
        cid = g.cluster_schedule()[0]
        table = g.potentials[cid]
        p_hat = completed_marginal(g, ds, table.variables)
        new = ipf_update(g, cid, p_hat, g_alpha(g, None, cid))
        g2 = g.with_potential(cid, new)

        joint_before = oracle_joint(g)
        joint_after = oracle_joint(g2)
        # updated cluster margin equals the completed marginal
        marg = oracle_marginal(joint_after, table.variables)
        assert np.abs(marg - p_hat.probabilities).max() < 1e-10
        # conditional of everything else given the cluster is untouched
        m_b = oracle_marginal(joint_before, table.variables)
        for cfg in itertools.product(range(2), range(2), range(2)):
            key = (cfg[0], cfg[1])
            before = joint_before[cfg] / m_b[key]
            after = joint_after[cfg] / marg[key]
            assert after == pytest.approx(before, abs=1e-12)
            # the product form: new joint = old conditional times new margin
            assert joint_after[cfg] == pytest.approx(
                before * p_hat.probabilities[key], abs=1e-12
            )

    def test_zero_denominator_raises(self, rng):
        space = VariableSpace.binary("x")
        g = undirected_model(space, [("x",)], tables=[np.array([1.0, 1.0])])
        p_hat = cf.MarginalTable((0,), np.array([0.5, 0.5]))
        with pytest.raises(cf.ZeroDenominator):
            ipf_update(g, g.cluster_schedule()[0], p_hat, np.array([0.0, 1.0]))


class TestFitML:
    def test_complete_bayes_net_converges_in_one_cycle(self, rng):
        g = random_bayes_net(rng, n_vars=4)
        ds = random_complete_dataset(rng, g.space, 60)
        trace = fit_ml(g, ds, FitConfig(max_cycles=10))
        assert trace.termination == "converged"
        assert trace.cycles_run == 2  # detected one cycle after the fixed point
        objs = trace.objectives()
        assert objs[1] == pytest.approx(objs[-1], abs=1e-12)

    def test_saturated_undirected_model_reaches_empirical_joint(self, rng):
        space = VariableSpace.binary("a", "b")
        g = undirected_model(space, [("a", "b")])
        rows = random_complete_rows(rng, space, 40)
        ds = cf.complete_dataset(2, rows)
        trace = fit_ml(g, ds, FitConfig(max_cycles=10))
        emp = np.zeros((2, 2))
        for r in rows:
            emp[r] += 1 / len(rows)
        assert np.abs(cf.joint_table(trace.model) - emp).max() < 1e-12

    def test_monotone_per_step_including_incomplete(self, rng):
        # per update, not just per cycle: run the update loop by hand
        for _ in range(6):
            build = (random_bayes_net, random_undirected, random_chain_graph)[
                int(rng.integers(0, 3))
            ]
            g = build(rng)
            ds = random_partial_dataset(rng, g.space, 8, p_observe=0.7)
            ds = Dataset(tuple(r for r in ds.records if len(r.evidence)))
            if not len(ds):
                continue
            before = log_likelihood(g, ds)
            for cid in g.cluster_schedule() * 2:
                comp = g.owner_of(cid)
                pi = comp.parents_sorted
                table = g.potentials[cid]
                p_hat = completed_marginal(g, ds, table.variables)
                p_pi = completed_marginal(g, ds, pi) if pi else None
                new = ipf_update(g, cid, p_hat, g_alpha(g, p_pi, cid), floor=1e-12)
                g = g.with_potential(cid, new)
                after = log_likelihood(g, ds)
                assert after >= before - 1e-9
                before = after

    def test_stationary_gradient_at_convergence(self, rng):
        g = random_undirected(rng, n_vars=3)
        ds = random_complete_dataset(rng, g.space, 25)
        trace = fit_ml(g, ds, FitConfig(max_cycles=300, tol=1e-12, potential_floor=1e-12))
        model = trace.model
        step = 1e-5
        for cid in model.cluster_schedule():
            table = model.potentials[cid]
            flat = table.values.ravel()
            for k in range(flat.size):
                if flat[k] <= 1e-12:
                    continue  # floored entries sit on the boundary
                up = flat.copy()
                up[k] = math.exp(math.log(flat[k]) + step)
                down = flat.copy()
                down[k] = math.exp(math.log(flat[k]) - step)
                g_up = model.with_potential(
                    cid, cf.PotentialTable(cid, table.variables, up.reshape(table.values.shape))
                )
                g_dn = model.with_potential(
                    cid, cf.PotentialTable(cid, table.variables, down.reshape(table.values.shape))
                )
                deriv = (log_likelihood(g_up, ds) - log_likelihood(g_dn, ds)) / (2 * step)
                assert abs(deriv) < 1e-5

    def test_gauge_rescaling_leaves_trace_unchanged(self, rng):
        g = random_undirected(rng, n_vars=3)
        ds = random_partial_dataset(rng, g.space, 10, p_observe=0.8)
        ds = Dataset(tuple(r for r in ds.records if len(r.evidence)))
        cfgf = FitConfig(max_cycles=6, potential_floor=1e-12)
        t1 = fit_ml(g, ds, cfgf)
        g2 = cf.rescale_potential(g, g.cluster_schedule()[0], 7.5)
        t2 = fit_ml(g2, ds, cfgf)
        a, b = t1.objectives(), t2.objectives()
        assert len(a) == len(b)
        assert max(abs(x - y) for x, y in zip(a, b)) < 1e-9

    def test_random_schedule_is_seeded_permutation(self, rng):
        g = random_bayes_net(rng, n_vars=4)
        s1 = random_schedule(g, 11)
        s2 = random_schedule(g, 11)
        s3 = random_schedule(g, 12)
        assert s1 == s2
        assert sorted(s1) == sorted(g.cluster_schedule())
        assert s1 != s3 or len(s1) <= 1

    def test_trace_carry_forward(self, rng):
        g = random_bayes_net(rng, n_vars=3)
        ds = random_complete_dataset(rng, g.space, 30)
        trace = fit_ml(g, ds, FitConfig(max_cycles=50))
        assert trace.termination == "converged"
        assert trace.objective_at(50) == trace.final_objective
        assert trace.objective_at(0) == trace.records[0].objective

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FitConfig(tol=0.0)
        with pytest.raises(ValueError):
            FitConfig(max_cycles=0)
        with pytest.raises(ValueError):
            FitConfig(potential_floor=-1.0)
