"""Model representation, validation, and exact probability evaluation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

import chainfit as cf
from chainfit import (
    ChainFactorGraph,
    ComponentSet,
    PotentialTable,
    VariableSpace,
    bayes_net,
    undirected_model,
)
from chainfit.errors import NonPositiveFactor, ZeroNormalizer

from conftest import oracle_joint, random_bayes_net, random_chain_graph, random_undirected


def binary_single_cluster(values) -> ChainFactorGraph:
    space = VariableSpace.binary("x")
    return undirected_model(space, [("x",)], tables=[np.asarray(values, float)])


class TestNormalizer:
    def test_two_term_sum(self):
        g = binary_single_cluster([1.0, 3.0])
        assert cf.component_normalizer(g, "all", {}) == 4.0

    def test_uniform(self):
        g = binary_single_cluster([1.0, 1.0])
        assert cf.component_normalizer(g, "all", {}) == 2.0

    def test_pairwise_members_match_exhaustive_sum(self, rng):
        # one chain variable, one parent, two pairwise members over {i, j}
        space = VariableSpace.binary("j", "i")
        t1 = rng.uniform(0.1, 2.0, (2, 2))
        t2 = rng.uniform(0.1, 2.0, (2, 2))
        comp = ComponentSet("A", chain_vars=(1,), parent_vars=(0,), member_ids=("m1", "m2"))
        g = ChainFactorGraph(
            space,
            (ComponentSet("P", (0,), (), ("p",)), comp),
            {
                "p": PotentialTable("p", (0,), np.ones(2)),
                "m1": PotentialTable("m1", (1, 0), t1),
                "m2": PotentialTable("m2", (0, 1), t2),
            },
        )
        for j in range(2):
            want = sum(t1[i, j] * t2[j, i] for i in range(2))
            got = cf.component_normalizer(g, "A", {0: j})
            assert got == pytest.approx(want, abs=1e-12)

    def test_zero_slice_raises(self):
        g = binary_single_cluster([0.0, 0.0])
        with pytest.raises(ZeroNormalizer):
            cf.component_normalizer(g, "all", {})


class TestConditional:
    def test_one_three(self):
        g = binary_single_cluster([1.0, 3.0])
        assert cf.component_conditional(g, "all", {0: 0}) == pytest.approx(0.25)
        assert cf.component_conditional(g, "all", {0: 1}) == pytest.approx(0.75)

    def test_uniform_potentials_give_uniform_conditional(self):
        space = VariableSpace.binary("a", "b")
        g = undirected_model(space, [("a", "b")])
        for a in range(2):
            for b in range(2):
                assert cf.component_conditional(g, "all", {0: a, 1: b}) == pytest.approx(0.25)

    def test_matches_sigmoid_for_pairwise_child(self, rng):
        w = rng.normal(size=2)
        h = rng.normal()
        net = cf.SigmoidNet.zeros(2, 1).with_params(w.reshape(1, 2), np.array([h]))
        g = cf.weights_to_graph(net)
        sgn = (-1.0, 1.0)
        for a in range(2):
            for b in range(2):
                t = h + w[0] * sgn[a] + w[1] * sgn[b]
                p1 = cf.component_conditional(g, "y1", {0: a, 1: b, 2: 1})
                p0 = cf.component_conditional(g, "y1", {0: a, 1: b, 2: 0})
                assert p1 == pytest.approx(expit(2 * t), abs=1e-12)
                assert p0 == pytest.approx(1 - expit(2 * t), abs=1e-12)

    def test_sums_to_one_over_chain(self, rng):
        for trial in range(5):
            g = random_chain_graph(rng, n_vars=4)
            dims = g.space.dims
            for comp in g.components:
                import itertools

                pis = comp.parents_sorted
                for pcfg in itertools.product(*(range(dims[v]) for v in pis)):
                    total = 0.0
                    chain = comp.chain_sorted
                    for ccfg in itertools.product(*(range(dims[v]) for v in chain)):
                        cfg = dict(zip(pis, pcfg))
                        cfg.update(zip(chain, ccfg))
                        total += cf.component_conditional(g, comp.id, cfg)
                    assert total == pytest.approx(1.0, abs=1e-10)


class TestJointProbability:
    def test_two_node_network(self):
        space = VariableSpace.of(("x1", ("s1", "s2")), ("x2", ("s2a", "s2b")))
        g = bayes_net(
            space,
            {"x1": (), "x2": ("x1",)},
            cpts={"x1": np.array([0.5, 0.5]), "x2": np.array([[0.2, 0.8], [0.6, 0.4]])},
        )
        assert cf.joint_probability(g, {0: 0, 1: 1}) == pytest.approx(0.4)

    def test_total_mass_and_oracle_agreement(self, rng):
        for build in (random_bayes_net, random_undirected, random_chain_graph):
            g = build(rng)
            table = cf.joint_table(g)
            assert table.sum() == pytest.approx(1.0, abs=1e-10)
            assert np.abs(table - oracle_joint(g)).max() < 1e-12

    def test_heart_model_uniform(self):
        g = cf.heart_disease_model()
        assert cf.joint_probability(g, {0: 0, 1: 0, 2: 0, 3: 0}) == pytest.approx(
            1 / 64, abs=1e-14
        )


class TestRescale:
    def test_identity_factor(self):
        g = binary_single_cluster([1.0, 3.0])
        g2 = cf.rescale_potential(g, g.cluster_schedule()[0], 1.0)
        assert g2 == g

    @given(factor=st.floats(min_value=1e-6, max_value=1e6))
    @settings(max_examples=30, deadline=None)
    def test_distribution_invariant(self, factor):
        g = binary_single_cluster([1.0, 3.0])
        g2 = cf.rescale_potential(g, g.cluster_schedule()[0], factor)
        t1 = cf.joint_table(g)
        t2 = cf.joint_table(g2)
        assert np.abs(t1 - t2).max() < 1e-12

    def test_one_of_two_members(self, rng):
        space = VariableSpace.binary("a", "b")
        g = undirected_model(
            space,
            [("a", "b"), ("b",)],
            tables=[rng.uniform(0.5, 2.0, (2, 2)), rng.uniform(0.5, 2.0, 2)],
        )
        g2 = cf.rescale_potential(g, g.cluster_schedule()[1], 0.5)
        assert np.abs(oracle_joint(g) - oracle_joint(g2)).max() < 1e-12

    def test_bad_factor(self):
        g = binary_single_cluster([1.0, 3.0])
        cid = g.cluster_schedule()[0]
        for factor in (0.0, -1.0, float("nan"), float("inf")):
            with pytest.raises(NonPositiveFactor):
                cf.rescale_potential(g, cid, factor)


def _codes(report) -> set[str]:
    return {v.code for v in report}


class TestValidation:
    def test_minimal_model_is_valid(self):
        report = cf.validate_graph(binary_single_cluster([1.0, 3.0]))
        assert report.ok and len(report) == 0

    def test_overlapping_chain_components(self):
        space = VariableSpace.binary("a", "b")
        comps = (
            ComponentSet("A1", (0,), (), ("c1",)),
            ComponentSet("A2", (0, 1), (), ("c2",)),
        )
        pots = {
            "c1": PotentialTable("c1", (0,), np.ones(2)),
            "c2": PotentialTable("c2", (0, 1), np.ones((2, 2))),
        }
        report = cf.validate_graph(ChainFactorGraph(space, comps, pots))
        assert "components-not-disjoint" in _codes(report)

    def test_heart_model_valid_four_components(self):
        g = cf.heart_disease_model()
        assert cf.validate_graph(g).ok
        assert len(g.components) == 4

    def test_constructed_graphs_valid(self, rng):
        for build in (random_bayes_net, random_undirected, random_chain_graph):
            for _ in range(3):
                assert cf.validate_graph(build(rng)).ok

    @pytest.mark.parametrize(
        "mutate,expected",
        [
            ("drop_variable", "variables-uncovered"),
            ("reorder", "order-violation"),
            ("member_outside", "member-outside-component"),
            ("members_no_cover", "members-do-not-cover"),
            ("negative_entry", "negative-potential"),
            ("zero_table", "all-zero-potential"),
            ("missing_potential", "missing-potential"),
            ("orphan", "orphan-potential"),
            ("shared_member", "shared-member-cluster"),
        ],
    )
    def test_single_invariant_mutations(self, mutate, expected):
        g = cf.heart_disease_model()
        space, comps, pots = g.space, list(g.components), dict(g.potentials)
        if mutate == "drop_variable":
            comps = [c for c in comps if c.id != "c"]
            pots.pop("cpt_c")
        elif mutate == "reorder":
            comps = [comps[2], comps[0], comps[1], comps[3]]
        elif mutate == "member_outside":
            comps[3] = ComponentSet("c", comps[3].chain_vars, (), comps[3].member_ids)
        elif mutate == "members_no_cover":
            t = pots["cpt_d"]
            pots["cpt_d"] = PotentialTable("cpt_d", (2,), np.ones(2))
        elif mutate == "negative_entry":
            vals = np.array(pots["cpt_a"].values)
            vals[0] = -0.5
            pots["cpt_a"] = PotentialTable("cpt_a", (0,), vals)
        elif mutate == "zero_table":
            pots["cpt_s"] = PotentialTable("cpt_s", (1,), np.zeros(2))
        elif mutate == "missing_potential":
            pots.pop("cpt_d")
        elif mutate == "orphan":
            pots["extra"] = PotentialTable("extra", (0,), np.ones(4))
        elif mutate == "shared_member":
            comps[1] = ComponentSet("s", comps[1].chain_vars, (), ("cpt_s", "cpt_a"))
        report = cf.validate_graph(ChainFactorGraph(space, tuple(comps), pots))
        assert expected in _codes(report)
        assert not report.ok

    def test_no_topological_order_reported(self):
        space = VariableSpace.binary("a", "b")
        comps = (
            ComponentSet("A", (0,), (1,), ("ca",)),
            ComponentSet("B", (1,), (0,), ("cb",)),
        )
        pots = {
            "ca": PotentialTable("ca", (0, 1), np.ones((2, 2))),
            "cb": PotentialTable("cb", (0, 1), np.ones((2, 2))),
        }
        codes = _codes(cf.validate_graph(ChainFactorGraph(space, comps, pots)))
        assert "order-violation" in codes
        assert "no-topological-order" in codes

    def test_cardinality_one_flagged_not_fatal(self):
        space = VariableSpace.of(("a", ("only",)), ("b", ("0", "1")))
        comps = (
            ComponentSet("A", (0,), (), ("ca",)),
            ComponentSet("B", (1,), (), ("cb",)),
        )
        pots = {
            "ca": PotentialTable("ca", (0,), np.ones(1)),
            "cb": PotentialTable("cb", (1,), np.ones(2)),
        }
        report = cf.validate_graph(ChainFactorGraph(space, comps, pots))
        assert report.ok
        assert any(v.code == "degenerate-variable" for v in report.warnings)

    def test_state_space_cap(self):
        names = [f"b{i}" for i in range(23)]
        space = VariableSpace.binary(*names)
        comps = tuple(
            ComponentSet(n, (i,), (), (f"t{i}",)) for i, n in enumerate(names)
        )
        pots = {f"t{i}": PotentialTable(f"t{i}", (i,), np.ones(2)) for i in range(23)}
        report = cf.validate_graph(ChainFactorGraph(space, comps, pots))
        assert "state-space-too-large" in _codes(report)

    def test_table_shape_mismatch(self):
        space = VariableSpace.of(("a", ("0", "1", "2")),)
        comp = ComponentSet("A", (0,), (), ("t",))
        pots = {"t": PotentialTable("t", (0,), np.ones(2))}
        report = cf.validate_graph(ChainFactorGraph(space, (comp,), pots))
        assert "table-shape-mismatch" in _codes(report)
