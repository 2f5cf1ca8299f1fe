import math

import numpy as np
import pytest

from wittenlab.field import DomainSpec, GridSpec, parse_field
from wittenlab import topology as topo

from conftest import Pipeline
import oracles


# ---------------------------------------------------------------------------
# Critical points
# ---------------------------------------------------------------------------


def test_double_well_critical_points(double_well):
    interior = [c for c in double_well.crits if not c.on_boundary]
    locs = sorted(round(float(c.location[0]), 6) for c in interior)
    assert locs == pytest.approx([-1.0, 0.0, 1.0], abs=1e-8)
    saddle = next(c for c in interior if c.index == 1)
    assert saddle.mu_d == pytest.approx(-4.0)
    boundary = [c for c in double_well.crits if c.on_boundary]
    assert sorted(float(c.location[0]) for c in boundary) == pytest.approx([-1.7, 1.7])
    for c in boundary:
        assert c.normal_derivative == pytest.approx(12.852)  # 4*1.7*(1.7^2-1)


def test_single_well_critical_point(single_well):
    interior = [c for c in single_well.crits if not c.on_boundary]
    assert len(interior) == 1
    assert interior[0].index == 0
    assert float(interior[0].location[0]) == pytest.approx(0.0, abs=1e-10)


def test_2d_critical_points(half_domain_2d):
    interior = [c for c in half_domain_2d.crits if not c.on_boundary]
    assert len(interior) == 1
    assert interior[0].location == pytest.approx([-1.0, 0.0], abs=1e-8)
    bc = next(c for c in half_domain_2d.crits if c.on_boundary and c.grad_norm < 1e-8)
    assert bc.location == pytest.approx([0.0, 0.0], abs=1e-8)
    assert sorted(bc.hess_eigenvalues) == pytest.approx([-4.0, 2.0])
    assert bc.alignment_angle == pytest.approx(0.0, abs=1e-10)


def test_degenerate_potential_rejected():
    f = parse_field("x1^4", 1)
    dom = DomainSpec(lower=(-1.0,), upper=(1.0,))
    with pytest.raises(topo.DegenerateCriticalPointError):
        topo.find_critical_points(f, dom, GridSpec(shape=(129,)))


# ---------------------------------------------------------------------------
# Merge structure
# ---------------------------------------------------------------------------


def test_double_well_single_merge_event(double_well):
    events = double_well.merge.events
    assert len(events) == 1
    assert events[0].level == pytest.approx(1.0, abs=1e-3)
    # witness sits near the separating point x = 0
    x = double_well.grid.axes(double_well.domain)[0]
    assert abs(x[events[0].witness]) < 2 * double_well.grid.mesh_widths(double_well.domain)[0]


def test_single_well_no_merge(single_well):
    assert single_well.merge.events == []


def test_merge_levels_nondecreasing(triple_well):
    levels = [e.level for e in triple_well.merge.events]
    assert levels == sorted(levels)


def test_three_minima_two_distinct_merge_levels(tilted_three_minima):
    p = tilted_three_minima
    interior_minima = [c for c in p.crits if not c.on_boundary and c.index == 0]
    assert len(interior_minima) == 3
    events = p.merge.events
    assert len(events) == 2
    assert events[0].level < events[1].level
    # merge levels land on the two interior saddle values
    saddle_vals = sorted(c.value for c in p.crits if not c.on_boundary and c.index == 1)
    for ev, sv in zip(events, saddle_vals):
        assert ev.level == pytest.approx(sv, abs=5e-4)


def test_every_local_minimum_owns_a_birth(double_well):
    births = set(double_well.merge.birth_level)
    # two interior minima plus possibly boundary-node births
    interior_births = [
        b for b in births if not double_well.merge.boundary_flat[b]
    ]
    assert len(interior_births) >= 2


# ---------------------------------------------------------------------------
# Separating saddles and generalized saddles
# ---------------------------------------------------------------------------


def test_double_well_saddle_classification(double_well):
    assert [c.ident for c in double_well.ssps.interior]  # saddle at 0 separates
    kinds = sorted(c.saddle_kind for c in double_well.ssps.boundary)
    assert kinds == ["boundary_noncritical", "boundary_noncritical"]


def test_single_well_no_interior_ssp(single_well):
    assert single_well.ssps.interior == []
    assert sorted(c.saddle_kind for c in single_well.ssps.boundary) == [
        "boundary_noncritical",
        "boundary_noncritical",
    ]


def test_half_well_boundary_critical(half_well):
    kinds = {c.saddle_kind for c in half_well.ssps.boundary}
    assert "boundary_critical" in kinds
    z = next(c for c in half_well.ssps.boundary if c.saddle_kind == "boundary_critical")
    assert float(z.location[0]) == pytest.approx(0.0, abs=1e-10)
    assert z.mu_d == pytest.approx(-4.0)


# ---------------------------------------------------------------------------
# Well labeling
# ---------------------------------------------------------------------------


def test_double_well_labeling(double_well):
    labs = double_well.labeling.labels
    assert len(labs) == 2
    tier1, tier2 = labs[0], labs[1]
    assert tier1.tier == (1, 1) and tier2.tier == (2, 1)
    assert float(tier1.minimum.location[0]) == pytest.approx(-1.0, abs=1e-8)
    assert tier1.energy == pytest.approx(3.5721, abs=1e-9)
    assert sorted(float(s.location[0]) for s in tier1.saddles) == pytest.approx([-1.7, 1.7])
    assert len(tier1.argmin) == 2
    assert float(tier2.minimum.location[0]) == pytest.approx(1.0, abs=1e-8)
    assert tier2.energy == pytest.approx(1.0, abs=1e-9)
    assert [round(float(s.location[0]), 8) for s in tier2.saddles] == [0.0]


def test_single_well_labeling(single_well):
    labs = single_well.labeling.labels
    assert len(labs) == 1
    assert labs[0].energy == pytest.approx(1.0, abs=1e-10)
    assert sorted(float(s.location[0]) for s in labs[0].saddles) == pytest.approx([-1.0, 1.0])


def test_half_well_labeling(half_well):
    labs = half_well.labeling.labels
    assert len(labs) == 1
    assert labs[0].energy == pytest.approx(1.0, abs=1e-10)
    assert labs[0].saddles[0].saddle_kind == "boundary_critical"


def test_labeling_invariants(double_well, half_well, single_well, triple_well, tilted_three_minima):
    for p in (double_well, half_well, single_well, triple_well, tilted_three_minima):
        labs = p.labeling.labels
        reps = [l.minimum.ident for l in labs]
        assert len(set(reps)) == len(reps)  # injectivity of x -> C(x)
        jsets = [tuple(sorted(s.ident for s in l.saddles)) for l in labs]
        assert len(set(jsets)) == len(jsets)  # injectivity of x -> j(x)
        for l in labs:
            assert l.energy > 0.0
            vals = [s.value for s in l.saddles]
            assert max(vals) - min(vals) <= max(p.labeling.tol_level, 1e-8)
        # dichotomy: shared saddles force equal levels and distinct components;
        # empty intersection forces disjoint or strictly nested node sets
        sets = {l.minimum.ident: set(l.node_set.tolist()) for l in labs}
        for i in range(len(labs)):
            for j in range(i + 1, len(labs)):
                a, b = labs[i], labs[j]
                shared = set(s.ident for s in a.saddles) & set(s.ident for s in b.saddles)
                sa, sb = sets[a.minimum.ident], sets[b.minimum.ident]
                if shared:
                    assert abs(a.saddle_value - b.saddle_value) <= max(
                        p.labeling.tol_level, 1e-8
                    )
                    assert not (sa & sb)
                else:
                    assert not (sa & sb) or sa < sb or sb < sa


def test_tier1_wells_open_and_disjoint(triple_well, double_well):
    for p in (triple_well, double_well):
        boundary = p.grid.boundary_mask().reshape(-1)
        tier1 = [l for l in p.labeling.labels if l.principal]
        for l in tier1:
            assert not boundary[l.node_set].any()
        for i in range(len(tier1)):
            for j in range(i + 1, len(tier1)):
                assert not (set(tier1[i].node_set) & set(tier1[j].node_set))


def test_tiebreak_invariance(double_well, triple_well):
    for p in (double_well, triple_well):
        alt = topo.build_jmap(
            p.merge, p.ssps, p.minima,
            field=p.field, domain=p.domain, grid=p.grid, tie_break="revlex",
        )
        ref = sorted(round(l.energy, 9) for l in p.labeling.labels)
        new = sorted(round(l.energy, 9) for l in alt.labels)
        assert ref == new


def test_empty_minima_rejected(double_well):
    with pytest.raises(topo.LabelingError):
        topo.build_jmap(
            double_well.merge, double_well.ssps, [],
            field=double_well.field, domain=double_well.domain, grid=double_well.grid,
        )


# ---------------------------------------------------------------------------
# Oracle comparison (1-D analytic sublevel intervals)
# ---------------------------------------------------------------------------

ORACLE_FIXTURES = [
    ("(x1^2-1)^2", -1.7, 1.7, (513,)),
    ("(x1^2-1)^2", -1.7, 0.0, (513,)),
    ("x1^2", -1.0, 1.0, (257,)),
    ("x1^2*(x1^2-1)^2", -1.55, 1.55, (1025,)),
    ("((x1+1)*(x1-1)*(x1-2.5))^2/20 + x1/10", -1.6, 3.1, (2049,)),
]


@pytest.mark.parametrize("src,a,b,shape", ORACLE_FIXTURES)
def test_labeling_matches_analytic_oracle(src, a, b, shape):
    field = parse_field(src, 1)
    expected = oracles.label_wells_1d(field, a, b)

    p = Pipeline(src, (a,), (b,), shape)
    got = p.labeling.labels
    assert len(got) == len(expected)
    exp_sorted = sorted(expected, key=lambda e: e["minimum"])
    got_sorted = sorted(got, key=lambda l: float(l.minimum.location[0]))
    for e, g in zip(exp_sorted, got_sorted):
        assert float(g.minimum.location[0]) == pytest.approx(e["minimum"], abs=1e-6)
        assert g.energy == pytest.approx(e["energy"], rel=1e-6, abs=1e-8)
        got_saddles = sorted(float(s.location[0]) for s in g.saddles)
        assert got_saddles == pytest.approx(e["saddles"], abs=1e-6)


def test_energy_stable_under_refinement():
    coarse = Pipeline("(x1^2-1)^2", (-1.7,), (1.7,), (257,))
    fine = Pipeline("(x1^2-1)^2", (-1.7,), (1.7,), (513,))
    ec = sorted(l.energy for l in coarse.labeling.labels)
    ef = sorted(l.energy for l in fine.labeling.labels)
    dx = coarse.grid.mesh_widths(coarse.domain)[0]
    for a, b in zip(ec, ef):
        assert abs(a - b) <= 50.0 * dx**2


# ---------------------------------------------------------------------------
# Hypothesis checks
# ---------------------------------------------------------------------------


def test_half_well_h1_passes(half_well):
    assert half_well.hypotheses.h1_pass
    assert half_well.hypotheses.violations == []


def test_2d_alignment_exact(half_domain_2d):
    rep = half_domain_2d.hypotheses
    assert rep.passed
    angles = [a for _, a in rep.h1_checks]
    assert angles and max(angles) <= 1e-10
    # the two noncritical contacts carry H2 data
    assert len(rep.h2_checks) == 2
    for _, dn, te in rep.h2_checks:
        assert dn == pytest.approx(2.0, abs=1e-8)
        assert te == pytest.approx([8.0], abs=1e-6)


def test_rotated_saddle_h1_violation():
    p = Pipeline("-2*x1*x2 + (x1^2+x2^2)^3", (-1.3, -1.3), (0.0, 1.3), (97, 193), dimension=2)
    assert not p.hypotheses.h1_pass
    assert p.hypotheses.violations
    angles = [a for _, a in p.hypotheses.h1_checks]
    assert max(angles) == pytest.approx(math.pi / 4, abs=1e-6)


def test_serialization_roundtrip(double_well):
    doc = topo.topology_to_json(
        double_well.crits, double_well.merge, double_well.labeling, double_well.hypotheses
    )
    import json

    encoded = json.dumps(doc)
    back = json.loads(encoded)
    assert back["hypothesis_report"]["h1_pass"] is True
    assert len(back["critical_points"]) == len(double_well.crits)
    assert len(back["labeling"]) == 2
