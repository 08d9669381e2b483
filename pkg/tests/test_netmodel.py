import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import nodal_lead_currents
from railbreak.features import InjectionMode
from railbreak.netmodel import (CONDUCTORS, DRY, WET, BreakageSpec, FloatingSubnetworkError,
                                SectionModel, SegmentParams, apply_soil, build_admittance,
                                conductor_index, load_scenario, model_from_dict, model_to_dict,
                                solve_currents, source_power)

JOINT = InjectionMode.joint()
IND1 = InjectionMode.independent(1)
IND2 = InjectionMode.independent(2)

SINGLE_BREAKS = [BreakageSpec(t, r, q) for t in (1, 2) for r in ("e", "i") for q in (1, 2, 3)]


def oracle_args(model):
    segs = [dict(length=s.length_km, r=s.r_per_km, l=s.l_per_km, mi=s.m_intra_per_km,
                 mx=s.m_inter_per_km, g_rr=s.g_rail_rail_per_km, c_rr=s.c_rail_rail_per_km,
                 g_rg=s.g_rail_gnd_per_km, c_rg=s.c_rail_gnd_per_km) for s in model.segments]
    brk = {(b.conductor, b.position_quarter) for b in model.breakages}
    return segs, model.omega, brk


def emfs_for(model, mode):
    h = model.source_voltage / 2
    if mode.kind == "joint":
        return np.array([h, h, -h, -h], dtype=complex)
    e = np.zeros(4, dtype=complex)
    e[conductor_index(mode.track, "e")] = h
    e[conductor_index(mode.track, "i")] = -h
    return e


def random_model(rng, n_breaks=None):
    def seg(length):
        return SegmentParams(
            length_km=length,
            r_per_km=rng.uniform(0.1, 2.0),
            l_per_km=rng.uniform(0.8e-3, 2e-3),
            m_intra_per_km=rng.uniform(0.1e-3, 0.5e-3),
            m_inter_per_km=rng.uniform(0.0, 0.1e-3),
            c_rail_rail_per_km=rng.uniform(0, 0.1e-6),
            g_rail_rail_per_km=rng.uniform(1e-5, 0.1),
            c_rail_gnd_per_km=rng.uniform(0, 0.1e-6),
            g_rail_gnd_per_km=rng.uniform(1e-5, 0.1),
        )
    cuts = np.sort(rng.uniform(0.5, 1.5, 4))
    lengths = cuts / cuts.sum() * 8.0
    lengths[-1] = 8.0 - lengths[:-1].sum()
    if n_breaks is None:
        n_breaks = int(rng.integers(0, 3))
    rails = rng.permutation(4)[:n_breaks]
    brk = [BreakageSpec(int((c // 2) + 1), "ei"[int(c in (1, 2))], int(rng.integers(1, 4)))
           for c in rails]
    return SectionModel(
        segments=tuple(seg(L) for L in lengths),
        breakages=frozenset(brk),
        frequency_hz=float(rng.uniform(200, 2000)),
        source_voltage=float(rng.uniform(0.5, 5)),
        source_impedance=complex(rng.uniform(0.5, 20), rng.uniform(-2, 2)),
        receiver_termination=complex(rng.uniform(0.5, 20), rng.uniform(-2, 2)),
    )


def loop_model(breakages=()):
    seg = SegmentParams(r_per_km=0.7, l_per_km=1.2e-3, m_intra_per_km=0.4e-3, m_inter_per_km=0.05e-3,
                        c_rail_rail_per_km=0, g_rail_rail_per_km=0,
                        c_rail_gnd_per_km=0, g_rail_gnd_per_km=0)
    return SectionModel(segments=(seg,) * 4, breakages=frozenset(breakages),
                        source_voltage=2.0, source_impedance=0.0, receiver_termination=0.0)


class TestHandDerivedLoop:
    """Lossless-shunt cell driven on one track is a single series loop."""

    def test_healthy_loop_current(self):
        m = loop_model()
        s = m.segments[0]
        z_loop = 2 * 8.0 * (s.r_per_km + 1j * m.omega * (s.l_per_km - s.m_intra_per_km))
        expected = m.source_voltage / abs(z_loop)
        cur = solve_currents(m, IND1)
        for c in (0, 1):
            assert abs(cur.emitter[c]) == pytest.approx(expected, rel=1e-9)
            assert abs(cur.receiver[c]) == pytest.approx(expected, rel=1e-9)
        # the loop current is out on 1e and back on 1i
        assert cur.emitter[0] == pytest.approx(-cur.emitter[1], rel=1e-9)
        # equal and opposite track-1 currents induce nothing in track 2
        assert np.all(np.abs(cur.emitter[2:]) < 1e-12 * expected)

    @pytest.mark.parametrize("rail", ["e", "i"])
    @pytest.mark.parametrize("quarter", [1, 2, 3])
    def test_broken_loop_carries_no_current(self, rail, quarter):
        m = loop_model([BreakageSpec(1, rail, quarter)])
        cur = solve_currents(m, IND1)
        assert np.max(np.abs(cur.emitter)) < 1e-12
        assert np.max(np.abs(cur.receiver)) < 1e-12


class TestOracleAgreement:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_nodal_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = random_model(rng)
        segs, omega, brk = oracle_args(m)
        for mode in (JOINT, IND1, IND2):
            cur = solve_currents(m, mode)
            e, r = nodal_lead_currents(segs, omega, brk, emfs_for(m, mode),
                                       m.source_impedance, m.receiver_termination,
                                       mode.kind == "joint")
            np.testing.assert_allclose(cur.emitter, e, rtol=1e-9, atol=1e-12 * np.abs(e).max())
            np.testing.assert_allclose(cur.receiver, r, rtol=1e-9, atol=1e-12 * np.abs(e).max())

    def test_default_cell_matches_oracle(self):
        m = apply_soil(SectionModel(), WET).with_breakages([BreakageSpec(2, "i", 3)])
        segs, omega, brk = oracle_args(m)
        cur = solve_currents(m, JOINT)
        e, r = nodal_lead_currents(segs, omega, brk, emfs_for(m, JOINT), 10.0, 10.0, True)
        np.testing.assert_allclose(cur.receiver, r, rtol=1e-9)


class TestInvariants:
    @pytest.mark.parametrize("seed", range(10))
    def test_superposition(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = random_model(rng)
        total = solve_currents(m, JOINT)
        emf = emfs_for(m, JOINT)
        parts = [solve_currents(m, JOINT, emitter_emf=np.where(np.arange(4) == k, emf, 0))
                 for k in range(4)]
        acc = parts[0]
        for p in parts[1:]:
            acc = acc + p
        scale = np.abs(total.emitter).max()
        np.testing.assert_allclose(acc.emitter, total.emitter, rtol=1e-9, atol=1e-12 * scale)
        np.testing.assert_allclose(acc.receiver, total.receiver, rtol=1e-9, atol=1e-12 * scale)

    @pytest.mark.parametrize("seed", range(10))
    def test_reciprocity(self, seed):
        rng = np.random.default_rng(200 + seed)
        m = random_model(rng)
        sysm = build_admittance(m, JOINT)
        A = sysm.matrix
        assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
        # unit EMF at lead a gives the same current in lead b as the converse
        unit = np.eye(4, dtype=complex)
        transfer = np.array([solve_currents(m, JOINT, emitter_emf=unit[a]).emitter for a in range(4)])
        np.testing.assert_allclose(transfer, transfer.T, rtol=1e-9, atol=1e-14)

    @pytest.mark.parametrize("brk", SINGLE_BREAKS, ids=lambda b: b.label)
    def test_mirror_symmetry(self, brk):
        m = SectionModel().with_breakages([brk])
        mm = m.mirrored()
        rev = [3, 2, 1, 0]
        a, b = solve_currents(m, IND1), solve_currents(mm, IND2)
        tol = 1e-12 * np.abs(a.emitter).max()
        np.testing.assert_allclose(a.emitter, b.emitter[rev], rtol=1e-9, atol=tol)
        np.testing.assert_allclose(a.receiver, b.receiver[rev], rtol=1e-9, atol=tol)
        a, b = solve_currents(m, JOINT), solve_currents(mm, JOINT)
        np.testing.assert_allclose(np.abs(a.receiver), np.abs(b.receiver[rev]), rtol=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_passive_network_absorbs_power(self, seed):
        m = random_model(np.random.default_rng(300 + seed))
        for mode in (JOINT, IND1, IND2):
            assert source_power(m, mode).real > 0

    @pytest.mark.parametrize("brk", SINGLE_BREAKS, ids=lambda b: b.label)
    def test_broken_rail_loses_receiver_current(self, brk):
        healthy = solve_currents(SectionModel(), JOINT)
        broken = solve_currents(SectionModel().with_breakages([brk]), JOINT)
        c = brk.conductor
        assert abs(broken.receiver[c]) < abs(healthy.receiver[c])

    def test_break_near_receiver_keeps_most_receiver_current_on_leak_path(self):
        # the closer the break to the receiver, the less leakage can bypass it
        base = SectionModel()
        vals = [abs(solve_currents(base.with_breakages([BreakageSpec(1, "e", q)]), JOINT).receiver[0])
                for q in (1, 2, 3)]
        assert vals[2] == min(vals)

    @given(st.floats(0.1, 20.0))
    @settings(max_examples=15)
    def test_currents_scale_with_source_voltage(self, v):
        m1 = SectionModel(source_voltage=1.0)
        mv = SectionModel(source_voltage=v)
        np.testing.assert_allclose(solve_currents(mv, JOINT).receiver,
                                   v * solve_currents(m1, JOINT).receiver, rtol=1e-9)

    def test_open_receiver_reports_zero(self):
        cur = solve_currents(SectionModel(receiver_termination=math.inf), JOINT)
        assert np.all(cur.receiver == 0)
        assert np.all(np.abs(cur.emitter) > 0)


class TestTopologyChecks:
    def test_floating_rail_fragment_is_reported(self):
        seg = SegmentParams(c_rail_rail_per_km=0, g_rail_rail_per_km=0,
                            c_rail_gnd_per_km=0, g_rail_gnd_per_km=0)
        m = SectionModel(segments=(seg,) * 4, receiver_termination=math.inf,
                         breakages=frozenset({BreakageSpec(1, "e", 2)}))
        with pytest.raises(FloatingSubnetworkError) as exc:
            solve_currents(m, JOINT)
        assert "floating" in str(exc.value)

    def test_split_node_appears_in_system(self):
        m = SectionModel().with_breakages([BreakageSpec(2, "i", 1)])
        idx = build_admittance(m).node_index
        c = conductor_index(2, "i")
        assert (1, c, "L") in idx and (1, c, "R") in idx and (1, c, "") not in idx

    def test_finer_subdivision_converges(self):
        coarse = solve_currents(SectionModel(sections=1), JOINT).receiver
        fine = solve_currents(SectionModel(sections=8), JOINT).receiver
        finer = solve_currents(SectionModel(sections=16), JOINT).receiver
        assert np.abs(finer - fine).max() < np.abs(fine - coarse).max()


class TestValidation:
    def test_segment_rejects_negative_values(self):
        with pytest.raises(ValueError, match="r_per_km"):
            SegmentParams(r_per_km=-1)
        with pytest.raises(ValueError):
            SegmentParams(length_km=0)
        with pytest.raises(ValueError, match="positive definite"):
            SegmentParams(l_per_km=1e-3, m_intra_per_km=2e-3)

    def test_section_length_enforced(self):
        with pytest.raises(ValueError, match="total"):
            SectionModel(segments=(SegmentParams(length_km=1.0),) * 4)
        with pytest.raises(ValueError):
            SectionModel(segments=(SegmentParams(),) * 3)

    def test_breakage_fields(self):
        for bad in ((3, "e", 1), (1, "x", 1), (1, "e", 4)):
            with pytest.raises(ValueError):
                BreakageSpec(*bad)
        with pytest.raises(ValueError, match="more than one"):
            SectionModel(breakages=frozenset({BreakageSpec(1, "e", 1), BreakageSpec(1, "e", 2)}))

    @pytest.mark.parametrize("brk", SINGLE_BREAKS, ids=lambda b: b.label)
    def test_label_round_trip(self, brk):
        assert BreakageSpec.from_label(brk.label) == brk
        assert BreakageSpec.from_label(brk.label.replace("/", " /")) == brk

    def test_conductor_order(self):
        assert CONDUCTORS == ("1e", "1i", "2i", "2e")
        assert [conductor_index(t, r) for t, r in ((1, "e"), (1, "i"), (2, "i"), (2, "e"))] == [0, 1, 2, 3]


class TestSoilAndScenarios:
    def test_soil_scales_conductance_only(self):
        m = SectionModel()
        w = apply_soil(m, WET)
        for a, b in zip(m.segments, w.segments):
            assert b.g_rail_gnd_per_km == pytest.approx(10 * a.g_rail_gnd_per_km)
            assert b.g_rail_rail_per_km == pytest.approx(10 * a.g_rail_rail_per_km)
            assert b.c_rail_gnd_per_km == a.c_rail_gnd_per_km
        assert apply_soil(m, DRY) == m

    def test_wet_ballast_leaks_more(self):
        dry = solve_currents(apply_soil(SectionModel(), DRY), JOINT)
        wet = solve_currents(apply_soil(SectionModel(), WET), JOINT)
        ratio = lambda c: np.sum(np.abs(c.receiver) ** 2) / np.sum(np.abs(c.emitter) ** 2)
        assert ratio(wet) < ratio(dry)

    def test_dict_round_trip(self, tmp_path):
        m = random_model(np.random.default_rng(7), n_breaks=2)
        d = model_to_dict(m)
        assert model_from_dict(d) == m
        p = tmp_path / "s.json"
        p.write_text(json.dumps(d))
        assert load_scenario(p) == m

    def test_scenario_keys(self):
        m = model_from_dict({"soil": "wet", "receiver_termination": "open",
                             "breakages": [{"track": 1, "rail": "e", "quarter": 3}]})
        assert math.isinf(m.receiver_termination)
        assert m.breakages == frozenset({BreakageSpec(1, "e", 3)})
        assert m.segments[0].g_rail_gnd_per_km == pytest.approx(10 * SegmentParams().g_rail_gnd_per_km)
