"""Epsilon sweeps, the well-preparedness gate and rate fitting."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import inertia_lab.harness as harness
from inertia_lab.errors import BlowUp, IllPreparedData, InvalidParameters, NonPositiveValue
from inertia_lab.harness import (InitialData, SweepConfig, check_well_prepared, convergence_rate,
                                 epsilon_sweep, kinetic_decay_certificate)
from inertia_lab.model import FluidParams
from inertia_lab.stepping import StepControl

PARAMS = FluidParams(0.1, 0.5, 0.0, 2.0)


def small_config(epsilons=(0.2, 0.1, 0.05), mode="zero_velocity", **kw):
    control = StepControl(t_end=0.04, checkpoint_times=(0.02,))
    return SweepConfig(epsilons, 2, 16, PARAMS, control, well_prepared_mode=mode, **kw)


class TestConvergenceRate:
    @pytest.mark.parametrize("power", [0.0, 1.0, 2.0, -0.5])
    def test_exact_power_laws(self, power):
        eps = [1e-1, 10**-1.5, 1e-2, 10**-2.5, 1e-3]
        slope, err = convergence_rate([(e, 3.7 * e**power) for e in eps])
        assert slope == pytest.approx(power, abs=1e-10)
        assert err < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(power=st.floats(-3, 3), c=st.floats(1e-3, 1e3),
           eps=st.lists(st.floats(1e-4, 1.0), min_size=3, max_size=6, unique=True))
    def test_recovers_exponent(self, power, c, eps):
        if max(eps) / min(eps) < 1.5:
            return
        slope, _ = convergence_rate([(e, c * e**power) for e in eps])
        assert slope == pytest.approx(power, abs=1e-8)

    def test_needs_three_points(self):
        with pytest.raises(InvalidParameters):
            convergence_rate([(0.1, 1.0), (0.01, 0.1)])

    def test_rejects_non_positive(self):
        with pytest.raises(NonPositiveValue):
            convergence_rate([(0.1, 1.0), (0.01, 0.0), (0.001, 0.1)])


class TestInitialData:
    def test_profiles(self, grid16):
        assert np.all(InitialData("constant", a=2.0).density(grid16) == 2.0)
        x, y = grid16.coordinates()
        np.testing.assert_allclose(InitialData("cosine_bump", 1.0, 0.3).density(grid16),
                                   1 + 0.3 * np.cos(x) * np.cos(y))
        blob = InitialData("gaussian_blob", 0.5, 1.0, 0.4).density(grid16)
        assert blob.max() == pytest.approx(1.5, abs=1e-6)
        # periodization makes the blob symmetric about its centre
        np.testing.assert_allclose(blob, np.roll(blob[::-1, ::-1], (1, 1), (0, 1)), atol=1e-14)

    def test_unknown_profile(self):
        with pytest.raises(InvalidParameters):
            InitialData("square")


class TestSweepConfig:
    def test_requires_strictly_decreasing(self):
        with pytest.raises(InvalidParameters):
            small_config((0.1, 0.2))
        with pytest.raises(InvalidParameters):
            small_config((0.1, 0.1))

    def test_requires_positive(self):
        with pytest.raises(InvalidParameters):
            small_config((0.1, 0.0))

    def test_unknown_mode(self):
        with pytest.raises(InvalidParameters):
            small_config(mode="sideways")


class TestWellPreparedGate:
    def test_zero_velocity(self):
        gate = check_well_prepared(small_config())
        assert gate.passed and gate.values == [0.0, 0.0, 0.0]

    def test_slaved_velocity_linear_in_epsilon(self):
        cfg = small_config((1.0, 0.1, 0.01), mode="slaved_velocity")
        gate = check_well_prepared(cfg)
        assert gate.passed
        assert gate.values[1] / gate.values[0] == pytest.approx(0.1, rel=1e-12)
        assert gate.values[2] / gate.values[0] == pytest.approx(0.01, rel=1e-12)

    def test_ill_prepared_fails(self):
        cfg = small_config(mode="ill_prepared")
        gate = check_well_prepared(cfg)
        assert not gate.passed
        assert max(gate.values) == pytest.approx(min(gate.values), rel=1e-12)
        with pytest.raises(IllPreparedData):
            check_well_prepared(cfg, raise_on_fail=True)
        with pytest.raises(IllPreparedData):
            epsilon_sweep(cfg)

    def test_certified_density_floor(self):
        cfg = small_config(initial=InitialData("cosine_bump", 0.5, 0.4))
        with pytest.raises(InvalidParameters):
            epsilon_sweep(cfg)


class TestEpsilonSweep:
    def test_single_epsilon_has_metrics_but_no_fits(self):
        rec = epsilon_sweep(small_config((0.1,)))
        assert rec.fits == []
        e = rec.entries[0]
        assert e.times == [0.02, 0.04]
        assert len(e.kinetic) == len(e.l1_gap) == len(e.energy_residual) == 2
        assert e.failure is None

    def test_fits_and_determinism(self):
        cfg = small_config()
        a, b = epsilon_sweep(cfg), epsilon_sweep(cfg)
        assert a.to_dict() == b.to_dict()
        assert {(f["metric"], f["t"]) for f in a.fits} == {(m, t) for m in ("kinetic", "l1_gap") for t in (0.02, 0.04)}

    def test_entries_independent_of_the_rest_of_the_list(self):
        full = epsilon_sweep(small_config((0.2, 0.1, 0.05)))
        alone = epsilon_sweep(small_config((0.1,)))
        assert full.entry(0.1).kinetic == alone.entry(0.1).kinetic
        assert full.entry(0.1).l1_gap == alone.entry(0.1).l1_gap

    def test_process_pool_matches_serial(self):
        cfg = small_config((0.2, 0.1))
        assert epsilon_sweep(cfg, workers=2).to_dict() == epsilon_sweep(cfg, workers=1).to_dict()

    def test_limit_reference_computed_once(self, monkeypatch):
        calls = []
        original = harness._limit_reference

        def counting(cfg):
            calls.append(cfg)
            return original(cfg)

        monkeypatch.setattr(harness, "_limit_reference", counting)
        epsilon_sweep(small_config())
        assert len(calls) == 1

    def test_refined_reference_is_sampled_on_the_sweep_grid(self):
        rec = epsilon_sweep(small_config((0.1,), limit_refine=2))
        coarse = epsilon_sweep(small_config((0.1,)))
        # same scaled run, slightly different reference
        assert rec.entries[0].kinetic == coarse.entries[0].kinetic
        assert rec.entries[0].l1_gap != coarse.entries[0].l1_gap
        assert rec.limit_diagnostics["steps"] >= 1

    def test_failed_run_is_marked(self, monkeypatch):
        original = harness.ScaledSolver.run

        def flaky(self, init, control, store_fields=True):
            if self.params.epsilon < 0.08:
                raise BlowUp("synthetic failure")
            return original(self, init, control, store_fields)

        monkeypatch.setattr(harness.ScaledSolver, "run", flaky)
        rec = epsilon_sweep(small_config(), workers=1)
        assert rec.entry(0.05).failure.startswith("BlowUp")
        assert rec.entry(0.1).failure is None
        assert not kinetic_decay_certificate(rec, 0.04).passed

    def test_equilibrium_certificate(self):
        rec = epsilon_sweep(small_config(initial=InitialData("constant", 1.0)))
        cert = kinetic_decay_certificate(rec, 0.04)
        assert cert.passed and cert.values["kinetic"] == [0.0, 0.0, 0.0]
        assert cert.line().startswith("PASS")

    def test_save_layout(self, tmp_path):
        rec = epsilon_sweep(small_config())
        rec.save(tmp_path, plots=True)
        data = json.loads((tmp_path / "sweep.json").read_text())
        assert len(data["entries"]) == 3 and "inputs_hash" in data
        header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
        assert header == "epsilon,t,kinetic_scaled,l1_gap,energy_residual"
        assert (tmp_path / "fits.csv").read_text().startswith("metric,t,slope,stderr,points")
        assert (tmp_path / "kinetic_vs_epsilon.svg").read_text().lstrip().startswith("<?xml")
        assert not list(tmp_path.glob(".*tmp"))

    def test_integrability_table_for_constant_density(self):
        rec = epsilon_sweep(small_config(initial=InitialData("constant", 1.0)))
        for row in rec.integrability:
            assert row["value"] == pytest.approx(0.04 * (2 * math.pi) ** 2, rel=1e-13)
