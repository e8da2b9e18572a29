"""Step control, content hashing and on-disk run records."""

import json
import shutil
import subprocess

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inertia_lab.errors import InvalidParameters
from inertia_lab.field import read_field
from inertia_lab.model import EnergyBudget
from inertia_lab.records import RunRecord, canonical_json, content_hash
from inertia_lab.stepping import StepControl, clip_to_target


class TestStepControl:
    def test_targets_end_with_t_end(self):
        c = StepControl(t_end=1.0, checkpoint_times=(0.25, 0.5, 1.0))
        assert c.targets() == [0.25, 0.5, 1.0]

    @pytest.mark.parametrize("kw", [{"cfl": 0.0}, {"cfl": 1.5}, {"dt_max": 0.0}, {"t_end": -1.0},
                                    {"checkpoint_times": (0.5, 0.25)}, {"checkpoint_times": (2.0,)},
                                    {"checkpoint_times": (0.0,)}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(InvalidParameters):
            StepControl(**kw)

    @settings(max_examples=100, deadline=None)
    @given(t=st.floats(0, 1), dt=st.floats(1e-6, 0.5), gap=st.floats(1e-9, 1.0))
    def test_clip_never_overshoots(self, t, dt, gap):
        target = t + gap
        step, landed = clip_to_target(t, dt, target)
        assert 0 < step <= dt * (1 + 1e-9) + 1e-15
        if landed:
            assert step == target - t
        else:
            assert t + step < target


class TestContentHash:
    def test_matches_git_blob_hash(self):
        git = shutil.which("git")
        if git is None:
            pytest.skip("git not available")
        obj = {"b": [1, 2.5], "a": {"z": None, "y": "text"}}
        out = subprocess.run([git, "hash-object", "--stdin"], input=canonical_json(obj).encode(),
                             capture_output=True, check=True)
        assert content_hash(obj) == out.stdout.decode().strip()

    def test_key_order_independent(self):
        assert content_hash({"a": 1, "b": 2}) == content_hash({"b": 2, "a": 1})
        assert content_hash({"a": 1}) != content_hash({"a": 2})

    def test_numpy_scalars(self):
        assert content_hash({"x": np.float64(0.5)}) == content_hash({"x": 0.5})


class TestRunRecord:
    def make(self):
        budgets = [EnergyBudget(t, 0.0, 1.0, 0.0) for t in (0.0, 0.5)]
        rho = np.ones((8, 8))
        return RunRecord("limit", 2, 8, {"nu": 1.0}, StepControl().to_dict(), budgets,
                         [0.0, 1e-9], {0.5: {"rho": rho}}, {"steps": 3})

    def test_lookup(self):
        rec = self.make()
        assert rec.times == [0.0, 0.5]
        assert rec.budget_at(0.5).time == 0.5
        with pytest.raises(KeyError):
            rec.budget_at(0.3)
        assert rec.max_abs_residual() == 1e-9

    def test_save_layout(self, tmp_path):
        rec = self.make()
        rec.save(tmp_path)
        rows = (tmp_path / "budgets.csv").read_text().splitlines()
        assert rows[0].endswith(",q") and len(rows) == 3
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["kind"] == "limit" and manifest["stored_times"] == [0.5]
        f = read_field(tmp_path / "fields" / "rho_t0.500000.tfld")
        np.testing.assert_array_equal(f.values, np.ones((8, 8)))
        assert not [p for p in tmp_path.rglob("*") if p.name.endswith(".tmp")]
