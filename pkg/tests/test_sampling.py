import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmdpinn.network import ConfigError
from lmdpinn.physics import Face, ProcessSetup
from lmdpinn.sampling import (
    LabeledSamples,
    SamplingPlan,
    make_batch,
    resampled,
    sample_boundary,
    sample_initial,
    sample_interior,
    sample_refined,
    write_points_csv,
)

S = ProcessSetup()


def inside(p, setup, tol=0.0):
    hi = np.array(list(setup.domain) + [setup.scan_duration])
    return np.all((p >= -tol) & (p <= hi + tol))


def test_top_quarter_fraction_with_default_bias():
    p = sample_interior(SamplingPlan(n_interior=10_000), S)
    frac = np.mean(p[:, 2] > 0.75 * S.domain[2])
    assert 0.55 <= frac <= 0.75
    assert frac >= 0.60


def test_depth_density_monotone_toward_top():
    n = 20_000
    p = sample_interior(SamplingPlan(n_interior=n, seed=3), S)
    counts, _ = np.histogram(p[:, 2], bins=10, range=(0, S.domain[2]))
    for lo, hi in zip(counts[:-1], counts[1:]):
        # one expected-count standard deviation of slack
        assert hi >= lo - np.sqrt(max(lo, 1))


def test_refined_points_follow_beam():
    plan = SamplingPlan(n_refined=2000)
    p = sample_refined(plan, S)
    xc, yc = S.beam_center(p[:, 3])
    hw = plan.refined_box_halfwidth
    unclamped = (xc - hw > 0) & (xc + hw < S.domain[0])
    assert np.all(np.abs(p[unclamped, 0] - xc[unclamped]) <= hw)
    assert np.all(np.abs(p[:, 1] - yc) <= hw)
    assert inside(p, S)


def test_refined_box_static_without_motion():
    still = ProcessSetup(v=0.0)
    p = sample_refined(SamplingPlan(n_refined=500), still)
    assert np.all(np.abs(p[:, 0] - still.scan_start[0]) <= 1e-3)


def test_beam_position_example():
    xc, _ = S.beam_center(0.5)
    assert float(xc) == pytest.approx(9e-3)


def test_faces_and_initial_slab_exact():
    plan = SamplingPlan(n_boundary_per_face=300, n_initial=400)
    faces = sample_boundary(plan, S)
    assert set(faces) == set(Face)
    for face, pts in faces.items():
        assert len(pts) == 300
        assert np.all(pts[:, face.axis] == face.coordinate(S))
    assert np.all(faces[Face.TOP][:, 2] == S.domain[2])
    init = sample_initial(plan, S)
    assert len(init) == 400 and np.all(init[:, 3] == 0.0)


def test_top_refinement_adds_only_to_top():
    faces = sample_boundary(SamplingPlan(n_boundary_per_face=50, n_top_refined=70), S)
    assert len(faces[Face.TOP]) == 120
    assert all(len(p) == 50 for f, p in faces.items() if f is not Face.TOP)
    assert np.all(faces[Face.TOP][:, 2] == S.domain[2])


plans = st.builds(
    SamplingPlan,
    n_interior=st.integers(0, 300),
    n_boundary_per_face=st.integers(0, 50),
    n_initial=st.integers(0, 100),
    n_refined=st.integers(0, 200),
    depth_bias=st.floats(0.2, 8.0),
    refined_box_halfwidth=st.floats(0.0, 5e-3),
    seed=st.integers(0, 2**31),
)
setups = st.builds(
    ProcessSetup,
    domain=st.tuples(st.floats(1e-3, 0.05), st.floats(1e-3, 0.05), st.floats(1e-3, 0.02)),
    scan_duration=st.floats(0.05, 2.0),
    v=st.floats(0.0, 0.05),
)


@settings(max_examples=40, deadline=None)
@given(plan=plans, setup=setups)
def test_containment_and_determinism(plan, setup):
    a, b = make_batch(plan, setup), make_batch(plan, setup)
    for (tag, p), (_, q) in zip(a.tagged(), b.tagged()):
        assert np.array_equal(p, q), tag
        assert inside(p, setup), tag
    assert np.all(a.initial[:, 3] == 0)
    for face, p in a.boundary.items():
        assert np.all(p[:, face.axis] == face.coordinate(setup))
        assert len(p) == plan.n_boundary_per_face


def test_invalid_plans_rejected():
    with pytest.raises(ConfigError):
        make_batch(SamplingPlan(n_interior=-1), S)
    with pytest.raises(ConfigError):
        make_batch(SamplingPlan(depth_bias=0.0), S)


def test_resampling_changes_seed_per_period():
    plan = SamplingPlan(resample_every=100, seed=4)
    assert resampled(plan, 50) == resampled(plan, 99)
    assert resampled(plan, 100) != resampled(plan, 99)
    fixed = SamplingPlan()
    assert resampled(fixed, 12345) is fixed


def test_labeled_window_and_select():
    pts = np.column_stack([np.zeros((5, 3)), np.linspace(0, 1, 5)])
    lab = LabeledSamples(pts, {"T": np.arange(5.0), "u": np.ones(5)})
    w = lab.window(0.0, 0.5)
    assert len(w) == 3 and list(w.fields["T"]) == [0.0, 1.0, 2.0]
    assert list(lab.select(["u", "nope"]).fields) == ["u"]


def test_csv_export(tmp_path):
    batch = make_batch(SamplingPlan(n_interior=5, n_refined=3, n_boundary_per_face=2, n_initial=4), S)
    path = tmp_path / "pts.csv"
    write_points_csv(batch, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x", "y", "z", "t", "tag"]
    assert len(rows) == 1 + 5 + 3 + 12 + 4
    tags = {r[4] for r in rows[1:]}
    assert tags == {"interior", "refined", "initial"} | {f.label for f in Face}
    top = [r for r in rows[1:] if r[4] == "top"]
    assert all(float(r[2]) == S.domain[2] for r in top)
