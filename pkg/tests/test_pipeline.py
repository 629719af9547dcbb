import numpy as np
import pytest

from voxflow.config import RunConfig
from voxflow.errors import InvalidConfig, LengthMismatch, MissingGroundTruth
from voxflow.geometry import PointCloud, load_manifest
from voxflow.pipeline import cloud_format, estimate, estimate_from_clouds, evaluate
from voxflow.synth import generate, scenario_library, write_sequence

FAST = RunConfig().with_overrides({"optim.max_epochs": 10, "optim.patience": 10})


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    spec = scenario_library()["single_mover"]
    path = write_sequence(generate(spec), tmp_path_factory.mktemp("seq"), spec.reference_index)
    return load_manifest(path)


def test_cloud_format():
    assert cloud_format("a.bin") == "xyz_f32" and cloud_format("a.PLY") == "ply_ascii"


def test_boundary_reference_drops_missing_supports(manifest, caplog):
    est = estimate(manifest, FAST, reference_index=0)
    assert est.support_offsets == [1, 2]
    assert "only 2 of 4" in caplog.text


def test_flow_covers_raw_reference(manifest):
    est = estimate(manifest, FAST)
    assert est.flow.shape == (len(est.reference), 3)
    assert est.kept.sum() < len(est.reference) or est.kept.all()


def test_filtered_points_still_get_flow():
    pts = np.array([[1.0, 0, 0]] + [[5.0 + 0.1 * i, 5, 1] for i in range(20)])
    ref = PointCloud(pts)
    est = estimate_from_clouds(ref, {1: ref, -1: ref}, FAST.with_overrides({"m": 1}))
    assert not est.kept[0] and est.kept[1:].all()
    assert est.flow.shape == (21, 3) and np.all(np.isfinite(est.flow))


def test_estimate_errors():
    ref = PointCloud([[0.5, 0, 0]])
    with pytest.raises(InvalidConfig):
        estimate_from_clouds(ref, {1: ref}, FAST)
    far = PointCloud([[10.0, 0, 0]])
    with pytest.raises(InvalidConfig):
        estimate_from_clouds(far, {5: far}, FAST)


def test_evaluate_contract(manifest):
    frames = generate(scenario_library()["single_mover"])
    ref = frames[2].cloud
    rep = evaluate(ref.gt_flow, ref)
    assert set(rep) >= {"overall", "static", "dynamic", "bucketed", "dynamic_labeling", "normalization"}
    with pytest.raises(MissingGroundTruth):
        evaluate(np.zeros((1, 3)), PointCloud([[0, 0, 0]]))
    with pytest.raises(LengthMismatch):
        evaluate(np.zeros((3, 3)), ref)
