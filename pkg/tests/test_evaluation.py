"""Metric tests: generalization pooling, CED/AUC/FR analytics, 3DRMSE
with ICP alignment, specificity against the double-loop oracle, and the
PCA baseline."""

import numpy as np
import pytest

from facegan3d.evaluation import (ErrorDistribution, ced_auc_fr,
                                  generalization_errors, rmse3d_translation,
                                  specificity)
from facegan3d.pca import pca_fit, pca_project, pca_reconstruct, pca_sample
from facegan3d.synthetic import make_template, synth_dataset

from oracles import naive_specificity


@pytest.fixture(scope="module")
def heads():
    return synth_dataset(6, 4, seed=20, grid=17).subjects


# ---------------------------------------------------------------------------
# generalization


def test_identity_model_zero_errors(heads):
    errs = generalization_errors(lambda m: m, heads)
    assert errs.mean == 0.0
    assert errs.values.size == sum(m.num_vertices for m in heads)


def test_single_vertex_offset_single_entry(heads):
    d = 0.37

    def nudge(mesh):
        v = mesh.vertices.copy()
        v[5] += [d, 0, 0]
        return mesh.with_vertices(v)

    errs = generalization_errors(nudge, heads[:1])
    nonzero = errs.values[errs.values > 0]
    assert len(nonzero) == 1
    assert nonzero[0] == pytest.approx(d)


# ---------------------------------------------------------------------------
# ced / auc / fr


def test_ced_all_zero_errors():
    errs = ErrorDistribution(np.zeros(100))
    curve, auc, fr = ced_auc_fr(errs, x_max=0.01, fail_threshold=0.01)
    assert auc == pytest.approx(1.0, abs=1e-12)
    assert fr == 0.0
    assert curve[0, 1] == 1.0


def test_ced_all_beyond_x_max():
    errs = ErrorDistribution(np.full(50, 5.0))
    _, auc, fr = ced_auc_fr(errs, x_max=1.0, fail_threshold=1.0)
    assert auc == 0.0
    assert fr == 1.0


def test_ced_uniform_converges_to_half():
    rng = np.random.default_rng(21)
    errs = ErrorDistribution(rng.uniform(0, 0.01, 100_000))
    _, auc, fr = ced_auc_fr(errs, x_max=0.01, fail_threshold=0.01)
    assert abs(auc - 0.5) < 0.01
    assert fr == 0.0


def test_ced_curve_monotone_nondecreasing():
    rng = np.random.default_rng(22)
    errs = ErrorDistribution(rng.exponential(0.005, 1000))
    curve, auc, fr = ced_auc_fr(errs, x_max=0.01, fail_threshold=0.02)
    assert np.all(np.diff(curve[:, 1]) >= 0)
    assert 0.0 <= auc <= 1.0 and 0.0 <= fr <= 1.0


def test_ced_empty_errors():
    with pytest.raises(ValueError):
        ced_auc_fr(ErrorDistribution(np.empty(0)), 0.01, 0.01)


# ---------------------------------------------------------------------------
# 3drmse


def test_rmse3d_identical_is_zero():
    tpl = make_template(13)
    assert rmse3d_translation(tpl, tpl) == pytest.approx(0.0, abs=1e-12)


def test_rmse3d_rigid_motion_removed():
    tpl = make_template(13)
    rng = np.random.default_rng(23)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    ang = np.deg2rad(8)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)
    moved = tpl.with_vertices(tpl.vertices @ R.T + [0.05, -0.02, 0.01])
    assert rmse3d_translation(moved, tpl) < 1e-6


def test_rmse3d_crop_restricts_to_nose_region():
    tpl = make_template(13)
    far = tpl.vertices.copy()
    # perturb only the vertex farthest from the nose
    tip = tpl.vertices[tpl.landmarks["nose-tip"]]
    d = np.linalg.norm(tpl.vertices - tip, axis=1)
    far[np.argmax(d)] += 0.5
    pred = tpl.with_vertices(far)
    small_crop = rmse3d_translation(pred, tpl, crop_radius=float(np.median(d)),
                                    icp_max_iter=0)
    assert small_crop == pytest.approx(0.0, abs=1e-9)


def test_rmse3d_normalized_by_interocular():
    tpl = make_template(13)
    pred = tpl.with_vertices(tpl.vertices + tpl.vertex_normals() * 0.01)
    base = rmse3d_translation(pred, tpl, icp_max_iter=0)
    wide = tpl.copy()
    wide.landmarks = dict(tpl.landmarks)
    # synthetic landmark pair twice as far apart halves the metric
    v = wide.vertices.copy()
    le, re = wide.landmarks["left-eye-outer"], wide.landmarks["right-eye-outer"]
    mid = 0.5 * (v[le] + v[re])
    v[le] = mid + (v[le] - mid) * 2
    v[re] = mid + (v[re] - mid) * 2
    wide = wide.with_vertices(v)
    pred2 = wide.with_vertices(wide.vertices + wide.vertex_normals() * 0.01)
    assert rmse3d_translation(pred2, wide, icp_max_iter=0) == pytest.approx(
        base * 0.5, rel=0.2)


def test_rmse3d_degenerate_interocular_errors():
    tpl = make_template(13)
    tpl.landmarks["left-eye-outer"] = tpl.landmarks["right-eye-outer"]
    with pytest.raises(ValueError, match="inter-ocular"):
        rmse3d_translation(tpl, tpl)


# ---------------------------------------------------------------------------
# specificity


def test_specificity_replaying_test_meshes_is_zero(heads):
    mean, std, _ = specificity(lambda i: heads[i % len(heads)], heads, n_samples=4)
    assert mean == 0.0 and std == 0.0


def test_specificity_single_test_mesh_exact_distance(heads):
    target = heads[0]
    gen = heads[1]
    mean, _, _ = specificity(lambda i: gen, [target], n_samples=1)
    expect = float(np.linalg.norm(gen.vertices - target.vertices, axis=1).mean())
    assert mean == expect


def test_specificity_equals_double_loop_oracle(heads):
    gen = heads[:5]
    test = heads[1:6]
    mean, std, dists = specificity(lambda i: gen[i], test, n_samples=5)
    omean, ostd, odists = naive_specificity([g.vertices for g in gen],
                                            [t.vertices for t in test])
    assert mean == omean
    assert std == ostd
    np.testing.assert_array_equal(dists, odists)


def test_specificity_empty_test_set(heads):
    with pytest.raises(ValueError):
        specificity(lambda i: heads[0], [], n_samples=1)


# ---------------------------------------------------------------------------
# pca


def test_pca_planar_data_rank_two():
    rng = np.random.default_rng(24)
    tpl = make_template(9)
    base = tpl.vertices.reshape(-1)
    d1 = rng.standard_normal(base.size)
    d2 = rng.standard_normal(base.size)
    meshes = [tpl.with_vertices((base + rng.standard_normal() * d1
                                 + rng.standard_normal() * d2).reshape(-1, 3))
              for _ in range(12)]
    model = pca_fit(meshes, variance_target=0.98)
    assert model.num_components == 2
    rec = pca_reconstruct(model, meshes[3])
    assert np.abs(rec.vertices - meshes[3].vertices).max() < 1e-8


def test_pca_k_matches_prefix_sum_scan(heads):
    model_full = pca_fit(list(heads), variance_target=1.0)
    var = model_full.variances
    target = 0.9
    cum = 0.0
    k = 0
    for v in var:
        k += 1
        cum += v
        if cum >= target * var.sum():
            break
    assert pca_fit(list(heads), variance_target=target).num_components == k


def test_pca_orthonormal_and_sorted(heads):
    model = pca_fit(list(heads), variance_target=1.0)
    gram = model.components.T @ model.components
    np.testing.assert_allclose(gram, np.eye(model.num_components), atol=1e-8)
    assert np.all(np.diff(model.variances) <= 1e-12)


def test_pca_full_rank_reconstructs_training_data(heads):
    model = pca_fit(list(heads), variance_target=1.0)
    for m in heads:
        rec = pca_reconstruct(model, m)
        assert np.abs(rec.vertices - m.vertices).max() < 1e-8


def test_pca_mean_shape_projects_to_zero(heads):
    model = pca_fit(list(heads), variance_target=1.0)
    mean_mesh = heads[0].with_vertices(model.mean.reshape(-1, 3))
    np.testing.assert_allclose(pca_project(model, mean_mesh), 0.0, atol=1e-9)
    rec = pca_reconstruct(model, mean_mesh)
    np.testing.assert_allclose(rec.vertices, mean_mesh.vertices, atol=1e-12)


def test_pca_reconstruction_error_non_increasing_in_k(heads):
    errs = []
    for k in (1, 2, 3, 4):
        model = pca_fit(list(heads), n_components=k)
        errs.append(sum(np.abs(pca_reconstruct(model, m).vertices - m.vertices).max()
                        for m in heads))
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


def test_pca_sample_variances_match(heads):
    ds = synth_dataset(40, 3, seed=25, grid=9)
    model = pca_fit(ds.subjects, variance_target=1.0)
    rng = np.random.default_rng(26)
    samples = pca_sample(model, rng, ds.template, n=10_000)
    flats = np.stack([s.vertices.reshape(-1) for s in samples])
    coeffs = (flats - model.mean) @ model.components
    emp = coeffs.var(axis=0, ddof=1)
    keep = model.variances > 1e-12 * model.variances[0]
    rel = np.abs(emp[keep] - model.variances[keep]) / model.variances[keep]
    assert np.all(rel < 0.05)


def test_pca_needs_two(heads):
    with pytest.raises(ValueError):
        pca_fit(heads[:1])
