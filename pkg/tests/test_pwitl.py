import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from levylap.point_processes import AlphaStable, NotSummableError, PointMass, ScaledGaussian
from levylap.pwitl import (
    HerglotzError,
    TruncationParams,
    default_params,
    ensemble_batch,
    loop_identity_residuals,
    node_resolvents,
    sample_root_resolvent_ensemble,
    sample_tree,
    solve_complex,
    tree_from_children,
    tree_resolvent_direct,
    tree_resolvent_recursive,
)
from levylap.streams import RandomStream

import oracles


def test_params_validation_and_node_bound():
    with pytest.raises(ValueError):
        TruncationParams(-1, 2)
    with pytest.raises(ValueError):
        TruncationParams(2, 0)
    assert TruncationParams(3, 2).max_nodes() == 15
    assert TruncationParams(4, 1).max_nodes() == 5
    with pytest.raises(ValueError):
        TruncationParams(2, 8, 0.0).check_for(AlphaStable(0.5))
    with pytest.raises(NotSummableError):
        TruncationParams(2, 8, 1e-2).check_for(AlphaStable(1.5))


def test_default_params():
    assert default_params(PointMass(2.0)) == TruncationParams(8, 64, 0.0)
    assert default_params(AlphaStable(0.5)) == TruncationParams(8, 256, 1e-3)


def test_empty_process_gives_single_root():
    tree = sample_tree(PointMass(0.0), TruncationParams(5, 4), RandomStream(1))
    assert len(tree) == 1
    assert tree.loop_weight[0] == 0.0


def test_root_loop_is_minus_sum_of_children():
    tree = tree_from_children({(): [1.0, 1.0]})
    assert tree.loop_weight[0] == -2.0


def test_inner_loop_is_minus_parent_minus_children():
    tree = tree_from_children({(): [1.0], (1,): [1.0]})
    v = 1
    assert tree.word(v) == (1,)
    assert tree.loop_weight[v] == -2.0


@pytest.mark.parametrize("m", [PointMass(2.0), ScaledGaussian(2.0), AlphaStable(0.5, 0.3)])
def test_sampled_tree_structure(m):
    params = TruncationParams(3, 16, 1e-2 if isinstance(m, AlphaStable) else 0.0)
    tree = sample_tree(m, params, RandomStream(2))
    assert len(tree) <= params.max_nodes()
    scale = 1 + np.abs(tree.loop_weight)
    assert np.all(np.abs(loop_identity_residuals(tree)) <= 1e-12 * scale)
    for v in range(len(tree)):
        kids = tree.children(v)
        w = np.abs(tree.edge_weight[kids])
        assert np.all(w[:-1] >= w[1:])
        assert len(kids) <= params.branching
        assert np.array_equal(tree.rank[kids], np.arange(1, len(kids) + 1))
    assert tree.depth.max() <= params.depth
    assert np.all(np.abs(tree.edge_weight[1:]) >= params.delta)


def test_single_node_resolvents():
    tree = tree_from_children({})
    assert tree_resolvent_recursive(tree, 1j).value == pytest.approx(1j)
    assert tree_resolvent_direct(tree, 1j).value == pytest.approx(1j)


def test_two_node_tree_resolvent():
    tree = tree_from_children({(): [1.0]})
    want = oracles.two_node_resolvent(1.0, 1j)
    assert want == pytest.approx(-0.2 + 0.6j)
    assert tree_resolvent_recursive(tree, 1j).value == pytest.approx(want, abs=1e-15)
    assert tree_resolvent_direct(tree, 1j).value == pytest.approx(want, abs=1e-15)
    assert tree_resolvent_direct(tree, 1j).method == "direct"


def test_point_mass_tree_methods_agree_at_depth_three():
    tree = sample_tree(PointMass(2.0), TruncationParams(3, 64), RandomStream(3))
    r = tree_resolvent_recursive(tree, 0.5j).value
    d = tree_resolvent_direct(tree, 0.5j).value
    assert abs(r - d) <= 1e-10


def test_sparse_direct_path_matches_dense_path():
    tree = sample_tree(AlphaStable(0.5), TruncationParams(2, 64, 1e-2), RandomStream(4))
    assert len(tree) > 64
    dense = tree_resolvent_direct(tree, 1 + 0.5j, dense_limit=10_000).value
    sparse = tree_resolvent_direct(tree, 1 + 0.5j, dense_limit=1).value
    assert abs(dense - sparse) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(-4, 4), st.floats(0.25, 5))
def test_methods_agree_and_stay_herglotz(seed, re, im):
    z = complex(re, im)
    tree = sample_tree(ScaledGaussian(2.0), TruncationParams(3, 8), RandomStream(seed))
    values = node_resolvents(tree, z)[:, 0]
    assert np.all(values.imag > 0) and np.all(np.abs(values) <= 1 / im * (1 + 1e-12))
    assert abs(values[0] - tree_resolvent_direct(tree, z).value) <= 1e-10


def test_recursion_rejects_lower_half_plane():
    with pytest.raises(ValueError):
        tree_resolvent_recursive(tree_from_children({}), 1.0)


def test_solve_complex_matches_numpy():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    b = rng.normal(size=7) + 0j
    assert np.allclose(solve_complex(a, b), np.linalg.solve(a, b), atol=1e-12)
    with pytest.raises(ZeroDivisionError):
        solve_complex(np.zeros((2, 2)), np.ones(2))


def test_tree_text_export():
    text = tree_from_children({(): [2.0], (1,): [0.5]}).to_text().splitlines()
    assert text[0] == "word\tparent\tedge_weight\tloop_weight"
    assert text[1].startswith("root\t-\t0\t-2")
    assert text[2] == "1\troot\t2\t-2.5"
    assert text[3] == "1.1\t1\t0.5\t-0.5"


def test_ensemble_for_empty_measure_is_minus_inverse_z():
    values = sample_root_resolvent_ensemble(PointMass(0.0), TruncationParams(4, 8), 2j, 50, RandomStream(6))
    assert np.all(values == -1 / 2j)


def test_ensemble_standard_error_bound():
    z = 0.5j
    values = sample_root_resolvent_ensemble(PointMass(2.0), default_params(PointMass(2.0), 4), z, 100_000,
                                            RandomStream(7))
    stderr = values.std() / math.sqrt(len(values))
    assert stderr <= (1 / z.imag) / math.sqrt(len(values))


def test_ensemble_batch_is_schedule_independent():
    m, params, z = PointMass(2.0), TruncationParams(4, 64), np.array([0.5j, 1 + 1j])
    stream = RandomStream(8, 3)
    full = sample_root_resolvent_ensemble(m, params, z, 2500, stream, batch_size=1000)
    pieces = np.concatenate([ensemble_batch(m, params, z, b, 2500, 1000, stream) for b in (0, 1, 2)])
    assert np.array_equal(full, pieces)


def test_ensemble_matches_single_tree_recursion_in_law():
    m, params, z = PointMass(2.0), TruncationParams(3, 64), 0.5j
    batch = sample_root_resolvent_ensemble(m, params, z, 4000, RandomStream(9))
    gen = RandomStream(10).generator()
    single = np.array([tree_resolvent_recursive(sample_tree(m, params, gen), z).value for _ in range(4000)])
    se = math.hypot(batch.std(), single.std()) / math.sqrt(4000)
    assert abs(batch.mean() - single.mean()) <= 4 * se


def test_depth_stabilization():
    m, z = PointMass(2.0), 0.5j
    means, errs = [], []
    for depth in (8, 10):
        v = sample_root_resolvent_ensemble(m, default_params(m, depth), z, 100_000, RandomStream(11, depth))
        means.append(v.mean())
        errs.append(v.std() / math.sqrt(len(v)))
    assert abs(means[0] - means[1]) <= 2 * math.hypot(*errs)


def test_herglotz_error_is_raised_on_corrupted_values():
    from levylap.pwitl import _check_herglotz

    with pytest.raises(HerglotzError):
        _check_herglotz(np.array([[-1j]]), np.array([1j]))
