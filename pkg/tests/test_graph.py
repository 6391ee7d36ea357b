"""Slice-graph completion tests: kNN, PPR, views, GAT, contrastive loss."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicefill import autodiff as ad
from slicefill import graph as sg
from slicefill.errors import ConfigError, ContractError, DegenerateInputError


def make_params(c=6, d=8, n_max=6, seed=0, dtype=np.float64, random_fusion=False):
    rng = np.random.default_rng(seed)
    p = sg.init_vsgc_params(c, d, d, d, n_max, rng, dtype=dtype)
    if random_fusion:
        p.fusion_w = ad.Tensor(
            (rng.standard_normal(p.fusion_w.shape) * 0.3).astype(dtype),
            requires_grad=True,
        )
        p.fusion_b = ad.Tensor(
            (rng.standard_normal(p.fusion_b.shape) * 0.1).astype(dtype),
            requires_grad=True,
        )
    return p


class TestTokensToNodes:
    def test_equal_tokens_give_adapter_of_v(self):
        rng = np.random.default_rng(0)
        p = make_params(c=4, d=5, n_max=3)
        v = rng.standard_normal(4)
        tokens = ad.Tensor(np.tile(v, (3 * 2 * 2, 1)))
        nodes = sg.tokens_to_nodes(tokens, (3, 2, 2), 3, p)
        expected = v @ p.adapter_in_w.data + p.adapter_in_b.data
        np.testing.assert_allclose(nodes.data, np.tile(expected, (3, 1)), atol=1e-10)

    def test_node_count_matches_non_pad_slices(self):
        p = make_params(c=4, d=5, n_max=12)
        tokens = ad.Tensor(np.random.default_rng(1).standard_normal((12 * 4, 4)))
        nodes = sg.tokens_to_nodes(tokens, (12, 2, 2), 12, p)
        assert nodes.shape == (12, 5)

    def test_in_plane_permutation_invariance(self):
        rng = np.random.default_rng(2)
        p = make_params(c=4, d=5, n_max=2)
        tok = rng.standard_normal((2 * 4, 4))
        nodes = sg.tokens_to_nodes(ad.Tensor(tok.copy()), (2, 2, 2), 2, p)
        shuffled = tok.copy()
        shuffled[0:4] = tok[0:4][[2, 0, 3, 1]]  # permute slice 0's tokens
        nodes2 = sg.tokens_to_nodes(ad.Tensor(shuffled), (2, 2, 2), 2, p)
        np.testing.assert_allclose(nodes2.data, nodes.data, atol=1e-12)


class TestKnnGraph:
    def test_complete_graph_when_k_is_n_minus_1(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 4))
        adj = sg.knn_graph(x, 4)
        np.testing.assert_array_equal(adj, 1.0 - np.eye(5))

    def test_collinear_positions_with_tie(self):
        # unit vectors at angles proportional to positions 0, 1, 2, 10:
        # node 1 is equidistant (cosine) from nodes 0 and 2
        theta = 0.09
        pos = np.array([0.0, 1.0, 2.0, 10.0])
        x = np.stack([np.cos(theta * pos), np.sin(theta * pos)], axis=1)
        adj = sg.knn_graph(x, 1)
        edges = {tuple(sorted(e)) for e in zip(*np.nonzero(adj))}
        assert edges == {(0, 1), (1, 2), (2, 3)}

    def test_tie_break_prefers_lower_index(self):
        # nodes 1 and 2 are identical, so node 3 sees an exact tie
        x = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.6, 0.8]])
        adj = sg.knn_graph(x, 1)
        assert adj[3, 1] == 1.0 and adj[3, 2] == 0.0

    def test_degree_lower_bound_and_symmetry(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((12, 6))
        adj = sg.knn_graph(x, 3)
        assert np.all(adj.sum(axis=1) >= 3)
        np.testing.assert_array_equal(adj, adj.T)
        np.testing.assert_array_equal(np.diag(adj), 0.0)

    def test_k_too_large_rejected(self):
        with pytest.raises(ConfigError):
            sg.knn_graph(np.eye(3), 3)


class TestPpr:
    def test_alpha_one_is_identity(self):
        adj = sg.knn_graph(np.random.default_rng(5).standard_normal((6, 3)), 2)
        np.testing.assert_array_equal(sg.ppr_matrix(adj, 1.0), np.eye(6))

    def test_two_node_matches_neumann_series(self):
        adj = np.array([[0.0, 1.0], [1.0, 0.0]])
        alpha = 0.5
        pi = sg.ppr_matrix(adj, alpha)
        # 200-term power series oracle
        a_loop = adj + np.eye(2)
        a_hat = a_loop / a_loop.sum(axis=1, keepdims=True)
        acc = np.zeros_like(a_hat)
        term = np.eye(2)
        for _ in range(200):
            acc += term
            term = (1 - alpha) * term @ a_hat
        np.testing.assert_allclose(pi, alpha * acc, atol=1e-10)

    @given(
        n=st.integers(min_value=2, max_value=16),
        alpha=st.sampled_from([0.1, 0.15, 0.5]),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, n, alpha, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, 4))
        adj = sg.knn_graph(x, min(3, n - 1))
        pi = sg.ppr_matrix(adj, alpha)
        np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-8)

    def test_alpha_out_of_range(self):
        with pytest.raises(ConfigError):
            sg.ppr_matrix(np.zeros((2, 2)), 0.0)


class TestAttributeView:
    def test_no_missing_is_identity(self):
        rng = np.random.default_rng(6)
        x = ad.Tensor(rng.standard_normal((4, 3)))
        comp = ad.Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        out = sg.attribute_view(x, np.zeros(4, dtype=bool), comp)
        np.testing.assert_array_equal(out.data, x.data)

    def test_all_missing_returns_completion_rows(self):
        rng = np.random.default_rng(7)
        x = ad.Tensor(rng.standard_normal((4, 3)))
        comp = ad.Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        out = sg.attribute_view(x, np.ones(4, dtype=bool), comp)
        np.testing.assert_allclose(out.data, comp.data[:4], atol=1e-12)

    def test_gradient_only_through_missing_rows(self):
        rng = np.random.default_rng(8)
        x = ad.Tensor(rng.standard_normal((4, 3)))
        comp = ad.Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        missing = np.array([False, True, False, True])
        out = sg.attribute_view(x, missing, comp)
        ad.sum_(ad.mul(out, ad.Tensor(rng.standard_normal((4, 3))))).backward()
        grad = comp.grad
        np.testing.assert_array_equal(grad[0], 0.0)
        np.testing.assert_array_equal(grad[2], 0.0)
        np.testing.assert_array_equal(grad[4:], 0.0)
        assert np.any(grad[1] != 0.0) and np.any(grad[3] != 0.0)

        # finite-difference confirmation on an available row
        eps = 1e-5
        ref = ad.Tensor(rng.standard_normal((4, 3)))

        def loss_of(c):
            return float(ad.sum_(ad.mul(sg.attribute_view(x, missing, c), ref)).data)

        base = comp.data.copy()
        pert = base.copy()
        pert[0, 0] += eps
        assert loss_of(ad.Tensor(pert)) == pytest.approx(loss_of(ad.Tensor(base)), abs=1e-12)


class TestStructureView:
    def test_alpha_one_pure_teleport(self):
        rng = np.random.default_rng(9)
        x = ad.Tensor(rng.standard_normal((5, 4)))
        adj = sg.knn_graph(x.data, 2)
        missing = np.array([False, True, False, False, True])
        x_s, adj_s = sg.structure_view(x, adj, missing, alpha=1.0)
        np.testing.assert_array_equal(adj_s, np.eye(5))
        expected = x.data.copy()
        expected[missing] = 0.0
        np.testing.assert_allclose(x_s.data, expected, atol=1e-12)

    def test_missing_rows_filled_from_neighbourhood(self):
        rng = np.random.default_rng(10)
        x = ad.Tensor(rng.standard_normal((6, 4)))
        adj = sg.knn_graph(x.data, 2)
        missing = np.zeros(6, dtype=bool)
        missing[2] = True
        x_s, _ = sg.structure_view(x, adj, missing, alpha=0.15)
        assert np.any(x_s.data[2] != 0.0)


class TestGat:
    def test_singleton_graph(self):
        rng = np.random.default_rng(11)
        p = sg.init_gat_params(3, 4, 5, rng, dtype=np.float64)
        x = ad.Tensor(rng.standard_normal((1, 3)))
        z = sg.gat_forward(x, np.zeros((1, 1)), p)
        h1 = x.data @ p.w1.data
        expected = (np.where(h1 > 0, h1, np.exp(h1) - 1.0)) @ p.w2.data
        np.testing.assert_allclose(z.data, expected, atol=1e-10)

    def test_identical_nodes_split_attention_evenly(self):
        rng = np.random.default_rng(12)
        p = sg.init_gat_params(3, 4, 4, rng, dtype=np.float64)
        row = rng.standard_normal(3)
        x = ad.Tensor(np.stack([row, row]))
        adj = np.array([[0.0, 1.0], [1.0, 0.0]])
        _, (attn1, attn2) = sg.gat_forward(x, adj, p, return_attention=True)
        np.testing.assert_allclose(attn1.data, 0.5, atol=1e-12)
        np.testing.assert_allclose(attn2.data, 0.5, atol=1e-12)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(13)
        p = sg.init_gat_params(5, 6, 6, rng, dtype=np.float64)
        x = ad.Tensor(rng.standard_normal((7, 5)))
        adj = sg.knn_graph(x.data, 3)
        _, (attn1, attn2) = sg.gat_forward(x, adj, p, return_attention=True)
        np.testing.assert_allclose(attn1.data.sum(axis=1), 1.0, atol=1e-6)
        np.testing.assert_allclose(attn2.data.sum(axis=1), 1.0, atol=1e-6)

    def test_ppr_weighted_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(14)
        p = sg.init_gat_params(5, 6, 6, rng, dtype=np.float64)
        x = ad.Tensor(rng.standard_normal((6, 5)))
        adj = sg.knn_graph(x.data, 2)
        pi = sg.ppr_matrix(adj, 0.15)
        _, (attn1, _) = sg.gat_forward(x, pi, p, return_attention=True)
        np.testing.assert_allclose(attn1.data.sum(axis=1), 1.0, atol=1e-6)

    def test_gradients_through_two_layers(self):
        rng = np.random.default_rng(15)
        n, d = 4, 6
        p = sg.init_gat_params(d, d, d, rng, dtype=np.float64)
        x = ad.Tensor(rng.standard_normal((n, d)), requires_grad=True)
        adj = sg.knn_graph(x.data, 2)
        ref = ad.Tensor(rng.standard_normal((n, d)))

        def f_x(v):
            return ad.sum_(ad.mul(sg.gat_forward(v, adj, p), ref))

        assert ad.grad_check(f_x, x) < 1e-4
        for name in ("w1", "a1_src", "a1_dst", "w2", "a2_src", "a2_dst"):
            t = getattr(p, name)
            err = ad.grad_check(lambda v: ad.sum_(ad.mul(sg.gat_forward(x, adj, p), ref)), t)
            assert err < 1e-4, (name, err)


class TestContrastiveLoss:
    def test_all_identical_embeddings_closed_form(self):
        v = np.array([0.3, -1.2, 0.7])
        z = ad.Tensor(np.tile(v, (3, 1)))
        for tau in (0.8, 0.3, 2.0):
            loss = sg.contrastive_loss(z, ad.Tensor(np.tile(v, (3, 1))), tau)
            assert loss.item() == pytest.approx(np.log(2.0), abs=1e-6)

    def test_orthogonal_positives_closed_form(self):
        z = ad.Tensor(np.eye(3))
        loss = sg.contrastive_loss(z, ad.Tensor(np.eye(3)), tau=0.8)
        assert loss.item() == pytest.approx(np.log(2.0) - 1.25, abs=1e-6)

    def test_single_node_rejected(self):
        z = ad.Tensor(np.ones((1, 4)))
        with pytest.raises(ContractError):
            sg.contrastive_loss(z, z, 0.8)

    def test_zero_row_rejected(self):
        z = ad.Tensor(np.vstack([np.zeros(4), np.ones(4)]))
        with pytest.raises(DegenerateInputError):
            sg.contrastive_loss(z, z, 0.8)

    def test_loss_decreases_when_positive_similarity_increases(self):
        rng = np.random.default_rng(16)
        z_a = rng.standard_normal((5, 8))
        z_s = rng.standard_normal((5, 8))
        base = sg.contrastive_loss(ad.Tensor(z_a), ad.Tensor(z_s), 0.8).item()
        # move each z_s_i toward z_a_i, negatives change only marginally
        better = z_s + 0.5 * (z_a - z_s)
        improved = sg.contrastive_loss(ad.Tensor(z_a), ad.Tensor(better), 0.8).item()
        assert improved < base

    def test_gradient_check(self):
        rng = np.random.default_rng(17)
        z_a = ad.Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        z_s = ad.Tensor(rng.standard_normal((4, 6)), requires_grad=True)
        assert ad.grad_check(lambda v: sg.contrastive_loss(v, z_s, 0.8), z_a) < 1e-6
        assert ad.grad_check(lambda v: sg.contrastive_loss(z_a, v, 0.8), z_s) < 1e-6


class TestVsgcApply:
    def grid_tokens(self, n, hp, wp, c, rng, dtype=np.float64):
        return ad.Tensor(rng.standard_normal((n * hp * wp, c)).astype(dtype),
                         requires_grad=True)

    def test_zero_fusion_is_identity_with_loss(self):
        rng = np.random.default_rng(18)
        p = make_params(c=6, d=8, n_max=4)
        tokens = self.grid_tokens(4, 2, 2, 6, rng)
        missing = np.array([False, True, False, False])
        out, cl, _ = sg.vsgc_apply(tokens, (4, 2, 2), missing, p)
        assert out.data.tobytes() == tokens.data.tobytes()
        assert cl is not None and np.isfinite(cl.item())

    def test_minimum_viable_graph(self):
        rng = np.random.default_rng(19)
        p = make_params(c=6, d=8, n_max=2, random_fusion=True)
        tokens = self.grid_tokens(2, 2, 2, 6, rng)
        out, cl, _ = sg.vsgc_apply(tokens, (2, 2, 2), np.array([False, True]), p)
        assert out.shape == tokens.shape
        assert np.isfinite(cl.item())

    def test_correction_constant_within_slice(self):
        rng = np.random.default_rng(20)
        p = make_params(c=6, d=8, n_max=4, random_fusion=True)
        tokens = self.grid_tokens(4, 2, 2, 6, rng)
        missing = np.array([False, True, False, True])
        out, _, _ = sg.vsgc_apply(tokens, (4, 2, 2), missing, p)
        delta = (out.data - tokens.data).reshape(4, 4, 6)
        for z in range(4):
            np.testing.assert_allclose(delta[z] - delta[z][0:1], 0.0, atol=1e-10)

    def test_single_view_modes(self):
        rng = np.random.default_rng(21)
        p = make_params(c=6, d=8, n_max=4, random_fusion=True)
        missing = np.array([False, True, False, False])
        for kwargs in (dict(use_attribute=False), dict(use_structure=False)):
            tokens = self.grid_tokens(4, 2, 2, 6, rng)
            out, cl, _ = sg.vsgc_apply(tokens, (4, 2, 2), missing, p, **kwargs)
            assert cl is None
            assert out.shape == tokens.shape
        with pytest.raises(ConfigError):
            sg.vsgc_apply(tokens, (4, 2, 2), missing, p,
                          use_attribute=False, use_structure=False)

    def test_full_gradient_check(self):
        rng = np.random.default_rng(22)
        p = make_params(c=6, d=8, n_max=4, random_fusion=True)
        tokens = self.grid_tokens(4, 2, 2, 6, rng)
        missing = np.array([False, True, False, True])
        ref = ad.Tensor(rng.standard_normal(tokens.shape))

        def total(tok):
            out, cl, _ = sg.vsgc_apply(tok, (4, 2, 2), missing, p)
            return ad.add(ad.sum_(ad.mul(out, ref)), cl)

        assert ad.grad_check(total, tokens) < 1e-5
        for name in ("adapter_in_w", "adapter_in_b", "completion",
                     "fusion_w", "fusion_b"):
            t = getattr(p, name)
            err = ad.grad_check(lambda v: total(tokens), t)
            assert err < 1e-5, (name, err)
        for name in ("w1", "a1_src", "a1_dst", "w2", "a2_src", "a2_dst"):
            t = getattr(p.gat, name)
            err = ad.grad_check(lambda v: total(tokens), t)
            assert err < 1e-5, (name, err)
