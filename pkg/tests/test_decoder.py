"""Dual decoder: projections, intersections, merging, scoring, ranking."""
import itertools

import numpy as np
import pytest
import torch

from mvkg.decoder import (
    CenterIntersection,
    DualDecoder,
    ExactViewProjection,
    Merger,
    OffsetIntersection,
    QueryBatch,
    RelationState,
    ViewState,
    group_queries,
    perm_softmax,
    perm_sum,
)
from mvkg.encoding import DTYPE, pos_enc
from mvkg.fixtures import sports_chain_query, sports_kg
from mvkg.kg import generate_toy_kg
from mvkg.model import ModelConfig, QueryModel
from mvkg.queries import build_query, equal, exact, wildcard


def rand(shape, seed):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=DTYPE)


def make_decoder(geometry="vector", seed=0, d=8, num_relations=3, **kw):
    torch.manual_seed(seed)
    return DualDecoder(num_relations=num_relations, d=d, geometry=geometry, **kw)


def rel_ids(*ids):
    return torch.tensor(ids, dtype=torch.long)


class TestPermOps:
    def test_perm_sum_invariant_and_correct(self):
        x = rand((4, 6), 0)
        base = perm_sum(x, dim=0)
        for perm in itertools.permutations(range(4)):
            assert torch.equal(perm_sum(x[list(perm)], dim=0), base)
        np.testing.assert_allclose(base.numpy(), x.sum(0).numpy(), atol=1e-12)

    def test_perm_softmax_rows_sum_to_one(self):
        x = rand((3, 5), 1)
        s = perm_softmax(x, dim=0)
        np.testing.assert_allclose(s.sum(0).numpy(), np.ones(5), atol=1e-12)
        perm = [2, 0, 1]
        assert torch.equal(s[perm], perm_softmax(x[perm], dim=0))


class TestRelationProjection:
    def test_vector_projection_is_translation(self):
        dec = make_decoder()
        c = rand((2, 8), 2)
        out = dec.relation_project(RelationState(center=c), rel_ids(1, 0))
        want = torch.stack([c[0] + dec.rel_trans[1], c[1] + dec.rel_trans[0]])
        np.testing.assert_allclose(out.center.detach().numpy(), want.detach().numpy())
        assert out.offset is None

    def test_box_projection_translates_and_grows(self):
        dec = make_decoder(geometry="box")
        c, o = rand((1, 8), 3), torch.rand(1, 8, dtype=DTYPE)
        out = dec.relation_project(RelationState(center=c, offset=o), rel_ids(2))
        np.testing.assert_allclose(
            out.center.detach().numpy(), (c + dec.rel_trans[2]).detach().numpy()
        )
        want = torch.relu(o + dec.rel_delta[2])
        np.testing.assert_allclose(out.offset.detach().numpy(), want.detach().numpy())

    def test_box_offsets_stay_non_negative(self):
        # sweep many random states through chained projections
        dec = make_decoder(geometry="box", seed=4)
        g = torch.Generator().manual_seed(5)
        for trial in range(1000):
            o = torch.relu(torch.randn(1, 8, generator=g, dtype=DTYPE) * 3)
            state = RelationState(center=torch.zeros(1, 8, dtype=DTYPE), offset=o)
            for r in range(3):
                state = dec.relation_project(state, rel_ids(r))
                assert (state.offset >= 0).all()

    def test_unknown_relation_rejected(self):
        dec = make_decoder()
        with pytest.raises(ValueError):
            dec.relation_project(RelationState(center=rand((1, 8), 6)), rel_ids(3))


class TestIntersection:
    def test_center_idempotent_weighting(self):
        # intersecting identical branches returns a convex combination of
        # identical points, hence the point itself
        torch.manual_seed(7)
        op = CenterIntersection(8)
        x = rand((8,), 8)
        stacked = torch.stack([x, x, x])
        np.testing.assert_allclose(op(stacked).detach().numpy(), x.numpy(), atol=1e-12)

    def test_center_exactly_permutation_invariant(self):
        torch.manual_seed(9)
        op = CenterIntersection(8)
        xs = rand((4, 8), 10)
        base = op(xs)
        for perm in itertools.permutations(range(4)):
            assert torch.equal(op(xs[list(perm)]), base)

    def test_offset_bounded_by_min(self):
        torch.manual_seed(11)
        op = OffsetIntersection(8)
        offs = torch.rand(3, 8, dtype=DTYPE)
        out = op(offs)
        assert (out <= offs.min(0).values + 1e-12).all()
        assert (out >= 0).all()

    def test_offset_exactly_permutation_invariant(self):
        torch.manual_seed(12)
        op = OffsetIntersection(8)
        offs = torch.rand(5, 8, dtype=DTYPE)
        base = op(offs)
        for _ in range(10):
            perm = torch.randperm(5)
            assert torch.equal(op(offs[perm]), base)

    def test_decoder_intersect_requires_two_branches(self):
        dec = make_decoder()
        with pytest.raises(ValueError):
            dec.relation_intersect([RelationState(center=rand((1, 8), 13))])


class TestViewProjection:
    def test_wildcard_is_identity(self):
        dec = make_decoder()
        w = rand((1, 8), 14)
        out = dec.view_project(ViewState(w=w), "wildcard")
        assert torch.equal(out.w, w)

    def test_exact_depends_on_view_index(self):
        torch.manual_seed(15)
        proj = ExactViewProjection(8)
        w = rand((8,), 16)
        outs = [proj(w, pos_enc(v, 8)) for v in range(6)]
        for a, b in itertools.combinations(outs, 2):
            assert not torch.allclose(a, b)

    def test_exact_composition_matches_layers(self):
        torch.manual_seed(17)
        proj = ExactViewProjection(8)
        w = rand((8,), 18)
        manual = proj.layer2(torch.relu(proj.layer1(torch.cat([w, pos_enc(3, 8)]))))
        np.testing.assert_allclose(
            proj(w, pos_enc(3, 8)).detach().numpy(), manual.detach().numpy(), atol=1e-12
        )

    def test_exact_handles_unseen_large_views(self):
        torch.manual_seed(19)
        proj = ExactViewProjection(8)
        out = proj(rand((8,), 20), pos_enc(5000, 8))
        assert torch.isfinite(out).all()

    def test_equal_uses_one_shared_transform(self):
        dec = make_decoder(seed=21)
        w = rand((1, 8), 22)
        a = dec.view_project(ViewState(w=w), "equal")
        b = dec.view_project(ViewState(w=w), "equal")
        assert torch.equal(a.w, b.w)
        manual = dec.equal_proj(w)
        np.testing.assert_allclose(a.w.detach().numpy(), manual.detach().numpy())

    def test_equal_trace_shows_shared_module(self):
        # a two-hop equal chain must route both edges through the same module
        dec = make_decoder(seed=46)
        dec.trace = []
        q = build_query("2p", anchor_entities=[0], relations=[0, 1],
                        constraints=[equal(0), equal(0)])
        H = rand((4, 8), 47)
        dec.decode_batch(H, rand((4, 8), 48), rand((4, 8), 49),
                         QueryBatch.from_queries([q]))
        mods = [t["module"] for t in dec.trace
                if t["op"] == "view_project" and t["kind"] == "equal"]
        assert len(mods) == 2
        assert mods[0] == mods[1]

    def test_exact_records_views_seen(self):
        dec = make_decoder(seed=23)
        dec.view_project(ViewState(w=rand((1, 8), 24)), "exact",
                         views=torch.tensor([7], dtype=torch.long))
        assert 7 in dec.exact_views_seen

    def test_exact_without_views_rejected(self):
        dec = make_decoder(seed=50)
        with pytest.raises(ValueError):
            dec.view_project(ViewState(w=rand((1, 8), 51)), "exact")

    def test_unknown_kind_rejected(self):
        dec = make_decoder(seed=52)
        with pytest.raises(ValueError):
            dec.view_project(ViewState(w=rand((1, 8), 53)), "sometimes")


class TestMerger:
    def test_zero_params_change_nothing(self):
        torch.manual_seed(25)
        m = Merger(8)
        with torch.no_grad():
            m.lin.weight.zero_()
            m.lin.bias.zero_()
        r = RelationState(center=rand((8,), 26), offset=torch.rand(8, dtype=DTYPE))
        v = ViewState(w=rand((8,), 27))
        r2, v2 = m(r, v)
        assert torch.equal(r2.center, r.center)
        assert torch.equal(v2.w, v.w)

    def test_box_offset_passes_through(self):
        torch.manual_seed(28)
        m = Merger(8)
        off = torch.rand(8, dtype=DTYPE)
        r2, _ = m(RelationState(center=rand((8,), 29), offset=off), ViewState(w=rand((8,), 30)))
        assert torch.equal(r2.offset, off)

    def test_manual_recompute_small_dim(self):
        torch.manual_seed(31)
        m = Merger(2)
        c = torch.tensor([1.0, 2.0], dtype=DTYPE)
        w = torch.tensor([-1.0, 0.5], dtype=DTYPE)
        delta = m.lin(torch.cat([c, w]))
        r2, v2 = m(RelationState(center=c), ViewState(w=w))
        np.testing.assert_allclose(r2.center.detach().numpy(), (c + delta).detach().numpy())
        np.testing.assert_allclose(v2.w.detach().numpy(), (w + delta).detach().numpy())


class TestScoring:
    def test_vector_similarity_peaks_at_center(self):
        dec = make_decoder()
        c = rand((8,), 32)
        state = RelationState(center=c)
        at_center = dec.score_relation(state, c.unsqueeze(0))
        away = dec.score_relation(state, (c + 1.0).unsqueeze(0))
        assert float(at_center) == pytest.approx(dec.gamma)
        assert float(away) < float(at_center)

    def test_vector_distance_is_l1(self):
        dec = make_decoder()
        state = RelationState(center=torch.zeros(8, dtype=DTYPE))
        pt = torch.full((1, 8), 0.5, dtype=DTYPE)
        assert float(dec.score_relation(state, pt)) == pytest.approx(dec.gamma - 4.0)

    def test_box_distance_hand_case(self):
        # box centered at the origin with half-widths 1: the point (2, 0)
        # sits 1 outside plus alpha * 1 of interior slack = 1.5 at alpha 0.5
        dec = make_decoder(geometry="box", seed=33, d=2, num_relations=1, alpha=0.5)
        state = RelationState(
            center=torch.zeros(2, dtype=DTYPE), offset=torch.ones(2, dtype=DTYPE)
        )
        pt = torch.tensor([[2.0, 0.0]], dtype=DTYPE)
        assert float(dec.score_relation(state, pt)) == pytest.approx(dec.gamma - 1.5)

    def test_box_inside_scores_higher_than_outside(self):
        dec = make_decoder(geometry="box", seed=34, d=4, num_relations=1)
        state = RelationState(
            center=torch.zeros(4, dtype=DTYPE), offset=torch.ones(4, dtype=DTYPE)
        )
        inside = torch.full((1, 4), 0.5, dtype=DTYPE)
        outside = torch.full((1, 4), 2.0, dtype=DTYPE)
        assert float(dec.score_relation(state, inside)) > float(
            dec.score_relation(state, outside)
        )

    def test_view_similarity_examples(self):
        w = torch.ones(8, dtype=DTYPE)
        zeros = torch.zeros(1, 8, dtype=DTYPE)
        ones = torch.ones(1, 8, dtype=DTYPE)
        assert float(DualDecoder.score_view(w, zeros)) == 0.0
        assert float(DualDecoder.score_view(w, ones)) == pytest.approx(1.0)

    def test_view_similarity_scalar_recompute(self):
        w = rand((8,), 35)
        t = rand((3, 8), 36)
        got = DualDecoder.score_view(w, t).numpy()
        for i in range(3):
            want = sum(float(w[m]) * float(t[i, m]) for m in range(8)) / 8
            assert abs(got[i] - want) < 1e-9

    def test_view_similarity_dim_mismatch(self):
        with pytest.raises(ValueError):
            DualDecoder.score_view(rand((8,), 37), rand((2, 4), 38))


class TestDecodeQueries:
    def kg(self):
        return generate_toy_kg(num_entities=12, num_relations=3, num_views=2,
                               facts_per_view=30, seed=0)

    def test_chain_decode_runs_both_geometries(self):
        kg = self.kg()
        q = build_query("2p", anchor_entities=[1], relations=[0, 1],
                        constraints=[wildcard(), wildcard()])
        for geometry in ("vector", "box"):
            torch.manual_seed(39)
            model = QueryModel(kg, ModelConfig(d=8, geometry=geometry))
            states = model.decode_states([q])
            assert states.centers.shape == (1, 8)
            assert states.ws.shape == (1, 8)
            if geometry == "box":
                assert (states.offsets >= 0).all()

    def test_intersection_branch_order_irrelevant(self):
        kg = self.kg()
        qa = build_query("2i", anchor_entities=[1, 2], relations=[0, 1],
                         constraints=[wildcard(), wildcard()])
        qb = build_query("2i", anchor_entities=[2, 1], relations=[1, 0],
                         constraints=[wildcard(), wildcard()])
        torch.manual_seed(40)
        model = QueryModel(kg, ModelConfig(d=8))
        emb = model.embeddings()
        sa = model.decode_states([qa], emb)
        sb = model.decode_states([qb], emb)
        assert torch.equal(sa.centers, sb.centers)
        assert torch.equal(sa.ws, sb.ws)

    def test_batch_matches_single_decode(self):
        kg = self.kg()
        queries = [
            build_query("1p", anchor_entities=[0], relations=[0], constraints=[exact(1)]),
            build_query("2p", anchor_entities=[1], relations=[0, 1],
                        constraints=[equal(0), equal(0)]),
            build_query("2i", anchor_entities=[2, 3], relations=[1, 2],
                        constraints=[wildcard(), wildcard()]),
            build_query("1p", anchor_entities=[4], relations=[2], constraints=[wildcard()]),
        ]
        torch.manual_seed(41)
        model = QueryModel(kg, ModelConfig(d=8))
        emb = model.embeddings()
        all_states = model.decode_states(queries, emb)
        for i, q in enumerate(queries):
            one = model.decode_states([q], emb)
            assert float((all_states.centers[i] - one.centers[0]).detach().abs().max()) < 1e-12
            assert float((all_states.ws[i] - one.ws[0]).detach().abs().max()) < 1e-12

    def test_group_queries_covers_every_index_once(self):
        queries = [
            build_query("1p", anchor_entities=[0], relations=[0], constraints=[wildcard()]),
            build_query("2p", anchor_entities=[1], relations=[0, 1],
                        constraints=[wildcard(), wildcard()]),
            build_query("1p", anchor_entities=[2], relations=[1], constraints=[wildcard()]),
            build_query("1p", anchor_entities=[3], relations=[0], constraints=[exact(0)]),
        ]
        seen = []
        for indices, batch in group_queries(queries):
            assert isinstance(batch, QueryBatch)
            seen.extend(indices)
        assert sorted(seen) == [0, 1, 2, 3]

    def test_mixed_shape_batch_rejected(self):
        qa = build_query("1p", anchor_entities=[0], relations=[0], constraints=[wildcard()])
        qb = build_query("1p", anchor_entities=[1], relations=[0], constraints=[exact(0)])
        with pytest.raises(ValueError):
            QueryBatch.from_queries([qa, qb])

    def test_all_templates_decode(self):
        kg = self.kg()
        torch.manual_seed(42)
        model = QueryModel(kg, ModelConfig(d=8))
        cases = {
            "1p": dict(anchor_entities=[0], relations=[0], constraints=[wildcard()]),
            "2p": dict(anchor_entities=[0], relations=[0, 1],
                       constraints=[equal(0), equal(0)]),
            "3p": dict(anchor_entities=[0], relations=[0, 1, 2],
                       constraints=[equal(0)] * 3),
            "2i": dict(anchor_entities=[0, 1], relations=[0, 1],
                       constraints=[wildcard()] * 2),
            "3i": dict(anchor_entities=[0, 1, 2], relations=[0, 1, 2],
                       constraints=[wildcard()] * 3),
            "2ip": dict(anchor_entities=[0, 1], relations=[0, 1, 2],
                        constraints=[wildcard()] * 3),
            "2pi": dict(anchor_entities=[0, 1], relations=[0, 1, 2],
                        constraints=[wildcard()] * 3),
        }
        emb = model.embeddings()
        for tag, kw in cases.items():
            q = build_query(tag, **kw)
            states = model.decode_states([q], emb)
            assert torch.isfinite(states.centers).all(), tag
            assert torch.isfinite(states.ws).all(), tag


class TestRanking:
    def test_rank_answers_orders_by_joint_score(self):
        kg = sports_kg()
        torch.manual_seed(43)
        model = QueryModel(kg, ModelConfig(d=8))
        q = sports_chain_query("wildcard")
        ranked = model.rank_answers(q, n=5)
        assert len(ranked) == 5
        sims = [row[3] for row in ranked]
        assert sims == sorted(sims, reverse=True)
        for ent, sim_r, sim_t, sim in ranked:
            assert 0 <= ent < kg.num_entities
            assert sim == pytest.approx(sim_r * sim_t)

    def test_rank_answers_clamps_to_entity_count(self):
        kg = sports_kg()
        torch.manual_seed(44)
        model = QueryModel(kg, ModelConfig(d=8))
        ranked = model.rank_answers(sports_chain_query("equal"), n=50)
        assert len(ranked) == kg.num_entities
        assert sorted(row[0] for row in ranked) == list(range(kg.num_entities))

    def test_no_view_decoder_sim_theta_is_one(self):
        kg = sports_kg()
        torch.manual_seed(45)
        model = QueryModel(kg, ModelConfig(d=8, ablation="no-view-decoder"))
        ranked = model.rank_answers(sports_chain_query("wildcard"), n=3)
        for _, sim_r, sim_t, sim in ranked:
            assert sim_t == pytest.approx(1.0)
            assert sim == pytest.approx(sim_r)


class TestDecoderGradients:
    def test_intersection_gradients_match_finite_differences(self):
        torch.manual_seed(46)
        op = CenterIntersection(8)
        xs = rand((3, 8), 47)
        target = rand((8,), 48)

        def loss_fn():
            return ((op(xs) - target) ** 2).sum()

        loss = loss_fn()
        loss.backward()
        for p in op.parameters():
            flat = p.data.view(-1)
            grad = p.grad.view(-1)
            for idx in range(0, flat.numel(), max(1, flat.numel() // 5)):
                eps = 1e-6
                orig = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = orig + eps
                    up = float(loss_fn())
                    flat[idx] = orig - eps
                    down = float(loss_fn())
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                denom = max(abs(numeric), abs(float(grad[idx])), 1e-6)
                assert abs(float(grad[idx]) - numeric) / denom < 1e-4
