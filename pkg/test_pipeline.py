#!/usr/bin/env python3
"""
End-to-end tests: forward pass, training loop, evaluation and transfer
"""

import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import path_task
from src.data.synthetic import generate_synthetic
from src.exceptions import AlignmentError, ConfigError, GradientCheckError, TrainingContractError
from src.kg.core import G1, G2, AlignmentTask, SeedAlignment, build_graph, one_hop_relations
from src.models.models import SynthSpec, TrainConfig
from src.network.entgnn import init_entity_features
from src.network.model import EntityAlignmentModel, anchor_summary, forward_query
from src.network.relgnn import init_relation_features
from src.training.evaluation import (bucket_edges, bucket_labels, evaluate, metrics_from_ranks, query_statistic,
                                     rank_targets, stratified_evaluation, transfer)
from src.training.gradcheck import canonical_tiny_task, gradient_check, tiny_config
from src.training.sweep import hop_sweep
from src.training.trainer import EarlyStopMonitor, Trainer, batch_loss, finetune, seed_everything, train


@pytest.fixture
def tiny_task():
    return canonical_tiny_task()


def quick_config(**overrides):
    values = dict(max_epochs=2, patience=1, batch_size=4)
    values.update(overrides)
    return tiny_config(**values)


def test_seed_query_is_its_own_anchor():
    task = path_task()
    model = EntityAlignmentModel(tiny_config())
    emb, activation = forward_query(model, task, (G1, 2), k=1)
    assert 2 in activation.active_g1
    x1, _ = init_entity_features(task, activation, 4, torch.float64)
    assert x1[2].abs().sum() > 0
    assert emb.h1.shape == (4, 4) and emb.h2.shape == (4, 4)
    assert torch.isfinite(emb.h1).all()


def test_forward_composes_the_modules(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    ctx = model.context(tiny_task)
    query = (G2, 5)
    emb, activation = forward_query(model, tiny_task, query, context=ctx)

    active = [ctx.relation_graph.relation_node(G2, r) for r in one_hop_relations(tiny_task.g2, 5)]
    with torch.no_grad():
        relations = model.relgnn(ctx.rel_index, init_relation_features(
            ctx.relation_graph.num_rel_nodes, active, 4, dtype=torch.float64))
        x1, x2 = init_entity_features(tiny_task, activation, 4, torch.float64)
        expected = model.entgnn(ctx.index1, ctx.index2, x1, x2, relations)
    assert torch.allclose(emb.h1, expected.h1, atol=1e-12)
    assert torch.allclose(emb.h2, expected.h2, atol=1e-12)


def test_dot_product_mode_scores_squared_norm(tiny_task):
    model = EntityAlignmentModel(tiny_config(ablation="no_interaction"))
    emb, _ = forward_query(model, tiny_task, (G1, 0))
    h = emb.h1[3]
    assert torch.isclose(model.matcher(h, h.unsqueeze(0))[0], h @ h)


def test_interaction_model_refuses_dot_product_mode(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    with pytest.raises(ConfigError):
        forward_query(model, tiny_task, (G1, 0), ablation="no_interaction")


@pytest.mark.parametrize("ablation", ["none", "no_relgraph", "no_parallel", "no_interaction"])
def test_every_mode_gives_a_finite_loss(tiny_task, ablation):
    config = tiny_config(ablation=ablation)
    model = EntityAlignmentModel(config)
    ctx = model.context(tiny_task)
    loss = batch_loss(model, ctx, tiny_task.train_seeds.pairs)
    assert torch.isfinite(loss) and loss.item() >= 0


def relabelled(task, rng):
    """Task with entities of both graphs and relations of both vocabularies permuted"""
    maps = []
    graphs = []
    for g in (task.g1, task.g2):
        ent = rng.permutation(g.num_entities)
        rel = rng.permutation(g.num_original_relations)
        facts = g.triple_array()
        facts = facts[facts[:, 1] < g.num_original_relations]
        graphs.append(build_graph(np.stack([ent[facts[:, 0]], rel[facts[:, 1]], ent[facts[:, 2]]], axis=1),
                                  g.num_entities, g.num_original_relations))
        maps.append(ent)

    def move(seeds):
        return SeedAlignment.from_pairs([(int(maps[0][u]), int(maps[1][v])) for u, v in seeds])

    moved = AlignmentTask(graphs[0], graphs[1], move(task.train_seeds), move(task.valid_pairs),
                          move(task.test_pairs))
    return moved, maps


@pytest.mark.parametrize("ablation", ["none", "no_relgraph", "no_parallel"])
def test_scores_are_invariant_to_relabelling(tiny_task, float64, ablation):
    model = EntityAlignmentModel(tiny_config(ablation=ablation))
    moved, (ent1, ent2) = relabelled(tiny_task, np.random.default_rng(5))
    for u, _ in tiny_task.test_pairs:
        emb, _ = forward_query(model, tiny_task, (G1, u))
        emb_moved, _ = forward_query(model, moved, (G1, int(ent1[u])))
        scores = model.matcher(emb.h1[u], emb.h2)
        scores_moved = model.matcher(emb_moved.h1[int(ent1[u])], emb_moved.h2[torch.as_tensor(ent2)])
        assert torch.allclose(scores, scores_moved, atol=1e-5)


def test_joint_mode_masks_the_supervised_sameas_edges(tiny_task):
    model = EntityAlignmentModel(tiny_config(ablation="no_parallel"))
    ctx = model.context(tiny_task)
    pair = tiny_task.train_seeds.pairs[1]
    mask = ctx.sameas_mask([pair, None])
    assert mask.shape[0] == 2
    assert (~mask[0]).sum() == 2 and mask[1].all()
    hidden = torch.nonzero(~mask[0]).view(-1)
    shift = tiny_task.g1.num_entities
    ends = {(int(ctx.joint_index.src[i]), int(ctx.joint_index.dst[i])) for i in hidden}
    assert ends == {(pair[0], pair[1] + shift), (pair[1] + shift, pair[0])}


def test_mrr_of_worked_ranks():
    metrics = metrics_from_ranks([1, 2, 4])
    assert math.isclose(metrics.mrr, 0.5833333333, rel_tol=1e-9)
    assert metrics.hits_at[1] == pytest.approx(1 / 3)
    perfect = metrics_from_ranks([1, 1, 1])
    assert perfect.mrr == perfect.hits_at[10] == 1.0


def test_rank_ties_favour_smaller_ids():
    scores = np.array([[0.5, 0.9, 0.5, 0.1]])
    candidates = np.array([7, 3, 2, 9])
    assert rank_targets(scores, candidates, np.array([7])).tolist() == [3]
    assert rank_targets(scores, candidates, np.array([2])).tolist() == [2]
    assert rank_targets(scores, candidates, np.array([3])).tolist() == [1]


def test_metrics_are_bounded(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    metrics = evaluate(model, tiny_task, direction="mean")
    assert 0.0 < metrics.mrr <= 1.0
    assert 0.0 <= metrics.hits_at[1] <= metrics.hits_at[5] <= metrics.hits_at[10] <= 1.0
    assert set(metrics.per_direction) == {"g1_to_g2", "g2_to_g1"}
    assert metrics.num_queries == 2 * len(tiny_task.test_pairs)


def test_full_candidate_pool_never_ranks_higher(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    narrow = evaluate(model, tiny_task, candidates="test")
    wide = evaluate(model, tiny_task, candidates="all")
    assert wide.mrr <= narrow.mrr + 1e-12


def test_patience_must_be_positive():
    with pytest.raises(ConfigError):
        TrainConfig(patience=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(patience=20, max_epochs=10).validate()


def test_defaults_follow_the_reference_setup():
    config = TrainConfig()
    assert (config.dim, config.rel_layers, config.ent_layers) == (32, 6, 6)
    assert (config.anchor_hop, config.lr, config.batch_size) == (2, 5e-4, 64)
    assert (config.max_epochs, config.patience) == (200, 10)


def test_early_stop_monitor_counts_stale_rounds():
    monitor = EarlyStopMonitor(max_round=2)
    assert not monitor.early_stop_check(0.3)
    assert not monitor.early_stop_check(0.5)
    assert not monitor.early_stop_check(0.5)
    assert monitor.early_stop_check(0.4)
    assert monitor.best_epoch == 2 and monitor.last_best == 0.5


def test_training_needs_validation_pairs(tiny_task):
    task = tiny_task
    empty_valid = type(task)(task.g1, task.g2, task.train_seeds, SeedAlignment(), task.test_pairs)
    with pytest.raises(TrainingContractError):
        Trainer(empty_valid, quick_config(), progress=False)


def test_zero_learning_rate_keeps_parameters(tiny_task):
    config = quick_config(lr=0.0, weight_decay=0.0)
    seed_everything(config)
    initial = EntityAlignmentModel(config).checksum()
    result = train(tiny_task, config, progress=False)
    assert result.model.checksum() == initial
    assert len(result.history) >= 1


def test_training_is_deterministic(tiny_task):
    config = quick_config()
    first = train(tiny_task, config, progress=False)
    second = train(tiny_task, config, progress=False)
    assert first.model.checksum() == second.model.checksum()
    assert [r.loss for r in first.history] == [r.loss for r in second.history]
    assert evaluate(first.model, tiny_task).mrr == evaluate(second.model, tiny_task).mrr


def test_history_frame_lists_epochs(tiny_task):
    result = train(tiny_task, quick_config(max_epochs=3, patience=3), progress=False)
    frame = result.history_frame()
    assert list(frame.index) == [1, 2, 3]
    assert 1 <= result.best_epoch <= 3


def test_finetune_rejects_a_different_architecture(tiny_task):
    model = EntityAlignmentModel(quick_config())
    with pytest.raises(ConfigError, match="dim"):
        finetune(model, tiny_task, quick_config(dim=8), progress=False)


def test_finetune_continues_from_loaded_parameters(tiny_task):
    model = train(tiny_task, quick_config(), progress=False).model
    loaded = model.checksum()
    ctx = model.context(tiny_task)
    with torch.no_grad():
        before = batch_loss(model, ctx, tiny_task.train_seeds.pairs).item()

    tuned = finetune(model, tiny_task, quick_config(lr=5e-3, max_epochs=5, patience=5), progress=False)

    assert tuned.model is model
    assert model.checksum() != loaded
    with torch.no_grad():
        after = batch_loss(model, ctx, tiny_task.train_seeds.pairs).item()
    assert after < before


def test_early_stopping_restores_the_best_epoch(tiny_task, monkeypatch):
    scores = iter([0.2, 0.9, 0.4, 0.3])
    seen = []

    def scripted(self):
        seen.append(self.model.checksum())
        return next(scores)

    monkeypatch.setattr(Trainer, "validate", scripted)
    result = train(tiny_task, quick_config(lr=0.05, max_epochs=4, patience=2), progress=False)

    assert result.stopped_early
    assert result.best_epoch == 2 and result.best_valid_mrr == 0.9
    assert len(set(seen)) == 4
    assert result.model.checksum() == seen[1]


def test_transfer_matches_plain_evaluation(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    before = model.checksum()
    transferred = transfer(model, tiny_task)
    evaluated = evaluate(model, tiny_task)
    assert transferred.mrr == evaluated.mrr
    assert transferred.hits_at == evaluated.hits_at
    assert model.checksum() == before


def test_transfer_to_another_task_leaves_parameters_untouched(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    other = canonical_tiny_task(seed=7)
    before = model.checksum()
    metrics = transfer(model, other)
    assert model.checksum() == before
    assert metrics.num_queries == len(other.test_pairs)


def test_transfer_reports_degenerate_queries_without_anchors(tiny_task):
    model = EntityAlignmentModel(tiny_config(anchor_fallback=False))
    bare = type(tiny_task)(tiny_task.g1, tiny_task.g2, SeedAlignment(), tiny_task.valid_pairs, tiny_task.test_pairs)
    metrics = transfer(model, bare)
    assert metrics.num_degenerate_queries == metrics.num_queries


def test_anchor_summary_counts_expansions():
    task = path_task()
    model = EntityAlignmentModel(tiny_config())
    ctx = model.context(task)
    activations = [model.activate(ctx, (G1, 0), k=1), model.activate(ctx, (G1, 3), k=1)]
    summary = anchor_summary(activations)
    assert summary["queries"] == 2
    assert summary["expanded"] == 1
    assert summary["degenerate"] == 0


def test_gradients_match_finite_differences(tiny_task):
    report = gradient_check(tiny_task)
    assert report.passed, report.to_key_value()
    assert report.max_error < 1e-3
    assert "result=PASS" in report.to_key_value()


def test_gradient_check_names_the_failing_group(tiny_task):
    with pytest.raises(GradientCheckError, match="off by"):
        gradient_check(tiny_task, tolerance=1e-30, raise_on_failure=True)


def test_gradient_check_needs_double_precision(tiny_task):
    with pytest.raises(ConfigError):
        gradient_check(tiny_task, tiny_config(dtype="float32"))


def test_single_hop_sweep_equals_a_plain_run(tiny_task):
    config = quick_config()
    frame = hop_sweep(tiny_task, config, [2])
    assert list(frame.index) == [2]
    plain = train(tiny_task, replace(config, anchor_hop=2), progress=False).model
    expected = evaluate(plain, tiny_task, tiny_task.test_pairs, config.direction, config.eval_candidates)
    assert frame.loc[2, "mrr"] == expected.mrr


def test_transfer_sweep_has_one_row_per_hop(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    frame = hop_sweep(tiny_task, tiny_config(), [3, 1, 2], mode="transfer", model=model)
    assert list(frame.index) == [1, 2, 3]
    assert {"mrr", "hits@1", "hits@10", "num_degenerate_queries"} <= set(frame.columns)


def test_sweep_rejects_bad_hops(tiny_task):
    with pytest.raises(ConfigError):
        hop_sweep(tiny_task, tiny_config(), [0])
    with pytest.raises(ConfigError):
        hop_sweep(tiny_task, tiny_config(), [2], mode="transfer")


def test_changed_parameters_during_transfer_are_reported(tiny_task, monkeypatch):
    model = EntityAlignmentModel(tiny_config())
    digests = iter(["before", "after"])
    monkeypatch.setattr(model, "checksum", lambda: next(digests))
    with pytest.raises(AlignmentError, match="changed"):
        transfer(model, tiny_task)


def test_swapping_the_graphs_swaps_the_embeddings(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    swapped = tiny_task.swapped()
    for u, v in tiny_task.test_pairs:
        emb, activation = forward_query(model, tiny_task, (G1, u))
        emb_swapped, activation_swapped = forward_query(model, swapped, (G2, u))
        assert activation.active_g1 == activation_swapped.active_g2
        assert activation.active_g2 == activation_swapped.active_g1
        assert torch.allclose(emb.h1, emb_swapped.h2, atol=1e-10)
        assert torch.allclose(emb.h2, emb_swapped.h1, atol=1e-10)


def test_small_self_alignment_learns_well_above_chance():
    task = generate_synthetic(SynthSpec(num_entities=80, num_relations=4, avg_degree=4.0, seed_fraction=0.4,
                                        rng_seed=3))
    config = TrainConfig(dim=16, rel_layers=2, ent_layers=2, anchor_hop=2, lr=5e-3, batch_size=8,
                         max_epochs=40, patience=40)
    result = train(task, config, progress=False)

    pool = len(task.test_pairs)
    chance = sum(1.0 / rank for rank in range(1, pool + 1)) / pool
    metrics = evaluate(result.model, task)
    assert result.history[-1].loss < result.history[0].loss
    assert metrics.mrr > 2 * chance


def test_default_buckets_double_in_width():
    values = np.array([0, 1, 2, 3, 4, 9])
    edges = bucket_edges(values)
    assert edges.tolist() == [0, 1, 2, 4, 8]
    assert bucket_labels(edges) == ["0", "1", "2-3", "4-7", "8+"]
    assert bucket_labels(bucket_edges(values, [5, 2])) == ["2-4", "5+"]
    with pytest.raises(ConfigError):
        bucket_edges(values, [])


def test_query_statistics_count_facts_and_relations():
    g = build_graph([(0, 0, 1), (0, 1, 1), (2, 0, 0), (1, 0, 3)], 4, 2)
    assert query_statistic(g, np.array([0, 1, 3])).tolist() == [3, 3, 1]
    assert query_statistic(g, np.array([0, 1, 3]), by="relations").tolist() == [2, 2, 1]
    with pytest.raises(ConfigError):
        query_statistic(g, np.array([0]), by="size")


@pytest.mark.parametrize("by", ["degree", "relations"])
@pytest.mark.parametrize("direction", ["g1_to_g2", "mean"])
def test_buckets_partition_the_evaluation(tiny_task, by, direction):
    model = EntityAlignmentModel(tiny_config())
    overall = evaluate(model, tiny_task, direction=direction)
    frame = stratified_evaluation(model, tiny_task, by=by, direction=direction)
    assert frame["num_queries"].sum() == overall.num_queries
    pooled = (frame["mrr"] * frame["num_queries"]).sum() / frame["num_queries"].sum()
    assert pooled == pytest.approx(overall.mrr)
    assert frame["num_degenerate_queries"].sum() == overall.num_degenerate_queries
    assert list(frame["lower"]) == sorted(frame["lower"])


def test_breakdown_ranks_against_the_whole_pool(tiny_task):
    model = EntityAlignmentModel(tiny_config())
    frame = stratified_evaluation(model, tiny_task, edges=[0, 1000])
    assert list(frame.index) == ["0-999"]
    assert frame.loc["0-999", "mrr"] == pytest.approx(evaluate(model, tiny_task).mrr)
