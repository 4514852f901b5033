#!/usr/bin/env python3
"""
Tests for dataset loading, synthetic generation, configuration and the CLI
"""

import random

import numpy as np
import pytest

from src.cli import (EXIT_CHECKPOINT, EXIT_DATASET, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, UsageError, build_parser,
                     config_from_args, echo_config, exit_code, main)
from src.data.loader import canonical_form, dump_task, load_task, load_task_directory, split_pairs
from src.data.synthetic import generate_synthetic, sample_base_facts, synthetic_pair
from src.exceptions import CheckpointError, ConfigError, DatasetFormatError, NonFiniteError
from src.models.models import DatasetManifest, SynthSpec
from src.utils.config_loader import build_config, read_config_file


def write_dataset(root, triples1, triples2, links):
    root.mkdir(parents=True, exist_ok=True)
    for name, lines in (("rel_triples_1", triples1), ("rel_triples_2", triples2), ("ent_links", links)):
        (root / name).write_text("".join("\t".join(row) + "\n" for row in lines), encoding="utf-8")
    return root


def small_dataset(root):
    triples1 = [("a", "born_in", "b"), ("b", "part_of", "c"), ("c", "part_of", "d"), ("a", "knows", "d")]
    triples2 = [("x", "geboren", "y"), ("y", "teil_von", "z"), ("z", "teil_von", "w")]
    links = [("a", "x"), ("b", "y"), ("c", "z"), ("d", "w")]
    return write_dataset(root, triples1, triples2, links)


def test_singleton_task(tmp_path):
    root = write_dataset(tmp_path / "tiny", [("a", "r", "b")], [("x", "s", "y")], [("a", "x")])
    task = load_task_directory(root)
    assert task.g1.num_entities == 2 and task.g2.num_entities == 2
    assert task.train_seeds.pairs == ((0, 0),)
    assert len(task.valid_pairs) == 0 and len(task.test_pairs) == 0


def test_malformed_line_is_located(tmp_path):
    root = small_dataset(tmp_path / "bad")
    with open(root / "rel_triples_2", "a", encoding="utf-8") as handle:
        handle.write("only\ttwo\n")
    with pytest.raises(DatasetFormatError) as caught:
        load_task_directory(root)
    assert caught.value.line_number == 4
    assert "rel_triples_2:4" in str(caught.value)


def test_duplicate_alignment_entity_rejected(tmp_path):
    root = write_dataset(tmp_path / "dup", [("a", "r", "b")], [("x", "s", "y")], [("a", "x"), ("a", "y")])
    with pytest.raises(DatasetFormatError, match="already aligned"):
        load_task_directory(root)


def test_missing_file_rejected(tmp_path):
    root = small_dataset(tmp_path / "gone")
    (root / "ent_links").unlink()
    with pytest.raises(DatasetFormatError, match="not found"):
        load_task_directory(root)


def test_link_only_entities_get_ids(tmp_path):
    root = write_dataset(tmp_path / "extra", [("a", "r", "b")], [("x", "s", "y")], [("a", "x"), ("c", "z")])
    task = load_task_directory(root)
    assert task.g1.num_entities == 3 and task.g2.num_entities == 3
    assert task.names[0] == ("a", "b", "c")


def test_shuffled_files_load_to_the_same_task(tmp_path):
    original = small_dataset(tmp_path / "original")
    shuffled = tmp_path / "shuffled"
    shuffled.mkdir()
    rng = random.Random(4)
    for name in ("rel_triples_1", "rel_triples_2", "ent_links"):
        lines = (original / name).read_text(encoding="utf-8").splitlines(keepends=True)
        rng.shuffle(lines)
        (shuffled / name).write_text("".join(lines), encoding="utf-8")
    assert canonical_form(load_task_directory(original, 3)) == canonical_form(load_task_directory(shuffled, 3))


def test_split_seed_is_deterministic(tmp_path):
    root = small_dataset(tmp_path / "seeded")
    first = load_task_directory(root, split_seed=11)
    second = load_task_directory(root, split_seed=11)
    assert first.train_seeds == second.train_seeds and first.test_pairs == second.test_pairs


def test_split_always_trains_on_something():
    train, valid, test = split_pairs([(0, 0), (1, 1), (2, 2)], seed=0)
    assert len(train) >= 1
    assert sorted(train + valid + test) == [(0, 0), (1, 1), (2, 2)]


def test_split_files_must_be_known_links(tmp_path):
    root = small_dataset(tmp_path / "folds")
    (root / "train_links").write_text("a\tx\n", encoding="utf-8")
    (root / "valid_links").write_text("b\ty\n", encoding="utf-8")
    (root / "test_links").write_text("c\tw\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError, match="not listed"):
        load_task(DatasetManifest.from_directory(root))


def test_dump_and_reload_keeps_ids(tmp_path):
    task = generate_synthetic(SynthSpec(num_entities=40, num_relations=3, rng_seed=2))
    reloaded = load_task_directory(dump_task(task, tmp_path / "dumped"))
    assert np.array_equal(reloaded.g1.triple_array(), task.g1.triple_array())
    assert np.array_equal(reloaded.g2.triple_array(), task.g2.triple_array())
    assert reloaded.train_seeds == task.train_seeds
    assert reloaded.test_pairs == task.test_pairs
    assert canonical_form(reloaded) == canonical_form(task)


def test_synthetic_generation_is_deterministic():
    spec = SynthSpec(num_entities=80, rng_seed=5, edge_drop_rate_g2=0.1)
    first, second = generate_synthetic(spec), generate_synthetic(spec)
    assert np.array_equal(first.g1.triple_array(), second.g1.triple_array())
    assert np.array_equal(first.g2.triple_array(), second.g2.triple_array())
    assert first.train_seeds == second.train_seeds and first.valid_pairs == second.valid_pairs


def test_undropped_copy_is_isomorphic():
    task, truth = synthetic_pair(3, num_entities=60, relation_renaming=False)
    facts1 = task.g1.triple_array()
    mapped = {(int(truth.entity_map[h]), int(r), int(truth.entity_map[t])) for h, r, t in facts1}
    assert mapped == {tuple(row) for row in task.g2.triple_array().tolist()}
    for u, v in list(task.train_seeds) + list(task.test_pairs):
        assert truth.entity_map[u] == v


def test_renamed_relations_follow_the_hidden_map():
    task, truth = synthetic_pair(8, num_entities=60, num_relations=5)
    assert sorted(truth.relation_map.tolist()) == list(range(5))
    assert all(name.startswith("g2/s") for name in task.names[3])


def test_edge_drops_shrink_each_side_independently():
    task = generate_synthetic(SynthSpec(num_entities=200, rng_seed=1, edge_drop_rate_g1=0.3))
    assert task.g1.num_triples < task.g2.num_triples


def test_fact_count_is_near_the_expected_degree():
    spec = SynthSpec(num_entities=300, avg_degree=4.0, rng_seed=9)
    facts = sample_base_facts(spec, np.random.default_rng(spec.rng_seed))
    assert 600 - 125 <= facts.shape[0] <= 600 + 125
    assert not np.any(facts[:, 0] == facts[:, 2])


def test_mostly_isolated_graph_rejected():
    with pytest.raises(ConfigError, match="isolated"):
        generate_synthetic(SynthSpec(num_entities=100, avg_degree=0.2))


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(edge_drop_rate_g1=1.5).validate()
    with pytest.raises(ConfigError):
        SynthSpec(seed_fraction=0.0).validate()


def test_toml_file_sits_between_defaults_and_flags(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('dim = 8\nablation = "no_interaction"\n[train]\nlr = 0.01\n', encoding="utf-8")
    assert read_config_file(path) == {"dim": 8, "ablation": "no_interaction", "lr": 0.01}
    config = build_config(str(path), {"dim": 16})
    assert config.dim == 16
    assert config.lr == 0.01 and config.ablation == "no_interaction"
    assert config.patience == 10


def test_bad_config_files_rejected(tmp_path):
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("hidden = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="unknown configuration keys"):
        build_config(str(unknown))
    broken = tmp_path / "broken.toml"
    broken.write_text("dim = = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        build_config(str(broken))
    with pytest.raises(ConfigError):
        build_config(str(tmp_path / "absent.toml"))


def test_config_echo_shows_reference_defaults(capsys):
    args = build_parser().parse_args(["pretrain", "--task", "data/none"])
    echo_config(config_from_args(args))
    out = capsys.readouterr().out.splitlines()
    for line in ("config.dim=32", "config.rel_layers=6", "config.ent_layers=6", "config.anchor_hop=2",
                 "config.lr=0.0005", "config.batch_size=64", "config.max_epochs=200", "config.patience=10"):
        assert line in out


def test_layers_flag_sets_both_depths():
    args = build_parser().parse_args(["pretrain", "--task", "t", "--layers", "3"])
    config = config_from_args(args)
    assert config.rel_layers == config.ent_layers == 3


def test_conflicting_depth_flags_rejected():
    args = build_parser().parse_args(["pretrain", "--task", "t", "--layers", "3", "--rel-layers", "2"])
    with pytest.raises(UsageError):
        config_from_args(args)


def test_exit_codes():
    assert exit_code(ConfigError("x")) == EXIT_USAGE
    assert exit_code(DatasetFormatError("x")) == EXIT_DATASET
    assert exit_code(CheckpointError("x")) == EXIT_CHECKPOINT
    assert exit_code(NonFiniteError("x")) == EXIT_NUMERICAL


def test_cli_usage_errors(tmp_path):
    assert main(["pretrain"]) == EXIT_USAGE
    assert main(["pretrain", "--task", str(tmp_path), "--bogus"]) == EXIT_USAGE
    assert main(["pretrain", "--task", str(tmp_path), "-v", "-q"]) == EXIT_USAGE
    assert main(["pretrain", "--task", str(tmp_path), "--layers", "2", "--ent-layers", "2",
                 "--no-registry", "-q"]) == EXIT_USAGE
    assert main(["pretrain", "--task", str(tmp_path), "--patience", "0", "--no-registry", "-q"]) == EXIT_USAGE
    assert main(["hop-sweep", "--task", str(tmp_path), "--mode", "transfer", "--no-registry", "-q"]) == EXIT_USAGE


def test_cli_dataset_and_checkpoint_errors(tmp_path):
    assert main(["pretrain", "--task", str(tmp_path / "absent"), "--no-registry", "-q"]) == EXIT_DATASET
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"not a checkpoint at all")
    small_dataset(tmp_path / "data")
    assert main(["eval", "--model", str(bogus), "--task", str(tmp_path / "data"),
                 "--no-registry", "-q"]) == EXIT_CHECKPOINT


def read_metrics(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return dict(line.split("=", 1) for line in lines if "=" in line)


def test_cli_train_then_eval_and_transfer(tmp_path):
    data, ckpt = tmp_path / "synth", tmp_path / "model.ckpt"
    assert main(["gen-synth", "--out-dir", str(data), "--entities", "40", "--relations", "3",
                 "--seed", "1", "-q"]) == EXIT_OK
    assert main(["pretrain", "--task", str(data), "--dim", "4", "--layers", "1", "--epochs", "2",
                 "--patience", "1", "--batch-size", "8", "--save", str(ckpt), "--out", str(tmp_path / "train.txt"),
                 "--no-registry", "-q"]) == EXIT_OK
    assert ckpt.exists()
    assert main(["eval", "--model", str(ckpt), "--task", str(data), "--out", str(tmp_path / "eval.txt"),
                 "--no-registry", "-q"]) == EXIT_OK
    assert main(["transfer", "--model", str(ckpt), "--task", str(data), "--out", str(tmp_path / "transfer.txt"),
                 "--no-registry", "-q"]) == EXIT_OK

    trained, evaluated, transferred = (read_metrics(tmp_path / name)
                                       for name in ("train.txt", "eval.txt", "transfer.txt"))
    for key in ("mrr", "hits@1", "hits@5", "hits@10", "num_queries"):
        assert evaluated[key] == transferred[key] == trained[key]


def test_cli_grad_check_passes(tmp_path, capsys):
    assert main(["grad-check", "--no-registry", "-q"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "result=PASS" in out
    assert "max_relative_error=" in out


def test_gen_synth_summary_names_the_split(tmp_path, capsys):
    assert main(["gen-synth", "--out-dir", str(tmp_path / "s"), "--entities", "50", "-q"]) == EXIT_OK
    summary = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines() if "=" in line)
    assert summary["entities_g1"] == "50"
    assert int(summary["train_pairs"]) + int(summary["valid_pairs"]) + int(summary["test_pairs"]) == 50
    assert (tmp_path / "s" / "ent_ids_1").exists()




@pytest.mark.parametrize("command", [["pretrain", "--task", "t"], ["grad-check"], ["hop-sweep", "--task", "t"]])
def test_relation_graph_switches_reach_the_config(command):
    args = build_parser().parse_args(command + ["--relgraph-include-inverses", "false", "--rel-aggregation", "sum"])
    config = config_from_args(args)
    assert config.relgraph_include_inverses is False
    assert config.rel_aggregation == "sum"
    assert config_from_args(build_parser().parse_args(command)).relgraph_include_inverses is True


def test_bad_switch_value_is_a_usage_error():
    assert main(["grad-check", "--relgraph-include-inverses", "maybe", "--no-registry", "-q"]) == EXIT_USAGE
    assert main(["grad-check", "--rel-aggregation", "max", "--no-registry", "-q"]) == EXIT_USAGE


def test_grad_check_without_inverse_edges(capsys):
    assert main(["grad-check", "--relgraph-include-inverses", "false", "--no-registry", "-q"]) == EXIT_OK
    assert "result=PASS" in capsys.readouterr().out


def test_eval_reads_settings_from_a_config_file_and_breaks_down_by_degree(tmp_path):
    data, ckpt = tmp_path / "synth", tmp_path / "model.ckpt"
    assert main(["gen-synth", "--out-dir", str(data), "--entities", "40", "--relations", "3",
                 "--seed", "2", "-q"]) == EXIT_OK
    assert main(["pretrain", "--task", str(data), "--dim", "4", "--layers", "1", "--epochs", "1",
                 "--patience", "1", "--save", str(ckpt), "--no-registry", "-q"]) == EXIT_OK

    settings = tmp_path / "eval.toml"
    settings.write_text('[train]\ndirection = "mean"\nanchor_hop = 1\n', encoding="utf-8")
    assert main(["eval", "--model", str(ckpt), "--task", str(data), "--config", str(settings),
                 "--breakdown", "degree", "--out", str(tmp_path / "eval.txt"), "--no-registry", "-q"]) == EXIT_OK
    metrics = read_metrics(tmp_path / "eval.txt")
    assert metrics["direction"] == "mean"
    bucket_counts = [float(value) for key, value in metrics.items()
                     if key.startswith("degree[") and key.endswith("].num_queries")]
    assert bucket_counts and sum(bucket_counts) == int(metrics["num_queries"])

    assert main(["transfer", "--model", str(ckpt), "--task", str(data), "--config", str(settings),
                 "--no-registry", "-q"]) == EXIT_OK
    resized = tmp_path / "resized.toml"
    resized.write_text("dim = 8\n", encoding="utf-8")
    assert main(["eval", "--model", str(ckpt), "--task", str(data), "--config", str(resized),
                 "--no-registry", "-q"]) == EXIT_USAGE


def test_relgraph_command_writes_the_edge_list(tmp_path, capsys):
    data = small_dataset(tmp_path / "data")
    edges = tmp_path / "relgraph.tsv"
    assert main(["relgraph", "--task", str(data), "--edges", str(edges), "-q"]) == EXIT_OK
    summary = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines() if "=" in line)
    lines = edges.read_text(encoding="utf-8").splitlines()
    assert len(lines) == int(summary["relation_edges"])
    assert all(len(line.split("\t")) == 3 for line in lines)

    bare = tmp_path / "bare.tsv"
    assert main(["relgraph", "--task", str(data), "--edges", str(bare), "--relgraph-include-inverses", "false",
                 "-q"]) == EXIT_OK
    assert len(bare.read_text(encoding="utf-8").splitlines()) < len(lines)
