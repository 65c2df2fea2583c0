from __future__ import annotations

import json
from pathlib import Path

import yaml

from contexthsd.cli import main

SMOKE = Path(__file__).parent / "data" / "smoke"


def _write_config(tmp_path: Path, out_name: str = "out", **overrides) -> Path:
    payload = {
        "corpus": {"name": "latent_hatred", "path": str(SMOKE / "latent_small.tsv")},
        "output_dir": str(tmp_path / out_name),
        "split": {"ratio": 0.8, "seed": 1234},
        "provider": {"id": "mock-echo", "parallelism": 2},
        "encoder": {"id": "mock"},
        "ner": {"backend": "lexicon", "lexicon_path": str(SMOKE / "ner_lexicon.json")},
        "linker": {"fixture_path": str(SMOKE / "linker_fixture.json")},
        "concepts": {"table_path": str(SMOKE / "concept_table.txt")},
        "classifier": {"epochs": 15, "batch_size": 16},
        "strategies": ["zero_context", "ft+embed_concat"],
        "tasks": ["binary"],
        "runs": 2,
        "seed_base": 7,
    }
    payload.update(overrides)
    path = tmp_path / f"config_{out_name}.yaml"
    path.write_text(yaml.safe_dump(payload))
    return path


def _run_full_pipeline(config: Path) -> None:
    assert main(["ingest", "--config", str(config)]) == 0
    assert main(["gen-context", "--config", str(config), "--mode", "ft"]) == 0
    assert main(["represent", "--config", str(config)]) == 0
    assert main(["train", "--config", str(config)]) == 0
    assert main(["eval", "--config", str(config)]) == 0
    assert main([
        "compare", "--config", str(config),
        "--task", "binary", "--run-a", "zero_context", "--run-b", "ft+embed_concat",
    ]) == 0
    assert main(["plot", "--config", str(config)]) == 0


def _report_tree(out: Path) -> dict[str, bytes]:
    tree = {}
    for path in sorted(out.rglob("*")):
        if not path.is_file():
            continue
        rel = str(path.relative_to(out))
        if rel.startswith("cache/") or path.suffix in (".png", ".npz", ".npy"):
            continue  # timestamps / binary containers compared separately
        tree[rel] = path.read_bytes()
    return tree


class TestFullMockPipeline:
    def test_complete_report_tree(self, tmp_path):
        config = _write_config(tmp_path)
        _run_full_pipeline(config)
        out = tmp_path / "out"
        expected = [
            "manifests/latent_hatred_split.jsonl",
            "reports/ingest_stats.json",
            "reports/binary_zero_context/aggregate.json",
            "reports/binary_zero_context/seed7_metrics.json",
            "reports/binary_zero_context/seed7_predictions.jsonl",
            "reports/binary_zero_context/seed8_metrics.json",
            "reports/binary_ft+embed_concat/aggregate.json",
            "reports/compare_binary_zero_context_vs_ft+embed_concat.json",
            "reports/compare_binary_zero_context_vs_ft+embed_concat.txt",
            "plots/summary_f1.csv",
            "plots/summary_f1.md",
            "plots/confusion_binary_zero_context.csv",
            "plots/confusion_binary_zero_context.png",
            "models/binary_zero_context/seed7.npz",
            "models/binary_ft+embed_concat/seed8.npz",
            "representations/zero_context/train.npy",
            "representations/ft+embed_concat/test.manifest.json",
        ]
        for rel in expected:
            assert (out / rel).exists(), rel

        aggregate = json.loads((out / "reports/binary_zero_context/aggregate.json").read_text())
        assert aggregate["n_runs"] == 2
        assert aggregate["seeds"] == [7, 8]
        assert "macro_f1" in aggregate["mean"]

    def test_deterministic_across_identical_runs(self, tmp_path):
        config_a = _write_config(tmp_path, out_name="out_a")
        config_b = _write_config(tmp_path, out_name="out_b")
        _run_full_pipeline(config_a)
        _run_full_pipeline(config_b)
        tree_a = _report_tree(tmp_path / "out_a")
        tree_b = _report_tree(tmp_path / "out_b")
        assert set(tree_a) == set(tree_b)
        for rel in tree_a:
            if rel.startswith("stamps/"):
                continue
            assert tree_a[rel] == tree_b[rel], f"report artifact differs: {rel}"
        # Model parameters byte-identical too.
        from contexthsd.mlp import load_model

        for rel in ("models/binary_zero_context/seed7.npz", "models/binary_ft+embed_concat/seed8.npz"):
            model_a, _ = load_model(tmp_path / "out_a" / rel)
            model_b, _ = load_model(tmp_path / "out_b" / rel)
            for (w1, b1), (w2, b2) in zip(model_a.params, model_b.params):
                assert w1.tobytes() == w2.tobytes()
                assert b1.tobytes() == b2.tobytes()

    def test_rerun_is_noop_up_to_date(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        _run_full_pipeline(config)
        capsys.readouterr()
        assert main(["represent", "--config", str(config)]) == 0
        assert main(["train", "--config", str(config)]) == 0
        assert main(["eval", "--config", str(config)]) == 0
        output = capsys.readouterr().out
        assert output.count("up-to-date") >= 6

    def test_second_gen_pass_adds_nothing(self, tmp_path, capsys):
        config = _write_config(tmp_path)
        assert main(["ingest", "--config", str(config)]) == 0
        assert main(["gen-context", "--config", str(config), "--mode", "ft"]) == 0
        capsys.readouterr()
        assert main(["gen-context", "--config", str(config), "--mode", "ft"]) == 0
        assert "0 new cache records" in capsys.readouterr().out

    def test_compare_run_with_itself_empty_off_diagonal(self, tmp_path):
        config = _write_config(tmp_path)
        _run_full_pipeline(config)
        assert main([
            "compare", "--config", str(config),
            "--task", "binary", "--run-a", "zero_context", "--run-b", "zero_context",
        ]) == 0
        report = json.loads(
            (tmp_path / "out" / "reports" / "compare_binary_zero_context_vs_zero_context.json").read_text()
        )
        assert report["a_only_correct"] == []
        assert report["b_only_correct"] == []


class TestExitCodes:
    def test_validation_error_exit_1(self, tmp_path):
        config = _write_config(tmp_path, tasks=["multilabel"])  # not a tweet task
        assert main(["ingest", "--config", str(config)]) == 1

    def test_upstream_missing_exit_2(self, tmp_path):
        config = _write_config(tmp_path)
        assert main(["ingest", "--config", str(config)]) == 0
        # represent before gen-context: contexts are missing upstream
        assert main(["represent", "--config", str(config), "--strategy", "ft+embed_concat"]) == 2

    def test_eval_before_train_exit_2(self, tmp_path):
        config = _write_config(tmp_path)
        assert main(["ingest", "--config", str(config)]) == 0
        assert main(["gen-context", "--config", str(config), "--mode", "ft"]) == 0
        assert main(["represent", "--config", str(config)]) == 0
        assert main(["eval", "--config", str(config), "--strategy", "zero_context", "--task", "binary"]) == 2

    def test_meme_context_embed_train_without_assets_exit_2(self, tmp_path):
        config = _write_config(
            tmp_path,
            corpus={"name": "mami", "path": str(SMOKE / "mami_small")},
            tasks=["binary"],
            strategies=["mm+context_embed"],
        )
        assert main(["ingest", "--config", str(config)]) == 0
        assert main(["train", "--config", str(config)]) == 2

    def test_ne_mode_on_meme_corpus_exit_1(self, tmp_path):
        config = _write_config(
            tmp_path,
            corpus={"name": "mami", "path": str(SMOKE / "mami_small")},
            tasks=["binary"],
            strategies=["zero_context"],
        )
        assert main(["gen-context", "--config", str(config), "--mode", "ne"]) == 1

    def test_missing_config_exit_1(self, tmp_path):
        assert main(["ingest", "--config", str(tmp_path / "nope.yaml")]) == 1

    def test_bad_corpus_path_exit_1(self, tmp_path):
        config = _write_config(tmp_path, corpus={"name": "latent_hatred", "path": "/nonexistent.tsv"})
        assert main(["ingest", "--config", str(config)]) == 1


class TestFailureThreshold:
    def test_exit_3_when_provider_keeps_failing(self, tmp_path, monkeypatch):
        config = _write_config(tmp_path, failure_threshold=0.01)
        assert main(["ingest", "--config", str(config)]) == 0

        from contexthsd import pipeline as pl
        from contexthsd.contextgen import GenerationSession
        from contexthsd.errors import RetriableBackendError
        from contexthsd.providers import RetryPolicy

        class AlwaysFails:
            provider_id = "mock-fails"
            capabilities = frozenset({"text", "image"})

            def complete(self, request):
                raise RetriableBackendError("down")

        def broken_session(config):
            from contexthsd.cache import ContextStore

            return GenerationSession(
                provider=AlwaysFails(),
                store=ContextStore(config.resolved_cache_path()),
                retry=RetryPolicy(attempts=2, base_delay=0.0, sleep=lambda _s: None),
            )

        monkeypatch.setattr(pl, "_session", broken_session)
        assert main(["gen-context", "--config", str(config), "--mode", "ft"]) == 3


class TestMemePipeline:
    def test_full_meme_lane(self, tmp_path):
        config = _write_config(
            tmp_path,
            corpus={"name": "mami", "path": str(SMOKE / "mami_small")},
            strategies=["zero_context", "mm+embed_concat", "mm+llm_enhance"],
            tasks=["binary", "multilabel"],
            runs=2,
            classifier={"epochs": 10, "batch_size": 8},
        )
        assert main(["ingest", "--config", str(config)]) == 0
        assert main(["gen-context", "--config", str(config), "--mode", "mm"]) == 0
        assert main(["gen-context", "--config", str(config), "--mode", "enhance-mm"]) == 0
        assert main(["represent", "--config", str(config)]) == 0
        assert main(["train", "--config", str(config)]) == 0
        assert main(["eval", "--config", str(config)]) == 0
        out = tmp_path / "out"
        aggregate = json.loads((out / "reports/multilabel_mm+embed_concat/aggregate.json").read_text())
        assert aggregate["task"] == "multilabel"
        report = aggregate["runs"][0]
        assert set(report["confusion"]) == {"shaming", "stereotype", "objectification", "violence"}

    def test_llm_prediction_baseline_writes_reports(self, tmp_path):
        config = _write_config(
            tmp_path,
            strategies=["llm_prediction"],
            tasks=["binary"],
        )
        assert main(["ingest", "--config", str(config)]) == 0
        assert main(["eval", "--config", str(config)]) == 0
        out = tmp_path / "out"
        report = json.loads((out / "reports/binary_llm_prediction/seed7_metrics.json").read_text())
        # The echo mock never replies yes/no: every item is an abstention.
        assert report["extras"]["abstentions"] == 11
