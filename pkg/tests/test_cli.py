from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

import e2e
from deeprefine.cli import RunConfig
from deeprefine.cli import main as cli_main
from deeprefine.errors import ConfigError
from deeprefine.kb import KnowledgeBase


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def world(tmp_path):
    return e2e.write_world(tmp_path / "world")


class TestRunConfig:
    def test_defaults_without_file(self):
        cfg = RunConfig()
        assert cfg.seed == 0
        assert cfg.gateway_mode == "mock"
        assert (cfg.coverage.k, cfg.coverage.m) == (10, 500)
        assert (cfg.coverage.budget, cfg.coverage.rho) == (1000, 0.8)

    def test_minimal_toml_keeps_selection_defaults(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('[paths]\nkb = "kb.jsonl"\n', encoding="utf-8")
        cfg = RunConfig.from_toml(path)
        assert cfg.kb_path == "kb.jsonl"
        assert (cfg.coverage.k, cfg.coverage.m) == (10, 500)
        assert (cfg.coverage.budget, cfg.coverage.rho) == (1000, 0.8)

    def test_toml_overrides(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text(
            'seed = 42\n[coverage]\nk = 3\nrho = 1.0\n[retrieval]\nmax_hops = 0\n',
            encoding="utf-8")
        cfg = RunConfig.from_toml(path)
        assert cfg.seed == 42
        assert cfg.coverage.k == 3
        assert cfg.coverage.rho == 1.0
        assert cfg.retrieval.max_hops == 0

    def test_invalid_values_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('[coverage]\nrho = 2.0\n', encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_toml(path)

    def test_bad_toml_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("not toml ===", encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_toml(path)

    def test_unknown_gateway_mode_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text('[gateway]\nmode = "telepathy"\n', encoding="utf-8")
        with pytest.raises(ConfigError):
            RunConfig.from_toml(path)


class TestRefine:
    def test_end_to_end_repairs_all_defects(self, runner, world):
        result = runner.invoke(cli_main, ["refine", "--config", str(world["config"])])
        assert result.exit_code == 0, result.output
        refined = KnowledgeBase.load(world["out_dir"] / "refined_kb.jsonl")
        assert refined.triples == world["final_kb"].triples
        assert refined.triples == frozenset(e2e.CLEAN_TRIPLES) == refined.triples

        stream = [json.loads(line) for line in
                  (world["out_dir"] / "stream_report.jsonl").read_text().splitlines()]
        assert [e["outcome"] for e in stream] == ["refined"] * 3
        assert all(e["wall_ms"] == 0 for e in stream)

        rollout = [json.loads(line) for line in
                   (world["out_dir"] / "rollout.jsonl").read_text().splitlines()]
        assert len(rollout) == 3
        assert all(r["draft_acc"] == 0 and r["refined_acc"] == 1 for r in rollout)
        assert all(r["shaped_reward"] == 1.0 for r in rollout)
        assert all(r["gbd"] == 1 for r in rollout)
        # a constant-reward group standardizes to zero advantage
        assert all(r["advantage"] == 0.0 for r in rollout)

    def test_dry_run_plans_without_writing(self, runner, world):
        result = runner.invoke(cli_main, ["refine", "--config", str(world["config"]),
                                          "--dry-run"])
        assert result.exit_code == 0, result.output
        plan = json.loads(result.output)
        assert plan == {"planned_queries": e2e.QUERY_ORDER}
        assert not (world["out_dir"] / "refined_kb.jsonl").exists()

    def test_missing_kb_is_usage_error(self, runner, world, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text(world["config"].read_text().replace(
            str(world["kb"]), str(tmp_path / "nope.jsonl")), encoding="utf-8")
        result = runner.invoke(cli_main, ["refine", "--config", str(bad)])
        assert result.exit_code == 2
        assert "config error" in result.output

    def test_no_fixtures_is_usage_error(self, runner, world, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text(world["config"].read_text().replace(
            'fixtures = "', 'ignored = "'), encoding="utf-8")
        result = runner.invoke(cli_main, ["refine", "--config", str(bad)])
        assert result.exit_code == 2

    def test_byte_determinism(self, runner, world, tmp_path):
        outputs = []
        for name in ("run1", "run2"):
            out = tmp_path / name
            result = runner.invoke(cli_main, ["refine", "--config",
                                              str(world["config"]),
                                              "--out-dir", str(out)])
            assert result.exit_code == 0, result.output
            outputs.append({
                f: (out / f).read_bytes()
                for f in ("refined_kb.jsonl", "stream_report.jsonl", "rollout.jsonl")
            })
        assert outputs[0] == outputs[1]


class TestEval:
    def test_summary_after_refinement(self, runner, world):
        assert runner.invoke(cli_main, ["refine", "--config",
                                        str(world["config"])]).exit_code == 0
        result = runner.invoke(cli_main, ["eval", "--config", str(world["config"])])
        assert result.exit_code == 0, result.output
        summary = json.loads(result.output)
        assert summary["n_queries"] == 3
        assert summary["mean_gbd"] == 1.0
        assert summary["mean_shaped_reward"] == 1.0
        assert summary["transitions"] == {"0->1": 3}
        on_disk = json.loads((world["out_dir"] / "eval_summary.json").read_text())
        assert on_disk == summary
        records = [json.loads(line) for line in
                   (world["out_dir"] / "eval_records.jsonl").read_text().splitlines()]
        assert [r["query_id"] for r in records] == e2e.QUERY_ORDER


class TestSelect:
    def test_selection_covers_queries(self, runner, world, tmp_path):
        cfg = tmp_path / "select.toml"
        cfg.write_text(world["config"].read_text() +
                       '\n[coverage]\nk = 3\nm = 5\nbudget = 10\nrho = 1.0\n',
                       encoding="utf-8")
        result = runner.invoke(cli_main, ["select", "--config", str(cfg)])
        assert result.exit_code == 0, result.output
        payload = json.loads(result.output)
        assert set(payload["selected"]) <= set(e2e.QUERY_ORDER)
        assert payload["coverage"] == 1.0
        report = [json.loads(line) for line in
                  (world["out_dir"] / "selection_report.jsonl").read_text().splitlines()]
        assert [e["rank"] for e in report] == list(range(1, len(report) + 1))

    def test_determinism(self, runner, world):
        results = [runner.invoke(cli_main, ["select", "--config",
                                            str(world["config"])])
                   for _ in range(2)]
        assert results[0].exit_code == results[1].exit_code == 0
        assert results[0].output == results[1].output


class TestCorrupt:
    def test_all_types_partition(self, runner, tmp_path):
        world = e2e.write_corrupt_world(tmp_path / "bench-world")
        result = runner.invoke(cli_main, ["corrupt", "--config",
                                          str(world["config"]), "--type", "all"])
        assert result.exit_code == 0, result.output
        totals = json.loads(result.output)
        assert set(totals) == {"incompleteness", "incorrectness", "redundancy"}
        for error_type, counts in totals.items():
            assert counts == {"accepted": 1, "rejected": 0}, error_type
            manifest = json.loads(
                (world["out_dir"] / error_type / "manifest.json").read_text())
            assert manifest["error_type"] == error_type
            assert manifest["n_samples"] == 1

    def test_single_type(self, runner, tmp_path):
        world = e2e.write_corrupt_world(tmp_path / "bench-world")
        result = runner.invoke(cli_main, ["corrupt", "--config", str(world["config"]),
                                          "--type", "incompleteness"])
        assert result.exit_code == 0, result.output
        totals = json.loads(result.output)
        assert list(totals) == ["incompleteness"]

    def test_unknown_type_is_usage_error(self, runner, tmp_path):
        world = e2e.write_corrupt_world(tmp_path / "bench-world")
        result = runner.invoke(cli_main, ["corrupt", "--config", str(world["config"]),
                                          "--type", "entropy"])
        assert result.exit_code == 2
