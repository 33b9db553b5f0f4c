"""Operator entry point: refine / eval / select / corrupt.

Configuration comes from a single TOML file; command-line flags win over
config values. All randomness flows from one seed, and with the mock
gateway every command is byte-deterministic in its outputs.
"""

from __future__ import annotations

import json
import sys

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path

import click

from . import corrupt as corrupt_mod
from . import coverage as coverage_mod
from . import pipeline, rewards
from .actions import render_actions
from .errors import ConfigError, DeepRefineError
from .gateway import HttpChatClient, RetryingClient, ScriptedMockClient
from .kb import KnowledgeBase
from .retrieval import HashingEmbedder, RetrievalConfig

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


@dataclass
class RunConfig:
    seed: int = 0
    kb_path: str | None = None
    draft_kb_path: str | None = None
    refined_kb_path: str | None = None
    queries_path: str | None = None
    out_dir: str = "out"
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    horizon: int = pipeline.DEFAULT_HORIZON
    batch_cap: int = 64
    coverage: coverage_mod.CoverageConfig = field(
        default_factory=coverage_mod.CoverageConfig)
    coverage_enabled: bool = False
    gateway_mode: str = "mock"  # mock | http
    fixtures_path: str | None = None
    endpoint: str = ""
    model: str = ""
    api_key: str | None = None
    embed_dim: int = 64
    corrupt_type: str = "incompleteness"  # one of the error types, or "all"
    corrupt_max_actions: int = 5
    corrupt_f1_keep_min: float = 0.95
    corrupt_f1_drop_max: float = 0.6
    corrupt_redundancy_mode: str = "alias"

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = cls()
        cfg.seed = int(data.get("seed", cfg.seed))
        paths = data.get("paths", {})
        cfg.kb_path = paths.get("kb")
        cfg.draft_kb_path = paths.get("draft_kb")
        cfg.refined_kb_path = paths.get("refined_kb")
        cfg.queries_path = paths.get("queries")
        cfg.out_dir = paths.get("out_dir", cfg.out_dir)
        r = data.get("retrieval", {})
        try:
            cfg.retrieval = RetrievalConfig(
                top_n=int(r.get("top_n", 5)),
                expand_m=int(r.get("expand_m", 10)),
                max_hops=int(r.get("max_hops", 2)))
            c = data.get("coverage", {})
            cfg.coverage = coverage_mod.CoverageConfig(
                k=int(c.get("k", 10)), m=int(c.get("m", 500)),
                budget=int(c.get("budget", 1000)), rho=float(c.get("rho", 0.8)))
            cfg.coverage_enabled = bool(c.get("enabled", False))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        p = data.get("pipeline", {})
        cfg.horizon = int(p.get("horizon", cfg.horizon))
        cfg.batch_cap = int(p.get("batch_cap", cfg.batch_cap))
        if cfg.horizon < 1 or cfg.batch_cap < 1:
            raise ConfigError("horizon and batch_cap must be >= 1")
        g = data.get("gateway", {})
        cfg.gateway_mode = g.get("mode", cfg.gateway_mode)
        if cfg.gateway_mode not in ("mock", "http"):
            raise ConfigError(f"unknown gateway mode {cfg.gateway_mode!r}")
        cfg.fixtures_path = g.get("fixtures")
        cfg.endpoint = g.get("endpoint", "")
        cfg.model = g.get("model", "")
        cfg.api_key = g.get("api_key")
        e = data.get("embedding", {})
        cfg.embed_dim = int(e.get("dim", cfg.embed_dim))
        if cfg.embed_dim < 2:
            raise ConfigError("embedding dim must be >= 2")
        co = data.get("corrupt", {})
        cfg.corrupt_type = co.get("error_type", cfg.corrupt_type)
        cfg.corrupt_max_actions = int(co.get("max_actions", cfg.corrupt_max_actions))
        cfg.corrupt_f1_keep_min = float(co.get("f1_keep_min", cfg.corrupt_f1_keep_min))
        cfg.corrupt_f1_drop_max = float(co.get("f1_drop_max", cfg.corrupt_f1_drop_max))
        cfg.corrupt_redundancy_mode = co.get("redundancy_mode",
                                             cfg.corrupt_redundancy_mode)
        return cfg

    def require_paths(self, *names: str) -> None:
        for name in names:
            value = getattr(self, f"{name}_path")
            if not value:
                raise ConfigError(f"config is missing paths.{name}")
            if not Path(value).exists():
                raise ConfigError(f"paths.{name} does not exist: {value}")


def _load_config(config_path: str | None, seed: int | None,
                 mock_fixtures: str | None, out_dir: str | None) -> RunConfig:
    cfg = RunConfig.from_toml(config_path) if config_path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    if mock_fixtures is not None:
        cfg.gateway_mode = "mock"
        cfg.fixtures_path = mock_fixtures
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg


def _build_client(cfg: RunConfig):
    if cfg.gateway_mode == "mock":
        if not cfg.fixtures_path:
            raise ConfigError("mock gateway requires a fixtures path")
        if not Path(cfg.fixtures_path).exists():
            raise ConfigError(f"fixtures file does not exist: {cfg.fixtures_path}")
        return ScriptedMockClient.from_jsonl(cfg.fixtures_path)
    if not cfg.endpoint or not cfg.model:
        raise ConfigError("http gateway requires endpoint and model")
    return RetryingClient(HttpChatClient(cfg.endpoint, cfg.model, api_key=cfg.api_key))


def _provider(cfg: RunConfig) -> HashingEmbedder:
    return HashingEmbedder(dim=cfg.embed_dim, seed=cfg.seed)


_GLOBAL_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(), default=None,
                 help="TOML config file."),
    click.option("--seed", type=int, default=None, help="Override the run seed."),
    click.option("--mock-fixtures", type=click.Path(), default=None,
                 help="Use the scripted mock gateway with this fixtures JSONL."),
    click.option("--out-dir", type=click.Path(), default=None,
                 help="Override the output directory."),
]


def _with_global_options(fn):
    for option in reversed(_GLOBAL_OPTIONS):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Post-construction knowledge-base refinement toolkit."""


@main.command("refine")
@_with_global_options
@click.option("--dry-run", is_flag=True, help="Print the planned selection, no edits.")
def cmd_refine(config_path, seed, mock_fixtures, out_dir, dry_run):
    """Refine a KB against a query stream; write refined KB, report, rollout log."""
    try:
        cfg = _load_config(config_path, seed, mock_fixtures, out_dir)
        cfg.require_paths("kb", "queries")
        client = _build_client(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        provider = _provider(cfg)
        kb = KnowledgeBase.load(cfg.kb_path)
        samples = pipeline.load_queries(cfg.queries_path)

        selection_entries: list[dict] = []
        selected_ids = None
        if cfg.coverage_enabled:
            covs = [coverage_mod.coverage_set(s.question, kb, cfg.coverage,
                                              provider, query_id=s.id)
                    for s in samples]
            selected_ids = coverage_mod.greedy_select(covs, cfg.coverage,
                                                      report=selection_entries)
        if dry_run:
            plan = selected_ids if selected_ids is not None else [s.id for s in samples]
            click.echo(json.dumps({"planned_queries": plan}))
            sys.exit(EXIT_OK)

        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rollout_path = out / "rollout.jsonl"
        rollout_path.write_text("", encoding="utf-8")
        deterministic = cfg.gateway_mode == "mock"
        group_id = f"run-seed-{cfg.seed}"

        ordered = samples if selected_ids is None else [
            s for s in samples if s.id in set(selected_ids)]
        report = pipeline.StreamReport()
        import time
        for sample in ordered:
            started = time.perf_counter()
            kb_before = kb
            kb, outcome = pipeline.refine_query(
                sample, kb, cfg.retrieval, provider, client,
                horizon=cfg.horizon, batch_cap=cfg.batch_cap)
            wall_ms = 0 if deterministic else int((time.perf_counter() - started) * 1000)
            report.entries.append({
                "id": sample.id, "skipped": outcome.skipped,
                "hops": (len(outcome.history.records) - 1) if outcome.history else 0,
                "n_actions": len(outcome.actions), "outcome": outcome.status,
                "wall_ms": wall_ms,
            })
            if outcome.status == "refined" and sample.golden_answers:
                draft = rewards.read_answer(sample.question, kb_before,
                                            cfg.retrieval.top_n, provider, client,
                                            query_id=sample.id)
                refined = rewards.read_answer(sample.question, kb,
                                              cfg.retrieval.top_n, provider, client,
                                              query_id=sample.id)
                reward = rewards.gbd(rewards.AnswerRecord(
                    query_id=sample.id, draft_answer=draft, refined_answer=refined,
                    golds=sample.golden_answers, question=sample.question), client)
                rewards.log_rollout(rewards.rollout_entry(
                    group_id=group_id, query_id=sample.id,
                    prompts=[user for _, user, _ in outcome.transcript],
                    responses=[resp for _, _, resp in outcome.transcript],
                    actions_text=render_actions(outcome.actions),
                    reward=reward), rollout_path)
        rewards.fill_advantages_file(rollout_path)
        kb.save(out / "refined_kb.jsonl")
        report.save(out / "stream_report.jsonl")
        if selection_entries:
            coverage_mod.save_selection_report(selection_entries,
                                               out / "selection_report.jsonl")
        sys.exit(EXIT_OK)
    except DeepRefineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


@main.command("eval")
@_with_global_options
def cmd_eval(config_path, seed, mock_fixtures, out_dir):
    """Score a refined KB against its draft: per-query rewards plus a summary."""
    try:
        cfg = _load_config(config_path, seed, mock_fixtures, out_dir)
        cfg.require_paths("draft_kb", "refined_kb", "queries")
        client = _build_client(cfg)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        provider = _provider(cfg)
        draft_kb = KnowledgeBase.load(cfg.draft_kb_path)
        refined_kb = KnowledgeBase.load(cfg.refined_kb_path)
        samples = pipeline.load_queries(cfg.queries_path)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)

        records = []
        for sample in samples:
            draft = rewards.read_answer(sample.question, draft_kb,
                                        cfg.retrieval.top_n, provider, client,
                                        query_id=sample.id)
            refined = rewards.read_answer(sample.question, refined_kb,
                                          cfg.retrieval.top_n, provider, client,
                                          query_id=sample.id)
            records.append(rewards.gbd(rewards.AnswerRecord(
                query_id=sample.id, draft_answer=draft, refined_answer=refined,
                golds=sample.golden_answers, question=sample.question), client))
        with open(out / "eval_records.jsonl", "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
        n = len(records)
        summary = {
            "n_queries": n,
            "mean_gbd": sum(r.gbd for r in records) / n if n else 0.0,
            "mean_shaped_reward": sum(r.shaped for r in records) / n if n else 0.0,
            "mean_f1_draft": sum(r.f1_draft for r in records) / n if n else 0.0,
            "mean_f1_refined": sum(r.f1_refined for r in records) / n if n else 0.0,
            "transitions": {
                f"{r.draft_acc}->{r.refined_acc}": sum(
                    1 for x in records
                    if (x.draft_acc, x.refined_acc) == (r.draft_acc, r.refined_acc))
                for r in records
            },
        }
        (out / "eval_summary.json").write_text(
            json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        click.echo(json.dumps(summary))
        sys.exit(EXIT_OK)
    except DeepRefineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


@main.command("select")
@_with_global_options
def cmd_select(config_path, seed, mock_fixtures, out_dir):
    """Greedy maximum-coverage query selection; writes selection_report.jsonl."""
    try:
        cfg = _load_config(config_path, seed, mock_fixtures, out_dir)
        cfg.require_paths("kb", "queries")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        provider = _provider(cfg)
        kb = KnowledgeBase.load(cfg.kb_path)
        samples = pipeline.load_queries(cfg.queries_path)
        covs = [coverage_mod.coverage_set(s.question, kb, cfg.coverage,
                                          provider, query_id=s.id)
                for s in samples]
        entries: list[dict] = []
        selected = coverage_mod.greedy_select(covs, cfg.coverage, report=entries)
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        coverage_mod.save_selection_report(entries, out / "selection_report.jsonl")
        click.echo(json.dumps({"selected": selected,
                               "coverage": coverage_mod.coverage_fraction(
                                   selected, covs)}))
        sys.exit(EXIT_OK)
    except DeepRefineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


@main.command("corrupt")
@_with_global_options
@click.option("--type", "error_type", default=None,
              help="Error type to inject, or 'all'.")
def cmd_corrupt(config_path, seed, mock_fixtures, out_dir, error_type):
    """Build a corruption benchmark from per-sample clean KBs.

    The queries file must carry a 'kb' field per line pointing at the
    sample's clean KB (relative to the queries file).
    """
    try:
        cfg = _load_config(config_path, seed, mock_fixtures, out_dir)
        cfg.require_paths("queries")
        client = _build_client(cfg)
        if error_type:
            cfg.corrupt_type = error_type
        types = (list(corrupt_mod.ERROR_TYPES) if cfg.corrupt_type == "all"
                 else [cfg.corrupt_type])
        for t in types:
            if t not in corrupt_mod.ERROR_TYPES:
                raise ConfigError(f"unknown corruption type {t!r}")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_USAGE)
    try:
        provider = _provider(cfg)
        base_dir = Path(cfg.queries_path).parent
        inputs: list[tuple[pipeline.QuerySample, KnowledgeBase]] = []
        with open(cfg.queries_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                sample = pipeline.QuerySample.from_dict(obj)
                inputs.append((sample, KnowledgeBase.load(base_dir / obj["kb"])))
        out = Path(cfg.out_dir)
        totals = {}
        for t in types:
            spec = corrupt_mod.CorruptionSpec(
                error_type=t, max_actions=cfg.corrupt_max_actions,
                target_top_n=cfg.retrieval.top_n,
                f1_keep_min=cfg.corrupt_f1_keep_min,
                f1_drop_max=cfg.corrupt_f1_drop_max,
                redundancy_mode=cfg.corrupt_redundancy_mode)
            rejected: list = []
            accepted = corrupt_mod.build_benchmark(
                inputs, spec, provider, client, rejected=rejected)
            corrupt_mod.save_benchmark(
                accepted, out / t,
                manifest_extra={"error_type": t, "seed": cfg.seed,
                                "rejected": [{"id": i, "reason": r}
                                             for i, r in rejected]})
            totals[t] = {"accepted": len(accepted), "rejected": len(rejected)}
        click.echo(json.dumps(totals))
        sys.exit(EXIT_OK)
    except DeepRefineError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)


if __name__ == "__main__":
    main()
