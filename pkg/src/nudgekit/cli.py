"""Command-line entry points for the daily nudging cycle.

A data directory holds everything one deployment needs:

    catalog.yaml          marker catalog + segment definitions
    participants.jsonl    participant records
    nudges.jsonl          nudge library (templates + targeting rules)
    events.jsonl          interaction events
    history.jsonl         delivery history (written by `score`)
    model.npz             model checkpoint
    selections_<d>.jsonl  published runs, feedback.jsonl, telemetry/...
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import yaml

from . import __version__
from .benchmark import (
    compare_kernel_backends,
    kernel_report_lines,
    scaling_benchmark,
    scaling_report_lines,
)
from .candidates import rules_from_library
from .catalog import load_catalog, save_catalog
from .evaluation import (
    build_eval_snapshot,
    evaluate_split,
    grid_search,
    grid_table_lines,
    holdout_split,
    metric_stability,
    positive_pairs,
    table_search_space,
)
from .graph import construct_graph
from .model import kernels
from .model.params import (
    HyperParams,
    init_embeddings,
    load_checkpoint,
    save_checkpoint,
    warm_start,
)
from .model.training import train
from .pipeline import (
    DeliveryHistory,
    PipelineConfig,
    load_history,
    load_pipeline_config,
    save_history,
)
from .records import (
    read_events,
    read_nudge_library,
    read_participants,
    write_events,
    write_nudge_library,
    write_participants,
)
from .runner import PipelineError, PipelineInputs, record_sent, run_parallel
from .serving import ServingStore
from .synth import PopulationSpec, bench_population, generate_population
from .telemetry import append_records, read_records


def _load_hyperparams(config_path) -> HyperParams:
    if config_path is None:
        return HyperParams()
    with open(config_path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    model = data.get("model", {})
    if "layer_dims" in model:
        model["layer_dims"] = tuple(model["layer_dims"])
    if "positive_relations" in model:
        model["positive_relations"] = tuple(model["positive_relations"])
    return HyperParams(**model)


def _load_pipeline_cfg(config_path) -> PipelineConfig:
    if config_path is None:
        return PipelineConfig()
    return load_pipeline_config(config_path)


class _DataDir:
    def __init__(self, root) -> None:
        self.root = Path(root)

    @property
    def catalog(self):
        return load_catalog(self.root / "catalog.yaml")

    @property
    def participants(self):
        records = {p.user_id: p for p in read_participants(self.root / "participants.jsonl")}
        staged = self.root / "participants_staged.jsonl"
        if staged.exists():
            for record in read_participants(staged):
                records[record.user_id] = record
        return [records[k] for k in sorted(records)]

    @property
    def templates(self):
        return read_nudge_library(self.root / "nudges.jsonl")

    @property
    def events(self):
        events = read_events(self.root / "events.jsonl")
        feedback = self.root / "feedback.jsonl"
        if feedback.exists():
            events = events + read_events(feedback)
        return events

    @property
    def history_path(self):
        return self.root / "history.jsonl"

    @property
    def model_path(self):
        return self.root / "model.npz"

    def snapshot(self, include_sent: bool = False, time: int | None = None):
        result = construct_graph(
            self.templates,
            self.participants,
            self.events,
            self.catalog,
            include_sent=include_sent,
            time=time,
        )
        return result


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Knowledge-graph nudge recommendation engine."""


@main.command()
@click.option("--out", type=click.Path(), required=True, help="Output data directory.")
@click.option("--preset", type=click.Choice(["small", "bench"]), default="small")
@click.option("--users", type=int, default=None)
@click.option("--nudges", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--density", type=float, default=None, help="Interaction density.")
@click.option("--pairs", type=int, default=None, help="Bench preset: target candidate pairs.")
def synth(out, preset, users, nudges, seed, density, pairs) -> None:
    """Generate a synthetic population into a data directory."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if preset == "bench":
        population = bench_population(pairs or 1_000_000, seed=seed, n_nudges=nudges or 50)
    else:
        spec = PopulationSpec(
            n_users=users or 1000,
            n_nudges=nudges or 96,
            seed=seed,
            interaction_density=density if density is not None else 0.08,
        )
        population = generate_population(spec)
    save_catalog(population.catalog, out_dir / "catalog.yaml")
    write_participants(population.participants, out_dir / "participants.jsonl")
    write_nudge_library(population.templates, out_dir / "nudges.jsonl")
    write_events(population.events, out_dir / "events.jsonl")
    click.echo(
        json.dumps(
            {
                "users": len(population.participants),
                "nudges": len(population.templates),
                "events": len(population.events),
                "markers": population.catalog.marker_count,
                "out": str(out_dir),
            }
        )
    )


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default=None, help="Triplet TSV export path.")
@click.option("--include-sent", is_flag=True, default=False)
def construct(data, out, include_sent) -> None:
    """Build the knowledge graph and report its attributes."""
    dd = _DataDir(data)
    result = dd.snapshot(include_sent=include_sent)
    snapshot = result.snapshot
    if out:
        snapshot.export_triplets(out)
    stats = snapshot.stats()
    click.echo(
        json.dumps(
            {
                "day": snapshot.time,
                "nodes": stats.node_count,
                "edges": stats.edge_count,
                "density": float(stats.density),
                "rejected_events": len(result.rejected_events),
                "export": out,
            }
        )
    )
    for rejection in result.rejected_events[:20]:
        click.echo(f"rejected: {rejection.reason}", err=True)


@main.command(name="train")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--model-out", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
def train_cmd(data, config, model_out, seed) -> None:
    """Train the recommender from scratch on the current graph."""
    dd = _DataDir(data)
    hp = _load_hyperparams(config)
    if seed is not None:
        hp = replace(hp, seed=seed)
    snapshot = dd.snapshot().snapshot
    state, telemetry = train(snapshot, hp)
    out = Path(model_out) if model_out else dd.model_path
    save_checkpoint(state, out)
    append_records(dd.root / "telemetry" / "training.jsonl", telemetry.records)
    click.echo(
        json.dumps(
            {
                "epochs": telemetry.epochs_run,
                "final_loss": telemetry.final_loss,
                "converged": telemetry.converged,
                "model": str(out),
            }
        )
    )


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--monitor/--no-monitor", default=True, help="Evaluate after fine-tuning.")
@click.option("--fraction", type=float, default=0.25)
@click.option("--seed", type=int, default=None)
def finetune(data, model_path, config, monitor, fraction, seed) -> None:
    """Warm-start from a checkpoint and fine-tune on the updated graph."""
    dd = _DataDir(data)
    prev = load_checkpoint(model_path)
    hp = _load_hyperparams(config) if config else prev.hp
    if seed is not None:
        hp = replace(hp, seed=seed)
    snapshot = dd.snapshot().snapshot
    started = warm_start(prev, snapshot, hp)
    state, telemetry = train(snapshot, hp, started)
    save_checkpoint(state, dd.model_path)
    append_records(dd.root / "telemetry" / "training.jsonl", telemetry.records)
    payload = {
        "epochs": telemetry.epochs_run,
        "final_loss": telemetry.final_loss,
        "model": str(dd.model_path),
    }
    if monitor:
        pairs = positive_pairs(dd.events, hp.positive_relations)
        if len(pairs) >= 2:
            split = holdout_split(pairs, fraction, hp.seed)
            eval_snapshot = build_eval_snapshot(
                dd.templates, dd.participants, dd.events, dd.catalog, set(split.test)
            )
            eval_state, _ = train(eval_snapshot, hp, warm_start(prev, eval_snapshot, hp))
            report = evaluate_split(
                eval_state, eval_snapshot, list(split.test), list(split.train)
            )
            metrics_log = dd.root / "telemetry" / "metrics.jsonl"
            append_records(metrics_log, [{"day": snapshot.time, **report.as_dict()}])
            payload["metrics"] = report.as_dict()
            payload["stability"] = metric_stability(
                [r for r in read_records(metrics_log)], window=30
            )
    click.echo(json.dumps(payload))


def _pipeline_options(command):
    """Shared PipelineConfig override flags (every field has one)."""
    options = [
        click.option("--seed", type=int, default=None),
        click.option("--batches", type=int, default=None),
        click.option("--k-daily", type=int, default=None),
        click.option("--p-diversity", type=float, default=None),
        click.option("--d-neg-filter", type=int, default=None),
        click.option("--d-recent", type=int, default=None),
        click.option("--max-retries", type=int, default=None),
        click.option(
            "--diversity-respects-recency/--diversity-ignores-recency",
            "diversity_respects_recency",
            default=None,
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _pipeline_overrides(cfg: PipelineConfig, **overrides):
    return cfg.override(**overrides)


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--day", type=int, required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@_pipeline_options
def score(data, model_path, day, config, **overrides) -> None:
    """Run the daily selection pipeline and publish the day's nudges."""
    dd = _DataDir(data)
    cfg = _pipeline_overrides(_load_pipeline_cfg(config), **overrides)
    snapshot = dd.snapshot().snapshot
    state = load_checkpoint(model_path)
    missing = [e for e in snapshot.entities if not state.has_entity(e)]
    if missing:
        state = warm_start(state, snapshot, state.hp)
    templates = dd.templates
    history = load_history(dd.history_path)
    inputs = PipelineInputs(
        snapshot=snapshot,
        model=state,
        templates=templates,
        rules=rules_from_library(templates),
        history=history,
        user_contexts={p.user_id: p.fields for p in dd.participants},
        today=day,
    )
    store = ServingStore(dd.root)
    try:
        result = run_parallel(inputs, cfg)
    except PipelineError as exc:
        partial_path = dd.root / f"selections_{day}.partial.jsonl"
        with open(partial_path, "w", encoding="utf-8") as fh:
            for user_id in sorted(exc.partial):
                for item in exc.partial[user_id]:
                    fh.write(
                        json.dumps({"user_id": user_id, "nudge_id": item.nudge_id}) + "\n"
                    )
        click.echo(
            f"pipeline failed for batches {exc.failed_batches}; "
            f"partial results at {partial_path}",
            err=True,
        )
        sys.exit(1)
    store.publish_run(result)
    record_sent(history, result)
    save_history(history, dd.history_path)
    append_records(
        dd.root / "telemetry" / "runs.jsonl", [{"day": day, **result.telemetry.as_dict()}]
    )
    click.echo(json.dumps({"day": day, **result.telemetry.as_dict()}))


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8314)
def serve(data, host, port) -> None:
    """Serve the fetch/feedback/health endpoints."""
    import uvicorn

    from .serving import create_app

    app = create_app(ServingStore(Path(data)))
    uvicorn.run(app, host=host, port=port, log_level="info")


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--fraction", type=float, default=0.25)
@click.option("--seed", type=int, default=0)
@click.option("--k", type=int, default=3)
def evaluate(data, config, fraction, seed, k) -> None:
    """Holdout evaluation: train on the visible graph, score the hidden part."""
    dd = _DataDir(data)
    hp = replace(_load_hyperparams(config), seed=seed)
    pairs = positive_pairs(dd.events, hp.positive_relations)
    split = holdout_split(pairs, fraction, seed)
    snapshot = build_eval_snapshot(
        dd.templates, dd.participants, dd.events, dd.catalog, set(split.test)
    )
    state, telemetry = train(snapshot, hp)
    report = evaluate_split(state, snapshot, list(split.test), list(split.train), k=k)
    append_records(
        dd.root / "telemetry" / "metrics.jsonl",
        [{"day": snapshot.time, **report.as_dict()}],
    )
    click.echo(json.dumps({**report.as_dict(), "epochs": telemetry.epochs_run}))


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--fraction", type=float, default=0.25)
@click.option("--seed", type=int, default=0)
def gridsearch(data, config, out, fraction, seed) -> None:
    """Run the full hyperparameter grid and write the results table."""
    dd = _DataDir(data)
    base = replace(_load_hyperparams(config), seed=seed)
    pairs = positive_pairs(dd.events, base.positive_relations)
    split = holdout_split(pairs, fraction, seed)
    snapshot = dd.snapshot().snapshot
    result = grid_search(table_search_space(base), snapshot, split)
    lines = grid_table_lines(result)
    Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    best = result.best
    click.echo(
        json.dumps(
            {
                "configs": len(result.rows),
                "best": {
                    "entity_dim": best.hp.entity_dim,
                    "relation_dim": best.hp.relation_dim,
                    "layer_dims": list(best.hp.layer_dims),
                    "precision_at_3": best.report.precision_at_k,
                },
                "table": str(out),
            }
        )
    )


@main.command()
@click.option("--volumes", default="50000,200000,800000,2000000,5000000")
@click.option("--out", type=click.Path(), default=None)
@click.option("--repeats", type=int, default=2)
@click.option("--compare-kernels", is_flag=True, default=False)
@click.option("--config", type=click.Path(exists=True), default=None)
@_pipeline_options
def bench(volumes, out, repeats, compare_kernels, config, **overrides) -> None:
    """Scaling benchmark over candidate-pair volumes (and kernel comparison)."""
    if compare_kernels:
        lines = kernel_report_lines(compare_kernel_backends())
        click.echo("\n".join(lines))
        click.echo(f"# active backend: {kernels.ACTIVE_BACKEND}")
        return
    cfg = _pipeline_overrides(_load_pipeline_cfg(config), **overrides)
    pair_counts = [int(v) for v in volumes.split(",") if v.strip()]
    result = scaling_benchmark(pair_counts, cfg, repeats=repeats)
    lines = scaling_report_lines(result)
    if out:
        Path(out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo("\n".join(lines))


@main.command()
@click.option("--data", type=click.Path(exists=True), required=True)
@click.argument("records_file", type=click.Path(exists=True))
def ingest(data, records_file) -> None:
    """Validate and stage a participant records file (file-drop path)."""
    dd = _DataDir(data)
    store = ServingStore(dd.root)
    result = store.ingest_participants(records_file, dd.catalog)
    click.echo(
        json.dumps(
            {
                "accepted": result.accepted,
                "rejected": [
                    {"line": line, "reason": reason} for line, reason in result.rejections
                ],
            }
        )
    )


if __name__ == "__main__":
    main()
