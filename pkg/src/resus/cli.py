"""CLI entry point for RESUS cold-start CTR experiments."""

from __future__ import annotations

import logging
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.table import Table

from .core.config import Config, apply_overrides, load_config, to_toml
from .core.errors import DataError, ResusError
from .core.evaluation import StageReport
from .core.parser import DatasetManifest

console = Console()

T = TypeVar("T")


def configure_logging(verbose: bool = False, log_file: Path | None = None) -> None:
    """Rich console logging, plus a plain file log when ``log_file`` is given."""
    root = logging.getLogger("resus")
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    root.addHandler(
        RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)
    )
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
        root.addHandler(file_handler)


def _guarded(ctx: click.Context, action: Callable[[], T]) -> T:
    """Run ``action``, turning library errors into a diagnostic and an exit code."""
    try:
        return action()
    except ResusError as e:
        console.print(f"[red]Error:[/] {escape(str(e))}")
        ctx.exit(e.exit_code)
    except OSError as e:
        console.print(f"[red]Error:[/] {escape(str(e))}")
        ctx.exit(DataError.exit_code)


def _start_run(ctx: click.Context) -> Config:
    """Attach the run log inside the output directory and return the config."""
    cfg: Config = ctx.obj["config"]
    configure_logging(ctx.obj["verbose"], Path(cfg.run.out) / "run.log")
    return cfg


def format_count(count: int) -> str:
    if count >= 1_000_000:
        return f"{count / 1_000_000:.1f}M"
    elif count >= 1_000:
        return f"{count / 1_000:.1f}K"
    return str(count)


def _fmt(value: float | None, digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def print_stage_report(report: StageReport) -> None:
    table = Table(title=f"{report.method} by cold-start stage")
    table.add_column("Stage", style="cyan")
    table.add_column("Sizes")
    table.add_column("Logloss", justify="right")
    table.add_column("AUC", justify="right", style="green")
    table.add_column("RelaImpr", justify="right")
    for stage in report.stages:
        span = f"{stage.sizes[0]}-{stage.sizes[-1]}" if stage.sizes else "-"
        auc = _fmt(stage.auc)
        if stage.auc_std:
            auc += f" ± {stage.auc_std:.4f}"
        impr = "-" if stage.rela_impr is None else f"{stage.rela_impr:+.1f}%"
        table.add_row(stage.stage, span, _fmt(stage.logloss), auc, impr)
    console.print(table)
    if report.excluded_sizes:
        console.print(
            f"[yellow]AUC undefined (single class) for sizes: "
            f"{', '.join(sorted(report.excluded_sizes, key=int))}[/]"
        )


def print_manifest(manifest: DatasetManifest) -> None:
    table = Table(title=f"Dataset: {manifest.source}", show_header=False)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Users (raw)", format_count(manifest.n_users_raw))
    table.add_row("Instances (raw)", format_count(manifest.n_instances_raw))
    table.add_row("Users", format_count(manifest.n_users))
    table.add_row("Items", format_count(manifest.n_items))
    table.add_row("Instances", format_count(manifest.n_instances))
    table.add_row("Feature fields", str(manifest.n_feature_fields))
    table.add_row("Features", format_count(manifest.n_features))
    table.add_row("Sparsity", f"{manifest.sparsity:.2%}")
    table.add_row("Timestamps", "yes" if manifest.has_timestamps else "no")
    console.print(table)

    splits = Table(title="User-disjoint splits")
    splits.add_column("Split")
    splits.add_column("Users", justify="right")
    splits.add_column("Instances", justify="right")
    for split, users in manifest.split_users.items():
        splits.add_row(split, str(users), str(manifest.split_instances.get(split, 0)))
    console.print(splits)


@click.group()
@click.option(
    "--config",
    "-c",
    type=click.Path(),
    default=None,
    help="Path to config file (TOML)",
)
@click.option("--seed", type=int, default=None, help="Seed for single-seed commands")
@click.option(
    "--mode", type=click.Choice(["nn", "rr", "mus", "shared"]), default=None, help="Meta-learner mode"
)
@click.option(
    "--arch", type=click.Choice(["lr", "fm", "deepfm"]), default=None, help="Predictor architecture"
)
@click.option("--tau", type=int, default=None, help="Cold-user threshold (max support size)")
@click.option("--threads", type=int, default=None, help="Worker threads for meta-training")
@click.option("--out", "-o", type=click.Path(), default=None, help="Output directory")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def main(
    ctx: click.Context,
    config: str | None,
    seed: int | None,
    mode: str | None,
    arch: str | None,
    tau: int | None,
    threads: int | None,
    out: str | None,
    verbose: bool,
) -> None:
    """RESUS - residual meta-learning for cold-start CTR prediction."""
    ctx.ensure_object(dict)
    configure_logging(verbose)

    overrides: dict[str, Any] = {
        "meta.mode": mode,
        "model.architecture": arch,
        "meta.tau": tau,
        "run.threads": threads,
        "run.out": out,
    }
    cfg = _guarded(
        ctx, lambda: apply_overrides(load_config(Path(config) if config else None), overrides)
    )
    ctx.obj["config"] = cfg
    ctx.obj["seed"] = seed if seed is not None else cfg.train.seeds[0]
    ctx.obj["seed_given"] = seed is not None
    ctx.obj["verbose"] = verbose


@main.command("print-config")
@click.pass_context
def print_config(ctx: click.Context) -> None:
    """Print the merged configuration as TOML."""
    click.echo(to_toml(ctx.obj["config"]))


@main.command()
@click.pass_context
def ingest(ctx: click.Context) -> None:
    """Parse the raw dataset into a bundle and manifest."""
    from .core.runner import cmd_ingest

    cfg: Config = ctx.obj["config"]
    _, manifest = _guarded(ctx, lambda: cmd_ingest(cfg))
    print_manifest(manifest)
    console.print(f"[green]Wrote {cfg.data.bundle} and {cfg.data.manifest}[/]")


@main.command()
@click.pass_context
def pretrain(ctx: click.Context) -> None:
    """Train and freeze the shared predictor."""
    from .core.runner import cmd_pretrain

    cfg = _start_run(ctx)
    path = _guarded(ctx, lambda: cmd_pretrain(cfg, ctx.obj["seed"]))
    console.print(f"[green]Shared predictor saved to {path}[/]")


@main.command("meta-train")
@click.option("--shared", "shared_path", type=click.Path(), default=None, help="Shared predictor checkpoint")
@click.pass_context
def meta_train(ctx: click.Context, shared_path: str | None) -> None:
    """Meta-train the residual learner on top of the shared predictor."""
    from .core.runner import cmd_meta_train

    cfg = _start_run(ctx)
    psi = Path(shared_path) if shared_path else None
    path = _guarded(ctx, lambda: cmd_meta_train(cfg, ctx.obj["seed"], psi_path=psi))
    console.print(f"[green]Meta model saved to {path}[/]")


@main.command()
@click.option("--checkpoint", type=click.Path(), default=None, help="Checkpoint to evaluate")
@click.option("--beta-override", type=float, default=None, help="Replace the rescaling coefficient")
@click.pass_context
def evaluate(ctx: click.Context, checkpoint: str | None, beta_override: float | None) -> None:
    """Evaluate a checkpoint on the meta-test suite."""
    from .core.runner import cmd_evaluate

    cfg = _start_run(ctx)
    ckpt = Path(checkpoint) if checkpoint else None
    report = _guarded(
        ctx, lambda: cmd_evaluate(cfg, ctx.obj["seed"], ckpt, beta_override=beta_override)
    )
    print_stage_report(report)


@main.command()
@click.option("--checkpoint", type=click.Path(), default=None, help="Checkpoint to time")
@click.pass_context
def timing(ctx: click.Context, checkpoint: str | None) -> None:
    """Time one training epoch and batched vs per-query inference."""
    from .core.runner import cmd_timing

    cfg = _start_run(ctx)
    ckpt = Path(checkpoint) if checkpoint else None
    report = _guarded(ctx, lambda: cmd_timing(cfg, ctx.obj["seed"], ckpt))

    table = Table(title=f"Timing ({report.mode}, seed {report.seed})", show_header=False)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", style="green")
    table.add_row("Train epoch", f"{report.train_seconds:.2f}s")
    table.add_row("Test (user-batched)", f"{report.test_seconds_batched:.2f}s")
    table.add_row("Test (per query)", f"{report.test_seconds_per_query:.2f}s")
    table.add_row("Tasks / queries", f"{report.n_tasks} / {format_count(report.n_queries)}")
    table.add_row("Support encodings (batched)", str(report.support_encodings_batched))
    table.add_row("Support encodings (per query)", str(report.support_encodings_per_query))
    console.print(table)


@main.command()
@click.pass_context
def run(ctx: click.Context) -> None:
    """Run the whole pipeline for every configured seed."""
    from .core.runner import run_pipeline

    cfg: Config = ctx.obj["config"]
    if ctx.obj["seed_given"]:
        cfg = _guarded(ctx, lambda: apply_overrides(cfg, {"train.seeds": [ctx.obj["seed"]]}))
        ctx.obj["config"] = cfg
    _start_run(ctx)
    report = _guarded(ctx, lambda: run_pipeline(cfg))
    print_stage_report(report)


@main.command()
@click.argument("report", type=click.Path(exists=True))
@click.pass_context
def view(ctx: click.Context, report: str) -> None:
    """Browse a report JSON file in the terminal UI."""
    from .core.evaluation import read_report
    from .tui import ReportViewerApp

    loaded = _guarded(ctx, lambda: read_report(report))
    ReportViewerApp(report=loaded, report_path=report).run()


if __name__ == "__main__":
    main()
