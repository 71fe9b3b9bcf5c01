"""Textual application for browsing evaluation reports."""

from __future__ import annotations

from pathlib import Path

from textual.app import App, ComposeResult
from textual.binding import Binding
from textual.containers import Horizontal, ScrollableContainer
from textual.screen import Screen
from textual.widgets import DataTable, Footer, Header, Static, TabbedContent, TabPane

from ..core.evaluation import StageReport, read_report
from .widgets import ShareBar, StatsPanel
from .widgets.stats_panel import format_metric, format_percent


class ReportScreen(Screen):
    """Stage summary, per-size rows and the echoed configuration of one report."""

    BINDINGS = [
        Binding("1", "switch_tab('stages')", "Stages", show=False),
        Binding("2", "switch_tab('sizes')", "Support sizes", show=False),
        Binding("3", "switch_tab('config')", "Config", show=False),
    ]

    def __init__(
        self,
        report: StageReport,
        name: str | None = None,
        id: str | None = None,
        classes: str | None = None,
    ) -> None:
        super().__init__(name=name, id=id, classes=classes)
        self.report = report

    def action_switch_tab(self, tab_id: str) -> None:
        """Switch to a specific tab."""
        tabbed = self.query_one(TabbedContent)
        tabbed.active = tab_id

    def compose(self) -> ComposeResult:
        yield Header()

        with TabbedContent():
            with TabPane("Stages", id="stages"):
                yield from self._compose_stages()
            with TabPane("Support sizes", id="sizes"):
                yield from self._compose_sizes()
            with TabPane("Config", id="config"):
                yield from self._compose_config()

        yield Footer()

    def _compose_stages(self) -> ComposeResult:
        report = self.report
        with ScrollableContainer():
            with Horizontal(classes="stats-row"):
                yield StatsPanel(
                    "Summary",
                    {
                        "Method": report.method,
                        "Baseline": report.base_method or "-",
                        "Seeds": ", ".join(str(s) for s in report.seeds) or "-",
                        "Support sizes": len(report.rows),
                        "Excluded sizes": len(report.excluded_sizes),
                    },
                )
                yield ShareBar(
                    [
                        (f"Stage {s.stage}", s.auc, format_metric(s.auc))
                        for s in report.stages
                    ],
                    title="AUC above 0.5",
                )
            yield DataTable(id="stages-table")

    def _compose_sizes(self) -> ComposeResult:
        with ScrollableContainer():
            yield DataTable(id="sizes-table")

    def _compose_config(self) -> ComposeResult:
        with ScrollableContainer():
            if not self.report.config:
                yield Static("[dim]No configuration recorded[/]")
            for section, values in self.report.config.items():
                if isinstance(values, dict):
                    yield StatsPanel(section, {k: str(v) for k, v in values.items()})
                else:
                    yield StatsPanel(section, {section: str(values)})

    def on_mount(self) -> None:
        stages = self.query_one("#stages-table", DataTable)
        stages.add_columns("Stage", "Sizes", "Logloss", "±", "AUC", "±", "RelaImpr")
        for s in self.report.stages:
            span = f"{s.sizes[0]}-{s.sizes[-1]}" if s.sizes else "-"
            stages.add_row(
                s.stage,
                span,
                format_metric(s.logloss),
                format_metric(s.logloss_std),
                format_metric(s.auc),
                format_metric(s.auc_std),
                format_percent(s.rela_impr),
            )

        sizes = self.query_one("#sizes-table", DataTable)
        sizes.add_columns("|S|", "Stage", "Queries", "Logloss", "AUC", "AUC ±")
        for row in self.report.rows:
            sizes.add_row(
                str(row.support_size),
                row.stage or "-",
                str(row.n_queries),
                format_metric(row.logloss),
                format_metric(row.auc),
                format_metric(row.auc_std),
            )


class ReportViewerApp(App):
    """Report viewer TUI Application."""

    CSS = """
    Screen {
        background: $surface;
    }

    .stats-row {
        height: auto;
        margin: 1 0;
    }

    .stats-row > StatsPanel {
        width: 1fr;
        margin-right: 1;
    }

    .stats-row > ShareBar {
        width: 2fr;
    }

    DataTable {
        height: auto;
        max-height: 40;
        margin: 1 0;
    }

    ScrollableContainer {
        padding: 0 1;
    }

    TabPane {
        height: 1fr;
    }
    """

    BINDINGS = [
        Binding("q", "quit", "Quit"),
        Binding("d", "toggle_dark", "Dark Mode"),
    ]

    TITLE = "RESUS"
    SUB_TITLE = "Cold-start CTR report"

    def __init__(self, report: StageReport | None = None, report_path: str | Path | None = None):
        super().__init__()
        if report is None:
            if report_path is None:
                raise ValueError("a report or a report path is required")
            report = read_report(report_path)
        self.report = report
        if report_path is not None:
            self.sub_title = str(report_path)

    def on_mount(self) -> None:
        self.push_screen(ReportScreen(self.report))
