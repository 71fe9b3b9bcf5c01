"""Shared fixtures for TUI tests."""

import pytest

from resus.core.evaluation import MetricRow, StageMetrics, StageReport
from resus.tui.app import ReportViewerApp


@pytest.fixture
def report():
    """A two-seed RR report over six support sizes."""
    rows = [
        MetricRow(
            method="rr",
            support_size=size,
            stage=("I", "II", "III")[(size - 1) // 2],
            n_queries=100 - size,
            logloss=0.6 - 0.01 * size,
            auc=0.70 + 0.01 * size,
            auc_std=0.002,
            seeds=[0, 1],
        )
        for size in range(1, 7)
    ]
    stages = [
        StageMetrics(stage="I", sizes=[1, 2], logloss=0.585, auc=0.715, rela_impr=4.7),
        StageMetrics(stage="II", sizes=[3, 4], logloss=0.565, auc=0.735, rela_impr=5.1),
        StageMetrics(stage="III", sizes=[5, 6], logloss=0.545, auc=0.755),
    ]
    return StageReport(
        method="rr",
        base_method="shared",
        seeds=[0, 1],
        rows=rows,
        stages=stages,
        config={"meta": {"mode": "rr", "tau": 6}, "beta_override": 0.5},
    )


@pytest.fixture
def app(report):
    """Create a test app instance."""
    return ReportViewerApp(report=report)
