"""Pilot-based tests for report viewer navigation.

These tests verify navigation between tabs using Textual's Pilot testing framework.
"""

import pytest
from textual.widgets import DataTable, TabbedContent

from resus.core.evaluation import StageReport, write_report
from resus.tui.app import ReportViewerApp


class TestNavigation:
    """Test tab navigation functionality."""

    async def test_starts_on_stages_tab(self, app):
        """Given the viewer is running, the stage summary is shown first."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.pause()
            tabbed = app.screen.query_one(TabbedContent)
            assert tabbed.active == "stages"

    async def test_navigate_to_sizes_tab(self, app):
        """Given the viewer is running, when I press 2, then I see the support sizes tab."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.press("2")
            await pilot.pause()
            tabbed = app.screen.query_one(TabbedContent)
            assert tabbed.active == "sizes"

    async def test_navigate_to_config_tab(self, app):
        """Given the viewer is running, when I press 3, then I see the config tab."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.press("3")
            await pilot.pause()
            tabbed = app.screen.query_one(TabbedContent)
            assert tabbed.active == "config"

    async def test_navigate_back_to_stages(self, app):
        """Given I am on another tab, when I press 1, then I return to the stages tab."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.press("3")
            await pilot.press("1")
            await pilot.pause()
            assert app.screen.query_one(TabbedContent).active == "stages"


class TestTables:
    """Test table contents."""

    async def test_stage_table_rows(self, app):
        """The stage table has one row per cold-start stage."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.pause()
            table = app.screen.query_one("#stages-table", DataTable)
            assert table.row_count == 3
            assert table.get_row_at(0)[0] == "I"
            assert table.get_row_at(0)[-1] == "+4.7%"
            assert table.get_row_at(2)[-1] == "-"

    async def test_sizes_table_rows(self, app, report):
        """The sizes table has one row per support size."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.press("2")
            await pilot.pause()
            table = app.screen.query_one("#sizes-table", DataTable)
            assert table.row_count == len(report.rows)
            assert table.get_row_at(5)[:3] == ["6", "III", "94"]

    async def test_config_panels(self, app):
        """Each config section gets its own panel next to the summary."""
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.press("3")
            await pilot.pause()
            assert len(app.screen.query("StatsPanel")) == 3

    async def test_empty_config(self, report):
        """A report without a config echo shows only the summary panel."""
        app = ReportViewerApp(report=report.model_copy(update={"config": {}}))
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.press("3")
            await pilot.pause()
            assert len(app.screen.query("StatsPanel")) == 1


class TestLoading:
    """Test loading reports from disk."""

    async def test_load_from_path(self, report, tmp_path):
        """The viewer reads a report file and shows its path."""
        path = tmp_path / "report-rr.json"
        write_report(report, path)
        app = ReportViewerApp(report_path=path)
        assert isinstance(app.report, StageReport)
        async with app.run_test(size=(120, 40)) as pilot:
            await pilot.pause()
            assert app.sub_title == str(path)

    def test_requires_a_report(self):
        """The viewer refuses to start without a report."""
        with pytest.raises(ValueError):
            ReportViewerApp()
