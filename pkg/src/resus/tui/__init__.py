"""TUI frontend for evaluation reports using Textual."""

from .app import ReportViewerApp

__all__ = ["ReportViewerApp"]
