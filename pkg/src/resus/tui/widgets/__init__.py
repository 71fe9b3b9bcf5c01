"""TUI widgets for the report viewer."""

from .share_bar import ShareBar
from .stats_panel import StatsPanel

__all__ = [
    "ShareBar",
    "StatsPanel",
]
