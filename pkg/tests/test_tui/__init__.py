"""Report viewer tests using Pilot."""
