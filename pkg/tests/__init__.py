"""Tests for resus."""
