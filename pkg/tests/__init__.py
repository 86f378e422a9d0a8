"""Tests for sengen."""
