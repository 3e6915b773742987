"""Tests for the hybrid_se package and CLI."""
