"""Tests for tangleac."""
