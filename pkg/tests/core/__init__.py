"""Tests of the tangleac core modules."""
