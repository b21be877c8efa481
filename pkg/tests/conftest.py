"""Pytest configuration."""

pytest_plugins = [
    'tests.fixtures.deployment',
    'tests.fixtures.policies',
]
