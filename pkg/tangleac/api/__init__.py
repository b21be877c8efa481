"""HTTP surface of the owner service."""
from .app import create_app

__all__ = ['create_app']
