"""
Core application components - configuration and exceptions
"""

from app.core.config import Settings, get_settings

__all__ = ["Settings", "get_settings"]
