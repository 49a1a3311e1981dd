from __future__ import annotations


class ToolkitError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(ToolkitError):
    pass
