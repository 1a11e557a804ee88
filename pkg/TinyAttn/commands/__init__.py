"""Command package: keep imports lazy.

``runner`` imports a command module only when that command is requested.
"""

__all__ = []
