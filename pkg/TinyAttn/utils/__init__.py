# utils package
from .errors import CheckpointError, ConfigError, NumericError, TinyAttnError
from .file_utils import atomic_write_bytes, atomic_write_text, make_output_name
from .logger import setup_logger

__all__ = [
    'CheckpointError', 'ConfigError', 'NumericError', 'TinyAttnError',
    'atomic_write_bytes', 'atomic_write_text', 'make_output_name', 'setup_logger',
]
