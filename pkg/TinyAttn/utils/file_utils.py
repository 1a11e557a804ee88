import os
import tempfile
from pathlib import Path


def make_output_name(input_path: Path, suffix: str, output_path: Path | None) -> Path:
    """Return a Path for a command's output artifact.

    If output_path is provided and is a directory, use it; if it's a file, return as-is.
    If not provided, create a file next to input with the given suffix appended to its stem,
    e.g. ``pretrain.ckpt`` + ``merged`` -> ``pretrain.merged.ckpt``.
    """
    input_path = Path(input_path)
    if output_path:
        out = Path(output_path)
        if out.is_dir():
            return out / f'{input_path.stem}.{suffix}{input_path.suffix}'
        return out
    return input_path.with_name(f'{input_path.stem}.{suffix}{input_path.suffix}')


def atomic_write_bytes(path: Path, data: bytes) -> Path:
    """Write ``data`` to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode('utf-8'))
