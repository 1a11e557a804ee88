"""Command-line launcher for TinyAttn."""
import sys
from pathlib import Path

# Add TinyAttn to path for imports
sys.path.insert(0, str(Path(__file__).parent / "TinyAttn"))

from main import main  # noqa: E402

if __name__ == '__main__':
    sys.exit(main())
