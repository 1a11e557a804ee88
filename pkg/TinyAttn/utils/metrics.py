"""Newline-delimited JSON metrics: one ``eval`` record per evaluation, then one ``summary`` record."""
import json
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from training.trainer import TrainReport
from utils.file_utils import atomic_write_text
from utils.logger import setup_logger

logger = setup_logger(__name__)


def _line(record: Dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(',', ':'))


def emit_metrics(report: TrainReport, path: Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Write ``report`` as NDJSON at ``path`` (atomically).

    Args:
        report: Finished training report with at least one evaluation.
        path: Destination file; parent directories are created.
        extra: Additional fields merged into the summary record.

    Raises:
        ValueError: If the report holds no evaluations.
        OSError: If the path cannot be written.
    """
    if not report.records:
        raise ValueError('cannot emit metrics for a report without evaluations')
    lines = [_line({'type': 'eval', **record}) for record in report.eval_dicts()]
    summary = {'type': 'summary', **report.summary(), **(extra or {})}
    lines.append(_line(summary))
    atomic_write_text(Path(path), '\n'.join(lines) + '\n')
    logger.info(f'✓ Wrote {len(report.records)} evaluation records to {path}')
    return Path(path)


def load_metrics(path: Path) -> pd.DataFrame:
    """Evaluation records as a DataFrame ordered by step."""
    frame = pd.read_json(path, lines=True)
    evals = frame[frame['type'] == 'eval'].drop(columns='type')
    return evals.dropna(axis=1, how='all').sort_values('step').reset_index(drop=True)


def load_summary(path: Path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            record = json.loads(line)
            if record.get('type') == 'summary':
                return record
    raise ValueError(f'{path} has no summary record')
