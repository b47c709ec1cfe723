"""
Solver trace export
"""
import logging
from typing import Dict, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)


def write_trace(records: List[Dict[str, float]], path: Optional[str]) -> None:
    """Write per-iteration records as CSV when a path is given"""
    if not path:
        return
    pd.DataFrame.from_records(records).to_csv(path, index=False)
    logger.info(f"Wrote solver trace with {len(records)} rows to {path}")
