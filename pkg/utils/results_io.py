"""
Result Utilities for the ISSC Simulator
Handles writing tables, matrices and metadata into the output directory.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from utils.logging_utils import get_logger

logger = get_logger("RESULTS")

FLOAT_FORMAT = "%.12e"


def write_bytes(content: bytes, path: Path) -> Optional[Path]:
    """
    Write raw content into the output directory.

    Args:
        content: Content to write (bytes)
        path: Destination file; parent directories are created

    Returns:
        The written path if successful, None otherwise
    """
    try:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(content)
        logger.debug(f"✅ Wrote {path}")
        return path
    except OSError as e:
        logger.error(f"❌ Error writing {path}: {e}")
        return None


def write_text(text: str, path: Path) -> Optional[Path]:
    """Write text content."""
    return write_bytes(text.encode('utf-8'), path)


def write_json(data: Dict[str, Any], path: Path) -> Optional[Path]:
    """Write a JSON document with stable key order."""
    return write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n", path)


def write_table(rows: Any, path: Path, columns: Optional[List[str]] = None) -> Optional[Path]:
    """
    Write a table as CSV with a fixed float format so reruns are byte-identical.

    Args:
        rows: DataFrame or list of row dicts
        path: Destination CSV
        columns: Optional column order

    Returns:
        The written path if successful, None otherwise
    """
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    if columns is not None:
        frame = frame.reindex(columns=columns)
    return write_text(frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"), path)


def matrix_frame(matrices: Dict[str, np.ndarray]) -> pd.DataFrame:
    """Long-format frame of named complex matrices with paired real/imag columns."""
    frames = []
    for name, matrix in matrices.items():
        matrix = np.asarray(matrix)
        rows, cols = np.indices(matrix.shape)
        frames.append(pd.DataFrame({
            'matrix': name,
            'row': rows.ravel(),
            'col': cols.ravel(),
            'real': np.real(matrix).ravel(),
            'imag': np.imag(matrix).ravel()
        }))
    return pd.concat(frames, ignore_index=True)


def write_matrix_csv(matrices: Dict[str, np.ndarray], path: Path) -> Optional[Path]:
    """Write one or more complex matrices as real/imag CSV."""
    return write_table(matrix_frame(matrices), path)


def read_matrix_csv(path: Path) -> Dict[str, np.ndarray]:
    """Read matrices written by write_matrix_csv."""
    frame = pd.read_csv(path)
    matrices = {}
    for name, group in frame.groupby('matrix', sort=False):
        n_rows = int(group['row'].max()) + 1
        n_cols = int(group['col'].max()) + 1
        matrix = np.zeros((n_rows, n_cols), dtype=complex)
        matrix[group['row'].to_numpy(), group['col'].to_numpy()] = group['real'].to_numpy() + 1j * group['imag'].to_numpy()
        matrices[str(name)] = matrix
    return matrices


def write_run_artifacts(
    out_dir: Path,
    run_id: str,
    summary: Optional[Dict[str, Any]] = None,
    trace: Optional[Sequence[Dict[str, Any]]] = None,
    matrices: Optional[Dict[str, np.ndarray]] = None,
    tables: Optional[Dict[str, Any]] = None
) -> Dict[str, Optional[str]]:
    """
    Write all artifacts of one run.

    Args:
        out_dir: Output directory
        run_id: Prefix for every file of this run
        summary: JSON metadata
        trace: Per-iteration trace rows
        matrices: Named complex matrices (beamformers, reference covariance)
        tables: Extra named tables (beampatterns, spectra)

    Returns:
        Dictionary of written paths for each artifact
    """
    out_dir = Path(out_dir)
    paths = {}

    # Summary metadata
    if summary is not None:
        paths['summary'] = _as_str(write_json(summary, out_dir / f"{run_id}_summary.json"))

    # Iteration trace
    if trace:
        paths['trace'] = _as_str(write_table(list(trace), out_dir / f"{run_id}_trace.csv"))

    # Matrices
    if matrices:
        paths['matrices'] = _as_str(write_matrix_csv(matrices, out_dir / f"{run_id}_matrices.csv"))

    # Extra tables
    for name, table in (tables or {}).items():
        paths[name] = _as_str(write_table(table, out_dir / f"{run_id}_{name}.csv"))

    return paths


def _as_str(path: Optional[Path]) -> Optional[str]:
    return str(path) if path is not None else None


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")
