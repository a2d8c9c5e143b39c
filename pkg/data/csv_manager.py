from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd


def write_csv(df: pd.DataFrame, path: str | Path, columns: Optional[List[str]] = None) -> Path:
    file_path = Path(path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    if columns is not None:
        missing = [c for c in columns if c not in df.columns]
        if missing:
            raise ValueError(f"{file_path.name}: missing columns {missing}")
        extra = [c for c in df.columns if c not in columns]
        df = df[columns + extra]
    # repr floats keep reruns byte-identical
    df.to_csv(file_path, index=False, lineterminator="\n")
    return file_path


def read_csv(path: str | Path, required: Optional[List[str]] = None) -> pd.DataFrame:
    file_path = Path(path)
    if not file_path.exists():
        return pd.DataFrame(columns=required or [])
    df = pd.read_csv(file_path)
    for col in required or []:
        if col not in df.columns:
            raise ValueError(f"{file_path.name}: required column {col!r} missing")
    return df


def write_workbook(path: str | Path, frames: Dict[str, pd.DataFrame]) -> Path:
    """One sheet per frame, via the openpyxl engine."""
    file_path = Path(path)
    if not is_valid_workbook(file_path):
        raise ValueError(f"{file_path}: workbook must end in .xlsx")
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with pd.ExcelWriter(file_path, engine="openpyxl") as writer:
        for sheet, df in frames.items():
            df.to_excel(writer, sheet_name=sheet[:31], index=False)
    return file_path


def is_valid_workbook(path: str | Path) -> bool:
    return Path(path).suffix.lower() in {".xlsx", ".xlsm"}
