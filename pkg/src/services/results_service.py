"""
Local storage service for experiment outputs and fitted models

Records and summaries are written with a fixed float format so identical
results give identical bytes; the manifest keeps the SHA-256 of every CSV so
a replay can be checked file by file.
"""

import hashlib
import json
import platform
from pathlib import Path
from typing import Any, Dict, Optional, Union

import joblib
import numpy as np
import pandas as pd
import pydantic
import scipy
from loguru import logger

from config.settings import settings
from src.models.cokriging import CokrigingModel, cokriging_from_dict, cokriging_to_dict
from src.models.kriging import KrigingModel, model_from_dict, model_to_dict
from src.utils.exceptions import ArgumentError, ConfigError, ResultsIOError

MANIFEST_VERSION = 1
FLOAT_FORMAT = "%.12g"
RECORDS_FILE = "records.csv"
SUMMARY_FILE = "summary.csv"
MANIFEST_FILE = "manifest.json"

PathLike = Union[str, Path]


def file_hash(path: PathLike) -> str:
    """SHA-256 hex digest of a file"""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _versions() -> Dict[str, str]:
    return {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
        "joblib": joblib.__version__,
    }


class ResultsService:
    """Service for writing and reading experiment results on local disk"""

    def __init__(self, base_dir: Optional[PathLike] = None):
        """Initialize with the output folder, defaults to settings.OUTPUT_DIR"""
        self.base_dir = Path(base_dir or settings.OUTPUT_DIR)

    def run_dir(self, name: str) -> Path:
        path = self.base_dir / name
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _write_csv(self, frame: pd.DataFrame, path: PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as exc:
            raise ResultsIOError(f"Cannot write CSV ({exc})", path) from exc
        return path

    def write_records(self, result, path: PathLike) -> Path:
        """Per-replicate, per-iteration records of completed replicates"""
        return self._write_csv(result.records_frame(), path)

    def emit_summary(self, result, path: PathLike) -> Path:
        """Six-column per-iteration summary; header only when nothing completed"""
        return self._write_csv(result.summary_frame(), path)

    def write_manifest(self, result, files: Dict[str, Path], path: PathLike) -> Path:
        """
        JSON manifest: config echo, per-replicate seeds, failures, library versions and file hashes

        Wall-clock times live here only, so the CSVs stay byte-stable.
        """
        manifest = {
            "format_version": MANIFEST_VERSION,
            "config": result.config.model_dump(mode="json"),
            "seeds": {str(r.replicate): r.seed for r in result.replicates},
            "completed": len(result.completed),
            "failures": [{"replicate": r.replicate, "reason": r.failure} for r in result.failures],
            "wall_clock_seconds": {str(r.replicate): (r.wall_clock[-1] if r.wall_clock else None)
                                   for r in result.replicates},
            "versions": _versions(),
            "files": {name: file_hash(p) for name, p in files.items()},
        }
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        except OSError as exc:
            raise ResultsIOError(f"Cannot write manifest ({exc})", path) from exc
        return path

    def read_manifest(self, path: PathLike) -> Dict[str, Any]:
        path = Path(path)
        try:
            manifest = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"Cannot read manifest {path}: {exc}") from exc
        if manifest.get("format_version") != MANIFEST_VERSION or "config" not in manifest:
            raise ConfigError(f"Unsupported manifest {path}")
        return manifest

    def save_experiment(self, result, out_dir: PathLike) -> Dict[str, Path]:
        """
        Write records, summary and manifest into one folder

        Returns:
            Paths keyed by file name
        """
        out_dir = Path(out_dir)
        files = {
            RECORDS_FILE: self.write_records(result, out_dir / RECORDS_FILE),
            SUMMARY_FILE: self.emit_summary(result, out_dir / SUMMARY_FILE),
        }
        files[MANIFEST_FILE] = self.write_manifest(result, dict(files), out_dir / MANIFEST_FILE)
        logger.info("Saved {} completed replicate(s) to {}", len(result.completed), out_dir)
        return files

    def compare_hashes(self, manifest: Dict[str, Any], out_dir: PathLike) -> Dict[str, bool]:
        """Whether each hashed file in ``out_dir`` matches the manifest"""
        out_dir = Path(out_dir)
        return {name: (out_dir / name).exists() and file_hash(out_dir / name) == digest
                for name, digest in manifest["files"].items()}

    def save_model(self, model: Union[KrigingModel, CokrigingModel], path: PathLike) -> Path:
        """JSON record of a kriging or co-kriging model"""
        if isinstance(model, CokrigingModel):
            record = cokriging_to_dict(model)
        elif isinstance(model, KrigingModel):
            record = model_to_dict(model)
        else:
            raise ArgumentError(f"Cannot save object of type {type(model).__name__}")
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(record, indent=2))
        except OSError as exc:
            raise ResultsIOError(f"Cannot write model ({exc})", path) from exc
        return path

    def load_model(self, path: PathLike) -> Union[KrigingModel, CokrigingModel]:
        path = Path(path)
        try:
            record = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ResultsIOError(f"Cannot read model ({exc})", path) from exc
        if record.get("kind") == "cokriging":
            return cokriging_from_dict(record)
        return model_from_dict(record)


# Create a global instance
results_service = ResultsService()
