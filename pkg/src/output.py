"""CSV emission: `# key=value` header lines, a pandas body and a YAML sidecar."""
import logging
import os
import subprocess
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from constant import Constant
from exceptions import ValidationError
from spectra import SpectrumResult

LOGGER = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SIDECAR_SUFFIX = ".meta.yaml"


def git_describe() -> str:
    try:
        completed = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return completed.stdout.strip() or "unknown"


def plain(value: Any) -> Any:
    """Nested numpy/tuple/Path values as YAML-safe builtins."""
    if isinstance(value, Mapping):
        return {str(key): plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, complex):
        return {"real": value.real, "imag": value.imag}
    if isinstance(value, Path):
        return str(value)
    return value


def _header_value(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return " ".join(str(plain(value)).split())


def write_csv(path, frame: pd.DataFrame, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Atomically write the header lines then the frame body."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    header.update(metadata or {})
    with tempfile.NamedTemporaryFile(
        "w",
        encoding="utf-8",
        newline="",
        dir=path.parent,
        delete=False,
    ) as handle:
        for key, value in header.items():
            handle.write(f"# {key}={_header_value(value)}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT)
        temp_name = handle.name
    os.replace(temp_name, path)
    LOGGER.info("Wrote %s (%d rows)", path, len(frame))
    return path


def read_header(path) -> Dict[str, str]:
    header = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    return header


def read_csv(path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"CSV not found: {path}")
    return pd.read_csv(path, comment="#"), read_header(path)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + SIDECAR_SUFFIX)


def write_sidecar(path, metadata: Dict[str, Any]) -> Path:
    target = sidecar_path(path)
    document = {"git_describe": git_describe(), "convention": Constant.CONVENTION}
    document.update(plain(metadata))
    with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=target.parent, delete=False) as handle:
        yaml.safe_dump(document, handle, sort_keys=False, default_flow_style=False)
        temp_name = handle.name
    os.replace(temp_name, target)
    return target


def write_spectrum_csv(
    path,
    spectrum: SpectrumResult,
    resolved: Optional[Dict[str, Any]] = None,
) -> Path:
    """Spectrum CSV in (freq_hz, psd_value) plus its sidecar holding the resolved parameters."""
    frame = pd.DataFrame({Constant.FREQ_HZ: spectrum.freq_hz, Constant.PSD_VALUE: spectrum.values})
    written = write_csv(path, frame, spectrum.metadata)
    write_sidecar(written, {"metadata": spectrum.metadata, **(resolved or {})})
    return written


def read_spectrum_csv(path) -> SpectrumResult:
    frame, header = read_csv(path)
    missing = [column for column in Constant.SPECTRUM_COLUMNS if column not in frame.columns]
    if missing:
        raise ValidationError(f"{path}: missing spectrum columns {missing}")
    if frame.empty:
        raise ValidationError(f"{path}: spectrum has no rows")
    freq = frame[Constant.FREQ_HZ].to_numpy(dtype=float)
    if np.any(np.diff(freq) <= 0):
        raise ValidationError(f"{path}: frequencies must be strictly ascending")
    return SpectrumResult(
        omega=2.0 * np.pi * freq,
        values=frame[Constant.PSD_VALUE].to_numpy(dtype=float),
        metadata=header,
    )


def write_key_value_csv(path, record: Dict[str, Any], metadata: Optional[Dict[str, Any]] = None) -> Path:
    frame = pd.DataFrame(
        {Constant.KEY: list(record), Constant.VALUE: [plain(value) for value in record.values()]}
    )
    return write_csv(path, frame, metadata)


def read_key_value_csv(path) -> Dict[str, str]:
    frame, _ = read_csv(path)
    if list(frame.columns) != Constant.KEY_VALUE_COLUMNS:
        raise ValidationError(f"{path}: expected columns {Constant.KEY_VALUE_COLUMNS}")
    return dict(zip(frame[Constant.KEY].astype(str), frame[Constant.VALUE]))
