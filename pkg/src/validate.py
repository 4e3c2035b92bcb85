#!/usr/bin/env python3
import argparse
import sys

import numpy as np

from config import load_run_config
from constant import Constant
from output import read_csv

REQUIRED_HEADER = {"convention", "params_hash", "generated_at"}


def validate_spectrum_csv(path: str) -> None:
    frame, header = read_csv(path)
    if list(frame.columns) != Constant.SPECTRUM_COLUMNS:
        raise ValueError(f"CSV header mismatch. Expected: {Constant.SPECTRUM_COLUMNS} but found: {list(frame.columns)}")
    if frame.empty:
        raise ValueError("CSV has no rows")

    missing = REQUIRED_HEADER - set(header)
    if missing:
        raise ValueError(f"Metadata header missing keys {sorted(missing)}")

    freq = frame[Constant.FREQ_HZ].to_numpy(dtype=float)
    values = frame[Constant.PSD_VALUE].to_numpy(dtype=float)
    for name, column in ((Constant.FREQ_HZ, freq), (Constant.PSD_VALUE, values)):
        bad = np.flatnonzero(~np.isfinite(column))
        if bad.size:
            raise ValueError(f"Row {bad[0] + 2} has a non-finite {name}")
    steps = np.flatnonzero(np.diff(freq) <= 0)
    if steps.size:
        raise ValueError(f"Frequencies are not strictly ascending at row {steps[0] + 3}")
    negative = np.flatnonzero(values < 0)
    if negative.size:
        raise ValueError(f"Row {negative[0] + 2} has a negative spectral density")


def main() -> int:
    parser = argparse.ArgumentParser(description="Validate spectrum CSV output and run configs")
    parser.add_argument("--csv", action="append", default=[], help="Spectrum CSV to check (repeatable)")
    parser.add_argument("--config", action="append", default=[], help="Run config YAML to check (repeatable)")
    args = parser.parse_args()
    if not args.csv and not args.config:
        parser.error("give at least one --csv or --config")
    try:
        for path in args.config:
            load_run_config(path)
        for path in args.csv:
            validate_spectrum_csv(path)
    except Exception as exc:  # noqa: BLE001
        print(f"Validation failed: {exc}")
        return 1
    print("Validation passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
