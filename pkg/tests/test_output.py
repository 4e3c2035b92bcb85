import numpy as np
import pandas as pd
import pytest
import yaml

from constant import Constant
from exceptions import ValidationError
from output import (
    plain,
    read_csv,
    read_key_value_csv,
    read_spectrum_csv,
    sidecar_path,
    write_csv,
    write_key_value_csv,
    write_spectrum_csv,
)
from spectra import SpectrumResult
from validate import main as validate_main
from validate import validate_spectrum_csv


def _spectrum(values=None):
    omega = 2.0 * np.pi * np.linspace(224000.0, 235000.0, 7)
    values = np.linspace(1e-30, 7e-30, 7) if values is None else np.asarray(values, dtype=float)
    return SpectrumResult(
        omega=omega,
        values=values,
        metadata={"convention": Constant.CONVENTION, "params_hash": "abc123", "port": "t2"},
    )


def _body(path):
    with open(path, "r", encoding="utf-8") as handle:
        return [line for line in handle if not line.startswith("#")]


def test_spectrum_csv_round_trip_is_exact(tmp_path):
    spectrum = _spectrum(values=[1.0 / 3.0, 2e-31, 0.1, 7.0, 1e-300, 5.5, 0.0])
    path = write_spectrum_csv(tmp_path / "run_spectrum.csv", spectrum, {"config": "amplitude_dips.yaml"})
    frame, _ = read_csv(path)
    np.testing.assert_array_equal(frame[Constant.FREQ_HZ].to_numpy(), spectrum.freq_hz)
    loaded = read_spectrum_csv(path)
    np.testing.assert_allclose(loaded.omega, spectrum.omega, rtol=1e-15)
    np.testing.assert_array_equal(loaded.values, spectrum.values)
    assert loaded.metadata["params_hash"] == "abc123"
    assert loaded.metadata["convention"] == Constant.CONVENTION
    assert "generated_at" in loaded.metadata


def test_spectrum_sidecar_holds_provenance(tmp_path):
    path = write_spectrum_csv(tmp_path / "run_spectrum.csv", _spectrum(), {"config": "amplitude_dips.yaml"})
    sidecar = sidecar_path(path)
    assert sidecar.name == "run_spectrum.meta.yaml"
    with open(sidecar, "r", encoding="utf-8") as handle:
        document = yaml.safe_load(handle)
    assert document["git_describe"]
    assert document["config"] == "amplitude_dips.yaml"
    assert document["metadata"]["params_hash"] == "abc123"


def test_repeated_writes_have_identical_bodies(tmp_path):
    first = write_spectrum_csv(tmp_path / "a.csv", _spectrum())
    second = write_spectrum_csv(tmp_path / "b.csv", _spectrum())
    assert _body(first) == _body(second)
    assert _body(first)[0].strip() == ",".join(Constant.SPECTRUM_COLUMNS)


def test_descending_spectrum_is_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    write_csv(path, pd.DataFrame({Constant.FREQ_HZ: [2.0, 1.0], Constant.PSD_VALUE: [1.0, 1.0]}))
    with pytest.raises(ValidationError, match="ascending"):
        read_spectrum_csv(path)


def test_missing_csv(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_csv(tmp_path / "absent.csv")


def test_key_value_csv_keeps_keys(tmp_path):
    record = {"eps_m": 0.05, "A_factor": np.float64(1.6e-15), "note": "synthetic"}
    path = write_key_value_csv(tmp_path / "run_calibration.csv", record, {"config": "calibration.yaml"})
    loaded = read_key_value_csv(path)
    assert list(loaded) == list(record)
    assert float(loaded["A_factor"]) == pytest.approx(1.6e-15)
    assert read_csv(path)[1]["config"] == "calibration.yaml"


def test_plain_converts_numpy_and_paths(tmp_path):
    converted = plain(
        {"array": np.arange(3), "scalar": np.float64(2.5), "pair": (1, 2), "path": tmp_path, "z": 1 + 2j}
    )
    assert converted == {
        "array": [0, 1, 2],
        "scalar": 2.5,
        "pair": [1, 2],
        "path": str(tmp_path),
        "z": {"real": 1.0, "imag": 2.0},
    }
    yaml.safe_dump(converted)


def test_validator_accepts_written_spectrum(tmp_path):
    path = write_spectrum_csv(tmp_path / "run_spectrum.csv", _spectrum())
    validate_spectrum_csv(str(path))


def test_validator_rejects_negative_density(tmp_path):
    path = write_spectrum_csv(tmp_path / "run_spectrum.csv", _spectrum(values=[1.0, 1.0, -1.0, 1.0, 1.0, 1.0, 1.0]))
    with pytest.raises(ValueError, match="Row 4 has a negative"):
        validate_spectrum_csv(str(path))


def test_validator_rejects_missing_metadata(tmp_path):
    path = tmp_path / "bare.csv"
    pd.DataFrame({Constant.FREQ_HZ: [1.0, 2.0], Constant.PSD_VALUE: [1.0, 1.0]}).to_csv(path, index=False)
    with pytest.raises(ValueError, match="Metadata header"):
        validate_spectrum_csv(str(path))


def test_validator_main(tmp_path, monkeypatch, capsys, config_dir):
    good = write_spectrum_csv(tmp_path / "run_spectrum.csv", _spectrum())
    monkeypatch.setattr(
        "sys.argv", ["validate.py", "--csv", str(good), "--config", str(config_dir / "amplitude_dips.yaml")]
    )
    assert validate_main() == 0
    assert "Validation passed" in capsys.readouterr().out

    bad = write_spectrum_csv(tmp_path / "neg_spectrum.csv", _spectrum(values=-np.ones(7)))
    monkeypatch.setattr("sys.argv", ["validate.py", "--csv", str(bad)])
    assert validate_main() == 1
    assert "Validation failed" in capsys.readouterr().out
