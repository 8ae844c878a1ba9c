"""File storage for fixtures and results"""
import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ValidationError

from app.errors import StorageError
from app.models import Fir, MisfitMap, Signal, TimeVaryingIR
from app.schemas import LtiFitRecord, Manifest, ManifestEntry, SweepRow

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)
SWEEP_COLUMNS = ["pair_count", "mir_error", "ccf_error", "seed", "mir_valid", "ccf_valid"]


def fmt(value) -> str:
    """17 significant digits, so reruns write identical bytes."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _parse_header(line: str, path: Path) -> Dict[str, str]:
    try:
        return dict(item.split("=", 1) for item in line.strip().split(","))
    except ValueError as e:
        raise StorageError("malformed header line", str(path)) from e


class ResultStore:
    """Reads and writes everything a run produces under one directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest: Optional[Manifest] = None

    def path(self, name: str) -> Path:
        return self.root / name

    def ensure(self) -> None:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StorageError(f"cannot create output directory: {e}", str(self.root)) from e

    def _write_text(self, name: str, text: str) -> Path:
        self.ensure()
        path = self.path(name)
        try:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        except OSError as e:
            raise StorageError(f"write failed: {e}", str(path)) from e
        logger.debug("wrote %s", path)
        return path

    def _read_lines(self, name: str) -> List[str]:
        path = self.path(name)
        if not path.exists():
            raise StorageError("missing file", str(path))
        try:
            with open(path, newline="") as fh:
                return fh.read().splitlines()
        except OSError as e:
            raise StorageError(f"read failed: {e}", str(path)) from e

    def exists(self, name: str) -> bool:
        return self.path(name).exists()

    # Manifest

    def start_manifest(self, experiment: str, root_seed: int) -> None:
        self.manifest = Manifest(experiment=experiment, root_seed=root_seed)

    def register(self, path: Path, kind: str, seed: int) -> None:
        if self.manifest is not None:
            self.manifest.files.append(ManifestEntry(path=path.name, kind=kind, seed=seed))

    def write_manifest(self) -> Path:
        if self.manifest is None:
            raise StorageError("no manifest started", str(self.root))
        return self.write_model("manifest.json", self.manifest)

    def read_manifest(self) -> Manifest:
        return self.read_model("manifest.json", Manifest)

    # JSON

    def write_model(self, name: str, model: BaseModel) -> Path:
        return self._write_text(name, model.model_dump_json(indent=2) + "\n")

    def read_model(self, name: str, cls: Type[ModelT]) -> ModelT:
        text = "\n".join(self._read_lines(name))
        try:
            return cls.model_validate_json(text)
        except ValidationError as e:
            raise StorageError(f"malformed {cls.__name__}: {e.errors()[0]['msg']}", str(self.path(name))) from e

    def write_json(self, name: str, payload: dict) -> Path:
        return self._write_text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def read_json(self, name: str) -> dict:
        try:
            return json.loads("\n".join(self._read_lines(name)))
        except json.JSONDecodeError as e:
            raise StorageError(f"malformed JSON: {e}", str(self.path(name))) from e

    def write_lti_fit(self, name: str, record: LtiFitRecord) -> Path:
        return self.write_model(name, record)

    def read_lti_fit(self, name: str) -> LtiFitRecord:
        return self.read_model(name, LtiFitRecord)

    # Signals and impulse responses

    def write_signal(self, name: str, signal: Signal) -> Path:
        lines = [f"sample_rate={fmt(signal.sample_rate)}"] + [fmt(v) for v in signal.samples]
        return self._write_text(name, "\n".join(lines) + "\n")

    def read_signal(self, name: str) -> Signal:
        lines = self._read_lines(name)
        header = _parse_header(lines[0], self.path(name)) if lines else {}
        if "sample_rate" not in header:
            raise StorageError("signal file lacks a sample_rate header", str(self.path(name)))
        try:
            return Signal(np.array([float(v) for v in lines[1:]]), float(header["sample_rate"]))
        except ValueError as e:
            raise StorageError(f"malformed signal: {e}", str(self.path(name))) from e

    def write_pair(self, name: str, a: Signal, b: Signal) -> Path:
        rows = [f"sample_rate={fmt(a.sample_rate)}"]
        rows += [f"{fmt(x)},{fmt(y)}" for x, y in zip(a.samples, b.samples)]
        return self._write_text(name, "\n".join(rows) + "\n")

    def read_pair(self, name: str) -> Tuple[Signal, Signal]:
        lines = self._read_lines(name)
        header = _parse_header(lines[0], self.path(name)) if lines else {}
        try:
            values = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
            fs = float(header["sample_rate"])
        except (KeyError, ValueError) as e:
            raise StorageError(f"malformed pair file: {e}", str(self.path(name))) from e
        return Signal(values[:, 0], fs), Signal(values[:, 1], fs)

    def write_fir(self, name: str, fir: Fir) -> Path:
        lines = [f"p={fir.p}"] + [fmt(v) for v in fir.taps]
        return self._write_text(name, "\n".join(lines) + "\n")

    def read_fir(self, name: str) -> Fir:
        lines = self._read_lines(name)
        try:
            return Fir(np.array([float(v) for v in lines[1:]]))
        except ValueError as e:
            raise StorageError(f"malformed FIR: {e}", str(self.path(name))) from e

    def _write_matrix(self, name: str, header: str, matrix: np.ndarray) -> Path:
        rows = [header] + [",".join(fmt(v) for v in row) for row in matrix]
        return self._write_text(name, "\n".join(rows) + "\n")

    def write_tv_ir(self, name: str, ir: TimeVaryingIR) -> List[Path]:
        """n rows of p taps; a <stem>_std companion when the IR carries uncertainty."""
        header = f"p={ir.p},n={ir.n},sample_rate={fmt(ir.sample_rate)}"
        paths = [self._write_matrix(name, header, ir.taps)]
        if ir.std is not None:
            paths.append(self._write_matrix(std_name(name), header, ir.std))
        return paths

    def read_tv_ir(self, name: str) -> TimeVaryingIR:
        def load(n: str):
            lines = self._read_lines(n)
            header = _parse_header(lines[0], self.path(n)) if lines else {}
            try:
                matrix = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
                shape = (int(header["n"]), int(header["p"]))
                fs = float(header["sample_rate"])
            except (KeyError, ValueError) as e:
                raise StorageError(f"malformed time-varying IR: {e}", str(self.path(n))) from e
            if matrix.shape != shape:
                raise StorageError(f"matrix is {matrix.shape}, header says {shape}", str(self.path(n)))
            return matrix, fs

        taps, fs = load(name)
        std = load(std_name(name))[0] if self.exists(std_name(name)) else None
        return TimeVaryingIR(taps, std=std, sample_rate=fs)

    # Tables

    def write_table(self, name: str, columns: Dict[str, Sequence]) -> Path:
        self.ensure()
        path = self.path(name)
        header = list(columns)
        rows = zip(*(columns[c] for c in header))
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows([fmt(v) for v in row] for row in rows)
        except OSError as e:
            raise StorageError(f"write failed: {e}", str(path)) from e
        return path

    def read_table(self, name: str) -> Dict[str, np.ndarray]:
        lines = self._read_lines(name)
        reader = list(csv.reader(lines))
        if not reader:
            raise StorageError("empty table", str(self.path(name)))
        header, body = reader[0], reader[1:]
        try:
            data = np.array([[_cell(v) for v in row] for row in body], dtype=float).reshape(len(body), len(header))
        except ValueError as e:
            raise StorageError(f"malformed table: {e}", str(self.path(name))) from e
        return {column: data[:, i] for i, column in enumerate(header)}

    def write_sweep(self, name: str, rows: Sequence[SweepRow]) -> Path:
        return self.write_table(name, {c: [getattr(r, c) for r in rows] for c in SWEEP_COLUMNS})

    def read_sweep(self, name: str) -> List[SweepRow]:
        table = self.read_table(name)
        missing = [c for c in SWEEP_COLUMNS if c not in table]
        if missing:
            raise StorageError(f"sweep table lacks columns {missing}", str(self.path(name)))
        return [
            SweepRow(pair_count=int(table["pair_count"][i]), mir_error=table["mir_error"][i],
                     ccf_error=table["ccf_error"][i], seed=int(table["seed"][i]),
                     mir_valid=bool(table["mir_valid"][i]), ccf_valid=bool(table["ccf_valid"][i]))
            for i in range(len(table["pair_count"]))
        ]

    def write_misfit(self, name: str, misfit: MisfitMap) -> Path:
        """First row: velocities after a frequency\\velocity corner cell; then one row per frequency."""
        rows = ["freq\\velocity," + ",".join(fmt(v) for v in misfit.velocities)]
        rows += [fmt(f) + "," + ",".join(fmt(v) for v in row) for f, row in zip(misfit.freqs, misfit.misfit)]
        return self._write_text(name, "\n".join(rows) + "\n")

    def read_misfit(self, name: str) -> MisfitMap:
        lines = self._read_lines(name)
        try:
            velocities = np.array([float(v) for v in lines[0].split(",")[1:]])
            body = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
            return MisfitMap(body[:, 0], velocities, body[:, 1:])
        except (IndexError, ValueError) as e:
            raise StorageError(f"malformed misfit map: {e}", str(self.path(name))) from e

    def write_series(self, name: str, x, y, ylo=None, yhi=None) -> Path:
        """Tidy plot series with columns x,y[,ylo,yhi]."""
        columns = {"x": x, "y": y}
        if ylo is not None and yhi is not None:
            columns.update(ylo=ylo, yhi=yhi)
        return self.write_table(name, columns)


def std_name(name: str) -> str:
    stem, dot, ext = name.rpartition(".")
    return f"{stem}_std.{ext}" if dot else f"{name}_std"


def _cell(value: str) -> float:
    if value == "true":
        return 1.0
    if value == "false":
        return 0.0
    return float(value)
