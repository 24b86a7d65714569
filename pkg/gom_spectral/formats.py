"""
On-disk formats of the command-line tools: numeric CSV matrices, category
count files, scenario and suite JSON, tidy result tables and the run
manifest every output directory carries.
"""

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import __version__
from .exceptions import ScenarioError, ValidationError
from .simulate import SimScenario
from .utils import config_digest, file_digest

LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


@dataclass
class RunManifest:
    """
    What produced an output directory: command, resolved configuration, seed,
    package version, input digests, per-stage timings and output digests
    """

    command: str
    config: Dict[str, Any]
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__

    @property
    def run_id(self) -> str:
        """Depends only on what determines the numbers, never on timings"""
        return config_digest(
            {
                "command": self.command,
                "config": self.config,
                "seed": self.seed,
                "inputs": self.inputs,
                "version": self.version,
            }
        )

    def add_input(self, path: PathLike) -> None:
        self.inputs[Path(path).name] = file_digest(path)

    def add_output(self, path: PathLike) -> None:
        self.outputs[Path(path).name] = file_digest(path)

    def write(self, out_dir: PathLike) -> Path:
        document = asdict(self)
        document["run_id"] = self.run_id
        path = Path(out_dir) / MANIFEST_NAME
        write_json(path, document)
        return path

    @classmethod
    def read(cls, out_dir: PathLike) -> "RunManifest":
        document = read_json(Path(out_dir) / MANIFEST_NAME)
        document.pop("run_id", None)
        return cls(**document)


def _manifest_line(run_id: Optional[str]) -> str:
    return f"# manifest: {MANIFEST_NAME} run_id={run_id}\n" if run_id else ""


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def write_json(path: PathLike, document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(document, handle, indent=2, sort_keys=True, default=_jsonable)
        handle.write("\n")
    return path


def read_json(path: PathLike) -> Any:
    """Parses a JSON file; syntax errors carry file:line:column"""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as error:
        raise ScenarioError(
            f"malformed JSON: {error.msg}",
            location=f"{path}:{error.lineno}:{error.colno}",
        ) from None


def write_matrix(
    path: PathLike,
    matrix: np.ndarray,
    columns: Optional[Sequence[str]] = None,
    run_id: Optional[str] = None,
) -> Path:
    """
    Writes a numeric matrix as CSV with 17 significant digits and a header row
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if columns is None:
        columns = [f"c{j}" for j in range(matrix.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(matrix, columns=list(columns))
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(_manifest_line(run_id))
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def _data_lines(path: Path) -> List[Tuple[int, str]]:
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    return [
        (number, text)
        for number, text in enumerate(lines, start=1)
        if text.strip() and not text.lstrip().startswith("#")
    ]


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_matrix(path: PathLike) -> np.ndarray:
    """
    Reads a numeric CSV matrix. '#' lines are skipped and a leading header row
    is detected and dropped; bad cells are reported as file:line.
    """
    path = Path(path)
    lines = _data_lines(path)
    if not lines:
        raise ValidationError(f"{path} holds no data rows")
    first_cells = [cell.strip() for cell in lines[0][1].split(",")]
    if not all(_is_number(cell) for cell in first_cells):
        lines = lines[1:]
    if not lines:
        raise ValidationError(f"{path} holds a header but no data rows")
    try:
        frame = pd.read_csv(
            io.StringIO("\n".join(text for _, text in lines)),
            header=None,
            dtype=str,
            skipinitialspace=True,
        )
    except pd.errors.ParserError as error:
        raise ValidationError(f"ragged CSV: {error}", location=str(path)) from None
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy() & ~frame.isin(["nan", "NaN"]).to_numpy()
    if bad.any():
        row, column = (int(v) for v in np.argwhere(bad)[0])
        raise ValidationError(
            f"non-numeric cell {frame.iat[row, column]!r} in column {column + 1}",
            location=f"{path}:{lines[row][0]}",
        )
    return values.to_numpy(dtype=float)


def write_categories(path: PathLike, counts: Sequence[int]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(str(int(c)) for c in counts) + "\n")
    return path


def read_categories(path: PathLike) -> Tuple[int, ...]:
    """
    Category counts C_l, separated by whitespace or commas; '#' lines skipped
    """
    path = Path(path)
    counts: List[int] = []
    for number, text in _data_lines(path):
        for cell in text.replace(",", " ").split():
            try:
                counts.append(int(cell))
            except ValueError:
                raise ValidationError(
                    f"category count {cell!r} is not an integer",
                    location=f"{path}:{number}",
                ) from None
    if not counts:
        raise ValidationError(f"{path} lists no category counts")
    return tuple(counts)


def read_scenario(path: PathLike) -> SimScenario:
    document = read_json(path)
    try:
        return SimScenario.from_dict(document)
    except ScenarioError as error:
        if error.location is None:
            error.location = str(path)
        raise


@dataclass(frozen=True)
class BenchSuite:
    """
    Scenarios of a bench run with shared estimator settings and an optional
    Gibbs comparison applied to the polytomous scenarios
    """

    scenarios: Tuple[SimScenario, ...]
    fit: Dict[str, Any] = field(default_factory=dict)
    gibbs: Optional[Dict[str, Any]] = None
    bounds: bool = False


def read_suite(path: PathLike) -> BenchSuite:
    document = read_json(path)
    if not isinstance(document, dict) or "scenarios" not in document:
        raise ScenarioError("a bench suite needs a 'scenarios' list", location=str(path))
    unknown = sorted(set(document) - {"scenarios", "fit", "gibbs", "bounds"})
    if unknown:
        raise ScenarioError(
            f"unknown suite fields: {', '.join(unknown)}", location=str(path)
        )
    scenarios = []
    for idx, entry in enumerate(document["scenarios"]):
        try:
            scenarios.append(SimScenario.from_dict(entry))
        except ScenarioError as error:
            error.location = f"{path}: scenario {idx}"
            raise
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        raise ScenarioError("scenario names must be unique", location=str(path))
    return BenchSuite(
        tuple(scenarios),
        dict(document.get("fit") or {}),
        document.get("gibbs"),
        bool(document.get("bounds", False)),
    )


def write_table(path: PathLike, table: pd.DataFrame, run_id: Optional[str] = None) -> Path:
    """Tidy long-format table as CSV, doubles at 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(_manifest_line(run_id))
        table.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
