"""
File formats: CSV tables, run configs, run manifests, node sets and the
bundled Ghia centerline reference data.

Floats are written with repr so that reading a table back gives the same
numbers bit for bit.
"""

import configparser
import csv
import hashlib
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .errors import ConfigError, DataFormatError
from .geometry import NodeSet
from .models import Domain, RunConfig

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Cell = Union[float, int, str, None]

CONFIG_SECTIONS = ("problem", "discretization", "assembly", "solver", "picard", "output")


def format_cell(value: Cell) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def parse_cell(text: str) -> Cell:
    text = text.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Cell]]) -> Path:
    """Comma-separated table with one header row and '\\n' line endings."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise DataFormatError(str(out), f"row has {len(row)} cells, header has {len(header)}")
            writer.writerow([format_cell(cell) for cell in row])
    logger.debug("Wrote CSV", extra={"path": str(out)})
    return out


def read_csv(path: PathLike) -> Tuple[List[str], List[List[Cell]]]:
    src = Path(path)
    try:
        with src.open(newline="", encoding="utf-8") as handle:
            reader = csv.reader(line for line in handle if not line.startswith("#"))
            header = next(reader)
            rows = [[parse_cell(cell) for cell in row] for row in reader if row]
    except (OSError, StopIteration, csv.Error) as exc:
        raise DataFormatError(str(src), "not a readable CSV table", cause=exc) from exc
    for number, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataFormatError(str(src), f"line {number}: expected {len(header)} cells")
    return header, rows


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_config(path: Optional[PathLike] = None, overrides: Optional[Dict[str, Dict[str, str]]] = None) -> RunConfig:
    """
    Parse a sectioned key = value file into a validated RunConfig.

    overrides are applied on top of the file, section by section.
    """
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None
    )
    parser.optionxform = str  # keep Re as Re
    if path is not None:
        src = Path(path)
        if not src.is_file():
            raise ConfigError(f"config file not found: {src}")
        try:
            parser.read(src, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {src}", cause=exc) from exc

    data: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown section [{section}]", context={"allowed": list(CONFIG_SECTIONS)})
        data[section] = {key: value for key, value in parser.items(section) if value != ""}
    for section, values in (overrides or {}).items():
        data.setdefault(section, {}).update(values)

    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        problems = [
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors()
        ]
        raise ConfigError("; ".join(problems), cause=exc) from exc
    logger.info("Loaded configuration", extra={"path": str(path), "kind": config.problem.kind})
    return config


def write_manifest(
    path: PathLike,
    config: RunConfig,
    outputs: Sequence[Path],
    extra: Optional[Dict[str, Cell]] = None,
) -> Path:
    """key=value manifest: resolved config, extra facts, sha256 of each output."""
    lines = [f"{key}={value}" for key, value in config.flatten().items()]
    for key, value in sorted((extra or {}).items()):
        lines.append(f"{key}={format_cell(value)}")
    for output in sorted(outputs, key=lambda p: p.name):
        lines.append(f"sha256.{output.name}={sha256_file(output)}")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def read_manifest(path: PathLike) -> Dict[str, str]:
    entries: Dict[str, str] = {}
    for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DataFormatError(str(path), f"line {number} is not key=value")
        key, value = line.split("=", 1)
        entries[key] = value
    return entries


def read_nodes(path: PathLike, domain: Domain, spacing: Optional[float] = None) -> NodeSet:
    """Node set from a CSV with header x,y."""
    header, rows = read_csv(path)
    if [h.strip() for h in header] != ["x", "y"]:
        raise DataFormatError(str(path), f"expected header x,y, got {','.join(header)}")
    try:
        positions = np.array(rows, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(str(path), "non-numeric coordinate", cause=exc) from exc
    try:
        return NodeSet(positions.reshape(-1, 2), domain, spacing=spacing)
    except ValueError as exc:
        raise DataFormatError(str(path), str(exc), cause=exc) from exc


def write_nodes(nodes: NodeSet, path: PathLike) -> Path:
    return write_csv(path, ["x", "y"], nodes.positions.tolist())


@dataclass
class GhiaTable:
    """Published centerline velocities of the lid-driven cavity."""

    y: np.ndarray
    u: Dict[int, np.ndarray]
    x: np.ndarray
    v: Dict[int, np.ndarray]

    @property
    def reynolds_numbers(self) -> List[int]:
        return sorted(set(self.u) & set(self.v))


def _ghia_block(path: str, header: List[str], rows: List[List[float]], prefix: str) -> Dict[int, np.ndarray]:
    out = {}
    for column, name in enumerate(header[1:], start=1):
        if not name.startswith(prefix + "_Re"):
            raise DataFormatError(path, f"unexpected column {name!r}")
        out[int(name[len(prefix) + 3:])] = np.array([row[column] for row in rows])
    return out


def load_ghia(path: Optional[PathLike] = None) -> GhiaTable:
    """
    Read the two-block Ghia table: a y,u_Re... block then an x,v_Re... block.

    Without a path the copy bundled with the package is used.
    """
    if path is None:
        text = resources.files("vip_flow").joinpath("data/ghia_centerlines.csv").read_text(encoding="utf-8")
        label = "ghia_centerlines.csv"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataFormatError(str(path), "cannot open", cause=exc) from exc
        label = str(path)

    blocks: Dict[str, Tuple[List[str], List[List[float]]]] = {}
    current: Optional[str] = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [cell.strip() for cell in line.split(",")]
        if cells[0] in ("x", "y"):
            current = cells[0]
            blocks[current] = (cells, [])
            continue
        if current is None:
            raise DataFormatError(label, f"line {number}: data before a header")
        header = blocks[current][0]
        if len(cells) != len(header):
            raise DataFormatError(label, f"line {number}: expected {len(header)} cells")
        try:
            blocks[current][1].append([float(cell) for cell in cells])
        except ValueError as exc:
            raise DataFormatError(label, f"line {number}: non-numeric cell", cause=exc) from exc

    if set(blocks) != {"x", "y"}:
        raise DataFormatError(label, "need both a y,u block and an x,v block")
    y_header, y_rows = blocks["y"]
    x_header, x_rows = blocks["x"]
    return GhiaTable(
        y=np.array([row[0] for row in y_rows]),
        u=_ghia_block(label, y_header, y_rows, "u"),
        x=np.array([row[0] for row in x_rows]),
        v=_ghia_block(label, x_header, x_rows, "v"),
    )
