"""File formats: datasets, manifests, coefficient tables, catalogues.

Every numeric field is written with 17 significant digits so that files
survive a load/save round trip byte for byte.
"""

import csv
import io
import os
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .benchmarks import BENCHMARKS, SyntheticBenchmark, make_benchmark  # noqa: F401
from .empirical import INPUT_NAMES, OUTPUT_NAMES, TABLE_COLUMNS, CoefficientTable, ShipGeometry
from .errors import ConfigError, DataError, TableError
from .multifidelity import FidelityDataset, check_nesting

REDUCED_NAMES = ("C_LOA", "M", "ASS_AL", "phi")


def fmt(value):
    return format(float(value), ".17g")


def write_text_atomic(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    write_text_atomic(path, buf.getvalue())


def read_numeric_csv(path, expected_header=None, allow_empty=False):
    """Parse a headed CSV of floats.

    Returns ``(header, values)`` with ``values`` of shape ``(n_rows, n_cols)``.
    Raises :class:`DataError` locating the first bad cell.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError("file not found", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("empty file, header expected", path=path)
    header = [h.strip() for h in rows[0]]
    if expected_header is not None and tuple(header) != tuple(expected_header):
        for k, (got, want) in enumerate(zip(header, expected_header)):
            if got != want:
                raise DataError(f"expected column {want!r}, found {got!r}", row=0, column=k + 1, path=path)
        raise DataError(
            f"expected {len(expected_header)} columns, found {len(header)}", row=0, path=path
        )
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, found {len(row)}", row=i, path=path)
        for j, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"not a number: {cell!r}", row=i, column=header[j], path=path) from None
            if not np.isfinite(value):
                raise DataError("non-finite value", row=i, column=header[j], path=path)
            data[i - 1, j] = value
    if data.shape[0] == 0 and not allow_empty:
        raise DataError("no data rows", path=path)
    return header, data


def load_dataset(path, input_names=None, output_names=OUTPUT_NAMES, level=1, cost=1.0):
    """Read one fidelity level: input columns followed by output columns."""
    header, data = read_numeric_csv(path)
    outputs = tuple(output_names)
    n_out = len(outputs)
    if tuple(header[-n_out:]) != outputs:
        raise DataError(f"last columns must be {', '.join(outputs)}", row=0, path=path)
    inputs = tuple(header[:-n_out])
    if not inputs:
        raise DataError("no input columns", row=0, path=path)
    if input_names is not None and inputs != tuple(input_names):
        raise DataError(f"input columns {inputs} do not match {tuple(input_names)}", row=0, path=path)
    return FidelityDataset(
        level=level,
        inputs=data[:, :-n_out],
        targets=data[:, -n_out:],
        cost=cost,
        input_names=inputs,
        output_names=outputs,
    )


def save_dataset(dataset, path):
    header = list(dataset.input_names) + list(dataset.output_names)
    write_csv(path, header, np.hstack([dataset.inputs, dataset.targets]).tolist())


@dataclass
class Manifest:
    """Ordered fidelity levels with their dataset paths and costs."""

    inputs: tuple
    outputs: tuple
    levels: list  # of dicts: name, path, cost


def load_manifest(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(raw, dict) or "levels" not in raw:
        raise ConfigError(f"manifest {path} must define 'levels'")
    levels = []
    for k, lv in enumerate(raw["levels"], start=1):
        if "path" not in lv or "cost" not in lv:
            raise ConfigError(f"manifest level {k} needs 'path' and 'cost'")
        cost = float(lv["cost"])
        if not cost > 0:
            raise ConfigError(f"manifest level {k} has nonpositive cost")
        levels.append({"name": lv.get("name", f"level{k}"), "path": path.parent / lv["path"], "cost": cost})
    return Manifest(
        inputs=tuple(raw.get("inputs", ())) or None,
        outputs=tuple(raw.get("outputs", OUTPUT_NAMES)),
        levels=levels,
    )


def load_manifest_datasets(path):
    """Load every level of a manifest and check names, sizes and nesting."""
    manifest = load_manifest(path)
    datasets = []
    for k, lv in enumerate(manifest.levels, start=1):
        ds = load_dataset(lv["path"], manifest.inputs, manifest.outputs, level=k, cost=lv["cost"])
        if datasets and ds.input_names != datasets[0].input_names:
            raise DataError(f"level {k} input columns differ from level 1", path=lv["path"])
        datasets.append(ds)
    bad = [t + 1 for t, rows in enumerate(check_nesting(datasets)) if rows]
    if bad:
        raise DataError(f"datasets are not nested at level(s) {bad}", path=path)
    return manifest, datasets


def _data_path(name):
    return resources.files("mfkrig").joinpath("data").joinpath(name)


def load_ranges(path):
    """Validity ranges file ``param,min,max`` -> ``(lower, upper)`` in input order."""
    header, _ = None, None
    path = Path(path)
    if not path.is_file():
        raise TableError("ranges file not found", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or [c.strip() for c in rows[0]] != ["param", "min", "max"]:
        raise TableError("ranges header must be 'param,min,max'", row=0, path=path)
    found = {}
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != 3:
            raise TableError("expected 3 fields", row=i, path=path)
        try:
            found[row[0].strip()] = (float(row[1]), float(row[2]))
        except ValueError:
            raise TableError("range bounds must be numbers", row=i, path=path) from None
    missing = [n for n in INPUT_NAMES if n not in found]
    if missing:
        raise TableError(f"ranges missing for {', '.join(missing)}", path=path)
    lower = np.array([found[n][0] for n in INPUT_NAMES])
    upper = np.array([found[n][1] for n in INPUT_NAMES])
    if np.any(upper <= lower):
        bad = [INPUT_NAMES[k] for k in np.flatnonzero(upper <= lower)]
        raise ConfigError(f"degenerate validity range for {', '.join(bad)}")
    return lower, upper


def load_coefficient_table(path, ranges_path=None):
    """Read an angle-tabulated coefficient table (and optional ranges file)."""
    try:
        _, data = read_numeric_csv(path, expected_header=TABLE_COLUMNS)
    except TableError:
        raise
    except DataError as exc:
        raise TableError(str(exc), row=exc.row, column=exc.column) from exc
    lower = upper = None
    if ranges_path is not None:
        lower, upper = load_ranges(ranges_path)
    return CoefficientTable(
        phi=data[:, 0], a=data[:, 1:8], b=data[:, 8:15], d=data[:, 15:21], lower=lower, upper=upper
    )


def default_table():
    """The transcribed Isherwood (1973) table with its validity ranges."""
    with resources.as_file(_data_path("isherwood_1973.csv")) as t, resources.as_file(
        _data_path("isherwood_1973_ranges.csv")
    ) as r:
        return load_coefficient_table(t, r)


def save_coefficient_table(table, path):
    rows = np.column_stack([table.phi, table.a, table.b, table.d]).tolist()
    write_csv(path, TABLE_COLUMNS, rows)


@dataclass
class ConfigurationCatalogue:
    """Admissible loading configurations in (unscaled) reduced coordinates."""

    labels: tuple
    names: tuple
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if len(self.labels) == 0:
            raise ValueError("configuration catalogue is empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("configuration labels must be unique")
        if self.values.shape != (len(self.labels), len(self.names)):
            raise ValueError("catalogue values do not match labels and names")

    def __len__(self):
        return len(self.labels)

    def out_of_range(self, lower, upper):
        """Labels whose coordinates fall outside ``[lower, upper]``."""
        bad = np.any((self.values < lower) | (self.values > upper), axis=1)
        return [lab for lab, b in zip(self.labels, bad) if b]


def load_catalogue(path):
    path = Path(path)
    if not path.is_file():
        raise DataError("catalogue not found", path=path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0].strip() != "label":
        raise DataError("catalogue header must start with 'label'", row=0, path=path)
    names = tuple(c.strip() for c in rows[0][1:])
    labels, values = [], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(names) + 1:
            raise DataError(f"expected {len(names) + 1} fields", row=i, path=path)
        labels.append(row[0].strip())
        try:
            vals = [float(c) for c in row[1:]]
        except ValueError:
            raise DataError("coordinates must be numbers", row=i, path=path) from None
        if not np.all(np.isfinite(vals)):
            raise DataError("non-finite value", row=i, path=path)
        values.append(vals)
    try:
        return ConfigurationCatalogue(tuple(labels), names, np.array(values).reshape(len(labels), len(names)))
    except ValueError as exc:
        raise DataError(str(exc), path=path) from exc


def default_catalogue():
    with resources.as_file(_data_path("baseline_catalogue.csv")) as p:
        return load_catalogue(p)


def load_geometry(path):
    """Ship geometry from a YAML mapping of :class:`ShipGeometry` fields."""
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read geometry {path}: {exc}") from exc
    try:
        return ShipGeometry(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid geometry {path}: {exc}") from exc
