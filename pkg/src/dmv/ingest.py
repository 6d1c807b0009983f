"""Loading and typing of CDC-shaped CSV data.

A :class:`ColumnSchema` assigns each of the table's columns a role
(categorical / numerical / text / geolocation / target / ignored). The
shipped default matches the standard 31-column health-aging export with
`data_value` as the prediction target and a WKT `Geolocation` column from
which latitude/longitude are extracted. Schemas are config-driven: a schema
file with `name = role` lines (# comments allowed) overrides the default.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import (InvalidSchema, InvalidTarget, IoFailure, MissingColumn,
                     OutOfRange, RowArityMismatch, UnexpectedColumn,
                     UnparseableGeolocation)


class Role(str, Enum):
    CATEGORICAL = "categorical"
    NUMERICAL = "numerical"
    TEXT = "text"
    GEOLOCATION = "geolocation"
    TARGET = "target"
    IGNORED = "ignored"


@dataclass(frozen=True)
class ColumnSchema:
    """Ordered (name, role) pairs describing the CSV layout."""

    columns: tuple[tuple[str, Role], ...]

    def __post_init__(self):
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise InvalidSchema(f"duplicate column names: {dupes}")
        targets = [n for n, r in self.columns if r is Role.TARGET]
        if len(targets) != 1:
            raise InvalidSchema(f"schema needs exactly one target, got {targets}")
        geos = [n for n, r in self.columns if r is Role.GEOLOCATION]
        if len(geos) > 1:
            raise InvalidSchema(f"schema allows at most one geolocation column, got {geos}")
        if geos and ({"latitude", "longitude"} & set(names)):
            raise InvalidSchema(
                "columns named latitude/longitude clash with the geolocation role")

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.columns]

    def role_of(self, name: str) -> Role:
        for n, r in self.columns:
            if n == name:
                return r
        raise KeyError(name)

    def names_with_role(self, role: Role) -> list[str]:
        return [n for n, r in self.columns if r is role]

    @property
    def target_name(self) -> str:
        return self.names_with_role(Role.TARGET)[0]

    @property
    def geolocation_name(self) -> Optional[str]:
        geos = self.names_with_role(Role.GEOLOCATION)
        return geos[0] if geos else None

    def index_of(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise OutOfRange("latitude", self.latitude)
        if not (-180.0 <= self.longitude <= 180.0):
            raise OutOfRange("longitude", self.longitude)


@dataclass
class RawTable:
    """Parsed CSV: schema plus row-major cells (None = missing)."""

    schema: ColumnSchema
    rows: list[list[Optional[str]]]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[Optional[str]]:
        i = self.schema.index_of(name)
        return [row[i] for row in self.rows]

    def record(self, i: int) -> dict[str, Optional[str]]:
        return dict(zip(self.schema.names, self.rows[i]))


DEFAULT_SCHEMA_LINES = """\
# Default 31-column health-aging table layout. Override with a schema file
# of `name = role` lines; roles: categorical, numerical, text, geolocation,
# target, ignored.
rowid = ignored
yearstart = numerical
yearend = numerical
locationabbr = categorical
locationdesc = categorical
datasource = categorical
linespread = categorical
class = categorical
topic = categorical
question = categorical
questionid = categorical
response = ignored
data_value_unit = ignored
data_value_type = ignored
data_value = target
data_value_alt = ignored
data_value_footnote_symbol = ignored
data_value_footnote = ignored
low_confidence_limit = ignored
high_confidence_limit = ignored
stratificationcategory1 = categorical
stratification = categorical
stratificationcategory2 = categorical
stratification2 = ignored
geolocation = geolocation
classid = ignored
topicid = ignored
locationid = ignored
responseid = ignored
stratificationcategoryid1 = ignored
stratificationid1 = ignored
"""


def parse_schema_text(text: str) -> ColumnSchema:
    """Parse `name = role` lines; `#` starts a comment."""
    columns: list[tuple[str, Role]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSchema(f"schema line {lineno}: expected `name = role`")
        name, role_s = (part.strip() for part in line.split("=", 1))
        try:
            role = Role(role_s.lower())
        except ValueError:
            raise InvalidSchema(
                f"schema line {lineno}: unknown role {role_s!r}") from None
        columns.append((name.lower(), role))
    if not columns:
        raise InvalidSchema("schema file declares no columns")
    return ColumnSchema(tuple(columns))


def load_schema_file(path) -> ColumnSchema:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_schema_text(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read schema file {path}: {exc}") from exc


def default_schema() -> ColumnSchema:
    return parse_schema_text(DEFAULT_SCHEMA_LINES)


def _parse_float(cell: str) -> Optional[float]:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv(path, schema: Optional[ColumnSchema] = None) -> RawTable:
    """Load a CSV with header into a RawTable, reordering columns to schema
    order. Empty cells become missing; target cells must parse as finite
    numbers when present."""
    if schema is None:
        schema = default_schema()
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IoFailure(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IoFailure(f"{path} is empty (no header row)") from None
        header = [h.strip().lower() for h in header]
        wanted = schema.names
        for name in wanted:
            if name not in header:
                raise MissingColumn(name)
        for name in header:
            if name not in wanted:
                raise UnexpectedColumn(name)
        col_pos = [header.index(name) for name in wanted]
        target_pos = wanted.index(schema.target_name)

        rows: list[list[Optional[str]]] = []
        for lineno, raw in enumerate(reader, start=2):
            if len(raw) != len(header):
                raise RowArityMismatch(lineno, len(header), len(raw))
            row: list[Optional[str]] = [
                (raw[p] if raw[p] != "" else None) for p in col_pos
            ]
            tcell = row[target_pos]
            if tcell is not None and _parse_float(tcell) is None:
                raise InvalidTarget(lineno, tcell)
            rows.append(row)
    return RawTable(schema=schema, rows=rows)


# --- geolocation ------------------------------------------------------------

_WKT_RE = re.compile(
    r"^\s*POINT\s*\(\s*(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s+"
    r"(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*\)\s*$",
    re.IGNORECASE,
)
_TUPLE_RE = re.compile(
    r"^\s*\(\s*(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*,\s*"
    r"(-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*\)\s*$",
)


def parse_geolocation(cell: str) -> GeoPoint:
    """Parse `POINT (lon lat)` (WKT, longitude first) or `(lat, lon)`."""
    if not cell or not cell.strip():
        raise UnparseableGeolocation(cell)
    m = _WKT_RE.match(cell)
    if m:
        lon, lat = float(m.group(1)), float(m.group(2))
        return GeoPoint(latitude=lat, longitude=lon)
    m = _TUPLE_RE.match(cell)
    if m:
        lat, lon = float(m.group(1)), float(m.group(2))
        return GeoPoint(latitude=lat, longitude=lon)
    raise UnparseableGeolocation(cell)


def format_geolocation(point: GeoPoint) -> str:
    """WKT emitter, 6 decimal places (longitude first)."""
    return f"POINT ({point.longitude:.6f} {point.latitude:.6f})"


def partition_columns(table: RawTable):
    """Role partition: (categorical, numerical, text, target). The target
    is never part of any feature set."""
    schema = table.schema
    target = schema.target_name
    categorical = {n for n in schema.names_with_role(Role.CATEGORICAL) if n != target}
    numerical = {n for n in schema.names_with_role(Role.NUMERICAL) if n != target}
    text = {n for n in schema.names_with_role(Role.TEXT) if n != target}
    return categorical, numerical, text, target


# --- table artifact (round-trippable) ----------------------------------------

TABLE_MAGIC = "DMVT1"


def save_table(table: RawTable, path) -> None:
    """Self-describing text artifact: magic line, schema lines, `---`, CSV."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(TABLE_MAGIC + "\n")
            for name, role in table.schema.columns:
                fh.write(f"{name} = {role.value}\n")
            fh.write("---\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(table.schema.names)
            for row in table.rows:
                writer.writerow(["" if c is None else c for c in row])
    except OSError as exc:
        raise IoFailure(f"cannot write table to {path}: {exc}") from exc


def load_table(path) -> RawTable:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            first = fh.readline().rstrip("\n")
            if first != TABLE_MAGIC:
                raise IoFailure(f"{path} is not a table artifact")
            schema_lines = []
            for line in fh:
                if line.rstrip("\n") == "---":
                    break
                schema_lines.append(line)
            schema = parse_schema_text("".join(schema_lines))
            reader = csv.reader(fh)
            header = next(reader)
            if [h.lower() for h in header] != schema.names:
                raise IoFailure(f"{path}: header does not match embedded schema")
            rows = [[(c if c != "" else None) for c in raw] for raw in reader]
    except OSError as exc:
        raise IoFailure(f"cannot read table from {path}: {exc}") from exc
    return RawTable(schema=schema, rows=rows)
