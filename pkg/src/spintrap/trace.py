"""Shared signal container and its CSV wire format.

A :class:`SignalTrace` is the common currency between the simulation modules,
the fitting toolkit, and the command line.  On disk it is a plain CSV with
``#``-prefixed ``key=value`` metadata lines, one ``x,y`` header row, and data
rows printed at full double precision (17 significant digits), so two runs
with the same configuration and seed produce byte-identical data sections.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

__all__ = [
    "AXIS_KINDS",
    "SignalTrace",
    "CsvFormatError",
    "MixedConfigHashError",
    "write_trace_csv",
    "read_trace_csv",
]

AXIS_KINDS = ("time", "field", "tau", "pulse_duration")


class CsvFormatError(ValueError):
    """Malformed trace CSV; carries the 1-based offending row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class MixedConfigHashError(ValueError):
    """The file concatenates data sections produced under different configs."""


@dataclass(frozen=True)
class SignalTrace:
    """Sampled signal versus a time-like or field axis.

    ``x`` must be strictly increasing and the same length as ``y``.  ``units``
    names the y quantity ("A", "C", or "dimensionless"); the x unit follows
    from ``axis_kind`` (Tesla for "field", seconds otherwise).  ``meta`` holds
    reproducibility metadata (config hash, rng seed, tool version, ...).
    """

    axis_kind: str
    x: tuple[float, ...]
    y: tuple[float, ...]
    units: str = "dimensionless"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.axis_kind not in AXIS_KINDS:
            raise ValueError(f"axis_kind must be one of {AXIS_KINDS}, got {self.axis_kind!r}")
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        if len(self.x) != len(self.y):
            raise ValueError(f"len(x)={len(self.x)} != len(y)={len(self.y)}")
        xs = np.asarray(self.x)
        if len(xs) > 1 and not np.all(np.diff(xs) > 0):
            raise ValueError("x must be strictly increasing")

    def __len__(self) -> int:
        return len(self.x)

    def x_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def y_array(self) -> np.ndarray:
        return np.asarray(self.y, dtype=float)


def _format_value(v: float) -> str:
    return f"{v:.17g}"


def write_trace_csv(trace: SignalTrace, path: str) -> None:
    """Write a trace in the canonical CSV layout.

    Metadata keys are emitted sorted so the data section is deterministic;
    the volatile timestamp is confined to the single ``created=`` line.
    """
    lines = []
    meta = dict(trace.meta)
    created = meta.pop("created", None)
    if created is not None:
        lines.append(f"# created={created}")
    meta.setdefault("axis_kind", trace.axis_kind)
    meta.setdefault("units", trace.units)
    for key in sorted(meta):
        lines.append(f"# {key}={meta[key]}")
    lines.append("x,y")
    for xv, yv in zip(trace.x, trace.y):
        lines.append(f"{_format_value(xv)},{_format_value(yv)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace_csv(path: str, allow_mixed_hash: bool = False) -> SignalTrace:
    """Parse a trace CSV, tolerating concatenated sections.

    Repeated ``x,y`` header rows are accepted (they appear when files are
    concatenated), but distinct ``config_hash`` metadata values are rejected
    unless ``allow_mixed_hash`` is set.  Errors carry the offending row.
    """
    xs: list[float] = []
    ys: list[float] = []
    meta: dict[str, str] = {}
    hashes: list[str] = []
    saw_header = False
    with open(path, "r", encoding="utf-8") as fh:
        for row, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    key = key.strip()
                    value = value.strip()
                    if key == "config_hash":
                        hashes.append(value)
                    meta[key] = value
                continue
            if line.lower().replace(" ", "") == "x,y":
                saw_header = True
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise CsvFormatError(f"expected two comma-separated values, got {line!r}", row)
            try:
                xs.append(float(parts[0]))
                ys.append(float(parts[1]))
            except ValueError:
                raise CsvFormatError(f"non-numeric data {line!r}", row) from None
    if not saw_header:
        raise CsvFormatError("missing 'x,y' header row")
    if not xs:
        raise CsvFormatError("no data rows")
    if len(set(hashes)) > 1 and not allow_mixed_hash:
        raise MixedConfigHashError(
            f"file mixes {len(set(hashes))} distinct config_hash values; "
            "pass --force to fit anyway"
        )
    diffs = np.diff(np.asarray(xs))
    if np.any(diffs <= 0):
        bad = int(np.argmax(diffs <= 0)) + 2  # 1-based index of the second offending sample
        raise CsvFormatError(f"x values not strictly increasing near data row {bad}")
    axis_kind = meta.get("axis_kind", "time")
    if axis_kind not in AXIS_KINDS:
        axis_kind = "time"
    return SignalTrace(
        axis_kind=axis_kind,
        x=tuple(xs),
        y=tuple(ys),
        units=meta.get("units", "dimensionless"),
        meta=meta,
    )
