"""Heidelberg HSF-OCT `.vol` container: header parsing and fixture writing.

The container starts with a fixed 2048-byte little-endian packed header whose
version magic is the ASCII prefix ``HSF-OCT-``. The en face SLO raster follows
immediately after the header as unsigned 8-bit row-major bytes
(``size_y_slo`` rows by ``size_x_slo`` columns). Any OCT B-scan payload after
the raster is skipped, not parsed.

``VOL_HEADER_FIELDS`` is the single source of truth for field offsets: both
:func:`parse_vol` and the fixture writer :func:`write_vol` iterate it, so the
two cannot drift. The same table is rendered in ``docs/vol_format.md``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import MalformedHeader, NonPositiveScale, TruncatedFile

HEADER_SIZE = 2048
MAGIC_PREFIX = b"HSF-OCT-"

# (field name, byte offset, little-endian struct format)
VOL_HEADER_FIELDS = (
    ("version", 0, "<12s"),        # ASCII version magic, e.g. "HSF-OCT-103"
    ("size_x", 12, "<I"),          # A-scans per B-scan (unused here)
    ("num_bscans", 16, "<I"),      # number of B-scans in the OCT payload
    ("size_y", 20, "<I"),          # samples per A-scan (unused here)
    ("scale_x", 24, "<d"),         # B-scan pixel width, mm (unused here)
    ("distance", 32, "<d"),        # B-scan spacing, mm (unused here)
    ("scale_y", 40, "<d"),         # B-scan pixel height, mm (unused here)
    ("size_x_slo", 48, "<I"),      # SLO width, px
    ("size_y_slo", 52, "<I"),      # SLO height, px
    ("scale_x_slo", 56, "<d"),     # SLO pixel width, mm
    ("scale_y_slo", 64, "<d"),     # SLO pixel height, mm
    ("field_size_slo", 72, "<I"),  # SLO field of view, degrees
    ("scan_focus", 76, "<d"),      # scan focus, dpt (unused here)
    ("scan_position", 84, "<4s"),  # examined eye, "OD" or "OS"
)


@dataclass
class VolHeader:
    """SLO-relevant header fields of one `.vol` container."""

    version_string: str
    size_x_slo: int
    size_y_slo: int
    scale_x_slo: float  # mm per px
    scale_y_slo: float  # mm per px
    field_size_slo: int  # degrees
    scan_position: str  # "OD" / "OS" (free text tolerated with a warning)


def _clean_ascii(raw: bytes) -> str:
    return raw.split(b"\x00", 1)[0].decode("ascii", errors="replace")


def _read_fields(header_bytes: bytes) -> dict:
    values = {}
    for name, offset, fmt in VOL_HEADER_FIELDS:
        (raw,) = struct.unpack_from(fmt, header_bytes, offset)
        values[name] = _clean_ascii(raw) if isinstance(raw, bytes) else raw
    return values


def parse_vol(data: bytes) -> tuple[VolHeader, np.ndarray]:
    """Parse a `.vol` byte sequence into (header, SLO grayscale raster).

    Raises MalformedHeader on a bad version magic or impossible raster size,
    TruncatedFile when the SLO payload is short, NonPositiveScale when either
    SLO scale is not strictly positive.
    """
    if len(data) < HEADER_SIZE:
        raise TruncatedFile(
            f"file holds {len(data)} bytes, header needs {HEADER_SIZE}"
        )
    if not data.startswith(MAGIC_PREFIX):
        raise MalformedHeader(
            f"version magic {data[:8]!r} does not match {MAGIC_PREFIX!r}"
        )
    fields = _read_fields(data[:HEADER_SIZE])

    width, height = fields["size_x_slo"], fields["size_y_slo"]
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"non-positive SLO raster size {width}x{height}")
    if fields["scale_x_slo"] <= 0 or fields["scale_y_slo"] <= 0:
        raise NonPositiveScale(
            f"SLO scale ({fields['scale_x_slo']}, {fields['scale_y_slo']}) mm/px"
        )

    n_bytes = width * height
    payload = data[HEADER_SIZE:HEADER_SIZE + n_bytes]
    if len(payload) < n_bytes:
        raise TruncatedFile(
            f"SLO raster needs {n_bytes} bytes, found {len(payload)}"
        )
    image = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()

    header = VolHeader(
        version_string=fields["version"],
        size_x_slo=width,
        size_y_slo=height,
        scale_x_slo=fields["scale_x_slo"],
        scale_y_slo=fields["scale_y_slo"],
        field_size_slo=fields["field_size_slo"],
        scan_position=fields["scan_position"],
    )
    return header, image


def write_vol(header: VolHeader, slo: np.ndarray, num_bscans: int = 0) -> bytes:
    """Serialize a header plus SLO raster into `.vol` bytes (fixture writer).

    Built from the same VOL_HEADER_FIELDS table as the parser. Fields the
    VolHeader does not carry are zero-filled; the OCT payload is omitted.
    """
    slo = np.ascontiguousarray(slo, dtype=np.uint8)
    if slo.shape != (header.size_y_slo, header.size_x_slo):
        raise ValueError(
            f"raster shape {slo.shape} does not match header "
            f"{header.size_y_slo}x{header.size_x_slo}"
        )
    values = {
        "version": header.version_string.encode("ascii"),
        "size_x": 0,
        "num_bscans": num_bscans,
        "size_y": 0,
        "scale_x": 0.0,
        "distance": 0.0,
        "scale_y": 0.0,
        "size_x_slo": header.size_x_slo,
        "size_y_slo": header.size_y_slo,
        "scale_x_slo": header.scale_x_slo,
        "scale_y_slo": header.scale_y_slo,
        "field_size_slo": header.field_size_slo,
        "scan_focus": 0.0,
        "scan_position": header.scan_position.encode("ascii"),
    }
    buf = bytearray(HEADER_SIZE)
    for name, offset, fmt in VOL_HEADER_FIELDS:
        value = values[name]
        if isinstance(value, bytes):
            # zero-pad / truncate to the field width
            width = struct.calcsize(fmt)
            value = value[:width].ljust(width, b"\x00")
        struct.pack_into(fmt, buf, offset, value)
    return bytes(buf) + slo.tobytes()


def format_field_table() -> str:
    """Render the offset table (used to generate the format doc)."""
    lines = ["| field | offset | format |", "|---|---|---|"]
    for name, offset, fmt in VOL_HEADER_FIELDS:
        lines.append(f"| {name} | {offset} | {fmt} |")
    return "\n".join(lines)
