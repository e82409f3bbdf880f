"""Binary and CSV serialization of sensing maps.

Binary layout: an 8-field little-endian header (magic, version, rows, cols,
range_bin_m, angle_step_rad, bs_id, scan_index) followed by the row-major
float64 matrix. Scan directions are reconstructed as a symmetric fan around
the boresight from the column count and the angle step.
"""

from __future__ import annotations

import struct

import numpy as np

from .sensing import RangeAngleMap

_MAGIC = b"RAMP"
_VERSION = 1
_HEADER = "<4sIIIddII"


def write_range_angle_map(path, polar_map):
    rows, cols = polar_map.values.shape
    step = (polar_map.scan_dirs_rad[1] - polar_map.scan_dirs_rad[0]
            if cols > 1 else float(polar_map.scan_dirs_rad[0]))
    with open(path, "wb") as fh:
        fh.write(struct.pack(_HEADER, _MAGIC, _VERSION, rows, cols,
                             polar_map.range_bin_m, step,
                             polar_map.bs_id, polar_map.scan_index))
        fh.write(np.ascontiguousarray(polar_map.values, dtype="<f8").tobytes())


def read_range_angle_map(path):
    with open(path, "rb") as fh:
        raw = fh.read(struct.calcsize(_HEADER))
        magic, version, rows, cols, bin_m, step, bs_id, scan_index = struct.unpack(
            _HEADER, raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a range-angle map file")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported map version {version}")
        values = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(
            rows, cols).copy()
    dirs = (np.arange(cols) - (cols - 1) / 2.0) * step
    return RangeAngleMap(values=values, range_bin_m=bin_m, scan_dirs_rad=dirs,
                         bs_id=bs_id, scan_index=scan_index)


def write_map_csv(path, values):
    np.savetxt(path, values, delimiter=",")
