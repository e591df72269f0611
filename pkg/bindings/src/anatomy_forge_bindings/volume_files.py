"""Minimal standalone reader for the volume files the generator writes.

Kept free of any dependency on the main package on purpose: the subprocess
mode exists for environments where the generator is only reachable as a
command-line tool, so decoding must work with numpy alone. It reads exactly
what the generator produces (single-file NIfTI-1, uint8/int16/float32,
optionally gzipped, unscaled) and rejects everything else; scaled or
two-file volumes belong to the full reader in the main package.

Arrays come back as (nx, ny, nz) with x varying fastest in the flat file
payload (Fortran order), the same layout the generator uses in memory.
"""

import gzip
import struct
from pathlib import Path

import numpy as np

HEADER_SIZE = 348
MIN_VOX_OFFSET = 352
_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}


class VolumeFormatError(Exception):
    """The file is not a volume this lite reader can decode."""


def read_volume(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < HEADER_SIZE:
        raise VolumeFormatError(f"{path}: file shorter than a NIfTI-1 header")
    for order in ("<", ">"):
        if struct.unpack_from(order + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise VolumeFormatError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")

    magic = raw[344:348]
    if magic[:3] == b"ni1":
        raise VolumeFormatError(f"{path}: two-file NIfTI (hdr/img pairs) is not supported")
    if magic[:3] != b"n+1":
        raise VolumeFormatError(f"{path}: bad magic {magic!r}")

    dim = struct.unpack_from(order + "8h", raw, 40)
    if dim[0] != 3:
        raise VolumeFormatError(f"{path}: expected a 3D volume, got dim[0]={dim[0]}")
    nx, ny, nz = (int(v) for v in dim[1:4])
    code = struct.unpack_from(order + "h", raw, 70)[0]
    if code not in _DTYPES:
        raise VolumeFormatError(f"{path}: unsupported datatype code {code}")
    vox_offset = int(struct.unpack_from(order + "f", raw, 108)[0])
    if vox_offset < MIN_VOX_OFFSET:
        raise VolumeFormatError(f"{path}: vox_offset {vox_offset} below the "
                                f"single-file minimum {MIN_VOX_OFFSET}")
    slope, inter = struct.unpack_from(order + "2f", raw, 112)
    # slope 0 conventionally means "no scaling stored"
    if float(inter) != 0.0 or float(slope) not in (0.0, 1.0):
        raise VolumeFormatError(f"{path}: carries scl scaling; decode it with "
                                f"the main package's reader instead")

    dtype = np.dtype(_DTYPES[code]).newbyteorder(order)
    count = nx * ny * nz
    payload = raw[vox_offset:vox_offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise VolumeFormatError(f"{path}: truncated payload")
    flat = np.frombuffer(payload, dtype=dtype)
    # copy into native byte order so callers get a writable array
    return flat.reshape((nx, ny, nz), order="F").astype(_DTYPES[code])
