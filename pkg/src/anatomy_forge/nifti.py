"""Single-file NIfTI-1 volume reader/writer.

Only the single-file form (magic ``n+1\\0``, payload in the same file at
vox_offset >= 352) is handled. Payloads are stored x fastest, which maps
straight onto the (nx, ny, nz) Fortran-order grids used by this package.
Supported on-disk datatypes: uint8 (label maps), int16 (label maps from
external tools), float32 (intensities). Files ending in .gz are read and
written through gzip (with a zeroed mtime so output bytes stay stable).

Orientation is deliberately not interpreted: pixdim and the qform/sform
fields are read into VoxelGrid.meta and written back verbatim, nothing
more. Grids built by this package get an identity sform and isotropic
1 mm voxels.
"""

import gzip
from pathlib import Path

import numpy as np

from .errors import NiftiError
from .volume import VoxelGrid

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIR = b"ni1\x00"
DESCRIP = b"anatomy-forge"

# NIfTI-1 datatype codes for the supported subset.
DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16
_DTYPES = {
    DT_UINT8: np.dtype(np.uint8),
    DT_INT16: np.dtype(np.int16),
    DT_FLOAT32: np.dtype(np.float32),
}
_CODES = {v: k for k, v in _DTYPES.items()}

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4", 1),
    ("data_type", "S10", 1),
    ("db_name", "S18", 1),
    ("extents", "i4", 1),
    ("session_error", "i2", 1),
    ("regular", "S1", 1),
    ("dim_info", "u1", 1),
    ("dim", "i2", 8),
    ("intent_p1", "f4", 1),
    ("intent_p2", "f4", 1),
    ("intent_p3", "f4", 1),
    ("intent_code", "i2", 1),
    ("datatype", "i2", 1),
    ("bitpix", "i2", 1),
    ("slice_start", "i2", 1),
    ("pixdim", "f4", 8),
    ("vox_offset", "f4", 1),
    ("scl_slope", "f4", 1),
    ("scl_inter", "f4", 1),
    ("slice_end", "i2", 1),
    ("slice_code", "u1", 1),
    ("xyzt_units", "u1", 1),
    ("cal_max", "f4", 1),
    ("cal_min", "f4", 1),
    ("slice_duration", "f4", 1),
    ("toffset", "f4", 1),
    ("glmax", "i4", 1),
    ("glmin", "i4", 1),
    ("descrip", "S80", 1),
    ("aux_file", "S24", 1),
    ("qform_code", "i2", 1),
    ("sform_code", "i2", 1),
    ("quatern_b", "f4", 1),
    ("quatern_c", "f4", 1),
    ("quatern_d", "f4", 1),
    ("qoffset_x", "f4", 1),
    ("qoffset_y", "f4", 1),
    ("qoffset_z", "f4", 1),
    ("srow_x", "f4", 4),
    ("srow_y", "f4", 4),
    ("srow_z", "f4", 4),
    ("intent_name", "S16", 1),
    ("magic", "S4", 1),
]


def _header_dtype(byteorder: str) -> np.dtype:
    return np.dtype([(name, byteorder + code, (n,)) if n > 1 else (name, byteorder + code)
                     for name, code, n in _HEADER_FIELDS])


def _read_bytes(path: Path) -> bytes:
    if path.name.endswith(".gz"):
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_nifti(path) -> VoxelGrid:
    """Read a single-file NIfTI-1 volume into a VoxelGrid.

    Integer payloads become label grids, float payloads intensity grids.
    scl_slope/scl_inter are applied to intensities only (label values must
    stay exact class ids); both are recorded in meta either way.
    """
    path = Path(path)
    try:
        raw = _read_bytes(path)
    except OSError as exc:
        raise NiftiError(f"{path}: cannot read file: {exc}") from exc
    if len(raw) < HEADER_SIZE:
        raise NiftiError(f"{path}: file shorter than a NIfTI-1 header")

    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_header_dtype("<"), count=1)[0]
    byteorder = "<"
    if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_header_dtype(">"), count=1)[0]
        byteorder = ">"
        if int(hdr["sizeof_hdr"]) != HEADER_SIZE:
            raise NiftiError(f"{path}: not a NIfTI-1 file (bad sizeof_hdr)")

    # numpy strips trailing NULs from S-typed fields, so compare the stem
    magic = bytes(hdr["magic"])
    if magic == MAGIC_PAIR[:3]:
        raise NiftiError(f"{path}: two-file NIfTI (hdr/img pairs) is not supported")
    if magic != MAGIC_SINGLE[:3]:
        raise NiftiError(f"{path}: bad magic {magic!r}, expected {MAGIC_SINGLE!r}")

    dim = hdr["dim"]
    if int(dim[0]) != 3:
        raise NiftiError(f"{path}: expected a 3D volume, got dim[0]={int(dim[0])}")
    nx, ny, nz = (int(dim[i]) for i in (1, 2, 3))
    if min(nx, ny, nz) < 1:
        raise NiftiError(f"{path}: non-positive dims {(nx, ny, nz)}")

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise NiftiError(f"{path}: unsupported datatype code {code} "
                         f"(supported: uint8=2, int16=4, float32=16)")
    dtype = _DTYPES[code].newbyteorder(byteorder)

    vox_offset = int(hdr["vox_offset"])
    if vox_offset < VOX_OFFSET:
        raise NiftiError(f"{path}: vox_offset {vox_offset} below the single-file minimum 352")

    n_voxels = nx * ny * nz
    payload = raw[vox_offset:vox_offset + n_voxels * dtype.itemsize]
    if len(payload) < n_voxels * dtype.itemsize:
        raise NiftiError(f"{path}: truncated payload "
                         f"(need {n_voxels * dtype.itemsize} bytes, have {len(payload)})")

    flat = np.frombuffer(payload, dtype=dtype)
    data = flat.reshape((nx, ny, nz), order="F")
    if byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    meta = {
        "pixdim": [float(v) for v in hdr["pixdim"]],
        "qform_code": int(hdr["qform_code"]),
        "sform_code": int(hdr["sform_code"]),
        "quatern": [float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"])],
        "qoffset": [float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"])],
        "srow_x": [float(v) for v in hdr["srow_x"]],
        "srow_y": [float(v) for v in hdr["srow_y"]],
        "srow_z": [float(v) for v in hdr["srow_z"]],
        "scl_slope": slope,
        "scl_inter": inter,
    }

    if code == DT_FLOAT32:
        scaled = data
        # slope 0 conventionally means "no scaling stored"
        if slope != 0.0 and (slope != 1.0 or inter != 0.0):
            scaled = (data.astype(np.float64) * slope + inter).astype(np.float32)
            # scaling has been consumed; a re-write must not apply it twice
            meta["scl_slope"] = 1.0
            meta["scl_inter"] = 0.0
            meta["source_scl"] = (slope, inter)
        return VoxelGrid(np.ascontiguousarray(scaled, dtype=np.float32), "intensity", meta)
    return VoxelGrid(data.copy(), "labels", meta)


def _identity_meta() -> dict:
    return {
        "pixdim": [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        "qform_code": 0,
        "sform_code": 1,
        "quatern": [0.0, 0.0, 0.0],
        "qoffset": [0.0, 0.0, 0.0],
        "srow_x": [1.0, 0.0, 0.0, 0.0],
        "srow_y": [0.0, 1.0, 0.0, 0.0],
        "srow_z": [0.0, 0.0, 1.0, 0.0],
        "scl_slope": 1.0,
        "scl_inter": 0.0,
    }


def write_nifti(grid: VoxelGrid, path) -> None:
    """Write a VoxelGrid as a single-file NIfTI-1 volume.

    The header is fully deterministic: identical grids always produce
    identical bytes. Geometry fields come from grid.meta when the grid was
    read from a file, otherwise an identity orientation with isotropic
    1 mm voxels is written.
    """
    path = Path(path)
    data = grid.data
    if data.dtype not in _CODES:
        raise NiftiError(f"cannot write dtype {data.dtype}; "
                         f"supported: uint8, int16, float32")
    code = _CODES[data.dtype]
    meta = grid.meta if grid.meta is not None else _identity_meta()

    hdr = np.zeros((), dtype=_header_dtype("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    nx, ny, nz = data.shape
    hdr["dim"] = [3, nx, ny, nz, 1, 1, 1, 1]
    hdr["datatype"] = code
    hdr["bitpix"] = data.dtype.itemsize * 8
    hdr["pixdim"] = meta["pixdim"]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = meta["scl_slope"]
    hdr["scl_inter"] = meta["scl_inter"]
    hdr["xyzt_units"] = 2  # millimetres
    hdr["descrip"] = DESCRIP
    hdr["qform_code"] = meta["qform_code"]
    hdr["sform_code"] = meta["sform_code"]
    hdr["quatern_b"], hdr["quatern_c"], hdr["quatern_d"] = meta["quatern"]
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = meta["qoffset"]
    hdr["srow_x"] = meta["srow_x"]
    hdr["srow_y"] = meta["srow_y"]
    hdr["srow_z"] = meta["srow_z"]
    hdr["magic"] = MAGIC_SINGLE

    blob = hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + data.tobytes(order="F")
    if path.name.endswith(".gz"):
        # mtime=0 and an empty embedded name keep the container byte-stable
        # across runs and across output paths
        with open(path, "wb") as fh:
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(blob)
    else:
        path.write_bytes(blob)
