"""Minimal single-file NIfTI-1 reader/writer (.nii and .nii.gz).

Only axis-aligned geometry is represented: spacing comes from ``pixdim``
and the origin from the sform (or qform) translation. Rotations in the
header are ignored.
"""

from __future__ import annotations

import gzip
import io
import struct
from pathlib import Path

import numpy as np

from ..errors import NiftiFormatError
from .volume import Volume

HEADER_SIZE = 348
DATA_OFFSET = 352

# NIfTI datatype code -> numpy dtype (byte order applied at read time)
DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
}
CODES = {v: k for k, v in DATATYPES.items()}


def _is_gz(path: Path) -> bool:
    return path.name.endswith(".gz")


def read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if _is_gz(path) or raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise NiftiFormatError(f"corrupt gzip stream ({exc})", "file") from None
    return raw


def parse_header(raw: bytes) -> dict:
    if len(raw) < HEADER_SIZE:
        raise NiftiFormatError(f"file has {len(raw)} bytes, header needs {HEADER_SIZE}", "sizeof_hdr")
    for endian in "<>":
        if struct.unpack_from(endian + "i", raw, 0)[0] == HEADER_SIZE:
            break
    else:
        raise NiftiFormatError("sizeof_hdr is not 348", "sizeof_hdr")

    magic = raw[344:348]
    if magic != b"n+1\x00":
        raise NiftiFormatError(f"unsupported magic {magic!r}, expected b'n+1\\x00'", "magic")

    def get(fmt, off):
        return struct.unpack_from(endian + fmt, raw, off)

    dim = get("8h", 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NiftiFormatError(f"dim[0] = {ndim} out of range", "dim")
    shape = [max(1, d) for d in dim[1 : ndim + 1]]
    if any(d < 1 for d in dim[1 : ndim + 1]):
        raise NiftiFormatError(f"non-positive dimension in {dim[1:ndim + 1]}", "dim")
    if ndim > 3 and any(d > 1 for d in shape[3:]):
        raise NiftiFormatError(f"only 3D scalar volumes supported, dims {shape}", "dim")
    shape = (shape + [1, 1, 1])[:3]

    datatype = get("h", 70)[0]
    if datatype not in DATATYPES:
        raise NiftiFormatError(f"unsupported datatype code {datatype}", "datatype")
    pixdim = get("8f", 76)
    spacing = tuple(abs(float(p)) or 1.0 for p in pixdim[1:4])
    vox_offset = get("f", 108)[0]
    slope, inter = get("2f", 112)
    qform_code, sform_code = get("2h", 252)
    qoffset = get("3f", 268)
    srow = [get("4f", off) for off in (280, 296, 312)]
    if sform_code > 0:
        origin = tuple(float(r[3]) for r in srow)
    elif qform_code > 0:
        origin = tuple(float(q) for q in qoffset)
    else:
        origin = (0.0, 0.0, 0.0)
    if vox_offset < HEADER_SIZE:
        raise NiftiFormatError(f"vox_offset {vox_offset} inside header", "vox_offset")
    return {
        "endian": endian,
        "shape": tuple(int(s) for s in shape),
        "datatype": datatype,
        "spacing": spacing,
        "origin": origin,
        "vox_offset": int(vox_offset),
        "scl_slope": float(slope),
        "scl_inter": float(inter),
    }


def read_nifti(path, as_mask: bool = False) -> Volume:
    """Read a 3D scalar NIfTI-1 file into a :class:`Volume` (float64 data).

    With ``as_mask`` the voxels are returned as a boolean ``mask`` over
    zero-valued data.
    """
    raw = read_bytes(path)
    hdr = parse_header(raw)
    dtype = DATATYPES[hdr["datatype"]].newbyteorder(hdr["endian"])
    count = int(np.prod(hdr["shape"]))
    need = hdr["vox_offset"] + count * dtype.itemsize
    if len(raw) < need:
        raise NiftiFormatError(f"truncated voxel data: {len(raw)} bytes, need {need}", "data")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=hdr["vox_offset"]).astype(np.float64)
    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0.0 and np.isfinite(slope) and not (slope == 1.0 and inter == 0.0):
        flat = slope * flat + inter
    data = flat.reshape(hdr["shape"], order="F")
    if as_mask:
        return Volume(np.zeros(hdr["shape"]), hdr["spacing"], hdr["origin"], data != 0)
    return Volume(data, hdr["spacing"], hdr["origin"])


def build_header(shape, spacing, origin, dtype: np.dtype, slope=1.0, inter=0.0) -> bytes:
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    code = CODES[np.dtype(dtype).newbyteorder("=")]
    struct.pack_into("<hh", hdr, 70, code, np.dtype(dtype).itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(DATA_OFFSET))
    struct.pack_into("<2f", hdr, 112, slope, inter)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 1, 1)
    struct.pack_into("<3f", hdr, 268, *origin)
    struct.pack_into("<4f", hdr, 280, spacing[0], 0.0, 0.0, origin[0])
    struct.pack_into("<4f", hdr, 296, 0.0, spacing[1], 0.0, origin[1])
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, spacing[2], origin[2])
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def write_nifti(vol: Volume, path, dtype=np.float32, mask: bool = False) -> Path:
    """Write ``vol.data`` (or ``vol.mask`` as uint8 when ``mask``) to ``path``.

    ``.gz`` paths are gzip-compressed with a zeroed timestamp so identical
    volumes produce identical bytes.
    """
    path = Path(path)
    if mask:
        if vol.mask is None:
            raise ValueError("volume has no mask to write")
        arr, dtype = vol.mask.astype(np.uint8), np.dtype(np.uint8)
    else:
        dtype = np.dtype(dtype)
        if dtype not in CODES:
            raise NiftiFormatError(f"cannot write dtype {dtype}", "datatype")
        arr = vol.data.astype(dtype)
    payload = (
        build_header(vol.dims, vol.spacing, vol.origin, dtype)
        + b"\x00" * (DATA_OFFSET - HEADER_SIZE)
        + arr.astype(dtype.newbyteorder("<")).tobytes(order="F")
    )
    if _is_gz(path):
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(payload)
        payload = buf.getvalue()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    return path
