"""Flat binary container for named float64 tensors.

Layout (all integers little-endian):

    magic   5 bytes  b"MERA1"
    record  repeated until EOF:
        name_len  u32
        name      name_len bytes, UTF-8
        rank      u32
        dims      rank * u64
        data      prod(dims) * f64, row-major

Checkpoints store network tensors under conventional names ("u_1", "w_star",
"rho2", "v_3", ...); this module is agnostic to the names.
"""

import struct

import numpy as np

MAGIC = b"MERA1"

# Sanity bounds; a corrupt header should fail fast, not allocate gigabytes.
_MAX_NAME = 4096
_MAX_RANK = 64


def save_tensors(path, tensors):
    """Write an ordered mapping {name: ndarray} to ``path``.

    Values must be real; they are stored as float64 row-major.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if np.iscomplexobj(arr):
                raise ValueError(f"tensor {name!r} is complex; container is real-only")
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            # and scalar records would come back as length-1 vectors.
            arr = np.asarray(arr, dtype=np.float64, order="C")
            raw = name.encode("utf-8")
            if not raw or len(raw) > _MAX_NAME:
                raise ValueError(f"bad tensor name {name!r}")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_tensors(path):
    """Read a container written by :func:`save_tensors`; preserves order."""
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a MERA1 container")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise ValueError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<I", head)
            if not 0 < name_len <= _MAX_NAME:
                raise ValueError(f"{path}: implausible name length {name_len}")
            raw = fh.read(name_len)
            if len(raw) < name_len:
                raise ValueError(f"{path}: truncated name")
            name = raw.decode("utf-8")
            rank_bytes = fh.read(4)
            if len(rank_bytes) < 4:
                raise ValueError(f"{path}: truncated rank")
            (rank,) = struct.unpack("<I", rank_bytes)
            if rank > _MAX_RANK:
                raise ValueError(f"{path}: implausible rank {rank}")
            dim_bytes = fh.read(8 * rank)
            if len(dim_bytes) < 8 * rank:
                raise ValueError(f"{path}: truncated dims")
            dims = struct.unpack(f"<{rank}Q", dim_bytes) if rank else ()
            count = int(np.prod(dims, dtype=np.int64)) if rank else 1
            data = fh.read(8 * count)
            if len(data) < 8 * count:
                raise ValueError(f"{path}: truncated data for {name!r}")
            out[name] = np.frombuffer(data, dtype="<f8").reshape(dims).copy()
    return out
