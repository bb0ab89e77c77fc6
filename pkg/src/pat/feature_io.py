"""FPT1 tensor container, dataset manifests and checkpoints.

FPT1 is the one byte layout shared with external tools (the feature
exporter writes it, this package reads it), so it is fixed and little
endian everywhere:

    magic   4 bytes  "FPT1"
    version u16      currently 1
    count   u32      number of tensors
    then per tensor:
      name_len u16, name UTF-8 bytes,
      dtype u8 (0 = float32, 1 = float64, 2 = int32),
      rank u8, dims u64 * rank,
      payload row-major

Serialization is canonical: tensors are written sorted by name, so equal
inputs produce byte-identical files. Features go to disk as float32;
checkpoints keep float64 so save/load round-trips parameters bit-exactly.
"""

import os
import struct

import numpy as np

from .errors import DataError

__all__ = [
    "FormatError",
    "NotFPT1Error",
    "TruncatedFileError",
    "UnsupportedDtypeError",
    "IntegrityError",
    "write_fpt1",
    "read_fpt1",
    "save_checkpoint",
    "load_checkpoint",
    "ManifestSample",
    "DatasetManifest",
    "write_manifest",
    "load_manifest",
]

MAGIC = b"FPT1"
VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i4"): 2}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4")}


class FormatError(ValueError):
    """Malformed FPT1 data."""


class NotFPT1Error(FormatError):
    """Bad magic: not an FPT1 file."""


class TruncatedFileError(FormatError):
    """Unexpected end of data."""


class UnsupportedDtypeError(FormatError):
    """Unknown dtype tag."""


class IntegrityError(RuntimeError):
    """Checkpoint contents do not match the expected parameter set."""


def write_fpt1(tensors) -> bytes:
    """Serialize named arrays. `tensors` is a dict or (name, array) pairs."""
    items = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise FormatError(f"duplicate tensor names: {dup}")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HI", VERSION, len(items))
    for name, arr in sorted(items, key=lambda kv: kv[0]):
        arr = np.asarray(arr)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = arr.copy(order="C")  # keep 0-d rank intact (ascontiguousarray promotes)
        if arr.dtype not in _DTYPE_TAGS:
            raise UnsupportedDtypeError(f"unsupported dtype {arr.dtype} for tensor '{name}'")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"unexpected end of data at byte {self.pos} (need {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_fpt1(data: bytes) -> dict:
    """Parse FPT1 bytes into an ordered {name: ndarray} dict."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise NotFPT1Error("not an FPT1 file")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported FPT1 version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise UnsupportedDtypeError(f"unsupported dtype tag {tag} for tensor '{name}'")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        dtype = _TAG_DTYPES[tag]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(n * dtype.itemsize)
        if name in out:
            raise FormatError(f"duplicate tensor name '{name}'")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return out


def read_fpt1_file(path) -> dict:
    with open(path, "rb") as f:
        return read_fpt1(f.read())


def write_fpt1_file(path, tensors):
    data = write_fpt1(tensors)
    with open(path, "wb") as f:
        f.write(data)
    return data


# -- checkpoints ----------------------------------------------------------------

_PARAM_PREFIX = "param/"
_OPT_PREFIX = "opt/"


def save_checkpoint(path, params, opt_state=None):
    """Write parameters (+ optional optimizer slots) as an FPT1 file.

    `params` maps dotted names to tensors or arrays; float64 is preserved
    so resuming is bit-exact.
    """
    entries = {}
    for name, p in params.items():
        arr = p.data if hasattr(p, "data") else np.asarray(p)
        entries[_PARAM_PREFIX + name] = np.asarray(arr, dtype=np.float64)
    if opt_state:
        for key, arr in opt_state.items():
            entries[_OPT_PREFIX + key] = np.asarray(arr, dtype=np.float64)
    return write_fpt1_file(path, entries)


def load_checkpoint(path, expected_params=None):
    """Read a checkpoint; returns (params, opt_state) dicts.

    With `expected_params` given, the stored parameter set must match it
    exactly (names and shapes), otherwise IntegrityError.
    """
    tensors = read_fpt1_file(path)
    params, opt_state = {}, {}
    for name, arr in tensors.items():
        if name.startswith(_PARAM_PREFIX):
            params[name[len(_PARAM_PREFIX):]] = arr
        elif name.startswith(_OPT_PREFIX):
            opt_state[name[len(_OPT_PREFIX):]] = arr
        else:
            raise IntegrityError(f"unrecognized checkpoint entry '{name}'")
    if expected_params is not None:
        expected = dict(expected_params)
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        if missing or extra:
            raise IntegrityError(
                f"checkpoint parameter set mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != tuple(shape):
                raise IntegrityError(
                    f"parameter '{name}' has shape {params[name].shape}, expected {tuple(shape)}")
    return params, opt_state


# -- dataset manifest --------------------------------------------------------------


class ManifestSample:
    __slots__ = ("sample_id", "image_path", "label_path", "feature_path")

    def __init__(self, sample_id, image_path, label_path, feature_path=None):
        self.sample_id = sample_id
        self.image_path = image_path
        self.label_path = label_path
        self.feature_path = feature_path


class DatasetManifest:
    """Class table plus sample file index, rooted at the manifest directory."""

    def __init__(self, classes, samples, root="."):
        self.classes = classes
        self.samples = samples
        self.root = root

    @property
    def num_classes(self):
        return len(self.classes)

    def resolve(self, relpath):
        return os.path.join(self.root, relpath)


def write_manifest(path, classes, samples):
    """classes: {id: name}; samples: iterable of ManifestSample."""
    lines = ["# dataset manifest: tab-separated, @class lines define the label table"]
    for cid in sorted(classes):
        lines.append(f"@class\t{cid}\t{classes[cid]}")
    for s in samples:
        fields = [s.sample_id, s.image_path, s.label_path]
        if s.feature_path:
            fields.append(s.feature_path)
        lines.append("\t".join(fields))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_manifest(path, check_paths=True):
    root = os.path.dirname(os.path.abspath(path))
    classes = {}
    samples = []
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if fields[0] == "@class":
                if len(fields) != 3:
                    raise DataError(f"{path}:{lineno}: malformed @class line")
                classes[int(fields[1])] = fields[2]
            else:
                if len(fields) not in (3, 4):
                    raise DataError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
                samples.append(ManifestSample(fields[0], fields[1], fields[2],
                                              fields[3] if len(fields) == 4 else None))
    if sorted(classes) != list(range(len(classes))):
        raise DataError(f"{path}: class ids must be dense from 0, got {sorted(classes)}")
    manifest = DatasetManifest(classes, samples, root)
    if check_paths:
        for s in samples:
            for rel in (s.image_path, s.label_path, s.feature_path):
                if rel and not os.path.exists(manifest.resolve(rel)):
                    raise DataError(f"{path}: referenced file missing: {rel}")
    return manifest
