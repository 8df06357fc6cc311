"""Per-part latent bundles and their tensor file format.

Each part carries two token streams -- a geometry sequence (T_3D x d)
and an appearance sequence (T_2D x d) -- plus a persistent identity
embedding of length d that keeps the slot trackable when parts are
reordered or attended to as a set. Latents are produced elsewhere and
enter/leave this package through the PLTF binary format; no encoder or
decoder lives here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, FormatError, InputError, NumericError
from .latent_math import as_tokens
from .seeding import substream

# Desk-scale defaults for the stream shapes; all configurable.
DEFAULT_D = 32
DEFAULT_T3D = 64
DEFAULT_T2D = 256


class IdentityTable:
    """Deterministic per-slot identity embeddings.

    Rows are drawn lazily from named sub-streams of ``seed``, so row i is
    the same no matter how many rows were requested before it. Frozen
    after init: the table is a lookup, not a trainable parameter here.
    """

    def __init__(self, d: int, seed: int = 0, size: int = 1024, scale: float = 1.0):
        if d < 1 or size < 1:
            raise DimensionError("identity table needs d >= 1 and size >= 1")
        self.d = d
        self.seed = seed
        self.size = size
        self.scale = scale
        self._rows: dict[int, np.ndarray] = {}

    def row(self, part_id: int) -> np.ndarray:
        if not (0 <= part_id < self.size):
            raise InputError(f"part_id {part_id} out of identity table range [0, {self.size})")
        if part_id not in self._rows:
            if self.scale == 0.0:
                vec = np.zeros(self.d)
            else:
                rng = substream(self.seed, "identity", part_id)
                vec = rng.uniform(-self.scale, self.scale, size=self.d) / np.sqrt(self.d)
            self._rows[part_id] = vec
        return self._rows[part_id].copy()

    @classmethod
    def zeros(cls, d: int, size: int = 1024) -> "IdentityTable":
        return cls(d, seed=0, size=size, scale=0.0)


@dataclass
class PartLatent:
    """One part's geometry stream, appearance stream, and identity vector."""

    part_id: int
    geo: np.ndarray
    app: np.ndarray
    identity: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.geo = as_tokens(self.geo, "geo")
        self.app = as_tokens(self.app, "app")
        self.identity = np.asarray(self.identity, dtype=np.float64)
        d = self.geo.shape[1]
        if self.app.shape[1] != d:
            raise DimensionError(f"geo width {d} != app width {self.app.shape[1]}")
        if self.identity.shape != (d,):
            raise DimensionError(f"identity must have length {d}, got {self.identity.shape}")
        if not np.all(np.isfinite(self.identity)):
            raise NumericError("identity contains non-finite entries")
        if self.part_id < 0:
            raise InputError(f"part_id must be >= 0, got {self.part_id}")

    @property
    def d(self) -> int:
        return self.geo.shape[1]

    def copy(self) -> "PartLatent":
        return PartLatent(self.part_id, self.geo.copy(), self.app.copy(), self.identity.copy(), self.label)


@dataclass
class ObjectLatents:
    """Ordered collection of part latents with shared stream dimensions."""

    parts: list[PartLatent] = field(default_factory=list)

    def __post_init__(self):
        if len(self.parts) < 1:
            raise InputError("an object needs at least one part")
        d, t3d, t2d = self.parts[0].d, self.parts[0].geo.shape[0], self.parts[0].app.shape[0]
        for p in self.parts:
            if p.d != d or p.geo.shape[0] != t3d or p.app.shape[0] != t2d:
                raise DimensionError("all parts must share d, T_3D and T_2D")
        ids = sorted(p.part_id for p in self.parts)
        if ids != list(range(len(self.parts))):
            raise InputError(f"part ids must be a permutation of 0..N-1, got {ids}")

    @property
    def n_parts(self) -> int:
        return len(self.parts)

    @property
    def d(self) -> int:
        return self.parts[0].d

    @property
    def t3d(self) -> int:
        return self.parts[0].geo.shape[0]

    @property
    def t2d(self) -> int:
        return self.parts[0].app.shape[0]

    def part_by_id(self, part_id: int) -> PartLatent:
        for p in self.parts:
            if p.part_id == part_id:
                return p
        raise InputError(f"no part with id {part_id}")

    def copy(self) -> "ObjectLatents":
        return ObjectLatents([p.copy() for p in self.parts])


def make_part_latent(
    geo: np.ndarray,
    app: np.ndarray,
    part_id: int,
    identity_source: IdentityTable,
    label: str = "",
) -> PartLatent:
    """Assemble a part latent, drawing the identity vector from the table row ``part_id``."""
    geo = as_tokens(geo, "geo")
    app = as_tokens(app, "app")
    if geo.shape[1] != app.shape[1]:
        raise DimensionError(f"geo width {geo.shape[1]} != app width {app.shape[1]}")
    if identity_source.d != geo.shape[1]:
        raise DimensionError(f"identity table width {identity_source.d} != token width {geo.shape[1]}")
    return PartLatent(part_id, geo, app, identity_source.row(part_id), label)


def apply_identity(part: PartLatent) -> PartLatent:
    """Copy of ``part`` with the identity vector added to every geo/app row.

    This is the binding used at the input of each synchronization block;
    it is additive, so applying it repeatedly keeps accumulating.
    """
    return replace(
        part,
        geo=part.geo + part.identity[None, :],
        app=part.app + part.identity[None, :],
        identity=part.identity.copy(),
    )


def permute_parts(obj: ObjectLatents, perm) -> ObjectLatents:
    """Reorder the parts list by ``perm``; ids, identities and labels travel along.

    ``perm[k]`` is the index (in the current list) of the part that moves
    to position k.
    """
    perm = list(perm)
    n = obj.n_parts
    if sorted(perm) != list(range(n)):
        raise InputError(f"perm must be a permutation of 0..{n - 1}, got {perm}")
    return ObjectLatents([obj.parts[i].copy() for i in perm])


# ---------------------------------------------------------------------------
# PLTF: part-latent tensor file (little-endian binary).
# Layout: magic "PLTF", u32 version=1, u32 N, u32 d, u32 T_3D, u32 T_2D,
# then per part: u32 part_id, u32 label_len, label bytes (UTF-8),
# f32 geo row-major, f32 app row-major, f32 identity.
# ---------------------------------------------------------------------------

_PLTF_MAGIC = b"PLTF"
_PLTF_VERSION = 1


def write_pltf(path, obj: ObjectLatents) -> None:
    with open(path, "wb") as fh:
        fh.write(_PLTF_MAGIC)
        fh.write(struct.pack("<IIIII", _PLTF_VERSION, obj.n_parts, obj.d, obj.t3d, obj.t2d))
        for p in obj.parts:
            label = p.label.encode("utf-8")
            fh.write(struct.pack("<II", p.part_id, len(label)))
            fh.write(label)
            fh.write(p.geo.astype("<f4").tobytes())
            fh.write(p.app.astype("<f4").tobytes())
            fh.write(p.identity.astype("<f4").tobytes())


def read_pltf(path) -> ObjectLatents:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _PLTF_MAGIC:
        raise FormatError(f"{path}: not a PLTF file (bad magic {data[:4]!r})")
    try:
        version, n, d, t3d, t2d = struct.unpack_from("<IIIII", data, 4)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated PLTF header") from exc
    if version != _PLTF_VERSION:
        raise FormatError(f"{path}: unsupported PLTF version {version}")
    off = 24
    parts = []
    for _ in range(n):
        try:
            part_id, label_len = struct.unpack_from("<II", data, off)
            off += 8
            label = data[off : off + label_len].decode("utf-8")
            off += label_len
            geo = np.frombuffer(data, dtype="<f4", count=t3d * d, offset=off).reshape(t3d, d)
            off += 4 * t3d * d
            app = np.frombuffer(data, dtype="<f4", count=t2d * d, offset=off).reshape(t2d, d)
            off += 4 * t2d * d
            ident = np.frombuffer(data, dtype="<f4", count=d, offset=off)
            off += 4 * d
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated PLTF part record") from exc
        parts.append(
            PartLatent(part_id, geo.astype(np.float64), app.astype(np.float64), ident.astype(np.float64), label)
        )
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes after last part record")
    return ObjectLatents(parts)
