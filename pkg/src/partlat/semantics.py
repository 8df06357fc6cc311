"""Language-derived semantic tokens and pluggable text embedders.

Relation triplets become one global token apiece (a relational graph
latent that conditions the whole denoising run), while free attribute
phrases become a fixed budget of K_m local tokens that are diffused
alongside the part latents. No pretrained text encoder is involved:
embeddings come either from a lookup file (EMBF) or from a deterministic
hash, which is a structural stand-in with the right shapes and
determinism, not a semantic model.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, FormatError, InputError
from .seeding import substream

DEFAULT_K_M = 16  # local semantic token budget


def hash_embed(text: str, d_text: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit-norm vector for ``text``.

    Entries are derived from BLAKE2 digests of (seed, block, text), so the
    map is stable across platforms and distinct texts collide with
    negligible probability.
    """
    if not text:
        raise InputError("cannot embed empty text")
    if d_text < 1:
        raise DimensionError("d_text must be >= 1")
    blocks = (d_text + 7) // 8
    out = []
    for b in range(blocks):
        h = hashlib.blake2b(f"{seed}|{b}|{text}".encode("utf-8"), digest_size=64).digest()
        u = np.frombuffer(h, dtype="<u8")
        out.append((u >> np.uint64(11)).astype(np.float64) * 2.0**-53)
    vals = np.concatenate(out)[:d_text] * 2.0 - 1.0
    norm = np.linalg.norm(vals)
    if norm < 1e-12:  # astronomically unlikely; keep the contract anyway
        vals[0] = 1.0
        norm = 1.0
    return vals / norm


# ---------------------------------------------------------------------------
# EMBF: embedding lookup file (little-endian binary).
# Layout: magic "EMBF", u32 d_text, u32 count, then per entry:
# u32 key_len, key bytes (UTF-8), f32 x d_text vector.
# ---------------------------------------------------------------------------

_EMBF_MAGIC = b"EMBF"


def write_embf(path, table: dict[str, np.ndarray], d_text: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_EMBF_MAGIC)
        fh.write(struct.pack("<II", d_text, len(table)))
        for key, vec in table.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (d_text,):
                raise DimensionError(f"vector for {key!r} has shape {vec.shape}, expected ({d_text},)")
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(vec.astype("<f4").tobytes())


def read_embf(path) -> tuple[dict[str, np.ndarray], int]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _EMBF_MAGIC:
        raise FormatError(f"{path}: not an EMBF file (bad magic {data[:4]!r})")
    try:
        d_text, count = struct.unpack_from("<II", data, 4)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated EMBF header") from exc
    off = 12
    table = {}
    for _ in range(count):
        try:
            (key_len,) = struct.unpack_from("<I", data, off)
            off += 4
            key = data[off : off + key_len].decode("utf-8")
            off += key_len
            vec = np.frombuffer(data, dtype="<f4", count=d_text, offset=off).astype(np.float64)
            off += 4 * d_text
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated EMBF entry") from exc
        table[key] = vec
    return table, d_text


@dataclass
class Embedder:
    """Text-to-vector source plus a learned-projection stand-in.

    mode "hash" derives vectors on the fly; mode "file" requires every
    queried phrase to be present in the lookup table. ``phi`` maps the
    d_text source space to the working width d (identity when the widths
    agree and no explicit projection is given).
    """

    mode: str = "hash"
    d_text: int = 32
    d_out: int = 32
    seed: int = 0
    phi: np.ndarray | None = None
    table: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.mode not in ("hash", "file"):
            raise InputError(f"unknown embedder mode {self.mode!r}")
        if self.mode == "file" and self.table is None:
            raise InputError("file-backed embedder needs a lookup table")
        if self.phi is None:
            if self.d_text == self.d_out:
                self.phi = np.eye(self.d_text)
            else:
                rng = substream(self.seed, "embedder-phi")
                self.phi = rng.uniform(-1, 1, size=(self.d_text, self.d_out)) / np.sqrt(self.d_text)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.shape != (self.d_text, self.d_out):
            raise DimensionError(f"phi must be ({self.d_text}, {self.d_out}), got {self.phi.shape}")
        if not np.all(np.isfinite(self.phi)):
            raise InputError("phi contains non-finite entries")

    @classmethod
    def hashed(cls, d_text: int = 32, d_out: int | None = None, seed: int = 0) -> "Embedder":
        return cls(mode="hash", d_text=d_text, d_out=d_out if d_out is not None else d_text, seed=seed)

    @classmethod
    def from_file(cls, path, d_out: int | None = None, seed: int = 0) -> "Embedder":
        table, d_text = read_embf(path)
        return cls(
            mode="file",
            d_text=d_text,
            d_out=d_out if d_out is not None else d_text,
            seed=seed,
            table=table,
        )

    def embed(self, text: str) -> np.ndarray:
        """Raw source-space vector for ``text``."""
        if not text:
            raise InputError("cannot embed empty text")
        if self.mode == "hash":
            return hash_embed(text, self.d_text, self.seed)
        if text not in self.table:
            raise InputError(f"phrase {text!r} not present in file-backed embedding table")
        return self.table[text].copy()

    def project(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.d_text,):
            raise DimensionError(f"expected source vector of length {self.d_text}, got {vec.shape}")
        return vec @ self.phi

    def encode(self, text: str) -> np.ndarray:
        return self.project(self.embed(text))


@dataclass(frozen=True)
class GlobalToken:
    """One relation triplet projected into the working space."""

    triplet_key: tuple[int, int, str]
    vector: np.ndarray


class GlobalTokens:
    """Set of global tokens, iterated in sorted triplet-key order."""

    def __init__(self, tokens: list[GlobalToken] | None = None):
        by_key: dict[tuple[int, int, str], GlobalToken] = {}
        for tok in tokens or []:
            by_key[tok.triplet_key] = tok
        self._tokens = [by_key[k] for k in sorted(by_key)]

    def __len__(self) -> int:
        return len(self._tokens)

    def __iter__(self):
        return iter(self._tokens)

    @property
    def keys(self) -> list[tuple[int, int, str]]:
        return [t.triplet_key for t in self._tokens]

    def matrix(self, d: int) -> np.ndarray:
        """(M, d) stacked vectors; shape (0, d) when empty."""
        if not self._tokens:
            return np.zeros((0, d))
        return np.stack([t.vector for t in self._tokens])

    def with_matrix(self, mat: np.ndarray) -> "GlobalTokens":
        if mat.shape[0] != len(self._tokens):
            raise DimensionError("matrix row count does not match token count")
        return GlobalTokens(
            [GlobalToken(t.triplet_key, mat[i].copy()) for i, t in enumerate(self._tokens)]
        )

    def copy(self) -> "GlobalTokens":
        return GlobalTokens([GlobalToken(t.triplet_key, t.vector.copy()) for t in self._tokens])


@dataclass
class LocalTokens:
    """K_m local semantic tokens with the padding mask of real rows."""

    vectors: np.ndarray
    phrases: list[str] = field(default_factory=list)
    mask: np.ndarray | None = None  # True where the row is a real phrase

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise DimensionError(f"local tokens must be (K_m, d) with K_m >= 1, got {self.vectors.shape}")
        if self.mask is None:
            self.mask = np.ones(self.vectors.shape[0], dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.vectors.shape[0],):
            raise DimensionError("padding mask length does not match K_m")

    @property
    def k_m(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "LocalTokens":
        return LocalTokens(self.vectors.copy(), list(self.phrases), self.mask.copy())


@dataclass
class SemanticLatents:
    """Global planner tokens plus the local token block."""

    global_tokens: GlobalTokens
    local: LocalTokens

    def copy(self) -> "SemanticLatents":
        return SemanticLatents(self.global_tokens.copy(), self.local.copy())


def encode_global(triplets, part_names: dict[int, str], emb: Embedder) -> GlobalTokens:
    """One token per distinct (i, j, predicate): the projected mean of the
    embeddings of (name_i, predicate, name_j). Duplicates collapse; output
    order is by sorted key, so the result is independent of input order."""
    tokens = []
    seen = set()
    for t in triplets:
        key = (t.i, t.j, t.predicate.name)
        if key in seen:
            continue
        seen.add(key)
        for pid in (t.i, t.j):
            if pid not in part_names:
                raise InputError(f"triplet references unknown part id {pid}")
        stack = np.stack(
            [
                emb.embed(part_names[t.i]),
                emb.embed(t.predicate.name),
                emb.embed(part_names[t.j]),
            ]
        )
        tokens.append(GlobalToken(key, emb.project(stack.mean(axis=0))))
    return GlobalTokens(tokens)


def encode_local(phrases: list[str], k_m: int = DEFAULT_K_M, emb: Embedder | None = None) -> LocalTokens:
    """Encode up to ``k_m`` phrases in document order.

    Overflow phrases are dropped (earliest win); missing rows are
    zero-padded and flagged in the mask so attention can skip them.
    """
    if k_m < 1:
        raise InputError(f"K_m must be >= 1, got {k_m}")
    if emb is None:
        emb = Embedder.hashed()
    kept = list(phrases[:k_m])
    vectors = np.zeros((k_m, emb.d_out))
    mask = np.zeros(k_m, dtype=bool)
    for row, phrase in enumerate(kept):
        vectors[row] = emb.encode(phrase)
        mask[row] = True
    return LocalTokens(vectors, kept, mask)
