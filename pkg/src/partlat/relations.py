"""Relation canonicalization and geometric validation.

Free-form captions are reduced to (part_i, part_j, predicate) triplets
in three deterministic steps: clause extraction with a pattern grammar
over a curated relation lexicon, predicate mapping against a closed
vocabulary (synonym table first, embedding similarity as fallback), and
entity resolution against the object's part label table. Spatial
triplets can then be checked against part bounding boxes with
predicate-specific inequalities; functional triplets carry no geometric
test and come back unchecked.

Coordinate convention throughout: z up, x right, y forward, objects
normalized to a shared canonical frame.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError
from .semantics import Embedder

# ---------------------------------------------------------------------------
# Closed predicate vocabulary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    name: str
    kind: str  # functional | spatial
    klass: str  # vertical | horizontal | containment | symmetry-arrangement | proximity-contact | functional


_VOCAB_TABLE = [
    ("support", "functional", "functional"),
    ("attach", "functional", "functional"),
    ("hinge", "functional", "functional"),
    ("symmetry", "functional", "functional"),
    ("above", "spatial", "vertical"),
    ("below", "spatial", "vertical"),
    ("on-top-of", "spatial", "vertical"),
    ("under", "spatial", "vertical"),
    ("in-front-of", "spatial", "horizontal"),
    ("behind", "spatial", "horizontal"),
    ("left-of", "spatial", "horizontal"),
    ("right-of", "spatial", "horizontal"),
    ("inside", "spatial", "containment"),
    ("surrounding", "spatial", "containment"),
    ("symmetric-with", "spatial", "symmetry-arrangement"),
    ("parallel-to", "spatial", "symmetry-arrangement"),
    ("aligned-with", "spatial", "symmetry-arrangement"),
    ("touching", "spatial", "proximity-contact"),
    ("attached-to", "spatial", "proximity-contact"),
    ("connected-with", "spatial", "proximity-contact"),
]

VOCABULARY: dict[str, Predicate] = {n: Predicate(n, k, c) for n, k, c in _VOCAB_TABLE}
VOCAB_ORDER: list[str] = [n for n, _, _ in _VOCAB_TABLE]

# Predicates whose two sides are interchangeable.
SYMMETRIC_PREDICATES = {"symmetric-with", "parallel-to", "aligned-with", "touching", "connected-with"}

SIMILARITY_FLOOR = 0.35


def predicate(name: str) -> Predicate:
    if name not in VOCABULARY:
        raise InputError(f"{name!r} is not in the predicate vocabulary")
    return VOCABULARY[name]


@dataclass(frozen=True)
class RelationalTriplet:
    i: int
    j: int
    predicate: Predicate
    source_phrase: str = ""
    provenance: str = "parsed"  # metadata | parsed | external-file

    def __post_init__(self):
        if self.provenance not in ("metadata", "parsed", "external-file"):
            raise InputError(f"unknown provenance {self.provenance!r}")
        if self.i == self.j and self.predicate.name != "symmetric-with":
            raise InputError(f"self-relation {self.predicate.name} on part {self.i} is not allowed")

    @property
    def key(self) -> tuple[int, int, str]:
        return (self.i, self.j, self.predicate.name)


# ---------------------------------------------------------------------------
# Step (i): clause extraction
# ---------------------------------------------------------------------------

_DETERMINERS = {
    "the", "a", "an", "its", "their", "his", "her", "this", "that", "these", "those",
    "one", "two", "three", "four", "five", "six", "both", "all", "each", "every", "some",
}
_COPULAS = {"is", "are", "was", "were", "be", "been", "being"}

# Words that by themselves signal a relational clause.
_CORE_WORDS = {
    "above", "over", "atop", "top", "below", "beneath", "underneath", "under",
    "front", "behind", "left", "right", "inside", "within", "into",
    "surrounding", "surrounds", "surrounded", "around", "enclosing", "encloses",
    "symmetric", "symmetrical", "mirrored", "mirror", "mirrors",
    "parallel", "aligned", "aligns", "align", "flush",
    "touching", "touches", "touch", "beside", "adjacent", "near", "next",
    "against", "abuts", "abutting",
    "attached", "attaches", "attach", "attaching", "mounted", "fastened", "fixed",
    "glued", "bolted", "welded", "screwed",
    "connected", "connects", "connect", "connecting", "joined", "joins", "join",
    "linked", "links", "link",
    "supports", "support", "supporting", "supported", "holds", "hold", "holding",
    "held", "carries", "carry", "carrying", "carried", "bears", "bearing",
    "hinged", "hinges", "hinge", "pivots", "pivot", "pivoted",
    "on",
}

# Words allowed inside a relation span without being evidence of one.
_CONNECT_WORDS = {
    "positioned", "located", "placed", "situated", "resting", "rests", "sitting",
    "sits", "standing", "stands", "lying", "lies",
    "directly", "just", "immediately", "firmly", "slightly", "exactly", "centered",
    "of", "to", "with", "at", "on", "in", "from", "by", "up",
    "each", "other", "another",
}

# Nouns that may close a locative tail folded into the phrase
# ("touches the body at the side").
_LOCATIVE_NOUNS = {
    "side", "sides", "edge", "edges", "end", "ends", "top", "bottom", "corner",
    "corners", "middle", "center", "centre", "base", "rear",
}

_REFLEXIVE_CORES = {
    "symmetric", "symmetrical", "mirrored", "mirror", "mirrors",
    "parallel", "aligned", "aligns", "align", "flush",
    "touching", "touch",
}

_SPAN_WORDS = _CORE_WORDS | _CONNECT_WORDS


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


def _strip_determiners(tokens: list[str]) -> list[str]:
    k = 0
    while k < len(tokens) and tokens[k] in _DETERMINERS:
        k += 1
    return tokens[k:]


def _parse_sentence(tokens: list[str]):
    core_idx = next((k for k, w in enumerate(tokens) if w in _CORE_WORDS), None)
    if core_idx is None or core_idx == 0:
        return None
    # Relation span: grow left/right over span words around the core.
    left = core_idx
    while left - 1 > 0 and tokens[left - 1] in _SPAN_WORDS:
        left -= 1
    right = core_idx + 1
    while right < len(tokens) and tokens[right] in _SPAN_WORDS:
        right += 1
    subj_end = left
    while subj_end > 0 and tokens[subj_end - 1] in _COPULAS:
        subj_end -= 1
    subject = _strip_determiners(tokens[:subj_end])
    if not subject:
        return None
    rest = _strip_determiners(tokens[right:])
    obj = []
    k = 0
    while k < len(rest) and rest[k] not in _SPAN_WORDS and rest[k] not in _DETERMINERS:
        obj.append(rest[k])
        k += 1
    tail = rest[k:]
    phrase_end = right
    if obj and tail and all(w in _SPAN_WORDS | _DETERMINERS | _LOCATIVE_NOUNS for w in tail):
        # Locative tail belongs to the relation: fold object + tail into the phrase.
        phrase_end = len(tokens)
    phrase = " ".join(tokens[left:phrase_end])
    if not obj:
        if tokens[core_idx] in _REFLEXIVE_CORES:
            obj = subject  # "the two wings are symmetric"
        else:
            return None
    return (" ".join(subject), phrase, " ".join(obj))


def parse_clauses(caption: str) -> list[tuple[str, str, str]]:
    """Extract (subject, relation phrase, object) clauses from a caption.

    Deterministic pattern grammar; sentences without a recognized relation
    word yield nothing, and arbitrary text never raises.
    """
    clauses = []
    for sentence in re.split(r"[.;!?,]| and | while | whereas ", caption.lower()):
        tokens = _tokenize(sentence)
        if not tokens:
            continue
        parsed = _parse_sentence(tokens)
        if parsed is not None:
            clauses.append(parsed)
    return clauses


# ---------------------------------------------------------------------------
# Step (ii): predicate mapping
# ---------------------------------------------------------------------------

_SYNONYM_TABLE = {
    "over": "above",
    "atop": "on-top-of",
    "on top": "on-top-of",
    "on top of": "on-top-of",
    "on": "on-top-of",
    "beneath": "below",
    "underneath": "under",
    "in front": "in-front-of",
    "in front of": "in-front-of",
    "at the front of": "in-front-of",
    "at the back of": "behind",
    "left of": "left-of",
    "to the left of": "left-of",
    "right of": "right-of",
    "to the right of": "right-of",
    "within": "inside",
    "contained in": "inside",
    "around": "surrounding",
    "surrounds": "surrounding",
    "symmetric": "symmetric-with",
    "symmetrical": "symmetric-with",
    "mirrored": "symmetric-with",
    "parallel": "parallel-to",
    "aligned": "aligned-with",
    "touches": "touching",
    "touch": "touching",
    "in contact with": "touching",
    "next to": "touching",
    "beside": "touching",
    "adjacent to": "touching",
    "attached": "attached-to",
    "attached to": "attached-to",
    "mounted on": "attached-to",
    "connected": "connected-with",
    "connected to": "connected-with",
    "connects": "connected-with",
    "joined to": "connected-with",
    "supports": "support",
    "supporting": "support",
    "holds": "support",
    "holds up": "support",
    "attaches": "attach",
    "hinged": "hinge",
    "hinged to": "hinge",
    "hinges": "hinge",
}

# Token triggers, consulted in vocabulary order after the synonym table.
_TOKEN_TRIGGERS = {
    "support": {"support", "supports", "supporting", "supported", "holds", "hold",
                "holding", "held", "carries", "carry", "carrying", "carried", "bears", "bearing"},
    "attach": {"attach", "attaches", "attaching"},
    "hinge": {"hinge", "hinges", "hinged", "pivot", "pivots", "pivoted"},
    "symmetry": set(),
    "above": {"above", "over", "overhead"},
    "below": {"below", "beneath"},
    "on-top-of": {"top", "atop"},
    "under": {"under", "underneath"},
    "in-front-of": {"front"},
    "behind": {"behind"},
    "left-of": {"left"},
    "right-of": {"right"},
    "inside": {"inside", "within", "into"},
    "surrounding": {"surrounding", "surrounds", "surrounded", "around", "enclosing", "encloses"},
    "symmetric-with": {"symmetric", "symmetrical", "mirrored", "mirror", "mirrors"},
    "parallel-to": {"parallel"},
    "aligned-with": {"aligned", "aligns", "align", "flush"},
    "touching": {"touching", "touches", "touch", "beside", "adjacent", "near", "next",
                 "against", "abuts", "abutting"},
    "attached-to": {"attached", "mounted", "fastened", "fixed", "glued", "bolted",
                    "welded", "screwed"},
    "connected-with": {"connected", "connects", "connect", "connecting", "joined",
                       "joins", "join", "linked", "links", "link"},
}

_CONTACT_VERBS = {"touch", "touches", "touching", "contact", "contacts", "pressed", "pressing"}


def _normalize_phrase(phrase: str) -> str:
    return " ".join(_tokenize(phrase))


def map_predicate(phrase: str, emb: Embedder | None = None) -> Predicate | None:
    """Map a free relation phrase onto the canonical vocabulary.

    Exact and synonym hits win; then curated token triggers in vocabulary
    order; finally nearest predicate by embedding cosine similarity,
    accepted only above the similarity floor. Returns None when nothing
    clears the floor.
    """
    if not phrase:
        raise InputError("cannot map an empty phrase")
    norm = _normalize_phrase(phrase)
    if not norm:
        return None
    spaced_names = {name.replace("-", " "): name for name in VOCAB_ORDER}
    if norm in spaced_names:
        return VOCABULARY[spaced_names[norm]]
    if norm in _SYNONYM_TABLE:
        return VOCABULARY[_SYNONYM_TABLE[norm]]
    tokens = set(norm.split())
    # Side/edge contact reads as attachment, not mere touching.
    if tokens & _CONTACT_VERBS and tokens & {"side", "sides", "edge", "edges"}:
        return VOCABULARY["attached-to"]
    for name in VOCAB_ORDER:
        if tokens & _TOKEN_TRIGGERS[name]:
            return VOCABULARY[name]
    if emb is None:
        return None
    query = emb.embed(norm)
    query = query / max(np.linalg.norm(query), 1e-12)
    best_name, best_sim = None, -np.inf
    for name in VOCAB_ORDER:  # vocabulary order breaks ties
        ref = emb.embed(name.replace("-", " "))
        sim = float(query @ (ref / max(np.linalg.norm(ref), 1e-12)))
        if sim > best_sim:
            best_name, best_sim = name, sim
    if best_sim >= SIMILARITY_FLOOR:
        return VOCABULARY[best_name]
    return None


# ---------------------------------------------------------------------------
# Step (iii): entity resolution
# ---------------------------------------------------------------------------


def singularize(word: str) -> str:
    if len(word) > 3 and word.endswith("ies"):
        return word[:-3] + "y"
    if len(word) > 3 and word.endswith("ves"):
        return word[:-3] + "f"
    if len(word) > 3 and word.endswith(("sses", "shes", "ches", "xes", "zes")):
        return word[:-2]
    if word.endswith("s") and not word.endswith("ss"):
        return word[:-1]
    return word


def resolve_entities(name: str, vocab: dict[int, str]) -> list[int]:
    """Resolve an entity mention to part ids.

    Exact label match first; a plural mention matches every part whose
    singularized label agrees; an ambiguous singular mention selects the
    lowest part id. Unresolvable names give an empty list.
    """
    if not vocab:
        raise InputError("part vocabulary is empty")
    name = " ".join(_tokenize(name))
    if not name:
        return []
    labels = {pid: " ".join(_tokenize(lbl)) for pid, lbl in vocab.items()}

    def match(query: str) -> list[int]:
        exact = sorted(pid for pid, lbl in labels.items() if lbl == query)
        is_plural = singularize(query) != query
        if exact:
            return exact if is_plural else [exact[0]]
        if is_plural:
            sing = singularize(query)
            hits = sorted(pid for pid, lbl in labels.items() if singularize(lbl) == sing)
            if hits:
                return hits
        return []

    hits = match(name)
    if not hits and " " in name:
        hits = match(name.split()[-1])  # fall back to the head noun
    return hits


_PASSIVE_BY = re.compile(r"\b[a-z]+ed\s+by\b")
# Predicates where "X <pred>ed by Y" flips the roles of X and Y.
_DIRECTIONAL = {
    "support", "attach", "hinge", "above", "below", "on-top-of", "under",
    "in-front-of", "behind", "left-of", "right-of", "inside", "surrounding",
    "attached-to",
}


def canonicalize(
    captions: list[str],
    vocab: dict[int, str],
    emb: Embedder | None = None,
) -> list[RelationalTriplet]:
    """Compose parse -> map -> resolve over a list of captions.

    Plural x plural mentions expand to the full cartesian product minus
    self-pairs; exact duplicate triplets are dropped (first occurrence
    wins); output order follows the captions.
    """
    out: list[RelationalTriplet] = []
    seen: set[tuple[int, int, str]] = set()
    for caption in captions:
        for subject, phrase, obj in parse_clauses(caption):
            pred = map_predicate(phrase, emb)
            if pred is None:
                continue
            subj_ids = resolve_entities(subject, vocab)
            obj_ids = resolve_entities(obj, vocab)
            if not subj_ids or not obj_ids:
                continue
            if pred.name in _DIRECTIONAL and _PASSIVE_BY.search(phrase):
                subj_ids, obj_ids = obj_ids, subj_ids  # "seat supported by legs"
            for i in subj_ids:
                for j in obj_ids:
                    if i == j:
                        continue
                    key = (i, j, pred.name)
                    if key in seen:
                        continue
                    seen.add(key)
                    out.append(RelationalTriplet(i, j, pred, source_phrase=phrase))
    return out


# ---------------------------------------------------------------------------
# Geometric validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise DimensionError("Aabb bounds must be 3-vectors")
        if np.any(lo > hi):
            raise InputError(f"Aabb min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))


def compute_aabb(points: np.ndarray) -> Aabb:
    """Component-wise min/max box of a point cloud."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise InputError(f"need a nonempty (n, 3) point array, got shape {pts.shape}")
    return Aabb(pts.min(axis=0), pts.max(axis=0))


@dataclass(frozen=True)
class ValidationThresholds:
    """Slack values for the predicate inequalities (fractions of union-box scale)."""

    eps_rel: float = 0.05  # ordering slack, of the union extent along the tested axis
    tau_gap: float = 0.02  # max contact gap, of the union-box diagonal
    theta_in: float = 0.9  # containment volume fraction
    theta_sym: float = 0.5  # mirrored-overlap IoU

    def __post_init__(self):
        for nm in ("eps_rel", "tau_gap", "theta_in", "theta_sym"):
            v = getattr(self, nm)
            if not (0.0 < v <= 1.0):
                raise InputError(f"{nm} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class ValidationResult:
    status: str  # valid | violated | unchecked
    reason: str = ""

    def __bool__(self) -> bool:
        return self.status == "valid"


_VALID = ValidationResult("valid")
_UNCHECKED = ValidationResult("unchecked", "functional predicates carry no geometric test")


def _overlap_len(a: Aabb, b: Aabb, axis: int) -> float:
    return min(a.max[axis], b.max[axis]) - max(a.min[axis], b.min[axis])


def _intersection_volume(a: Aabb, b: Aabb) -> float:
    lens = [max(0.0, _overlap_len(a, b, ax)) for ax in range(3)]
    return lens[0] * lens[1] * lens[2]


def _box_gap(a: Aabb, b: Aabb) -> float:
    sep = [max(0.0, -_overlap_len(a, b, ax)) for ax in range(3)]
    return float(np.linalg.norm(sep))


def _box_iou(a: Aabb, b: Aabb) -> float:
    vi = _intersection_volume(a, b)
    vu = a.volume + b.volume - vi
    if vu <= 0.0:
        return 1.0 if np.allclose(a.min, b.min) and np.allclose(a.max, b.max) else 0.0
    return vi / vu


def _ordering(lo_i, hi_j, slack, axis_name) -> ValidationResult:
    if lo_i >= hi_j - slack:
        return _VALID
    return ValidationResult("violated", f"{axis_name}-order")


def validate_triplet(
    t: RelationalTriplet,
    boxes: dict[int, Aabb],
    th: ValidationThresholds | None = None,
    whole_object: Aabb | None = None,
) -> ValidationResult:
    """Check a spatial triplet against part bounding boxes.

    ``whole_object`` defaults to the union of every box in ``boxes`` and
    is only used as the mirror plane for symmetric-with.
    """
    th = th or ValidationThresholds()
    if t.predicate.kind == "functional":
        return _UNCHECKED
    if t.i not in boxes or t.j not in boxes:
        missing = [pid for pid in (t.i, t.j) if pid not in boxes]
        raise InputError(f"no bounding box for part id(s) {missing}")
    bi, bj = boxes[t.i], boxes[t.j]
    u = bi.union(bj)
    name = t.predicate.name

    if name in ("above", "on-top-of"):
        res = _ordering(bi.min[2], bj.max[2], th.eps_rel * u.extent[2], "z")
        if name == "above" or res.status == "violated":
            return res
        if _overlap_len(bi, bj, 0) <= 0 or _overlap_len(bi, bj, 1) <= 0:
            return ValidationResult("violated", "no xy-overlap")
        if max(0.0, bi.min[2] - bj.max[2]) > th.tau_gap * u.diagonal:
            return ValidationResult("violated", "vertical gap")
        return _VALID
    if name in ("below", "under"):
        res = _ordering(bj.min[2], bi.max[2], th.eps_rel * u.extent[2], "z")
        if name == "below" or res.status == "violated":
            return res
        if _overlap_len(bi, bj, 0) <= 0 or _overlap_len(bi, bj, 1) <= 0:
            return ValidationResult("violated", "no xy-overlap")
        if max(0.0, bj.min[2] - bi.max[2]) > th.tau_gap * u.diagonal:
            return ValidationResult("violated", "vertical gap")
        return _VALID
    if name == "right-of":
        return _ordering(bi.min[0], bj.max[0], th.eps_rel * u.extent[0], "x")
    if name == "left-of":
        return _ordering(bj.min[0], bi.max[0], th.eps_rel * u.extent[0], "x")
    if name == "in-front-of":
        return _ordering(bi.min[1], bj.max[1], th.eps_rel * u.extent[1], "y")
    if name == "behind":
        return _ordering(bj.min[1], bi.max[1], th.eps_rel * u.extent[1], "y")
    if name in ("inside", "surrounding"):
        inner, outer = (bi, bj) if name == "inside" else (bj, bi)
        vol = inner.volume
        if vol > 0.0:
            frac = _intersection_volume(inner, outer) / vol
        else:  # degenerate box: containment means the intersection is the box itself
            frac = 1.0 if all(_overlap_len(inner, outer, ax) >= inner.extent[ax] for ax in range(3)) else 0.0
        if frac >= th.theta_in:
            return _VALID
        return ValidationResult("violated", "containment fraction")
    if name in ("touching", "attached-to", "connected-with"):
        if _box_gap(bi, bj) <= th.tau_gap * u.diagonal:
            return _VALID
        return ValidationResult("violated", "contact gap")
    if name == "symmetric-with":
        frame = whole_object
        if frame is None:
            frame = bi
            for b in boxes.values():
                frame = frame.union(b)
        cx = float(frame.center[0])
        mirrored = Aabb(
            np.array([2 * cx - bj.max[0], bj.min[1], bj.min[2]]),
            np.array([2 * cx - bj.min[0], bj.max[1], bj.max[2]]),
        )
        if _box_iou(bi, mirrored) >= th.theta_sym:
            return _VALID
        return ValidationResult("violated", "mirror overlap")
    if name in ("parallel-to", "aligned-with"):
        dom_i = int(np.argmax(bi.extent))
        dom_j = int(np.argmax(bj.extent))
        if dom_i != dom_j:
            return ValidationResult("violated", "dominant axis")
        if name == "parallel-to":
            return _VALID
        for ax in range(3):
            if ax == dom_i:
                continue
            if abs(bi.center[ax] - bj.center[ax]) > th.eps_rel * u.extent[ax]:
                return ValidationResult("violated", "center alignment")
        return _VALID
    raise InputError(f"no geometric test for predicate {name!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Corpus statistics and OOD splits
# ---------------------------------------------------------------------------


@dataclass
class CorpusObject:
    object_id: str
    category: str = ""
    parts: dict[int, str] = field(default_factory=dict)  # part_id -> label
    triplets: list[RelationalTriplet] = field(default_factory=list)


def dataset_stats(corpus: list[CorpusObject]) -> dict:
    """Aggregate counts over a corpus; all-zero report on an empty corpus."""
    n_objects = len(corpus)
    n_parts = sum(len(o.parts) for o in corpus)
    n_triplets = sum(len(o.triplets) for o in corpus)
    histogram: dict[str, int] = {}
    for o in corpus:
        for t in o.triplets:
            histogram[t.predicate.name] = histogram.get(t.predicate.name, 0) + 1
    return {
        "objects": n_objects,
        "categories": len({o.category for o in corpus if o.category}),
        "parts": n_parts,
        "triplets": n_triplets,
        "mean_parts_per_object": n_parts / n_objects if n_objects else 0.0,
        "mean_relations_per_object": n_triplets / n_objects if n_objects else 0.0,
        "predicate_histogram": {k: histogram[k] for k in sorted(histogram)},
    }


def rare_part_labels(corpus: list[CorpusObject], min_count: int = 2) -> list[str]:
    """Tail part labels by object-level occurrence.

    The tail is the bottom tenth of labels sorted by (count, label); any
    label whose count ties the first label outside the slice is excluded,
    so a flat frequency profile has no tail. The min-count filter then
    drops labels too rare to be trustworthy.
    """
    counts: dict[str, int] = {}
    for o in corpus:
        for label in {lbl.lower() for lbl in o.parts.values()}:
            counts[label] = counts.get(label, 0) + 1
    labels = sorted(counts, key=lambda lbl: (counts[lbl], lbl))
    k = len(labels) // 10
    if k == 0:
        return []
    boundary = counts[labels[k]] if k < len(labels) else None
    tail = [lbl for lbl in labels[:k] if boundary is None or counts[lbl] < boundary]
    return sorted(lbl for lbl in tail if counts[lbl] >= min_count)


def ood_splits(
    corpus: list[CorpusObject],
    min_count: int = 2,
    holdout_predicates: set[str] | frozenset[str] = frozenset(),
) -> dict[str, list[str]]:
    """Partition object ids into in-distribution and OOD splits.

    ood_parts holds objects containing at least one rare part label;
    ood_rel holds objects containing at least one held-out predicate. The
    two OOD splits may overlap; "id" is everything in neither.
    """
    rare = set(rare_part_labels(corpus, min_count=min_count))
    holdout = set(holdout_predicates)
    ood_parts, ood_rel, in_dist = [], [], []
    for o in sorted(corpus, key=lambda o: o.object_id):
        has_rare = any(lbl.lower() in rare for lbl in o.parts.values())
        has_held = any(t.predicate.name in holdout for t in o.triplets)
        if has_rare:
            ood_parts.append(o.object_id)
        if has_held:
            ood_rel.append(o.object_id)
        if not has_rare and not has_held:
            in_dist.append(o.object_id)
    return {"id": in_dist, "ood_parts": ood_parts, "ood_rel": ood_rel, "rare_labels": sorted(rare)}


# ---------------------------------------------------------------------------
# Triplet file IO (tab-separated, one record per line)
# ---------------------------------------------------------------------------


def write_triplets(path, records: list[tuple[str, RelationalTriplet]]) -> None:
    """Write (object_id, triplet) records as TSV."""
    with open(path, "w", encoding="utf-8") as fh:
        for object_id, t in records:
            phrase = t.source_phrase.replace("\t", " ").replace("\n", " ")
            fh.write(
                f"{object_id}\t{t.i}\t{t.j}\t{t.predicate.name}\t{t.predicate.kind}\t{t.provenance}\t{phrase}\n"
            )


def read_triplets(path) -> list[tuple[str, RelationalTriplet]]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 7:
                raise InputError(f"{path}:{lineno}: expected 7 tab-separated fields, got {len(fields)}")
            object_id, i, j, name, kind, provenance, phrase = fields
            if name not in VOCABULARY:
                raise InputError(f"{path}:{lineno}: unknown predicate {name!r}")
            pred = VOCABULARY[name]
            if pred.kind != kind:
                raise InputError(f"{path}:{lineno}: predicate {name!r} has kind {pred.kind!r}, not {kind!r}")
            try:
                i, j = int(i), int(j)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: part ids must be integers") from exc
            records.append((object_id, RelationalTriplet(i, j, pred, phrase, provenance)))
    return records
