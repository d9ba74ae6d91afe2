"""MovieLens 100K ingestion, feature ontologies and chronological splitting.

The raw files are read verbatim:

* ``u.data``  -- ``user \\t item \\t rating \\t timestamp``
* ``u.user``  -- ``id|age|gender|occupation|zip``
* ``u.item``  -- ``id|title|release date|video date|url|<19 genre flags>``

Every categorical feature lives in a :class:`FeatureSchema`; entities carry a
:class:`FeatureBundle` of value indices into that schema.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

VIEWS = ("user", "item")

GENRES = (
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
)
UNKNOWN_DECADE = "unknown"
POSITIVE_THRESHOLD = 4


class DataFormatError(ValueError):
    """A raw input line could not be parsed."""


class SchemaError(ValueError):
    """A bundle or label is inconsistent with the feature schema."""


def binarize(raw_rating: int) -> int:
    return int(raw_rating >= POSITIVE_THRESHOLD)


@dataclass(frozen=True)
class InteractionEvent:
    user_id: int
    item_id: int
    raw_rating: int
    reward: int
    timestamp: int

    def __post_init__(self):
        if not 1 <= self.raw_rating <= 5:
            raise ValueError(f"rating {self.raw_rating} outside 1..5")
        if self.reward != binarize(self.raw_rating):
            raise ValueError("reward must equal the binarized rating")
        if self.timestamp <= 0:
            raise ValueError(f"timestamp must be positive, got {self.timestamp}")

    @classmethod
    def from_rating(cls, user_id, item_id, raw_rating, timestamp):
        if not 1 <= raw_rating <= 5:
            raise ValueError(f"rating {raw_rating} outside 1..5")
        return cls(user_id, item_id, raw_rating, binarize(raw_rating), timestamp)


@dataclass(frozen=True)
class Feature:
    name: str
    view: str
    vocabulary: tuple[str, ...]
    multi_valued: bool = False

    def __post_init__(self):
        if self.view not in VIEWS:
            raise SchemaError(f"unknown view {self.view!r}")
        if not self.vocabulary:
            raise SchemaError(f"feature {self.name!r} has an empty vocabulary")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise SchemaError(f"feature {self.name!r} has duplicate labels")

    @property
    def size(self) -> int:
        return len(self.vocabulary)

    def index(self, label: str) -> int:
        try:
            return self.vocabulary.index(label)
        except ValueError:
            raise SchemaError(f"label {label!r} not in vocabulary of {self.name!r}") from None


@dataclass(frozen=True)
class FeatureBundle:
    """Feature values of one user or item: feature name -> tuple of value indices."""

    entity_id: int
    view: str
    values: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __hash__(self):
        return hash((self.entity_id, self.view, tuple(sorted(self.values.items()))))


class FeatureSchema:
    """Ordered, frozen collection of categorical features across both views."""

    def __init__(self, features: Sequence[Feature]):
        self.features = tuple(features)
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        for view in VIEWS:
            if not any(f.view == view for f in self.features):
                raise SchemaError(f"view {view!r} has no features")

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and self.features == other.features

    def __hash__(self):
        return hash(self.features)

    def __len__(self):
        return len(self.features)

    def __repr__(self):
        return f"FeatureSchema({[f.name for f in self.features]})"

    def view_features(self, view: str) -> list[Feature]:
        return [f for f in self.features if f.view == view]

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"no feature named {name!r}")

    def validate(self, bundle: FeatureBundle) -> None:
        expected = {f.name for f in self.view_features(bundle.view)}
        if set(bundle.values) != expected:
            raise SchemaError(
                f"{bundle.view} {bundle.entity_id}: features {sorted(bundle.values)} != {sorted(expected)}"
            )
        for f in self.view_features(bundle.view):
            idx = bundle.values[f.name]
            if f.multi_valued:
                if len(idx) < 1:
                    raise SchemaError(f"{f.name}: multi-valued feature needs >= 1 value")
            elif len(idx) != 1:
                raise SchemaError(f"{f.name}: single-valued feature needs exactly 1 value")
            if len(set(idx)) != len(idx):
                raise SchemaError(f"{f.name}: repeated value index")
            if any(not 0 <= v < f.size for v in idx):
                raise SchemaError(f"{f.name}: value index out of range in {idx}")

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "view": f.view, "vocabulary": list(f.vocabulary),
                 "multi_valued": f.multi_valued}
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FeatureSchema":
        return cls([
            Feature(d["name"], d["view"], tuple(d["vocabulary"]), bool(d.get("multi_valued", False)))
            for d in data["features"]
        ])

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class SplitStats:
    n_train: int
    n_test: int
    cold_start_fraction: float
    n_items: int
    n_users: int
    n_positive: int = 0


# --- parsing -------------------------------------------------------------------------

def parse_ratings(raw_text: str) -> list[InteractionEvent]:
    """Parse ``u.data`` content into events, one per non-blank line."""
    events = []
    for lineno, line in enumerate(raw_text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        try:
            user, item, rating, ts = (int(p) for p in parts)
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-integer field in {line!r}") from None
        if not 1 <= rating <= 5:
            raise ValueError(f"line {lineno}: rating {rating} outside 1..5")
        events.append(InteractionEvent(user, item, rating, binarize(rating), ts))
    return events


def age_decade(age: int) -> int:
    """Age in decades, rounded half away from zero (24 -> 2, 25 -> 3)."""
    return int(math.floor(abs(age) / 10 + 0.5)) * (1 if age >= 0 else -1)


def release_decade(date: str) -> str:
    date = date.strip()
    if not date:
        return UNKNOWN_DECADE
    try:
        year = int(date[-4:])
    except ValueError:
        raise DataFormatError(f"unparseable release date {date!r}") from None
    return str(year // 10 * 10)


def _freeze_vocab(labels: Iterable[str], numeric: bool = False) -> tuple[str, ...]:
    uniq = set(labels)
    if numeric:
        nums = sorted(int(x) for x in uniq if x != UNKNOWN_DECADE)
        out = [str(x) for x in nums]
        if UNKNOWN_DECADE in uniq:
            out.append(UNKNOWN_DECADE)
        return tuple(out)
    return tuple(sorted(uniq))


def _split_pipe(raw_text: str, n_min: int, what: str):
    for lineno, line in enumerate(raw_text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) < n_min:
            raise DataFormatError(f"{what} line {lineno}: expected >= {n_min} fields, got {len(parts)}")
        yield lineno, parts


def parse_users(raw_text: str, schema: FeatureSchema | None = None):
    """Parse ``u.user``.

    Without ``schema`` the vocabularies are collected from the data and the
    user features are returned alongside the bundles. With a frozen schema,
    unknown labels raise :class:`SchemaError`.

    Returns
    -------
    bundles : dict[int, FeatureBundle]
    features : list[Feature]
    """
    rows = []
    for lineno, parts in _split_pipe(raw_text, 4, "u.user"):
        try:
            uid, age = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(f"u.user line {lineno}: bad id/age") from None
        rows.append((uid, parts[2].strip(), parts[3].strip(), str(age_decade(age))))

    if schema is None:
        features = [
            Feature("gender", "user", _freeze_vocab(r[1] for r in rows)),
            Feature("occupation", "user", _freeze_vocab(r[2] for r in rows)),
            Feature("age_decade", "user", _freeze_vocab((r[3] for r in rows), numeric=True)),
        ]
    else:
        features = schema.view_features("user")
    by_name = {f.name: f for f in features}

    bundles = {}
    for uid, gender, occupation, decade in rows:
        values = {
            "gender": (by_name["gender"].index(gender),),
            "occupation": (by_name["occupation"].index(occupation),),
            "age_decade": (by_name["age_decade"].index(decade),),
        }
        bundles[uid] = FeatureBundle(uid, "user", values)
    return bundles, features


def parse_items(raw_text: str, schema: FeatureSchema | None = None):
    """Parse ``u.item`` into release-decade and (multi-valued) genre bundles."""
    rows = []
    for lineno, parts in _split_pipe(raw_text, 5 + len(GENRES), "u.item"):
        try:
            iid = int(parts[0])
            flags = [int(x) for x in parts[5:5 + len(GENRES)]]
        except ValueError:
            raise DataFormatError(f"u.item line {lineno}: bad id or genre flag") from None
        genres = tuple(g for g, flag in enumerate(flags) if flag)
        if not genres:
            genres = (GENRES.index("unknown"),)
        rows.append((iid, release_decade(parts[2]), genres))

    if schema is None:
        features = [
            Feature("release_decade", "item", _freeze_vocab((r[1] for r in rows), numeric=True)),
            Feature("genre", "item", GENRES, multi_valued=True),
        ]
    else:
        features = schema.view_features("item")
    by_name = {f.name: f for f in features}

    bundles = {}
    for iid, decade, genres in rows:
        values = {"release_decade": (by_name["release_decade"].index(decade),), "genre": genres}
        bundles[iid] = FeatureBundle(iid, "item", values)
    return bundles, features


# --- transformations -----------------------------------------------------------------

def top_items(events: Sequence[InteractionEvent], n: int) -> list[int]:
    """The ``n`` most-rated item ids, ties broken by smaller id."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = Counter(e.item_id for e in events)
    ranked = sorted(counts, key=lambda i: (-counts[i], i))
    return ranked[:n]


def filter_top_items(events: Sequence[InteractionEvent], n: int) -> list[InteractionEvent]:
    keep = set(top_items(events, n))
    return [e for e in events if e.item_id in keep]


def chronological_split(events: Sequence[InteractionEvent], fraction: float = 0.5):
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    ordered = sorted(events, key=lambda e: (e.timestamp, e.user_id, e.item_id))
    cut = math.floor(fraction * len(ordered))
    return ordered[:cut], ordered[cut:]


def is_cold(event: InteractionEvent, train_users: set, train_items: set) -> bool:
    return event.user_id not in train_users or event.item_id not in train_items


def cold_start_stats(train: Sequence[InteractionEvent], test: Sequence[InteractionEvent]) -> SplitStats:
    if not test:
        raise ValueError("cold-start statistics need a non-empty test set")
    users = {e.user_id for e in train}
    items = {e.item_id for e in train}
    cold = sum(is_cold(e, users, items) for e in test)
    every = list(train) + list(test)
    return SplitStats(
        n_train=len(train),
        n_test=len(test),
        cold_start_fraction=cold / len(test),
        n_items=len({e.item_id for e in every}),
        n_users=len({e.user_id for e in every}),
        n_positive=sum(e.reward for e in every),
    )


# --- MovieLens loading and file formats ----------------------------------------------

@dataclass
class MovieLens:
    events: list[InteractionEvent]
    users: dict[int, FeatureBundle]
    items: dict[int, FeatureBundle]
    schema: FeatureSchema


def read_text(path) -> str:
    # u.item carries latin-1 titles
    return Path(path).read_bytes().decode("latin-1")


def load_movielens(data_dir) -> MovieLens:
    data_dir = Path(data_dir)
    events = parse_ratings(read_text(data_dir / "u.data"))
    users, user_features = parse_users(read_text(data_dir / "u.user"))
    items, item_features = parse_items(read_text(data_dir / "u.item"))
    schema = FeatureSchema(user_features + item_features)
    for b in list(users.values()) + list(items.values()):
        schema.validate(b)
    return MovieLens(events, users, items, schema)


EVENT_COLUMNS = ("user_id", "item_id", "raw_rating", "reward", "timestamp", "split")


def write_events_csv(path, train, test) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS)
    for split, events in (("train", train), ("test", test)):
        for e in events:
            writer.writerow((e.user_id, e.item_id, e.raw_rating, e.reward, e.timestamp, split))
    Path(path).write_text(buf.getvalue())


def read_events_csv(path):
    train, test = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            e = InteractionEvent(int(row["user_id"]), int(row["item_id"]), int(row["raw_rating"]),
                                 int(row["reward"]), int(row["timestamp"]))
            (train if row["split"] == "train" else test).append(e)
    return train, test


def bundles_to_dict(bundles: Mapping[int, FeatureBundle]) -> dict:
    return {str(k): {name: list(v) for name, v in b.values.items()} for k, b in sorted(bundles.items())}


def bundles_from_dict(data: Mapping, view: str) -> dict[int, FeatureBundle]:
    return {int(k): FeatureBundle(int(k), view, {n: tuple(v) for n, v in vals.items()})
            for k, vals in data.items()}
