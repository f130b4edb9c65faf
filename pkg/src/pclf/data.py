"""Rating-file parsing, scale normalization, cross-domain indexing and Given-N splits.

A dataset holds Z domains whose users and items live in disjoint index
spaces (two domains may reuse the same raw ID string without referring to
the same entity).  All ratings are normalized onto a shared discrete scale
1..R before anything downstream sees them.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed input data or an infeasible data request."""


@dataclass(frozen=True)
class ScaleSpec:
    """Source rating scale and the number of discrete target levels."""

    min: float
    max: float
    target_levels: int = 5

    def __post_init__(self):
        if not self.min < self.max:
            raise DataError(f"scale requires min < max, got [{self.min}, {self.max}]")
        if self.target_levels < 2:
            raise DataError(f"target_levels must be >= 2, got {self.target_levels}")


@dataclass(frozen=True)
class RawRating:
    user_id: str
    item_id: str
    value: float


@dataclass(frozen=True)
class RatingTriple:
    """One observed rating: (domain, dense user index, dense item index, level)."""

    domain: int
    user: int
    item: int
    rating: int


def normalize_scale(value: float, scale: ScaleSpec) -> int:
    """Map a source-scale value onto the discrete levels 1..R.

    Linear map followed by half-up rounding, clamped to {1..R}.  On a 1-6
    source scale with R=5 this sends 6 to 5 and leaves 1..5 fixed.
    """
    if value < scale.min or value > scale.max:
        raise DataError(
            f"rating {value} outside declared scale [{scale.min}, {scale.max}]"
        )
    levels = scale.target_levels
    x = 1.0 + (levels - 1) * (value - scale.min) / (scale.max - scale.min)
    return int(min(max(math.floor(x + 0.5), 1), levels))


def parse_ratings(
    path: str,
    delimiter: str = "\t",
    column_map: tuple[int, int, int] = (0, 1, 2),
    scale: ScaleSpec = ScaleSpec(1, 5),
    skip_header: bool = False,
) -> list[RawRating]:
    """Read one rating per line from a delimited text file.

    ``column_map`` gives the (user, item, rating) column positions.  Rows
    are validated against ``scale`` bounds; any malformed row is reported
    with its 1-based line number.  Blank lines are skipped.
    """
    ucol, icol, rcol = column_map
    needed = max(column_map) + 1
    out = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read ratings file {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split(delimiter)
            if len(fields) < needed:
                raise DataError(
                    f"{path}:{lineno}: expected at least {needed} columns, got {len(fields)}"
                )
            try:
                value = float(fields[rcol])
            except ValueError as exc:
                raise DataError(
                    f"{path}:{lineno}: rating {fields[rcol]!r} is not a number"
                ) from exc
            if value < scale.min or value > scale.max:
                raise DataError(
                    f"{path}:{lineno}: rating {value} outside scale "
                    f"[{scale.min}, {scale.max}]"
                )
            out.append(RawRating(fields[ucol].strip(), fields[icol].strip(), value))
    return out


def select_subset(
    ratings: list[RawRating],
    n_users: int,
    n_items: int,
    min_user_ratings: int = 0,
    min_item_ratings: int = 0,
    seed: int = 0,
) -> list[RawRating]:
    """Restrict ratings to a seeded random sample of qualifying users and items.

    A user qualifies with strictly more than ``min_user_ratings`` ratings
    (items analogously), so a threshold of 16 keeps users that rated at
    least 17 items.  Candidates are ordered by first appearance, so the
    same (input, seed) pair always yields the same subset.
    """
    if min_user_ratings < 0 or min_item_ratings < 0:
        raise DataError("rating-count thresholds must be >= 0")
    user_counts: dict[str, int] = {}
    item_counts: dict[str, int] = {}
    for r in ratings:
        user_counts[r.user_id] = user_counts.get(r.user_id, 0) + 1
        item_counts[r.item_id] = item_counts.get(r.item_id, 0) + 1
    users = [u for u, c in user_counts.items() if c > min_user_ratings]
    items = [i for i, c in item_counts.items() if c > min_item_ratings]
    if len(users) < n_users:
        raise DataError(
            f"requested {n_users} users but only {len(users)} have more than "
            f"{min_user_ratings} ratings"
        )
    if len(items) < n_items:
        raise DataError(
            f"requested {n_items} items but only {len(items)} have more than "
            f"{min_item_ratings} ratings"
        )
    rng = np.random.default_rng(seed)
    keep_users = set(np.array(users, dtype=object)[rng.choice(len(users), n_users, replace=False)])
    keep_items = set(np.array(items, dtype=object)[rng.choice(len(items), n_items, replace=False)])
    return [r for r in ratings if r.user_id in keep_users and r.item_id in keep_items]


@dataclass
class CrossDomainDataset:
    """Indexed rating pools for Z domains plus derived pooled views.

    ``users[z]``, ``items[z]`` and ``ratings[z]`` are parallel arrays of
    dense per-domain indices and levels 1..R.  ``n_users[z]`` / ``n_items[z]``
    give the index-space sizes; ID maps translate back to the raw strings.
    """

    n_levels: int
    users: list[np.ndarray]
    items: list[np.ndarray]
    ratings: list[np.ndarray]
    n_users: list[int]
    n_items: list[int]
    user_ids: list[list[str]]
    item_ids: list[list[str]]
    user_offsets: np.ndarray = field(init=False)
    item_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.user_offsets = np.concatenate(([0], np.cumsum(self.n_users)))
        self.item_offsets = np.concatenate(([0], np.cumsum(self.n_items)))
        for z in range(self.n_domains):
            s = len(self.users[z])
            if len(self.items[z]) != s or len(self.ratings[z]) != s:
                raise DataError(f"domain {z}: ragged triple arrays")

    @property
    def n_domains(self) -> int:
        return len(self.users)

    @property
    def n_ratings(self) -> list[int]:
        return [len(u) for u in self.users]

    @property
    def total_users(self) -> int:
        return int(self.user_offsets[-1])

    @property
    def total_items(self) -> int:
        return int(self.item_offsets[-1])

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated (global user, global item, level) arrays over all domains."""
        gu = np.concatenate(
            [self.users[z] + self.user_offsets[z] for z in range(self.n_domains)]
        )
        gv = np.concatenate(
            [self.items[z] + self.item_offsets[z] for z in range(self.n_domains)]
        )
        r = np.concatenate(self.ratings)
        return gu, gv, r

    def triples(self) -> list[RatingTriple]:
        out = []
        for z in range(self.n_domains):
            out.extend(
                RatingTriple(z, int(u), int(v), int(r))
                for u, v, r in zip(self.users[z], self.items[z], self.ratings[z])
            )
        return out

    def domain_view(self, domain: int) -> "CrossDomainDataset":
        """Single-domain dataset sharing this one's index space for that domain."""
        self._check_domain(domain)
        z = domain
        return CrossDomainDataset(
            n_levels=self.n_levels,
            users=[self.users[z].copy()],
            items=[self.items[z].copy()],
            ratings=[self.ratings[z].copy()],
            n_users=[self.n_users[z]],
            n_items=[self.n_items[z]],
            user_ids=[list(self.user_ids[z])],
            item_ids=[list(self.item_ids[z])],
        )

    def restrict(self, triples: list[RatingTriple]) -> "CrossDomainDataset":
        """Dataset containing only ``triples`` but keeping the full index space.

        Used to train on a split's train pool while preserving user/item
        identities for later evaluation.
        """
        per_domain: list[list[RatingTriple]] = [[] for _ in range(self.n_domains)]
        for t in triples:
            self._check_domain(t.domain)
            per_domain[t.domain].append(t)
        return CrossDomainDataset(
            n_levels=self.n_levels,
            users=[np.array([t.user for t in ts], dtype=np.int64) for ts in per_domain],
            items=[np.array([t.item for t in ts], dtype=np.int64) for ts in per_domain],
            ratings=[np.array([t.rating for t in ts], dtype=np.int64) for ts in per_domain],
            n_users=list(self.n_users),
            n_items=list(self.n_items),
            user_ids=[list(ids) for ids in self.user_ids],
            item_ids=[list(ids) for ids in self.item_ids],
        )

    def _check_domain(self, domain: int) -> None:
        if not 0 <= domain < self.n_domains:
            raise DataError(f"domain {domain} out of range [0, {self.n_domains})")

    @classmethod
    def from_indexed(
        cls,
        n_levels: int,
        triples: list[RatingTriple],
        n_users: list[int],
        n_items: list[int],
    ) -> "CrossDomainDataset":
        """Build a dataset from already-dense triples with declared index sizes."""
        n_dom = len(n_users)
        per_u: list[list[int]] = [[] for _ in range(n_dom)]
        per_v: list[list[int]] = [[] for _ in range(n_dom)]
        per_r: list[list[int]] = [[] for _ in range(n_dom)]
        for t in triples:
            if not 0 <= t.domain < n_dom:
                raise DataError(f"domain {t.domain} out of range")
            if not (0 <= t.user < n_users[t.domain] and 0 <= t.item < n_items[t.domain]):
                raise DataError(f"triple {t} outside declared index space")
            if not 1 <= t.rating <= n_levels:
                raise DataError(f"rating level {t.rating} outside 1..{n_levels}")
            per_u[t.domain].append(t.user)
            per_v[t.domain].append(t.item)
            per_r[t.domain].append(t.rating)
        return cls(
            n_levels=n_levels,
            users=[np.array(u, dtype=np.int64) for u in per_u],
            items=[np.array(v, dtype=np.int64) for v in per_v],
            ratings=[np.array(r, dtype=np.int64) for r in per_r],
            n_users=list(n_users),
            n_items=list(n_items),
            user_ids=[[str(i) for i in range(m)] for m in n_users],
            item_ids=[[str(i) for i in range(n)] for n in n_items],
        )


def build_dataset(
    per_domain: list[tuple[list[RawRating], ScaleSpec]],
) -> CrossDomainDataset:
    """Index raw ratings into a cross-domain dataset.

    Dense indices follow first appearance within each domain; duplicate
    (domain, user, item) keys keep the last value seen (a revised rating
    replaces the earlier one).  All domains must target the same number of
    levels.
    """
    if not per_domain:
        raise DataError("at least one domain is required")
    levels = {scale.target_levels for _, scale in per_domain}
    if len(levels) != 1:
        raise DataError(f"domains disagree on target_levels: {sorted(levels)}")
    n_levels = levels.pop()

    users, items, ratings = [], [], []
    m_z, n_z, user_ids, item_ids = [], [], [], []
    for z, (raw, scale) in enumerate(per_domain):
        if not raw:
            raise DataError(f"domain {z} has no ratings")
        uid_map: dict[str, int] = {}
        iid_map: dict[str, int] = {}
        cells: dict[tuple[int, int], int] = {}
        for r in raw:
            u = uid_map.setdefault(r.user_id, len(uid_map))
            v = iid_map.setdefault(r.item_id, len(iid_map))
            cells[(u, v)] = normalize_scale(r.value, scale)
        keys = np.array(list(cells.keys()), dtype=np.int64)
        users.append(keys[:, 0])
        items.append(keys[:, 1])
        ratings.append(np.array(list(cells.values()), dtype=np.int64))
        m_z.append(len(uid_map))
        n_z.append(len(iid_map))
        user_ids.append(list(uid_map))
        item_ids.append(list(iid_map))
    return CrossDomainDataset(
        n_levels=n_levels,
        users=users,
        items=items,
        ratings=ratings,
        n_users=m_z,
        n_items=n_z,
        user_ids=user_ids,
        item_ids=item_ids,
    )


@dataclass
class GivenNSplit:
    """Train/evaluation partition of one domain under the Given-N protocol."""

    train_pool: list[RatingTriple]
    eval_set: list[RatingTriple]
    n_given: int
    seed: int


def given_n_split(
    dataset: CrossDomainDataset,
    domain: int,
    n_train_users: int,
    n_given: int,
    seed: int,
) -> GivenNSplit:
    """Split one domain: the first ``n_train_users`` users contribute everything,
    each remaining (test) user contributes a random sample of ``n_given``
    ratings to the train pool and the rest to the evaluation set.
    """
    dataset._check_domain(domain)
    m = dataset.n_users[domain]
    if not 0 <= n_train_users < m:
        raise DataError(f"n_train_users must be in [0, {m}), got {n_train_users}")
    if n_given < 0:
        raise DataError("n_given must be >= 0")
    z = domain
    by_user: dict[int, list[RatingTriple]] = {}
    for u, v, r in zip(dataset.users[z], dataset.items[z], dataset.ratings[z]):
        by_user.setdefault(int(u), []).append(RatingTriple(z, int(u), int(v), int(r)))

    rng = np.random.default_rng(seed)
    train, evaluation = [], []
    for u in sorted(by_user):
        rows = by_user[u]
        if u < n_train_users:
            train.extend(rows)
            continue
        k = min(n_given, len(rows))
        chosen = set(rng.choice(len(rows), size=k, replace=False).tolist())
        for idx, t in enumerate(rows):
            (train if idx in chosen else evaluation).append(t)
    return GivenNSplit(train_pool=train, eval_set=evaluation, n_given=n_given, seed=seed)


DATASET_FORMAT = "pclf-dataset-v1"


def save_dataset(dataset: CrossDomainDataset, directory: str) -> None:
    """Write the canonical dump: ratings.csv plus manifest.json with counts and ID maps."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "ratings.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["domain", "user_idx", "item_idx", "rating"])
        for t in dataset.triples():
            writer.writerow([t.domain, t.user, t.item, t.rating])
    manifest = {
        "format": DATASET_FORMAT,
        "n_domains": dataset.n_domains,
        "n_levels": dataset.n_levels,
        "n_users": list(dataset.n_users),
        "n_items": list(dataset.n_items),
        "n_ratings": dataset.n_ratings,
        "user_ids": dataset.user_ids,
        "item_ids": dataset.item_ids,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_dataset(directory: str) -> CrossDomainDataset:
    manifest_path = os.path.join(directory, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read dataset manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != DATASET_FORMAT:
        raise DataError(
            f"unsupported dataset format {manifest.get('format')!r}, "
            f"expected {DATASET_FORMAT!r}"
        )
    triples = []
    with open(os.path.join(directory, "ratings.csv"), "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["domain", "user_idx", "item_idx", "rating"]:
            raise DataError(f"unexpected ratings.csv header: {header}")
        for row in reader:
            z, u, v, r = (int(x) for x in row)
            triples.append(RatingTriple(z, u, v, r))
    ds = CrossDomainDataset.from_indexed(
        n_levels=manifest["n_levels"],
        triples=triples,
        n_users=manifest["n_users"],
        n_items=manifest["n_items"],
    )
    ds.user_ids = manifest["user_ids"]
    ds.item_ids = manifest["item_ids"]
    return ds
