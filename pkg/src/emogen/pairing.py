"""Emotionally paired image/MIDI dataset construction.

Valence-Arousal annotations are normalized onto [1, 9], each MIDI is
matched to its most emotionally similar image (reciprocal Euclidean
distance in VA space, image reuse allowed), and the resulting pairs are
split deterministically under a seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import (CatalogError, CountMismatch, DegenerateRange,
                     EmptyCatalog, OutOfRange)

VA_MIN, VA_MAX = 1.0, 9.0

#: Similarity reported for coincident VA points (the reciprocal-distance
#: formula is singular there); orders above every finite score.
MAX_SIMILARITY = math.inf


@dataclass(frozen=True)
class VaPoint:
    valence: float
    arousal: float

    def __post_init__(self):
        for name, value in (("valence", self.valence), ("arousal", self.arousal)):
            if not VA_MIN <= value <= VA_MAX:
                raise OutOfRange(f"{name} {value} outside [{VA_MIN}, {VA_MAX}]")


@dataclass(frozen=True)
class TaggedItem:
    id: str
    kind: str  # "image" | "midi"
    va: VaPoint
    payload_path: str


@dataclass
class PairManifest:
    pairs: list[dict] = field(default_factory=list)  # midi_id, image_id, similarity, split
    seed: int = 0
    config_hash: str = ""

    def split_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for pair in self.pairs:
            tag = pair.get("split", "")
            counts[tag] = counts.get(tag, 0) + 1
        return counts


def normalize_va(value: float, source_min: float, source_max: float) -> float:
    """Affine map of `value` from [source_min, source_max] onto [1, 9]."""
    if source_max <= source_min:
        raise DegenerateRange(f"source range [{source_min}, {source_max}] has no width")
    if not source_min <= value <= source_max:
        raise OutOfRange(f"value {value} outside [{source_min}, {source_max}]")
    return VA_MIN + (VA_MAX - VA_MIN) * (value - source_min) / (source_max - source_min)


def similarity(x: VaPoint, y: VaPoint) -> float:
    """Reciprocal Euclidean distance in VA space; inf for identical points."""
    d2 = (x.valence - y.valence) ** 2 + (x.arousal - y.arousal) ** 2
    if d2 == 0.0:
        return MAX_SIMILARITY
    return d2 ** -0.5


def pair_datasets(midis: Sequence[TaggedItem], images: Sequence[TaggedItem]) -> PairManifest:
    """Match each MIDI (ascending id order) to its most similar image.

    Ties break on ascending image id; images may be reused. Comparison uses
    squared distance, so the zero-distance singularity is never divided by.
    """
    if not midis or not images:
        raise EmptyCatalog("both catalogs must be non-empty")
    images_sorted = sorted(images, key=lambda it: it.id)
    manifest = PairManifest()
    for midi in sorted(midis, key=lambda it: it.id):
        best = min(images_sorted,
                   key=lambda img: ((midi.va.valence - img.va.valence) ** 2
                                    + (midi.va.arousal - img.va.arousal) ** 2,
                                    img.id))
        manifest.pairs.append({"midi_id": midi.id, "image_id": best.id,
                               "similarity": similarity(midi.va, best.va)})
    return manifest


def split(manifest: PairManifest, counts: tuple[int, int, int], seed: int) -> PairManifest:
    """Assign train/test/val tags by a seeded shuffle then contiguous slices."""
    train, test, val = counts
    if train + test + val != len(manifest.pairs):
        raise CountMismatch(
            f"split counts {counts} sum to {train + test + val}, "
            f"manifest has {len(manifest.pairs)} pairs")
    order = list(range(len(manifest.pairs)))
    random.Random(seed).shuffle(order)
    tags = ["train"] * train + ["test"] * test + ["val"] * val
    pairs = [dict(p) for p in manifest.pairs]
    for position, index in enumerate(order):
        pairs[index]["split"] = tags[position]
    return PairManifest(pairs=pairs, seed=seed, config_hash=manifest.config_hash)


# --- catalog / manifest files ---

def load_va_dictionary(path: str | Path) -> dict[str, VaPoint]:
    """Emotion-label -> VA mapping from a CSV with columns label,valence,arousal."""
    mapping: dict[str, VaPoint] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"label", "valence", "arousal"} <= set(reader.fieldnames):
            raise CatalogError(f"{path}: expected header label,valence,arousal")
        for row_no, row in enumerate(reader, 2):
            try:
                mapping[row["label"]] = VaPoint(float(row["valence"]), float(row["arousal"]))
            except (ValueError, OutOfRange) as exc:
                raise CatalogError(f"{path}:{row_no}: {exc}") from exc
    return mapping


def load_catalog(path: str | Path, kind: str,
                 dictionary: dict[str, VaPoint] | None = None) -> list[TaggedItem]:
    """Read a catalog CSV: id,path,valence,arousal or id,path,emotion_label."""
    items: list[TaggedItem] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or [])
        if {"id", "path", "valence", "arousal"} <= fields:
            labeled = False
        elif {"id", "path", "emotion_label"} <= fields:
            labeled = True
            if dictionary is None:
                raise CatalogError(f"{path}: emotion_label catalog needs a VA dictionary")
        else:
            raise CatalogError(f"{path}: unrecognized catalog header {sorted(fields)}")
        for row_no, row in enumerate(reader, 2):
            if row["id"] in seen:
                raise CatalogError(f"{path}:{row_no}: duplicate id {row['id']!r}")
            seen.add(row["id"])
            try:
                if labeled:
                    label = row["emotion_label"]
                    if label not in dictionary:
                        raise CatalogError(f"label {label!r} not in dictionary")
                    va = dictionary[label]
                else:
                    va = VaPoint(float(row["valence"]), float(row["arousal"]))
            except (ValueError, OutOfRange) as exc:
                raise CatalogError(f"{path}:{row_no}: {exc}") from exc
            items.append(TaggedItem(id=row["id"], kind=kind, va=va, payload_path=row["path"]))
    return items


def _manifest_payload(manifest: PairManifest) -> dict:
    pairs = []
    for pair in manifest.pairs:
        entry = dict(pair)
        if entry["similarity"] == MAX_SIMILARITY:
            entry["similarity"] = "inf"
        pairs.append(entry)
    return {"format": "emogen-pair-manifest-v1", "seed": manifest.seed,
            "config_hash": manifest.config_hash, "pairs": pairs}


def save_manifest(manifest: PairManifest, path: str | Path) -> None:
    payload = _manifest_payload(manifest)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> PairManifest:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "emogen-pair-manifest-v1":
        raise CatalogError(f"{path}: not a pair manifest")
    pairs = []
    for pair in payload["pairs"]:
        entry = dict(pair)
        if entry["similarity"] == "inf":
            entry["similarity"] = MAX_SIMILARITY
        pairs.append(entry)
    return PairManifest(pairs=pairs, seed=payload.get("seed", 0),
                        config_hash=payload.get("config_hash", ""))


def manifest_bytes(manifest: PairManifest) -> bytes:
    """Canonical serialized form, for determinism checks."""
    return json.dumps(_manifest_payload(manifest), sort_keys=True).encode()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
