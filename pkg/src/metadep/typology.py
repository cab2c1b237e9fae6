"""Binary typological feature tables and transfer-gain correlations.

A table maps each language to binary features; a feature missing from a
language is simply absent from its dict. Similarity between languages is
cosine over the features both define (pairwise-complete); it is None when
no shared feature exists or either restricted vector has zero norm.

The row builders pair per-language transfer gains with similarity,
individual features, and non-projectivity rates, each summarized by a
Spearman rank correlation when enough distinct points exist.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .evaluate import SpearmanResult, spearman


@dataclass
class TypologyTable:
    features: dict  # language -> {feature name: 0 or 1}

    def languages(self) -> list:
        return sorted(self.features)

    def feature_names(self) -> list:
        names = set()
        for feats in self.features.values():
            names.update(feats)
        return sorted(names)


def table_from_rows(rows) -> TypologyTable:
    """rows: iterable of (language, feature, value) with binary values."""
    features = {}
    for lang, feat, value in rows:
        v = int(value)
        if v not in (0, 1):
            raise ValueError(f"feature {feat} for {lang}: value {value} is not binary")
        lang_feats = features.setdefault(lang, {})
        if feat in lang_feats:
            raise ValueError(f"duplicate feature {feat} for language {lang}")
        lang_feats[feat] = v
    return TypologyTable(features=features)


def read_feature_csv(path) -> TypologyTable:
    """CSV with a language,feature,value header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != \
                ["language", "feature", "value"]:
            raise ValueError(f"{path}: expected header language,feature,value")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.append((row[0].strip(), row[1].strip(), int(row[2])))
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: value {row[2]!r} is not a binary integer")
    return table_from_rows(rows)


def cosine_similarity(table: TypologyTable, a: str, b: str):
    """Cosine over shared features; None when undefined."""
    fa = table.features.get(a)
    fb = table.features.get(b)
    if fa is None or fb is None:
        raise KeyError(f"language missing from table: {a if fa is None else b}")
    shared = sorted(set(fa) & set(fb))
    if not shared:
        return None
    dot = sum(fa[f] * fb[f] for f in shared)
    na2 = sum(fa[f] ** 2 for f in shared)
    nb2 = sum(fb[f] ** 2 for f in shared)
    if na2 == 0 or nb2 == 0:
        return None
    # sqrt of the product, not product of sqrts: self-similarity is then
    # an exact 1.0 for the integer vectors this table holds
    return dot / math.sqrt(na2 * nb2)


def mean_similarity(table: TypologyTable, lang: str, reference_langs):
    """Mean of defined pairwise similarities to a reference set."""
    sims = []
    for ref in reference_langs:
        if ref == lang:
            continue
        s = cosine_similarity(table, lang, ref)
        if s is not None:
            sims.append(s)
    if not sims:
        return None
    return sum(sims) / len(sims)


def _maybe_spearman(xs, ys):
    if len(xs) < 3 or len(set(xs)) == 1 or len(set(ys)) == 1:
        return None
    return spearman(xs, ys)


def similarity_gain_rows(table: TypologyTable, gains: dict, reference_langs):
    """Per-language mean similarity to the reference set, next to its gain.

    Returns (rows, SpearmanResult or None); rows are dicts with language,
    similarity, gain. Languages without a defined similarity are skipped.
    """
    rows = []
    for lang in sorted(gains):
        sim = mean_similarity(table, lang, reference_langs)
        if sim is None:
            continue
        rows.append({"language": lang, "similarity": sim, "gain": gains[lang]})
    stat = _maybe_spearman([r["similarity"] for r in rows],
                           [r["gain"] for r in rows])
    return rows, stat


def per_feature_gain_rows(table: TypologyTable, gains: dict, min_langs: int = 3):
    """Spearman between each feature's presence and the gain across languages.

    A feature is skipped when defined for fewer than min_langs of the gain
    languages or when its values (or the gains) are constant there.
    """
    rows = []
    langs = [l for l in sorted(gains) if l in table.features]
    for feat in table.feature_names():
        xs, ys = [], []
        for lang in langs:
            if feat in table.features[lang]:
                xs.append(table.features[lang][feat])
                ys.append(gains[lang])
        if len(xs) < min_langs:
            continue
        stat = _maybe_spearman(xs, ys)
        if stat is None:
            continue
        rows.append({"feature": feat, "rho": stat.rho, "p": stat.p, "n": stat.n})
    rows.sort(key=lambda r: -abs(r["rho"]))
    return rows


def projectivity_gain_rows(nonproj_rates: dict, gains: dict):
    """Non-projectivity rate next to gain, with the overall rank correlation."""
    rows = []
    for lang in sorted(gains):
        if lang not in nonproj_rates:
            continue
        rows.append({"language": lang, "nonproj_rate": nonproj_rates[lang],
                     "gain": gains[lang]})
    stat = _maybe_spearman([r["nonproj_rate"] for r in rows],
                           [r["gain"] for r in rows])
    return rows, stat
