"""Cross-subject pair construction for translator pretraining.

Three strategies: uniform random, cosine (nearest well-classified feature
from another subject), and landmark (subject-level geometry score from a
Procrustes residual plus a pose term, under gender/age constraints).

Procrustes convention: the content shape A is the reference. Both shapes
are centered and scaled to unit Frobenius norm, B is rotated (proper
rotation only) and uniformly scaled onto A, and the residual is the
remaining sum of squares in A's normalized scale, so 0 means the shapes
are similar and the value is symmetric under swapping A and B.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .losses import per_sample_cross_entropy
from .models import Classifier, FeatureExtractor
from .numerics import Tensor
from .synthdata import Sample, SubjectProfile

__all__ = [
    "Pair",
    "PairingConfig",
    "pair_random",
    "pair_cosine",
    "pair_landmark",
    "procrustes_residual",
    "build_pairs",
    "export_pairs_csv",
]


@dataclass
class Pair:
    """content provides the expression (and label); identity provides the style target."""

    content: Sample
    identity: Sample
    score: float | None = None

    def __post_init__(self):
        if self.content.subject_id == self.identity.subject_id:
            raise ValueError("pair must be cross-subject")


@dataclass
class PairingConfig:
    strategy: str = "random"
    pose_weight: float = 1.0
    landmark_weight: float = 1.0
    max_age_gap: int = 10
    same_gender_required: bool = True
    well_classified_threshold: float = 0.1

    def __post_init__(self):
        if self.strategy not in ("random", "cosine", "landmark"):
            raise ValueError(f"unknown pairing strategy {self.strategy!r}")
        if self.pose_weight < 0 or self.landmark_weight < 0:
            raise ValueError("pairing weights must be non-negative")


def _group_by_subject(samples: list[Sample]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault(s.subject_id, []).append(i)
    return groups


def pair_random(samples: list[Sample], rng: np.random.Generator) -> list[Pair]:
    """Uniform cross-subject identity for every content sample."""
    groups = _group_by_subject(samples)
    if len(groups) < 2:
        raise ValueError("random pairing needs at least two subjects")
    others = {sid: np.array([i for i, s in enumerate(samples) if s.subject_id != sid])
              for sid in groups}
    pairs = []
    for content in samples:
        idx = int(rng.choice(others[content.subject_id]))
        pairs.append(Pair(content=content, identity=samples[idx]))
    return pairs


def _extract_features(samples: list[Sample], extractor: FeatureExtractor,
                      classifier: Classifier) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.x for s in samples])
    labels = np.array([s.label for s in samples], dtype=int)
    feats = extractor.extract(Tensor(x)).final.data
    logits = classifier(Tensor(feats)).data
    return feats, per_sample_cross_entropy(logits, labels)


def pair_cosine(samples: list[Sample], extractor: FeatureExtractor, classifier: Classifier,
                cfg: PairingConfig, rng: np.random.Generator) -> list[Pair]:
    """Nearest well-classified cross-subject feature by cosine distance.

    Candidates are samples whose per-sample CE is at most the configured
    threshold; ties resolve to the lowest sample index. An empty candidate
    pool falls back to random pairing with a warning.
    """
    groups = _group_by_subject(samples)
    if len(groups) < 2:
        raise ValueError("cosine pairing needs at least two subjects")
    feats, ce = _extract_features(samples, extractor, classifier)
    pool = np.flatnonzero(ce <= cfg.well_classified_threshold)
    if pool.size == 0:
        warnings.warn("cosine pairing: no well-classified candidates, falling back to random",
                      RuntimeWarning)
        return pair_random(samples, rng)

    norms = np.linalg.norm(feats, axis=1)
    unit = feats / np.maximum(norms, 1e-12)[:, None]
    pool_sids = np.array([samples[i].subject_id for i in pool])
    pairs = []
    warned_empty = False
    for i, content in enumerate(samples):
        eligible = pool[pool_sids != content.subject_id]
        if eligible.size == 0:
            if not warned_empty:
                warnings.warn("cosine pairing: no cross-subject candidate for some samples, "
                              "using random identities for those", RuntimeWarning)
                warned_empty = True
            others = np.flatnonzero(
                np.array([s.subject_id for s in samples]) != content.subject_id)
            j = int(rng.choice(others))
            pairs.append(Pair(content=content, identity=samples[j]))
            continue
        dist = 1.0 - unit[eligible] @ unit[i]
        j = int(eligible[int(np.argmin(dist))])
        pairs.append(Pair(content=content, identity=samples[j], score=float(dist.min())))
    return pairs


def procrustes_residual(a: np.ndarray, b: np.ndarray) -> float:
    """Minimal sum of squares after optimal translation/scale/rotation of b onto a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 2 or a.shape[0] < 2:
        raise ValueError(f"procrustes: need matching (K>=2, 2) point sets, got {a.shape} vs {b.shape}")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    na = np.linalg.norm(ac)
    nb = np.linalg.norm(bc)
    if na < 1e-12 or nb < 1e-12:
        raise ValueError("procrustes: degenerate zero-spread shape")
    ac /= na
    bc /= nb
    m = bc.T @ ac
    u, s, vt = np.linalg.svd(m)
    # proper rotation only: flip the smaller singular direction if needed
    corr = s[0] + s[1] * np.sign(np.linalg.det(u @ vt))
    return float(max(0.0, 1.0 - corr * corr))


def _pose_term(pose_a: np.ndarray, pose_b: np.ndarray) -> float:
    return float(1.0 - np.dot(pose_a, pose_b))


def landmark_score(a: SubjectProfile, b: SubjectProfile, cfg: PairingConfig) -> float:
    return (cfg.landmark_weight * procrustes_residual(a.landmarks, b.landmarks)
            + cfg.pose_weight * _pose_term(a.pose, b.pose))


def _eligible_subjects(content: SubjectProfile, candidates: list[SubjectProfile],
                       cfg: PairingConfig) -> list[SubjectProfile]:
    """Apply gender/age constraints, relaxing age first and then gender if empty."""
    others = [p for p in candidates if p.subject_id != content.subject_id]
    full = [p for p in others
            if (not cfg.same_gender_required or p.gender == content.gender)
            and abs(p.age - content.age) <= cfg.max_age_gap]
    if full:
        return full
    no_age = [p for p in others
              if not cfg.same_gender_required or p.gender == content.gender]
    if no_age:
        warnings.warn(f"landmark pairing: relaxed age constraint for subject {content.subject_id}",
                      RuntimeWarning)
        return no_age
    warnings.warn(f"landmark pairing: relaxed gender constraint for subject {content.subject_id}",
                  RuntimeWarning)
    return others


def pair_landmark(samples: list[Sample], profiles: dict[int, SubjectProfile],
                  cfg: PairingConfig, rng: np.random.Generator) -> list[Pair]:
    """Geometry-matched identity subject per content subject, uniform sample within it."""
    groups = _group_by_subject(samples)
    if len(groups) < 2:
        raise ValueError("landmark pairing needs at least two subjects")
    missing = [sid for sid in groups if sid not in profiles]
    if missing:
        raise ValueError(f"landmark pairing: profiles missing for subjects {missing}")
    subject_profiles = [profiles[sid] for sid in sorted(groups)]

    best: dict[int, tuple[int, float]] = {}
    for sid in sorted(groups):
        content_profile = profiles[sid]
        eligible = _eligible_subjects(content_profile, subject_profiles, cfg)
        scored = [(landmark_score(content_profile, p, cfg), p.subject_id) for p in eligible]
        score, choice = min(scored)
        best[sid] = (choice, score)

    pairs = []
    for content in samples:
        choice, score = best[content.subject_id]
        idx = int(rng.choice(groups[choice]))
        pairs.append(Pair(content=content, identity=samples[idx], score=score))
    return pairs


def build_pairs(strategy: str, samples: list[Sample], rng: np.random.Generator,
                extractor: FeatureExtractor | None = None,
                classifier: Classifier | None = None,
                profiles: dict[int, SubjectProfile] | None = None,
                cfg: PairingConfig | None = None) -> list[Pair]:
    """Strategy dispatch used by the pipeline."""
    cfg = cfg or PairingConfig(strategy=strategy)
    if strategy == "random":
        return pair_random(samples, rng)
    if strategy == "cosine":
        if extractor is None or classifier is None:
            raise ValueError("cosine pairing needs the trained extractor and classifier")
        return pair_cosine(samples, extractor, classifier, cfg, rng)
    if strategy == "landmark":
        if profiles is None:
            raise ValueError("landmark pairing needs subject profiles")
        return pair_landmark(samples, profiles, cfg, rng)
    raise ValueError(f"unknown pairing strategy {strategy!r}")


def export_pairs_csv(pairs: list[Pair], path) -> None:
    """Audit listing: content frame, identity frame, selection score (blank for random)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["content_frame_id", "identity_frame_id", "score"])
        for p in pairs:
            writer.writerow([p.content.frame_id, p.identity.frame_id,
                             "" if p.score is None else repr(p.score)])
