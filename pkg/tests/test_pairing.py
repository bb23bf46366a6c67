"""Pairing strategies: hard invariants, brute-force equivalence, Procrustes oracle."""

import numpy as np
import pytest

from pft.models import Classifier, FeatureExtractor
from pft.pairing import (Pair, PairingConfig, export_pairs_csv, landmark_score, pair_cosine,
                         pair_landmark, pair_random, procrustes_residual)
from pft.synthdata import Sample, SubjectProfile

from _oracles import procrustes_grid, procrustes_grid_explicit


def make_samples(features_by_subject):
    """Samples whose x IS the feature vector (paired with a passthrough extractor)."""
    samples = []
    fid = 0
    for sid, rows in features_by_subject.items():
        for row in rows:
            samples.append(Sample(x=np.asarray(row, dtype=float), label=0,
                                  subject_id=sid, frame_id=fid))
            fid += 1
    return samples


def passthrough_models(dim, logit_map=None):
    """Extractor that reproduces non-negative inputs exactly; crafted classifier."""
    ext = FeatureExtractor(dim, dim, hidden_dim=dim, n_blocks=2, rng=np.random.default_rng(0))
    for block in ext.blocks:
        block.weight.data[...] = np.eye(dim)
        block.bias.data[...] = 0.0
    cls = Classifier(dim, 2, rng=np.random.default_rng(0))
    cls.head.weight.data[...] = logit_map if logit_map is not None else 0.0
    cls.head.bias.data[...] = 0.0
    return ext, cls


def profile_with(sid, landmarks=None, pose=None, age=30, gender=0):
    base = np.stack([np.linspace(0, 1, 10), np.linspace(1, 0, 10)], axis=1)
    pose = np.asarray(pose if pose is not None else [0.0, 0.0, 1.0], dtype=float)
    return SubjectProfile(
        subject_id=sid,
        style_gain=np.ones(2),
        style_offset=np.zeros(2),
        mixing=np.eye(2),
        landmarks=np.asarray(landmarks) if landmarks is not None else base,
        pose=pose / np.linalg.norm(pose),
        age=age,
        gender=gender,
    )


# ---------------------------------------------------------------------------
# random pairing
# ---------------------------------------------------------------------------


def test_random_two_subjects_forced_cross():
    samples = make_samples({0: [[1, 0]] * 5, 1: [[0, 1]] * 5})
    pairs = pair_random(samples, np.random.default_rng(0))
    assert len(pairs) == len(samples)
    for p in pairs:
        assert p.identity.subject_id != p.content.subject_id


def test_random_reproducible():
    samples = make_samples({0: [[1, 0]] * 4, 1: [[0, 1]] * 4, 2: [[1, 1]] * 4})
    a = pair_random(samples, np.random.default_rng(3))
    b = pair_random(samples, np.random.default_rng(3))
    assert [(p.content.frame_id, p.identity.frame_id) for p in a] == \
           [(p.content.frame_id, p.identity.frame_id) for p in b]


def test_random_single_subject_error():
    samples = make_samples({0: [[1, 0]] * 3})
    with pytest.raises(ValueError, match="two subjects"):
        pair_random(samples, np.random.default_rng(0))


def test_cross_subject_invariant_enforced():
    s0 = Sample(x=np.zeros(2), label=0, subject_id=1, frame_id=0)
    s1 = Sample(x=np.zeros(2), label=0, subject_id=1, frame_id=1)
    with pytest.raises(ValueError, match="cross-subject"):
        Pair(content=s0, identity=s1)


# ---------------------------------------------------------------------------
# cosine pairing
# ---------------------------------------------------------------------------


def test_cosine_distance_extremes():
    # identical direction -> distance 0; orthogonal -> 1; chosen via the pairing itself
    logit_map = np.array([[5.0, -5.0], [5.0, -5.0], [5.0, -5.0]]).T.copy().T  # strong class-0
    samples = make_samples({
        0: [[1.0, 0.0, 0.0]],
        1: [[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]],
    })
    ext, cls = passthrough_models(3, logit_map=np.full((3, 2), 0.0))
    cls.head.weight.data[...] = np.array([[9.0, -9.0]] * 3)  # every sample well-classified as 0
    cfg = PairingConfig(strategy="cosine", well_classified_threshold=0.5)
    pairs = pair_cosine(samples, ext, cls, cfg, np.random.default_rng(0))
    chosen = {p.content.frame_id: p for p in pairs}
    assert chosen[0].identity.frame_id == 1      # parallel vector, distance 0
    assert chosen[0].score == pytest.approx(0.0, abs=1e-12)
    orth = 1.0 - 0.0
    assert chosen[2].score == pytest.approx(orth, abs=1e-12)  # orthogonal best available


def test_cosine_matches_brute_force():
    rng = np.random.default_rng(11)
    features = {sid: rng.uniform(0.1, 1.0, size=(4, 5)).tolist() for sid in range(3)}
    samples = make_samples(features)
    ext, cls = passthrough_models(5)
    cls.head.weight.data[...] = rng.normal(size=(5, 2))
    cfg = PairingConfig(strategy="cosine", well_classified_threshold=10.0)  # everyone qualifies
    pairs = pair_cosine(samples, ext, cls, cfg, np.random.default_rng(0))

    # brute force over all cross-subject candidates
    x = np.stack([s.x for s in samples])
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    for p, content in zip(pairs, samples):
        dists = [(1.0 - float(unit[i] @ unit[content.frame_id]), i)
                 for i, s in enumerate(samples) if s.subject_id != content.subject_id]
        best = min(dists)
        assert p.identity.frame_id == best[1]
        assert p.score == pytest.approx(best[0], abs=1e-12)


def test_cosine_empty_pool_falls_back_with_warning():
    samples = make_samples({0: [[1.0, 0.0]] * 2, 1: [[0.0, 1.0]] * 2})
    ext, cls = passthrough_models(2)
    cls.head.weight.data[...] = 0.0  # uniform predictions: CE = ln 2 > threshold
    cfg = PairingConfig(strategy="cosine", well_classified_threshold=0.01)
    with pytest.warns(RuntimeWarning, match="falling back to random"):
        pairs = pair_cosine(samples, ext, cls, cfg, np.random.default_rng(0))
    assert len(pairs) == len(samples)
    assert all(p.content.subject_id != p.identity.subject_id for p in pairs)


# ---------------------------------------------------------------------------
# Procrustes
# ---------------------------------------------------------------------------


def test_procrustes_similarity_invariance(rng):
    a = rng.normal(size=(10, 2))
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    b = 2.5 * a @ rot.T + np.array([3.0, -1.0])
    assert procrustes_residual(a, b) <= 1e-10


def test_procrustes_displaced_square_matches_grid():
    a = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    b = a.copy()
    b[2] += np.array([0.1, 0.0])
    closed = procrustes_residual(a, b)
    assert closed == pytest.approx(procrustes_grid(a, b), abs=1e-6)
    assert closed == pytest.approx(procrustes_grid_explicit(a, b), abs=1e-6)
    assert closed > 0.0


def test_procrustes_symmetric(rng):
    for _ in range(20):
        a = rng.normal(size=(7, 2))
        b = rng.normal(size=(7, 2))
        assert procrustes_residual(a, b) == pytest.approx(procrustes_residual(b, a), abs=1e-12)


def test_procrustes_degenerate():
    a = np.zeros((5, 2))
    b = np.random.default_rng(0).normal(size=(5, 2))
    with pytest.raises(ValueError, match="degenerate"):
        procrustes_residual(a, b)


def test_procrustes_50_random_pairs_vs_grid(rng):
    for _ in range(50):
        k = int(rng.integers(3, 12))
        a = rng.normal(size=(k, 2))
        b = rng.normal(size=(k, 2))
        assert procrustes_residual(a, b) == pytest.approx(procrustes_grid(a, b), abs=1e-6)


# ---------------------------------------------------------------------------
# landmark pairing
# ---------------------------------------------------------------------------


def test_landmark_age_gap_excludes():
    # the geometric twin is 15 years older, so the constraint must reject it
    twin = profile_with(1, age=45)
    other = profile_with(2, landmarks=np.random.default_rng(0).normal(size=(10, 2)), age=32)
    profiles = {0: profile_with(0, age=30), 1: twin, 2: other}
    samples = make_samples({0: [[1, 0]] * 2, 1: [[0, 1]] * 2, 2: [[1, 1]] * 2})
    cfg = PairingConfig(strategy="landmark")
    pairs = pair_landmark(samples, profiles, cfg, np.random.default_rng(0))
    for p in pairs:
        if p.content.subject_id == 0:
            assert p.identity.subject_id == 2


def test_landmark_identical_geometry_wins():
    profiles = {
        0: profile_with(0),
        1: profile_with(1),  # identical landmarks and pose: score 0
        2: profile_with(2, landmarks=np.random.default_rng(1).normal(size=(10, 2)),
                        pose=[0.3, 0.2, 1.0]),
    }
    samples = make_samples({0: [[1, 0]] * 3, 1: [[0, 1]] * 3, 2: [[1, 1]] * 3})
    cfg = PairingConfig(strategy="landmark")
    pairs = pair_landmark(samples, profiles, cfg, np.random.default_rng(0))
    for p in pairs:
        if p.content.subject_id == 0:
            assert p.identity.subject_id == 1
            assert p.score == pytest.approx(0.0, abs=1e-12)


def test_landmark_matches_exhaustive_enumeration():
    rng = np.random.default_rng(21)
    profiles = {}
    for sid in range(4):
        profiles[sid] = profile_with(
            sid, landmarks=rng.normal(size=(10, 2)),
            pose=rng.normal(size=3) + np.array([0, 0, 3.0]),
            age=int(rng.integers(25, 40)), gender=int(rng.integers(0, 2)))
    samples = make_samples({sid: rng.uniform(0, 1, size=(3, 2)).tolist() for sid in range(4)})
    cfg = PairingConfig(strategy="landmark")
    pairs = pair_landmark(samples, profiles, cfg, np.random.default_rng(5))

    for p in pairs:
        content = profiles[p.content.subject_id]
        eligible = [q for q in profiles.values()
                    if q.subject_id != content.subject_id
                    and q.gender == content.gender and abs(q.age - content.age) <= 10]
        if not eligible:
            eligible = [q for q in profiles.values()
                        if q.subject_id != content.subject_id and q.gender == content.gender]
        if not eligible:
            eligible = [q for q in profiles.values() if q.subject_id != content.subject_id]
        best = min((landmark_score(content, q, cfg), q.subject_id) for q in eligible)
        assert p.identity.subject_id == best[1]
        assert p.score == pytest.approx(best[0], abs=1e-12)


def test_landmark_relaxation_order_warns():
    profiles = {
        0: profile_with(0, age=30, gender=0),
        1: profile_with(1, age=60, gender=0),   # same gender, too old
        2: profile_with(2, age=31, gender=1),   # right age, other gender
    }
    samples = make_samples({0: [[1, 0]], 1: [[0, 1]], 2: [[1, 1]]})
    cfg = PairingConfig(strategy="landmark")
    with pytest.warns(RuntimeWarning, match="relaxed age constraint"):
        pairs = pair_landmark(samples, profiles, cfg, np.random.default_rng(0))
    chosen = {p.content.frame_id: p.identity.subject_id for p in pairs}
    assert chosen[0] == 1  # age relaxed first, gender still enforced

    lonely = {0: profile_with(0, gender=0), 1: profile_with(1, gender=1, age=60)}
    samples2 = make_samples({0: [[1, 0]], 1: [[0, 1]]})
    with pytest.warns(RuntimeWarning, match="relaxed gender constraint"):
        pair_landmark(samples2, lonely, cfg, np.random.default_rng(0))


def test_pose_term_in_range(rng):
    for _ in range(100):
        a = rng.normal(size=3)
        b = rng.normal(size=3)
        pa = profile_with(0, pose=a)
        pb = profile_with(1, pose=b)
        cfg = PairingConfig(strategy="landmark", landmark_weight=0.0)
        score = landmark_score(pa, pb, cfg)
        assert 0.0 <= score <= 2.0


def test_pairs_csv_export(tmp_path):
    samples = make_samples({0: [[1, 0]] * 2, 1: [[0, 1]] * 2})
    pairs = pair_random(samples, np.random.default_rng(0))
    path = tmp_path / "pairs.csv"
    export_pairs_csv(pairs, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "content_frame_id,identity_frame_id,score"
    assert len(lines) == 1 + len(pairs)
