"""Synthetic subject-shift benchmark.

Each subject is a style transform over a shared set of class prototypes:

    x = mixing @ (style_gain * (prototype[y] + noise) + style_offset)

with a per-subject positive gain vector, an offset vector and a small-angle
orthonormal rotation. Source subjects draw their style from a base
distribution; target subjects draw from the same family displaced by
shift_severity along a random per-subject sign direction, which
manufactures a measurable, style-shaped domain gap while leaving
within-subject class separability untouched (gain and rotation scale the
noise and the class separation identically).

Subjects also carry generative pairing attributes: a 10-point 2-D landmark
shape (shared template + per-subject similarity transform + jitter), a
near-frontal unit pose vector, age and gender. Everything is deterministic
given (spec, seed); per-subject streams are derived with a splitmix-style
mix of the seed and the subject index, so generation may be parallelized.
"""

from __future__ import annotations

import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SubjectProfile",
    "Sample",
    "DatasetSpec",
    "Dataset",
    "SourceClosedError",
    "derive_seed",
    "make_prototypes",
    "style_basis",
    "make_subject",
    "render_sample",
    "generate_dataset",
    "samples_to_arrays",
]

# Subject style: a low-rank latent z (STYLE_RANK dims, unit normal per subject)
# mapped into input space by a dataset-level basis whose first column is tilted
# into the class-difference direction. The tilt makes style leak into the
# classifier's decision coordinate; the leak stays inside the class margin for
# source subjects (so source training saturates without ever correcting it)
# and crosses the margin for severity-displaced targets (so the frozen model
# degrades there). The leak is a linear function of the visible off-class
# style coordinates, which is exactly what per-channel statistic alignment
# recovers. Targets displace z by severity * DISPLACEMENT_GAIN along a random
# sign vector; severity 0 reproduces the source family bit-for-bit.
STYLE_RANK = 3
STYLE_SCALE = 0.9
STYLE_TILT = 0.5
DISPLACEMENT_GAIN = 2.0
GAIN_LOG_SPREAD = 0.05
GAIN_SHIFT_FRACTION = 0.5
ROTATION_ANGLE_SPREAD = 0.02

# prototype separation as a multiple of the noise scale; the wide margin is
# what lets source training saturate before it learns style invariance
PROTOTYPE_SEPARATION = 10.0

# landmark geometry
LANDMARK_TEMPLATE = np.array([
    [0.20, 0.65], [0.80, 0.65],          # jaw
    [0.30, 0.30], [0.70, 0.30],          # brows
    [0.35, 0.42], [0.65, 0.42],          # eyes
    [0.50, 0.55],                        # nose tip
    [0.40, 0.72], [0.60, 0.72],          # mouth corners
    [0.50, 0.90],                        # chin
])
LANDMARK_COUNT = LANDMARK_TEMPLATE.shape[0]
LANDMARK_SCALE_SPREAD = 0.08
LANDMARK_ROT_SPREAD = 0.08
LANDMARK_SHIFT_SPREAD = 0.05
LANDMARK_JITTER = 0.02
POSE_TILT_SPREAD = 0.15

AGE_RANGE = (18, 65)


class SourceClosedError(RuntimeError):
    """Source data was requested after the source-free boundary."""


def derive_seed(seed: int, *tags) -> int:
    """Mix a base seed with tags (ints or strings) via splitmix64 rounds."""
    z = np.uint64(seed) & np.uint64(0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        for tag in tags:
            t = zlib.crc32(tag.encode()) if isinstance(tag, str) else int(tag)
            z = (z ^ np.uint64(t & 0xFFFFFFFFFFFFFFFF)) + np.uint64(0x9E3779B97F4A7C15)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
    return int(z)


def _rng(seed: int, *tags) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *tags)))


@dataclass
class SubjectProfile:
    """A synthetic identity: style parameters plus pairing attributes."""

    subject_id: int
    style_gain: np.ndarray
    style_offset: np.ndarray
    mixing: np.ndarray
    landmarks: np.ndarray
    pose: np.ndarray
    age: int
    gender: int
    population: str = "source"

    def validate(self) -> None:
        if not np.all(self.style_gain > 0):
            raise ValueError("style_gain must be positive elementwise")
        q = self.mixing
        if np.abs(q.T @ q - np.eye(q.shape[0])).max() >= 1e-10:
            raise ValueError("mixing must be orthonormal")
        if abs(np.linalg.norm(self.pose) - 1.0) > 1e-12:
            raise ValueError("pose must be a unit vector")
        if self.landmarks.shape != (LANDMARK_COUNT, 2):
            raise ValueError(f"landmarks must be ({LANDMARK_COUNT}, 2)")


@dataclass
class Sample:
    x: np.ndarray
    label: int
    subject_id: int
    frame_id: int


@dataclass
class DatasetSpec:
    """Benchmark dimensions and the single severity knob for the domain gap."""

    n_source_subjects: int = 20
    n_target_subjects: int = 5
    n_classes: int = 2
    samples_per_class: int = 100
    input_dim: int = 32
    noise_scale: float = 0.3
    shift_severity: float = 2.0
    seed: int = 0

    def __post_init__(self):
        for name in ("n_source_subjects", "n_target_subjects", "n_classes", "samples_per_class", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.shift_severity < 0:
            raise ValueError("shift_severity must be >= 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


def make_prototypes(spec: DatasetSpec) -> np.ndarray:
    """Fixed class prototypes with pairwise distance >= PROTOTYPE_SEPARATION * noise."""
    rng = _rng(spec.seed, "prototypes")
    protos = rng.normal(0.0, 1.0, size=(spec.n_classes, spec.input_dim))
    if spec.n_classes == 1:
        return protos
    dists = [np.linalg.norm(protos[i] - protos[j])
             for i in range(spec.n_classes) for j in range(i + 1, spec.n_classes)]
    target = max(PROTOTYPE_SEPARATION * spec.noise_scale, 1.0)
    protos *= target / min(dists)
    return protos


def _small_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Product of dim random Givens rotations with small angles; exactly orthonormal."""
    q = np.eye(dim)
    if dim < 2:
        return q
    for _ in range(dim):
        i, j = rng.choice(dim, size=2, replace=False)
        theta = rng.normal(0.0, ROTATION_ANGLE_SPREAD)
        c, s = np.cos(theta), np.sin(theta)
        g = np.eye(dim)
        g[i, i] = c
        g[j, j] = c
        g[i, j] = -s
        g[j, i] = s
        q = g @ q
    return q


def style_basis(spec: DatasetSpec) -> np.ndarray:
    """Dataset-level style directions (input_dim x STYLE_RANK), first column tilted
    into the class-difference direction by STYLE_TILT."""
    protos = make_prototypes(spec)
    if spec.n_classes >= 2:
        diff = protos[1] - protos[0]
        u_class = diff / np.linalg.norm(diff)
    else:
        u_class = np.zeros(spec.input_dim)
        u_class[0] = 1.0
    rv = _rng(spec.seed, "style-basis")
    cols: list[np.ndarray] = []
    for _ in range(STYLE_RANK):
        w = rv.normal(size=spec.input_dim)
        w -= u_class * (u_class @ w)
        for c in cols:
            w -= c * (c @ w)
        w /= np.linalg.norm(w)
        cols.append(w)
    basis = np.stack(cols, axis=1)
    basis[:, 0] = (basis[:, 0] + STYLE_TILT * u_class) / np.sqrt(1.0 + STYLE_TILT**2)
    return basis


def make_subject(spec: DatasetSpec, rng: np.random.Generator, population: str,
                 subject_id: int = 0) -> SubjectProfile:
    """Draw one subject; targets are displaced from the source family by severity."""
    if population not in ("source", "target"):
        raise ValueError(f"population must be source or target, got {population!r}")
    d = spec.input_dim
    basis = style_basis(spec)
    # sign directions are drawn for both populations so that severity 0 makes
    # target draws bitwise identical to source draws under the same stream
    z_dir = rng.choice([-1.0, 1.0], size=STYLE_RANK)
    gain_dir = rng.choice([-1.0, 1.0], size=d)
    shift = spec.shift_severity if population == "target" else 0.0
    z = rng.normal(0.0, 1.0, size=STYLE_RANK) + shift * DISPLACEMENT_GAIN * z_dir
    offset = STYLE_SCALE * (basis @ z)
    log_gain = (rng.normal(0.0, GAIN_LOG_SPREAD, size=d)
                + shift * GAIN_SHIFT_FRACTION * GAIN_LOG_SPREAD * gain_dir)
    mixing = _small_rotation(d, rng)

    scale = np.exp(rng.normal(0.0, LANDMARK_SCALE_SPREAD))
    angle = rng.normal(0.0, LANDMARK_ROT_SPREAD)
    translation = rng.normal(0.0, LANDMARK_SHIFT_SPREAD, size=2)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    centered = LANDMARK_TEMPLATE - LANDMARK_TEMPLATE.mean(axis=0)
    landmarks = (scale * centered @ rot.T + LANDMARK_TEMPLATE.mean(axis=0) + translation
                 + rng.normal(0.0, LANDMARK_JITTER, size=(LANDMARK_COUNT, 2)))

    tilt = rng.normal(0.0, POSE_TILT_SPREAD, size=2)
    pose = np.array([tilt[0], tilt[1], 1.0])
    pose /= np.linalg.norm(pose)

    profile = SubjectProfile(
        subject_id=subject_id,
        style_gain=np.exp(log_gain),
        style_offset=offset,
        mixing=mixing,
        landmarks=landmarks,
        pose=pose,
        age=int(rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1)),
        gender=int(rng.integers(0, 2)),
        population=population,
    )
    profile.validate()
    return profile


def render_sample(subject: SubjectProfile, y: int, rng: np.random.Generator,
                  prototypes: np.ndarray, noise_scale: float, frame_id: int = 0) -> Sample:
    """One observation of class y through the subject's style transform."""
    if not 0 <= y < prototypes.shape[0]:
        raise ValueError(f"class {y} out of range [0, {prototypes.shape[0]})")
    eps = rng.normal(0.0, noise_scale, size=prototypes.shape[1]) if noise_scale > 0 else 0.0
    x = subject.mixing @ (subject.style_gain * (prototypes[y] + eps) + subject.style_offset)
    return Sample(x=x, label=int(y), subject_id=subject.subject_id, frame_id=int(frame_id))


@dataclass
class Dataset:
    """Generated benchmark with split bookkeeping and a source-access guard.

    Target splits: per subject, half of each class's samples form the train
    half (the label-0 part is the neutral-only adaptation pool; all of it,
    with labels, is the oracle's fine-tuning set) and the other half is the
    held-out test split. Source samples are split 90/10 into train/val.
    """

    spec: DatasetSpec
    prototypes: np.ndarray
    source_profiles: list[SubjectProfile]
    target_profiles: list[SubjectProfile]
    _source_train: list[Sample]
    _source_val: list[Sample]
    target_adapt: dict[int, list[Sample]]
    target_train: dict[int, list[Sample]]
    target_test: dict[int, list[Sample]]
    _source_open: bool = True

    @property
    def source_open(self) -> bool:
        return self._source_open

    def close_source(self) -> None:
        """Seal source data; any later access raises (the source-free boundary)."""
        self._source_open = False

    def _source_access(self, split: list[Sample]) -> list[Sample]:
        if not self._source_open:
            raise SourceClosedError("source data access after adaptation started")
        return split

    def source_train(self) -> list[Sample]:
        return self._source_access(self._source_train)

    def source_val(self) -> list[Sample]:
        return self._source_access(self._source_val)

    @property
    def target_ids(self) -> list[int]:
        return [p.subject_id for p in self.target_profiles]

    def profiles_by_id(self) -> dict[int, SubjectProfile]:
        return {p.subject_id: p for p in self.source_profiles + self.target_profiles}


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Render the full benchmark: disjoint source/target subjects and all splits."""
    prototypes = make_prototypes(spec)

    source_profiles = []
    target_profiles = []
    for idx in range(spec.n_source_subjects):
        rng = _rng(spec.seed, "subject", idx)
        source_profiles.append(make_subject(spec, rng, "source", subject_id=idx))
    for jdx in range(spec.n_target_subjects):
        sid = spec.n_source_subjects + jdx
        rng = _rng(spec.seed, "subject", sid)
        target_profiles.append(make_subject(spec, rng, "target", subject_id=sid))

    frame_counter = 0

    def render_subject(profile: SubjectProfile) -> list[Sample]:
        nonlocal frame_counter
        rng = _rng(spec.seed, "samples", profile.subject_id)
        out = []
        for y in range(spec.n_classes):
            for _ in range(spec.samples_per_class):
                out.append(render_sample(profile, y, rng, prototypes, spec.noise_scale,
                                         frame_id=frame_counter))
                frame_counter += 1
        return out

    source_samples: list[Sample] = []
    for profile in source_profiles:
        source_samples.extend(render_subject(profile))
    split_rng = _rng(spec.seed, "source-split")
    order = split_rng.permutation(len(source_samples))
    n_val = max(1, len(source_samples) // 10)
    val_idx = set(order[:n_val].tolist())
    source_train = [s for i, s in enumerate(source_samples) if i not in val_idx]
    source_val = [s for i, s in enumerate(source_samples) if i in val_idx]

    target_adapt: dict[int, list[Sample]] = {}
    target_train: dict[int, list[Sample]] = {}
    target_test: dict[int, list[Sample]] = {}
    for profile in target_profiles:
        samples = render_subject(profile)
        rng = _rng(spec.seed, "target-split", profile.subject_id)
        train: list[Sample] = []
        test: list[Sample] = []
        for y in range(spec.n_classes):
            cls = [s for s in samples if s.label == y]
            order = rng.permutation(len(cls))
            n_train = len(cls) // 2
            train.extend(cls[i] for i in order[:n_train])
            test.extend(cls[i] for i in order[n_train:])
        sid = profile.subject_id
        target_train[sid] = sorted(train, key=lambda s: s.frame_id)
        target_test[sid] = sorted(test, key=lambda s: s.frame_id)
        target_adapt[sid] = [s for s in target_train[sid] if s.label == 0]
        if not target_adapt[sid]:
            warnings.warn(f"target subject {sid} has no neutral adaptation frames", RuntimeWarning)

    return Dataset(
        spec=spec,
        prototypes=prototypes,
        source_profiles=source_profiles,
        target_profiles=target_profiles,
        _source_train=source_train,
        _source_val=source_val,
        target_adapt=target_adapt,
        target_train=target_train,
        target_test=target_test,
    )


def samples_to_arrays(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into (x, y) arrays in list order."""
    x = np.stack([s.x for s in samples])
    y = np.array([s.label for s in samples], dtype=int)
    return x, y
