"""
Synthetic sequential heading data.

Trajectories (circle or random walk) give a heading per frame; a DomainSpec renders
each heading into a feature vector (random Fourier features -> affine map -> noise).
Sequences from the same trajectory are temporally continuous by construction, which
is what the continuity losses exploit.

Dataset file (line oriented text):
    tempocont-dataset v1 feature_dim=<d>
    <set>,<seq_id>,<frame>,<labeled:0|1>,<cos>,<sin>,<f_1>,...,<f_d>
"""

import logging
import math
import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

import config
from tc_core.angular import encode_many
from tc_core.errors import DatasetParseError
from tc_core.models import DatasetConfig
from utils.formatting import LineDecodeError, PathLike, atomic_write_text, format_floats, read_text
from utils.sequence_checks import first_non_increasing_index

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]

STATIONARY_DISPLACEMENT = 1e-9
HEADER_PATTERN = re.compile(r"^tempocont-dataset v1 feature_dim=(\d+)$")


@dataclass(frozen=True)
class TrajectoryPoint:
    frame: int
    position: Tuple[float, float]
    heading: float


@dataclass(frozen=True)
class TrajectoryParams:
    """Shape parameters for gen_trajectory; unused fields are ignored per kind."""
    radius: float = 5.0
    center: Tuple[float, float] = (0.0, 0.0)
    start_angle: float = 0.0
    clockwise: bool = False
    revolutions: Optional[float] = None  # circle: spread over the length; else speed / radius per frame
    speed: float = 1.0
    max_heading_step: float = config.MAX_HEADING_STEP
    start_heading: Optional[float] = None
    start_position: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class MotionLabel:
    frame: int
    heading: Optional[float]
    valid: bool


def _wrap(theta: np.ndarray) -> np.ndarray:
    wrapped = np.arctan2(np.sin(theta), np.cos(theta))
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def gen_trajectory(kind: str, length: int, params: Optional[TrajectoryParams] = None,
                   seed: SeedLike = 0) -> List[TrajectoryPoint]:
    """
    Generate `length` trajectory points.

    Args:
        kind: "circle" (heading = tangent direction) or "random_walk"
            (heading increments uniform in (-max_heading_step, max_heading_step))
        length: number of frames, >= 2
        params: TrajectoryParams
        seed: int or SeedSequence for the random walk

    Returns:
        list of TrajectoryPoint with frames 0..length-1
    """
    params = params or TrajectoryParams()
    if length < 2:
        raise ValueError(f"trajectory length must be >= 2, got {length}")
    frames = np.arange(length)

    if kind == "circle":
        if params.radius <= 0:
            raise ValueError(f"radius must be > 0, got {params.radius}")
        if params.revolutions is not None:
            if params.revolutions <= 0:
                raise ValueError(f"revolutions must be > 0, got {params.revolutions}")
            step = 2.0 * math.pi * params.revolutions / length
        else:
            if params.speed <= 0:
                raise ValueError(f"speed must be > 0, got {params.speed}")
            step = params.speed / params.radius
        sign = -1.0 if params.clockwise else 1.0
        angles = params.start_angle + sign * step * frames
        xs = params.center[0] + params.radius * np.cos(angles)
        ys = params.center[1] + params.radius * np.sin(angles)
        headings = _wrap(angles + sign * math.pi / 2.0)
    elif kind == "random_walk":
        if params.speed <= 0:
            raise ValueError(f"speed must be > 0, got {params.speed}")
        rng = np.random.default_rng(seed)
        start = rng.uniform(-math.pi, math.pi) if params.start_heading is None else params.start_heading
        steps = rng.uniform(-params.max_heading_step, params.max_heading_step, size=length - 1)
        raw = start + np.concatenate([[0.0], np.cumsum(steps)])
        headings = _wrap(raw)
        dx = params.speed * np.cos(raw[1:])
        dy = params.speed * np.sin(raw[1:])
        xs = params.start_position[0] + np.concatenate([[0.0], np.cumsum(dx)])
        ys = params.start_position[1] + np.concatenate([[0.0], np.cumsum(dy)])
    else:
        raise ValueError(f"unknown trajectory kind {kind!r}")

    return [TrajectoryPoint(int(f), (float(x), float(y)), float(h))
            for f, x, y, h in zip(frames, xs, ys, headings)]


def trajectory_arrays(points: Sequence[TrajectoryPoint]):
    """(frames, positions (n, 2), headings) arrays of a trajectory."""
    frames = np.array([p.frame for p in points], dtype=np.int64)
    positions = np.array([p.position for p in points], dtype=np.float64).reshape(-1, 2)
    headings = np.array([p.heading for p in points], dtype=np.float64)
    return frames, positions, headings


# ---- Feature rendering ----

@dataclass(frozen=True)
class DomainSpec:
    """
    Feature map of one data domain.

    feature k = cos(frequencies[k] * theta + phases[k]), then affine @ f + offset,
    then Gaussian noise with noise_std. Integer frequencies keep features 2*pi periodic.
    """
    frequencies: np.ndarray
    phases: np.ndarray
    affine: np.ndarray
    offset: np.ndarray
    noise_std: float
    seed: int
    shift_seed: Optional[int] = None

    def __post_init__(self):
        d = len(self.frequencies)
        if len(self.phases) != d or self.affine.shape != (d, d) or self.offset.shape != (d,):
            raise ValueError(f"inconsistent domain shapes for feature dim {d}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")

    @property
    def feature_dim(self) -> int:
        return len(self.frequencies)

    @property
    def fourier_frequencies(self) -> List[Tuple[float, float]]:
        return [(float(w), float(p)) for w, p in zip(self.frequencies, self.phases)]


def make_domain(feature_dim: int = config.FEATURE_DIM, seed: int = 0,
                noise_std: float = config.NOISE_STD) -> DomainSpec:
    """Base (source) domain: random integer frequencies, identity affine map."""
    if feature_dim < 2:
        raise ValueError(f"feature_dim must be >= 2, got {feature_dim}")
    rng = np.random.default_rng(seed)
    frequencies = rng.integers(1, 4, size=feature_dim).astype(np.float64)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=feature_dim)
    # a quadrature pair at frequency 1 makes the map injective on (-pi, pi]
    frequencies[:2] = 1.0
    phases[1] = phases[0] + math.pi / 2.0
    return DomainSpec(
        frequencies=frequencies,
        phases=phases,
        affine=np.eye(feature_dim),
        offset=np.zeros(feature_dim),
        noise_std=float(noise_std),
        seed=int(seed),
    )


def _cayley_rotation(rng: np.random.Generator, d: int, strength: float) -> np.ndarray:
    g = rng.normal(size=(d, d))
    skew = strength * (g - g.T) / (2.0 * math.sqrt(d))
    eye = np.eye(d)
    return np.linalg.solve(eye - skew, eye + skew)


def apply_domain_shift(base: DomainSpec, shift_seed: int, strength: float = config.SHIFT_STRENGTH) -> DomainSpec:
    """
    Shifted copy of `base`: same frequencies and phases, features passed through
    an extra near-identity map M = R1 diag(s) R2 plus an offset, noisier by (1 + strength).

    R1 and R2 are Cayley rotations whose angles grow with `strength`; log s is uniform in
    +-0.8 * strength, so cond(M) <= exp(1.6) < 5. Strength 0 returns the base map unchanged.

    Args:
        base: source domain
        shift_seed: seed of the shift draws
        strength: shift size in [0, 1]

    Returns:
        DomainSpec with shift_seed recorded
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"shift strength must lie in [0, 1], got {strength}")
    d = base.feature_dim
    rng = np.random.default_rng(shift_seed)
    r1 = _cayley_rotation(rng, d, strength)
    r2 = _cayley_rotation(rng, d, strength)
    singular = np.exp(strength * rng.uniform(-0.8, 0.8, size=d))
    mix = (r1 * singular) @ r2
    offset = strength * rng.normal(0.0, 0.25, size=d)
    return DomainSpec(
        frequencies=base.frequencies.copy(),
        phases=base.phases.copy(),
        affine=mix @ base.affine,
        offset=mix @ base.offset + offset,
        noise_std=(1.0 + strength) * base.noise_std,
        seed=base.seed,
        shift_seed=int(shift_seed),
    )


def render_sequence_features(headings, domain: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Vectorised render_features: (n,) headings -> (n, d) features."""
    headings = np.asarray(headings, dtype=np.float64).reshape(-1)
    base = np.cos(np.outer(headings, domain.frequencies) + domain.phases)
    features = base @ domain.affine.T + domain.offset
    if domain.noise_std > 0:
        features = features + rng.normal(0.0, domain.noise_std, size=features.shape)
    return features


def render_features(heading: float, domain: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    return render_sequence_features([heading], domain, rng)[0]


# ---- Auto-labelling from motion ----

def motion_track_label(points: Sequence[TrajectoryPoint], window: int) -> List[MotionLabel]:
    """
    Heading labels from the derivative of position.

    Interior frames difference pos[t + window - window // 2] - pos[t - window // 2], a span
    of exactly `window` frames (central for even windows, one frame forward-leaning for odd
    ones, a plain forward difference for window 1). Frames too close to either end use
    second-order one-sided differences. A displacement
    below 1e-9 m marks the frame invalid.

    Args:
        points: trajectory with at least window + 1 points
        window: total differencing span in frames, >= 1

    Returns:
        one MotionLabel per point
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if len(points) < window + 1:
        raise ValueError(f"need at least {window + 1} points for window {window}, got {len(points)}")
    frames, pos, _ = trajectory_arrays(points)
    n = len(pos)
    back = window // 2
    ahead = window - back

    disp = np.empty_like(pos)
    for t in range(n):
        if back <= t <= n - 1 - ahead:
            disp[t] = pos[t + ahead] - pos[t - back]
        elif n >= 3 and t < back:
            disp[t] = -3.0 * pos[t] + 4.0 * pos[t + 1] - pos[t + 2] if t + 2 < n else pos[t + 1] - pos[t]
        elif n >= 3:
            disp[t] = 3.0 * pos[t] - 4.0 * pos[t - 1] + pos[t - 2] if t - 2 >= 0 else pos[t] - pos[t - 1]
        elif t == 0:
            disp[t] = pos[1] - pos[0]
        else:
            disp[t] = pos[t] - pos[t - 1]

    labels = []
    for t in range(n):
        norm = math.hypot(disp[t, 0], disp[t, 1])
        if norm < STATIONARY_DISPLACEMENT:
            labels.append(MotionLabel(int(frames[t]), None, False))
        else:
            labels.append(MotionLabel(int(frames[t]), math.atan2(disp[t, 1], disp[t, 0]), True))
    return labels


# ---- Datasets ----

@dataclass
class SampleSequence:
    """
    One temporally ordered sequence. `labels` always holds a heading encoding per
    frame (ground truth for unlabeled frames); `label_mask` says which ones training may use.
    When exposed labels come from motion tracking, `true_labels` keeps the ground truth.
    """
    sequence_id: int
    frames: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    positions: Optional[np.ndarray] = field(default=None, compare=False)
    true_labels: Optional[np.ndarray] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.frames)

    def window(self, start: int, length: int) -> "SampleSequence":
        stop = start + length
        return SampleSequence(
            self.sequence_id,
            self.frames[start:stop],
            self.features[start:stop],
            self.labels[start:stop],
            self.label_mask[start:stop],
            None if self.positions is None else self.positions[start:stop],
            None if self.true_labels is None else self.true_labels[start:stop],
        )

    @property
    def n_labeled(self) -> int:
        return int(np.count_nonzero(self.label_mask))


@dataclass
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class HeadingDataset:
    """Training sequences (source of labeled and unlabeled data) and validation sequences."""
    train: List[SampleSequence]
    val: List[SampleSequence]
    feature_dim: int
    label_source: str = "truth"
    motion_window: int = 2

    def labeled_set(self) -> LabeledSet:
        return collect_labeled(self.train, self.feature_dim)

    @property
    def unlabeled(self) -> List[SampleSequence]:
        return self.train

    def val_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        return stack_sequences(self.val, self.feature_dim)

    def split(self):
        """(labeled set, unlabeled sequences, validation sequences)."""
        return self.labeled_set(), self.unlabeled, self.val


def collect_labeled(sequences: Sequence[SampleSequence], feature_dim: int) -> LabeledSet:
    feats = [s.features[s.label_mask] for s in sequences]
    labs = [s.labels[s.label_mask] for s in sequences]
    if not feats:
        return LabeledSet(np.zeros((0, feature_dim)), np.zeros((0, 2)))
    return LabeledSet(np.concatenate(feats, axis=0), np.concatenate(labs, axis=0))


def stack_sequences(sequences: Sequence[SampleSequence], feature_dim: int) -> Tuple[np.ndarray, np.ndarray]:
    """All frames of all sequences: (features, labels)."""
    if not sequences:
        return np.zeros((0, feature_dim)), np.zeros((0, 2))
    return (np.concatenate([s.features for s in sequences], axis=0),
            np.concatenate([s.labels for s in sequences], axis=0))


def labels_per_sequence(label_fraction: float, length: int) -> int:
    # tolerance keeps e.g. 0.012 * 500 at 6 despite rounding
    return min(length, int(math.ceil(label_fraction * length - 1e-9)))


def _make_sequence(seq_id: int, seed_seq: np.random.SeedSequence, cfg: DatasetConfig,
                   domain: DomainSpec) -> SampleSequence:
    traj_seed, render_seed = seed_seq.spawn(2)
    params = TrajectoryParams(speed=cfg.speed, max_heading_step=cfg.max_heading_step)
    points = gen_trajectory("random_walk", cfg.sequence_length, params, seed=traj_seed)
    frames, positions, headings = trajectory_arrays(points)
    features = render_sequence_features(headings, domain, np.random.default_rng(render_seed))
    return SampleSequence(
        sequence_id=seq_id,
        frames=frames,
        features=features,
        labels=encode_many(headings),
        label_mask=np.zeros(len(frames), dtype=bool),
        positions=positions,
    )


def _expose_labels(seq: SampleSequence, label_fraction: float, rng: np.random.Generator,
                   label_source: str = "truth", motion_window: int = 2) -> SampleSequence:
    truth = seq.labels if seq.true_labels is None else seq.true_labels
    count = labels_per_sequence(label_fraction, len(seq))
    mask = np.zeros(len(seq), dtype=bool)
    labels = truth.copy()
    true_labels = None
    if count:
        chosen = np.sort(rng.choice(len(seq), size=count, replace=False))
        if label_source == "motion" and seq.positions is not None:
            true_labels = truth.copy()
            points = [TrajectoryPoint(int(f), (float(p[0]), float(p[1])), 0.0)
                      for f, p in zip(seq.frames, seq.positions)]
            auto = motion_track_label(points, motion_window)
            valid = [i for i in chosen if auto[i].valid]
            dropped = len(chosen) - len(valid)
            if dropped:
                logger.warning(f"Sequence {seq.sequence_id}: dropped {dropped} stationary motion labels")
            chosen = np.array(valid, dtype=np.int64)
            if chosen.size:
                labels[chosen] = encode_many([auto[i].heading for i in chosen])
        mask[chosen] = True
    return replace(seq, labels=labels, label_mask=mask, true_labels=true_labels)


def build_dataset(cfg: DatasetConfig, domain: Optional[DomainSpec] = None) -> HeadingDataset:
    """
    Generate training and validation sequences.

    Training sequences expose ceil(label_fraction * length) labels each, chosen
    uniformly; validation sequences come from an independent seed branch and are
    fully labeled. Sequence IDs: training 0..n_train-1, validation after that.

    Args:
        cfg: DatasetConfig
        domain: feature domain (defaults to make_domain(cfg.feature_dim, cfg.domain_seed, cfg.noise_std))

    Returns:
        HeadingDataset
    """
    if cfg.train_sequences < 1:
        raise ValueError("need at least one training sequence")
    if not 0.0 <= cfg.label_fraction <= 1.0:
        raise ValueError(f"label_fraction must lie in [0, 1], got {cfg.label_fraction}")
    domain = domain or make_domain(cfg.feature_dim, cfg.domain_seed, cfg.noise_std)
    if domain.feature_dim != cfg.feature_dim:
        raise ValueError(f"domain has {domain.feature_dim} features, config asks for {cfg.feature_dim}")

    train_root, val_root, label_root = np.random.SeedSequence(cfg.seed).spawn(3)
    label_rngs = [np.random.default_rng(s) for s in label_root.spawn(cfg.train_sequences)]

    train = []
    for k, child in enumerate(train_root.spawn(cfg.train_sequences)):
        seq = _make_sequence(k, child, cfg, domain)
        train.append(_expose_labels(seq, cfg.label_fraction, label_rngs[k], cfg.label_source, cfg.motion_window))

    val = []
    for k, child in enumerate(val_root.spawn(cfg.val_sequences)):
        seq = _make_sequence(cfg.train_sequences + k, child, cfg, domain)
        val.append(replace(seq, label_mask=np.ones(len(seq), dtype=bool)))

    n_labeled = sum(s.n_labeled for s in train)
    logger.info(
        f"Built dataset: {len(train)} train / {len(val)} val sequences x {cfg.sequence_length} frames, "
        f"{n_labeled} labeled training samples"
    )
    return HeadingDataset(train=train, val=val, feature_dim=cfg.feature_dim,
                          label_source=cfg.label_source, motion_window=cfg.motion_window)


def relabel(dataset: HeadingDataset, label_fraction: float, seed: int) -> HeadingDataset:
    """
    Copy of `dataset` with training label masks redrawn at a new fraction.

    Motion-labeled datasets stay motion-labeled: the new labels are re-estimated from
    positions, starting from the ground truth rather than earlier estimates.
    """
    if not 0.0 <= label_fraction <= 1.0:
        raise ValueError(f"label_fraction must lie in [0, 1], got {label_fraction}")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(dataset.train))]
    train = [_expose_labels(s, label_fraction, rng, dataset.label_source, dataset.motion_window)
             for s, rng in zip(dataset.train, rngs)]
    return replace(dataset, train=train, val=list(dataset.val))


# ---- Dataset file I/O ----

def save_dataset(path: PathLike, dataset: HeadingDataset) -> None:
    lines = [f"{config.DATASET_FORMAT} feature_dim={dataset.feature_dim}"]
    for set_name, sequences in (("train", dataset.train), ("val", dataset.val)):
        for seq in sequences:
            for i in range(len(seq)):
                lines.append(
                    f"{set_name},{seq.sequence_id},{int(seq.frames[i])},{int(bool(seq.label_mask[i]))},"
                    f"{format_floats(seq.labels[i])},{format_floats(seq.features[i])}"
                )
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.info(f"Saved dataset with {len(lines) - 1} records to {path}")


def load_dataset(path: PathLike) -> HeadingDataset:
    """Parse a dataset file; raises DatasetParseError with the offending line number."""
    try:
        text = read_text(path)
    except LineDecodeError as e:
        raise DatasetParseError(e.line_no, "invalid UTF-8") from e
    lines = text.split("\n")
    if not text:
        raise DatasetParseError(1, "empty file (missing header)")
    if not text.endswith("\n"):
        raise DatasetParseError(len(lines), "unterminated last record (truncated file?)")
    lines = lines[:-1]

    match = HEADER_PATTERN.match(lines[0].strip())
    if not match:
        raise DatasetParseError(1, f"bad header {lines[0]!r}")
    d = int(match.group(1))
    n_fields = 6 + d

    rows: Dict[Tuple[str, int], Dict[str, list]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.strip().split(",")
        if len(parts) != n_fields:
            raise DatasetParseError(line_no, f"expected {n_fields} fields, got {len(parts)}")
        set_name = parts[0]
        if set_name not in ("train", "val"):
            raise DatasetParseError(line_no, f"unknown set {set_name!r}")
        try:
            seq_id = int(parts[1])
            frame = int(parts[2])
            labeled = int(parts[3])
            values = [float(v) for v in parts[4:]]
        except ValueError as e:
            raise DatasetParseError(line_no, str(e)) from e
        if labeled not in (0, 1):
            raise DatasetParseError(line_no, f"label flag must be 0 or 1, got {labeled}")
        if not all(math.isfinite(v) for v in values):
            raise DatasetParseError(line_no, "non-finite value")
        bucket = rows.setdefault((set_name, seq_id), {"frames": [], "mask": [], "values": [], "lines": []})
        bucket["frames"].append(frame)
        bucket["mask"].append(bool(labeled))
        bucket["values"].append(values)
        bucket["lines"].append(line_no)

    train, val = [], []
    for (set_name, seq_id), bucket in rows.items():
        bad = first_non_increasing_index(bucket["frames"])
        if bad is not None:
            raise DatasetParseError(bucket["lines"][bad], f"frames of sequence {seq_id} are not strictly increasing")
        values = np.array(bucket["values"], dtype=np.float64).reshape(-1, 2 + d)
        seq = SampleSequence(
            sequence_id=seq_id,
            frames=np.array(bucket["frames"], dtype=np.int64),
            features=values[:, 2:],
            labels=values[:, :2],
            label_mask=np.array(bucket["mask"], dtype=bool),
        )
        (train if set_name == "train" else val).append(seq)
    return HeadingDataset(train=train, val=val, feature_dim=d)
