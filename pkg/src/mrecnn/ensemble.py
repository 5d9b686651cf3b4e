"""Weighted score ensembling, clip averaging and confusion-matrix metrics."""
from __future__ import annotations

import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

NUM_CLASSES = 7
SUBNET_ORDER = ("left_eye", "nose", "mouth")


@dataclass(frozen=True)
class EnsembleWeights:
    """Convex weights for the (left_eye, nose, mouth) sub-networks."""
    alpha: tuple[float, float, float]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alpha)
        if len(a) != 3:
            raise ValueError(f"need exactly three weights, got {len(a)}")
        if any(x < 0 or not np.isfinite(x) for x in a):
            raise ValueError(f"weights must be finite and nonnegative, got {a}")
        if abs(sum(a) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {sum(a)!r}")
        object.__setattr__(self, "alpha", a)

    @classmethod
    def parse(cls, text: str) -> "EnsembleWeights":
        """A preset name (``vgg``, ``alexnet``) or three comma-separated numbers.

        Numbers may be fractions such as ``4/7``.
        """
        key = text.strip().lower()
        if key in PRESETS:
            return PRESETS[key]
        parts = [p for p in key.split(",") if p.strip()]
        try:
            vals = [float(Fraction(p.strip())) for p in parts]
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"cannot parse weights {text!r}") from None
        return cls(tuple(vals))


PRESETS = {
    "vgg": EnsembleWeights((4 / 7, 1 / 7, 2 / 7)),
    "alexnet": EnsembleWeights((2 / 5, 1 / 5, 2 / 5)),
}


def _check_distribution(name: str, s: np.ndarray, tol: float) -> None:
    if s.ndim != 2:
        raise ValueError(f"{name} must be N x K, got shape {s.shape}")
    if (s < -tol).any():
        raise ValueError(f"{name} has negative entries; expected softmax scores")
    dev = np.abs(s.sum(axis=1) - 1.0)
    if dev.size and dev.max() > tol:
        row = int(dev.argmax())
        raise ValueError(f"{name} row {row} sums to {s[row].sum():.6f}, not 1; expected softmax scores")


def ensemble_predict(scores: Sequence, weights: EnsembleWeights, tol: float = 1e-4) -> np.ndarray:
    """Weighted sum of the three sub-networks' softmax score matrices."""
    if len(scores) != 3:
        raise ValueError(f"need three score matrices, got {len(scores)}")
    mats = [np.asarray(s, dtype=np.float64) for s in scores]
    for name, m in zip(SUBNET_ORDER, mats):
        _check_distribution(f"{name} scores", m, tol)
    if len({m.shape for m in mats}) != 1:
        raise ValueError(f"score shapes differ: {[m.shape for m in mats]}")
    a = weights.alpha
    return a[0] * mats[0] + a[1] * mats[1] + a[2] * mats[2]


def predict_labels(scores) -> np.ndarray:
    """Row argmax; ties go to the lowest class index."""
    return np.asarray(scores).argmax(axis=1)


def clip_average(frame_scores, clip_ids) -> tuple[list[str], np.ndarray]:
    """Average frame score rows per clip, in order of first appearance.

    The mean is taken relative to the clip's first frame, so a clip made of
    identical frames reproduces that frame bit for bit.
    """
    scores = np.asarray(frame_scores, dtype=np.float64)
    clip_ids = [str(c) for c in clip_ids]
    if scores.ndim != 2 or scores.shape[0] != len(clip_ids):
        raise ValueError(f"{len(clip_ids)} clip ids for score array of shape {scores.shape}")
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(clip_ids):
        groups.setdefault(c, []).append(i)
    out = np.empty((len(groups), scores.shape[1]))
    for j, rows in enumerate(groups.values()):
        block = scores[rows]
        ref = block[0]
        out[j] = ref + (block - ref).sum(axis=0) / len(rows)
    return list(groups), out


def clip_average_groups(groups: dict) -> dict[str, np.ndarray]:
    """Mapping form: ``{clip_id: frames x K}`` to ``{clip_id: K-vector}``."""
    result = {}
    for cid, frames in groups.items():
        block = np.asarray(frames, dtype=np.float64)
        if block.ndim != 2 or block.shape[0] == 0:
            raise ValueError(f"clip {cid!r} has no frames")
        ref = block[0]
        result[cid] = ref + (block - ref).sum(axis=0) / block.shape[0]
    return result


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts indexed ``[true class, predicted class]``."""
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion counts must be square, got {c.shape}")
        if (c < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def normalized(self) -> np.ndarray:
        """Row-normalized rates; empty rows stay zero."""
        sums = self.row_sums().astype(np.float64)
        out = np.zeros(self.counts.shape)
        nz = sums > 0
        out[nz] = self.counts[nz] / sums[nz, None]
        return out

    def per_class_accuracy(self) -> np.ndarray:
        """Recall per true class; NaN for classes without samples."""
        sums = self.row_sums().astype(np.float64)
        diag = np.diag(self.counts).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sums > 0, diag / np.where(sums > 0, sums, 1), np.nan)


def confusion(preds, labels, num_classes: int = NUM_CLASSES) -> ConfusionMatrix:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} must be equal-length vectors")
    for name, v in (("prediction", preds), ("label", labels)):
        bad = np.flatnonzero((v < 0) | (v >= num_classes))
        if bad.size:
            raise ValueError(f"{name} {v[bad[0]]} at index {bad[0]} outside 0..{num_classes - 1}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels.astype(np.intp), preds.astype(np.intp)), 1)
    return ConfusionMatrix(counts)


def mean_diagonal(cm) -> float:
    """Mean per-class recall, skipping (with a warning) classes without samples."""
    if not isinstance(cm, ConfusionMatrix):
        cm = ConfusionMatrix(np.asarray(cm))
    acc = cm.per_class_accuracy()
    present = ~np.isnan(acc)
    if not present.any():
        raise ValueError("confusion matrix is empty")
    if not present.all():
        missing = np.flatnonzero(~present).tolist()
        warnings.warn(f"classes {missing} have no samples and are excluded from the mean", RuntimeWarning)
    return float(acc[present].mean())


def format_report(cm: ConfusionMatrix) -> str:
    """CSV: normalized matrix rows, per-class accuracy line, mean-diagonal line."""
    lines = [",".join(f"{v:.6f}" for v in row) for row in cm.normalized()]
    acc = cm.per_class_accuracy()
    lines.append("per_class_accuracy," + ",".join("" if np.isnan(a) else f"{a:.6f}" for a in acc))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lines.append(f"mean_diagonal,{mean_diagonal(cm):.6f}")
    return "\n".join(lines) + "\n"
