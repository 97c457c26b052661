"""Representation extraction and linear CKA similarity between models.

Two models are compared by evaluating both on the same fixed probe set,
taking the penultimate (post-pooling, pre-head) features, and computing the
linear centered kernel alignment score between the two feature matrices.
The score lives in [0, 1], is symmetric, and is invariant to orthogonal
transformations and isotropic scaling of either feature space.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from .data import ProbeSet
from .models import MDLModel, images_to_tensor

__all__ = [
    "SimilarityError",
    "RepresentationMatrix",
    "SimilarityScore",
    "extract_representations",
    "linear_cka",
    "similarity_table",
    "write_representation_csv",
    "read_representation_csv",
]


class SimilarityError(ValueError):
    pass


@dataclass
class RepresentationMatrix:
    model_id: str
    sample_ids: list[str]
    features: np.ndarray  # (N, d) float64, row i belongs to sample_ids[i]

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != len(self.sample_ids):
            raise SimilarityError(
                f"features shape {self.features.shape} does not match "
                f"{len(self.sample_ids)} sample ids"
            )
        if not np.all(np.isfinite(self.features)):
            raise SimilarityError(f"non-finite features in {self.model_id}")


@dataclass
class SimilarityScore:
    value: float
    model_pair: tuple[str, str]
    width_multiplier: float | None = None


@torch.no_grad()
def extract_representations(
    model: MDLModel, probe: ProbeSet, model_id: str = "", batch_size: int = 512
) -> RepresentationMatrix:
    """Penultimate features on the probe set, in probe order.

    Features are computed in bounded batches; normalization is per-sample
    (GroupNorm), so batching cannot change the result.
    """
    if len(probe) == 0:
        raise SimilarityError("probe set is empty")
    was_training = model.training
    model.eval()
    chunks = []
    for start in range(0, len(probe), batch_size):
        images = images_to_tensor(probe.images[start : start + batch_size])
        chunks.append(model.backbone(images).numpy().astype(np.float64))
    if was_training:
        model.train()
    return RepresentationMatrix(
        model_id=model_id, sample_ids=list(probe.sample_ids), features=np.concatenate(chunks)
    )


def linear_cka(X: RepresentationMatrix, Y: RepresentationMatrix) -> SimilarityScore:
    """Linear CKA between two feature matrices over the same samples.

    Both matrices are column-centered; the score is
    ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F). Feature dimensions may
    differ, the sample ids and their order may not.
    """
    if X.sample_ids != Y.sample_ids:
        raise SimilarityError(
            f"sample id mismatch between {X.model_id} and {Y.model_id}"
        )
    n = X.features.shape[0]
    if n < 2:
        raise SimilarityError(f"need at least 2 samples for CKA, got {n}")
    xc = X.features - X.features.mean(axis=0, keepdims=True)
    yc = Y.features - Y.features.mean(axis=0, keepdims=True)
    denom_x = np.linalg.norm(xc.T @ xc)
    denom_y = np.linalg.norm(yc.T @ yc)
    if denom_x == 0.0 or denom_y == 0.0:
        raise SimilarityError(
            "CKA undefined: a representation matrix has zero variance "
            f"({X.model_id if denom_x == 0 else Y.model_id})"
        )
    # evaluating the cross term in both orientations and averaging makes the
    # score exactly symmetric in its arguments, not just up to rounding
    cross = (np.sum((yc.T @ xc) ** 2) + np.sum((xc.T @ yc) ** 2)) / 2.0
    value = float(cross / (denom_x * denom_y))
    return SimilarityScore(value=value, model_pair=(X.model_id, Y.model_id))


def similarity_table(
    reps: dict[str, list[RepresentationMatrix]]
) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Pairwise CKA over named models (one or more trials each).

    Returns (names, mean matrix, std matrix); the diagonal is exactly 1 and
    the matrices are symmetric. With a single trial per cell the std is 0.
    """
    names = sorted(reps)
    if len(names) < 2:
        raise SimilarityError("similarity_table needs at least two models")
    k = len(names)
    mean = np.eye(k)
    std = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            vals = []
            for xa, xb in zip(reps[names[i]], reps[names[j]]):
                vals.append(linear_cka(xa, xb).value)
            mean[i, j] = mean[j, i] = float(np.mean(vals))
            std[i, j] = std[j, i] = float(np.std(vals))
    return names, mean, std


# ---------------------------------------------------------------------------
# CSV persistence: header sample_id,f0..f{d-1}; 9 significant digits
# ---------------------------------------------------------------------------

def write_representation_csv(rep: RepresentationMatrix, path: str | os.PathLike) -> None:
    d = rep.features.shape[1]
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("sample_id," + ",".join(f"f{i}" for i in range(d)) + "\n")
        for sid, row in zip(rep.sample_ids, rep.features):
            fh.write(sid + "," + ",".join(f"{v:.9g}" for v in row) + "\n")
    os.replace(tmp, path)


def read_representation_csv(path: str | os.PathLike, model_id: str = "") -> RepresentationMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "sample_id":
            raise SimilarityError(f"{path}: not a representation CSV")
        ids, rows = [], []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    return RepresentationMatrix(
        model_id=model_id or os.path.basename(os.fspath(path)),
        sample_ids=ids,
        features=np.asarray(rows, dtype=np.float64),
    )
