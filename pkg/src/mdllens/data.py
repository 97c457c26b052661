"""Balanced image-classification domains, mixed-domain batches, and probe sets.

A domain is a balanced labelled image dataset with deterministic train/test
splits. Domains come from one of two sources: an on-disk image folder tree
(``<root>/<class_name>/<file>``) or a procedural synthetic generator whose
rendering style (color palette rotation and spatial-frequency emphasis) is
controlled by a shift seed, so that two synthetic domains can share class
structure while differing in input distribution by a tunable amount.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence, Union

import numpy as np

__all__ = [
    "DataError",
    "DomainSpec",
    "Domain",
    "Split",
    "Batch",
    "ImageFolderSource",
    "SyntheticDomainParams",
    "ProbeSet",
    "build_domain",
    "make_synthetic_domain",
    "mixed_batches",
    "probe_set",
]


class DataError(ValueError):
    """Raised when a domain cannot be built as requested."""


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticDomainParams:
    """Parameters of the procedural texture generator.

    ``shift_seed`` selects a rendering style: a hue rotation plus a
    spatial-frequency emphasis band, both varying smoothly with the seed, so
    the distribution distance between two synthetic domains grows with the
    difference of their shift seeds. Class identity lives in the texture
    structure (orientations, frequencies, blob layout), not in the style, so
    domains differing only in ``shift_seed`` stay label-compatible.
    """

    num_classes: int
    train_per_class: int
    test_per_class: int
    shift_seed: int = 0
    noise_std: float = 0.12

    def validate(self) -> None:
        if self.num_classes < 2:
            raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.train_per_class < 1:
            raise DataError(f"train_per_class must be >= 1, got {self.train_per_class}")
        if self.test_per_class < 1:
            raise DataError(f"test_per_class must be >= 1, got {self.test_per_class}")
        if self.shift_seed < 0:
            raise DataError(f"shift_seed must be >= 0, got {self.shift_seed}")
        if not (0.0 <= self.noise_std < 1.0):
            raise DataError(f"noise_std must be in [0, 1), got {self.noise_std}")


@dataclass(frozen=True)
class ImageFolderSource:
    """On-disk source: one directory per class under train/test roots."""

    train_root: str
    test_root: str
    test_per_class: int | None = None  # None = use every available test image


SourceType = Union[ImageFolderSource, SyntheticDomainParams]


@dataclass(frozen=True)
class DomainSpec:
    name: str
    num_classes: int
    train_per_class: int
    source: SourceType
    image_size: int = 32
    resize_method: str = "bicubic"
    class_subset_seed: int = 0
    sample_subset_seed: int = 0

    def validate(self) -> None:
        if not self.name:
            raise DataError("domain name must be non-empty")
        if self.num_classes < 2:
            raise DataError(f"{self.name}: num_classes must be >= 2")
        if self.train_per_class < 1:
            raise DataError(f"{self.name}: train_per_class must be >= 1")
        if self.image_size < 8:
            raise DataError(f"{self.name}: image_size must be >= 8")
        if self.resize_method not in _RESIZE_METHODS:
            raise DataError(
                f"{self.name}: unknown resize_method {self.resize_method!r}; "
                f"expected one of {sorted(_RESIZE_METHODS)}"
            )


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------

@dataclass
class Split:
    """One split of a domain: images in [0, 1], HWC float32."""

    images: np.ndarray  # (N, S, S, 3) float32
    labels: np.ndarray  # (N,) int64
    sample_ids: list[str]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class Domain:
    spec: DomainSpec
    train: Split
    test: Split
    task_label: int = 0

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def with_task_label(self, task_label: int) -> "Domain":
        return replace(self, task_label=task_label)


@dataclass
class Batch:
    """A mixed mini-batch; every item carries its task label."""

    images: np.ndarray  # (B, S, S, 3) float32
    labels: np.ndarray  # (B,) int64
    tasks: np.ndarray  # (B,) int64
    sample_ids: list[str]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ProbeSet:
    """Fixed evaluation set used for representation comparisons.

    Holds ``per_class`` test images from every class of every contributing
    domain, in (domain order, class order, selected-index order).
    """

    images: np.ndarray
    labels: np.ndarray
    domains: list[str]  # per-sample source domain name
    sample_ids: list[str]
    per_class: int

    def __len__(self) -> int:
        return len(self.labels)

    def write_manifest(self, path: str | os.PathLike) -> None:
        """One ``sample_id,domain,class`` line per probe sample."""
        with open(path, "w", encoding="utf-8") as fh:
            for sid, dom, lab in zip(self.sample_ids, self.domains, self.labels):
                fh.write(f"{sid},{dom},{int(lab)}\n")


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

# Style progression per shift-seed unit. Hue stays below a half turn and the
# emphasis band below Nyquist for seeds up to ~8, so style distance grows
# monotonically with seed distance in that range.
_HUE_STEP = 0.35  # radians of palette rotation per seed unit
_BAND_BASE = 2.0  # cycles/image at shift_seed 0
_BAND_STEP = 0.7  # cycles/image per seed unit
_BAND_SIGMA = 3.0
_BAND_FLOOR = 0.35  # minimum pass-through so classes stay separable

_PROTO_UNIVERSE = 1_000_000
_GRATINGS = 3

# entropy tags keeping the independent RNG streams disjoint
_TAG_CLASS_PICK = 0xC1A55
_TAG_PROTO = 0x9907
_TAG_SAMPLE = 0x5A3B
_TAG_FOLDER_PICK = 0xF01D


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _hue_matrix(theta: float) -> np.ndarray:
    """Rotation of RGB space about the gray axis by ``theta`` radians."""
    n = np.ones(3) / math.sqrt(3.0)
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return (
        math.cos(theta) * np.eye(3)
        + math.sin(theta) * k
        + (1 - math.cos(theta)) * np.outer(n, n)
    )


def _band_weights(size: int, shift_seed: int) -> np.ndarray:
    """Radial frequency emphasis for rfft2 output of a size x size field."""
    fy = np.fft.fftfreq(size) * size  # cycles/image
    fx = np.fft.rfftfreq(size) * size
    rho = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    center = _BAND_BASE + _BAND_STEP * shift_seed
    w = _BAND_FLOOR + (1.0 - _BAND_FLOOR) * np.exp(
        -((rho - center) ** 2) / (2.0 * _BAND_SIGMA**2)
    )
    return w


_SUBSTYLES = 3  # each class is a mixture of texture modes


@dataclass(frozen=True)
class _Prototype:
    orientations: np.ndarray  # (S, 2, K)
    frequencies: np.ndarray  # (S, 2, K)
    amplitudes: np.ndarray  # (S, 2, K)
    blob_center: np.ndarray  # (S, 2)
    blob_radius: np.ndarray  # (S,)


def _prototype(prototype_id: int) -> _Prototype:
    """Class texture family: a few distinct grating/blob modes per class.

    The mixture makes class accuracy capacity-sensitive: a narrow network has
    to merge modes that a wide one can represent separately.
    """
    rng = _rng(_TAG_PROTO, prototype_id)
    s = _SUBSTYLES
    return _Prototype(
        orientations=rng.uniform(0.0, math.pi, size=(s, 2, _GRATINGS)),
        frequencies=rng.uniform(2.5, 6.5, size=(s, 2, _GRATINGS)),
        amplitudes=rng.uniform(0.5, 1.0, size=(s, 2, _GRATINGS)),
        blob_center=rng.uniform(-0.2, 0.2, size=(s, 2)),
        blob_radius=rng.uniform(0.15, 0.3, size=s),
    )


# fixed channel mixing of the two pattern fields before hue rotation
_COLOR_MIX_1 = np.array([0.55, 0.15, -0.35])
_COLOR_MIX_2 = np.array([-0.20, 0.45, 0.30])
# per-sample nuisance: these keep single-texture templates from solving the
# task outright, so classification accuracy responds to model capacity
_ORIENT_JITTER = 0.30
_FREQ_JITTER = 0.15
_CONTRAST_JITTER = 0.35
_AMP_JITTER = (0.4, 1.1)
_DISTRACTORS = 2  # class-independent gratings mixed into every sample
_SIGNAL_SCALE = 0.45


def _render_class(
    proto: _Prototype,
    n: int,
    size: int,
    shift_seed: int,
    noise_std: float,
    sample_key: tuple[int, ...],
) -> np.ndarray:
    """Render ``n`` samples of one class under one domain style."""
    rng = _rng(*sample_key)
    coords = (np.arange(size) + 0.5) / size - 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    def gratings(theta, freq, phase, amp):
        out = np.zeros((n, size, size), dtype=np.float64)
        for k in range(theta.shape[1]):
            u = (
                xx[None] * np.cos(theta[:, k])[:, None, None]
                + yy[None] * np.sin(theta[:, k])[:, None, None]
            )
            out += amp[:, k][:, None, None] * np.cos(
                2 * math.pi * freq[:, k][:, None, None] * u + phase[:, k][:, None, None]
            )
        return out

    mode = rng.integers(0, _SUBSTYLES, size=n)  # per-sample texture mode
    fields = np.zeros((2, n, size, size), dtype=np.float64)
    for f in range(2):
        theta = proto.orientations[mode, f, :] + rng.normal(
            0.0, _ORIENT_JITTER, size=(n, _GRATINGS)
        )
        freq = proto.frequencies[mode, f, :] * (
            1.0 + rng.normal(0.0, _FREQ_JITTER, size=(n, _GRATINGS))
        )
        phase = rng.uniform(0.0, 2 * math.pi, size=(n, _GRATINGS))
        amp = proto.amplitudes[mode, f, :] * rng.uniform(*_AMP_JITTER, size=(n, _GRATINGS))
        fields[f] = gratings(theta, freq, phase, amp)
        # structured nuisance: gratings unrelated to the class
        d_theta = rng.uniform(0.0, math.pi, size=(n, _DISTRACTORS))
        d_freq = rng.uniform(2.5, 8.0, size=(n, _DISTRACTORS))
        d_phase = rng.uniform(0.0, 2 * math.pi, size=(n, _DISTRACTORS))
        d_amp = 0.5 * rng.uniform(0.3, 1.0, size=(n, _DISTRACTORS))
        fields[f] += gratings(d_theta, d_freq, d_phase, d_amp)

    # class-specific blob modulating the second field
    centers = proto.blob_center[mode] + rng.normal(0.0, 0.08, size=(n, 2))
    radius = proto.blob_radius[mode] * rng.uniform(0.8, 1.2, size=n)
    d2 = (xx[None] - centers[:, 0, None, None]) ** 2 + (
        yy[None] - centers[:, 1, None, None]
    ) ** 2
    fields[1] += 1.2 * np.exp(-d2 / (2 * radius[:, None, None] ** 2))

    # normalize field scale, then per-sample contrast jitter
    fields /= _GRATINGS
    contrast = np.exp(rng.normal(0.0, _CONTRAST_JITTER, size=n))
    fields *= contrast[None, :, None, None]

    # domain style part 1: spatial-frequency emphasis
    band = _band_weights(size, shift_seed)
    spec = np.fft.rfft2(fields, axes=(-2, -1))
    fields = np.fft.irfft2(spec * band[None, None], s=(size, size), axes=(-2, -1))

    # colorize and apply style part 2: palette rotation about gray
    rgb = (
        0.5
        + _SIGNAL_SCALE * fields[0][..., None] * _COLOR_MIX_1
        + _SIGNAL_SCALE * fields[1][..., None] * _COLOR_MIX_2
    )
    hue = _hue_matrix(_HUE_STEP * shift_seed)
    rgb = (rgb - 0.5) @ hue.T + 0.5

    if noise_std > 0:
        rgb += rng.normal(0.0, noise_std, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0).astype(np.float32)


def make_synthetic_domain(
    params: SyntheticDomainParams,
    name: str = "synthetic",
    task_label: int = 0,
    image_size: int = 32,
    class_subset_seed: int = 0,
    sample_subset_seed: int = 0,
) -> Domain:
    """Build a procedurally rendered classification domain.

    The result is a pure function of the arguments: prototypes are selected
    by ``class_subset_seed`` from a fixed universe, per-sample variation is
    keyed by ``sample_subset_seed``, and the style only by ``shift_seed``.
    """
    params.validate()
    pick = _rng(_TAG_CLASS_PICK, class_subset_seed)
    proto_ids = np.sort(
        pick.choice(_PROTO_UNIVERSE, size=params.num_classes, replace=False)
    )

    splits: dict[str, Split] = {}
    for split_name, split_code, per_class in (
        ("train", 0, params.train_per_class),
        ("test", 1, params.test_per_class),
    ):
        images, labels, ids = [], [], []
        for label, pid in enumerate(proto_ids):
            imgs = _render_class(
                _prototype(int(pid)),
                per_class,
                image_size,
                params.shift_seed,
                params.noise_std,
                sample_key=(_TAG_SAMPLE, sample_subset_seed, int(pid), split_code),
            )
            images.append(imgs)
            labels.append(np.full(per_class, label, dtype=np.int64))
            ids.extend(
                f"{name}/{split_name}/c{label:03d}/{i:04d}" for i in range(per_class)
            )
        splits[split_name] = Split(
            images=np.concatenate(images), labels=np.concatenate(labels), sample_ids=ids
        )

    spec = DomainSpec(
        name=name,
        num_classes=params.num_classes,
        train_per_class=params.train_per_class,
        source=params,
        image_size=image_size,
        class_subset_seed=class_subset_seed,
        sample_subset_seed=sample_subset_seed,
    )
    return Domain(spec=spec, train=splits["train"], test=splits["test"], task_label=task_label)


# ---------------------------------------------------------------------------
# Image-folder ingestion
# ---------------------------------------------------------------------------

_RESIZE_METHODS = {"bicubic", "bilinear", "nearest"}


def _load_image(path: str, size: int, method: str) -> np.ndarray:
    from PIL import Image

    resample = {
        "bicubic": Image.BICUBIC,
        "bilinear": Image.BILINEAR,
        "nearest": Image.NEAREST,
    }[method]
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), resample=resample)
        return np.asarray(im, dtype=np.float32) / 255.0


def _list_classes(root: str) -> list[str]:
    if not os.path.isdir(root):
        raise DataError(f"image folder root not found: {root}")
    return sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )


def _list_files(root: str, cls: str) -> list[str]:
    return sorted(
        f
        for f in os.listdir(os.path.join(root, cls))
        if os.path.isfile(os.path.join(root, cls, f))
    )


def _folder_split(
    spec: DomainSpec,
    root: str,
    split_name: str,
    classes: Sequence[str],
    per_class: int | None,
    pick_seed: int | None,
) -> Split:
    images, labels, ids = [], [], []
    for label, cls in enumerate(classes):
        files = _list_files(root, cls)
        if per_class is not None:
            if len(files) < per_class:
                raise DataError(
                    f"{spec.name}/{split_name}/{cls}: requested {per_class} "
                    f"samples but only {len(files)} available "
                    f"(shortfall {per_class - len(files)})"
                )
            rng = _rng(_TAG_FOLDER_PICK, pick_seed or 0, label)
            keep = np.sort(rng.choice(len(files), size=per_class, replace=False))
            files = [files[i] for i in keep]
        for fname in files:
            images.append(_load_image(os.path.join(root, cls, fname), spec.image_size, spec.resize_method))
            labels.append(label)
            ids.append(f"{spec.name}/{split_name}/{cls}/{fname}")
    if not images:
        raise DataError(f"{spec.name}/{split_name}: no images found under {root}")
    return Split(
        images=np.stack(images).astype(np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        sample_ids=ids,
    )


def _build_folder_domain(spec: DomainSpec, task_label: int) -> Domain:
    src = spec.source
    assert isinstance(src, ImageFolderSource)
    train_classes = _list_classes(src.train_root)
    test_classes = set(_list_classes(src.test_root))
    if len(train_classes) < spec.num_classes:
        raise DataError(
            f"{spec.name}: requested {spec.num_classes} classes but only "
            f"{len(train_classes)} present under {src.train_root}"
        )
    if len(train_classes) > spec.num_classes:
        rng = _rng(_TAG_CLASS_PICK, spec.class_subset_seed)
        keep = np.sort(rng.choice(len(train_classes), size=spec.num_classes, replace=False))
        classes = [train_classes[i] for i in keep]
    else:
        classes = train_classes
    missing = [c for c in classes if c not in test_classes]
    if missing:
        raise DataError(f"{spec.name}: classes missing from test root: {missing}")

    train = _folder_split(
        spec, src.train_root, "train", classes, spec.train_per_class, spec.sample_subset_seed
    )
    test = _folder_split(
        spec, src.test_root, "test", classes, src.test_per_class, spec.sample_subset_seed + 1
    )
    return Domain(spec=spec, train=train, test=test, task_label=task_label)


def build_domain(spec: DomainSpec, task_label: int = 0) -> Domain:
    """Build a balanced domain from its spec; selection is seed-determined."""
    spec.validate()
    if isinstance(spec.source, SyntheticDomainParams):
        params = spec.source
        if params.num_classes != spec.num_classes or params.train_per_class != spec.train_per_class:
            raise DataError(
                f"{spec.name}: synthetic params disagree with spec "
                f"(classes {params.num_classes} vs {spec.num_classes}, "
                f"train/class {params.train_per_class} vs {spec.train_per_class})"
            )
        return make_synthetic_domain(
            params,
            name=spec.name,
            task_label=task_label,
            image_size=spec.image_size,
            class_subset_seed=spec.class_subset_seed,
            sample_subset_seed=spec.sample_subset_seed,
        )
    if isinstance(spec.source, ImageFolderSource):
        return _build_folder_domain(spec, task_label)
    raise DataError(f"{spec.name}: unsupported source type {type(spec.source).__name__}")


# ---------------------------------------------------------------------------
# Batching and probe sets
# ---------------------------------------------------------------------------

def mixed_batches(
    domains: Sequence[Domain], batch_size: int, epoch_seed: int
) -> Iterator[Batch]:
    """One shuffled pass over the union of all train samples.

    Every sample appears exactly once per epoch; batches can mix domains
    freely (there is no per-domain round robin). The final batch may be
    short. Order is a pure function of ``epoch_seed``.
    """
    if not domains:
        raise DataError("mixed_batches needs at least one domain")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")

    sizes = [len(d.train) for d in domains]
    total = sum(sizes)
    dom_idx = np.repeat(np.arange(len(domains)), sizes)
    row_idx = np.concatenate([np.arange(n) for n in sizes])
    order = _rng(epoch_seed).permutation(total)

    for start in range(0, total, batch_size):
        take = order[start : start + batch_size]
        d_sel, r_sel = dom_idx[take], row_idx[take]
        images = np.stack([domains[d].train.images[r] for d, r in zip(d_sel, r_sel)])
        labels = np.array([domains[d].train.labels[r] for d, r in zip(d_sel, r_sel)], dtype=np.int64)
        tasks = np.array([domains[d].task_label for d in d_sel], dtype=np.int64)
        ids = [domains[d].train.sample_ids[r] for d, r in zip(d_sel, r_sel)]
        yield Batch(images=images, labels=labels, tasks=tasks, sample_ids=ids)


def probe_set(domains: Sequence[Domain], per_class: int = 50, seed: int = 0) -> ProbeSet:
    """Draw ``per_class`` test samples from each class of each domain."""
    if not domains:
        raise DataError("probe_set needs at least one domain")
    if per_class < 1:
        raise DataError(f"per_class must be >= 1, got {per_class}")

    images, labels, doms, ids = [], [], [], []
    for d_idx, dom in enumerate(domains):
        test = dom.test
        for cls in range(dom.num_classes):
            rows = np.flatnonzero(test.labels == cls)
            if len(rows) < per_class:
                raise DataError(
                    f"{dom.name}: class {cls} has {len(rows)} test samples, "
                    f"need {per_class} for the probe set"
                )
            rng = _rng(seed, d_idx, cls)
            keep = np.sort(rng.choice(len(rows), size=per_class, replace=False))
            for r in rows[keep]:
                images.append(test.images[r])
                labels.append(int(test.labels[r]))
                doms.append(dom.name)
                ids.append(test.sample_ids[r])
    return ProbeSet(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        domains=doms,
        sample_ids=ids,
        per_class=per_class,
    )
