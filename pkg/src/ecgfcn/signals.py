"""Signal and dataset data model.

Signals are multivariate time series stored as T x L matrices (T time
steps, L leads).  This module provides the three input layouts used by the
classifiers, stratified train/val/test splitting, and a simple on-disk
dataset format (text manifest + raw float32 blob).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError

LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF",
              "V1", "V2", "V3", "V4", "V5", "V6")

LAYOUT_STACKED = "stacked"
LAYOUT_MULTICHANNEL = "multichannel"
LAYOUT_IMAGE = "image"
LAYOUTS = (LAYOUT_STACKED, LAYOUT_MULTICHANNEL, LAYOUT_IMAGE)

_DISK_DTYPE = np.dtype("<f4")  # little-endian float32, the storage precision


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EcgSignal:
    """One multivariate time series: voltage per lead per time step.

    ``values`` has shape (T, L) and is stored as float32 (the on-disk
    precision).  Instances are immutable after construction.
    """

    values: np.ndarray
    lead_names: tuple[str, ...] = LEAD_NAMES

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"signal values must be a T x L matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal contains non-finite values")
        if len(self.lead_names) != v.shape[1]:
            raise ValueError(
                f"{len(self.lead_names)} lead names for {v.shape[1]} leads")
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "lead_names", tuple(self.lead_names))

    @property
    def time_steps(self) -> int:
        return self.values.shape[0]

    @property
    def lead_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LabeledDataset:
    """A collection of equally shaped signals with integer class labels.

    ``values`` has shape (N, T, L); ``labels`` holds class indices in
    ``0..class_count-1``.  ``ventricle_of_class`` optionally maps each class
    to "LV" or "RV" (defaults to LV for the first half of a 24-class setup,
    RV for the second).
    """

    values: np.ndarray
    labels: np.ndarray
    class_count: int
    lead_names: tuple[str, ...] = LEAD_NAMES
    ventricle_of_class: dict[int, str] | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if v.ndim != 3:
            raise ValueError(f"dataset values must be (N, T, L), got shape {v.shape}")
        if y.ndim != 1 or y.shape[0] != v.shape[0]:
            raise ValueError(
                f"{y.shape[0] if y.ndim == 1 else '?'} labels for {v.shape[0]} signals")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")
        if len(self.lead_names) != v.shape[2]:
            raise ValueError(
                f"{len(self.lead_names)} lead names for {v.shape[2]} leads")
        vmap = self.ventricle_of_class
        if vmap is not None:
            bad = {c: s for c, s in vmap.items() if s not in ("LV", "RV")}
            if bad:
                raise ValueError(f"ventricle map values must be LV/RV, got {bad}")
            vmap = dict(vmap)
        object.__setattr__(self, "values", _freeze(v))
        object.__setattr__(self, "labels", _freeze(y))
        object.__setattr__(self, "lead_names", tuple(self.lead_names))
        object.__setattr__(self, "ventricle_of_class", vmap)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def time_steps(self) -> int:
        return self.values.shape[1]

    @property
    def lead_count(self) -> int:
        return self.values.shape[2]

    def signal(self, i: int) -> EcgSignal:
        return EcgSignal(self.values[i], self.lead_names)

    @property
    def signals(self) -> list[EcgSignal]:
        return [self.signal(i) for i in range(len(self))]

    def class_indices(self, c: int) -> np.ndarray:
        return np.nonzero(self.labels == c)[0]


def default_ventricle_map(class_count: int) -> dict[int, str]:
    """First half of the classes LV, second half RV."""
    half = class_count // 2
    return {c: ("LV" if c < half else "RV") for c in range(class_count)}


# ---------------------------------------------------------------------------
# Input layouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReshapedInput:
    """A signal rearranged into one of the three classifier input layouts.

    * ``stacked``       -- vector of length T*L, lead-major (lead 1's T
      samples first, then lead 2's, ...).
    * ``multichannel``  -- the (T, L) matrix unchanged.
    * ``image``         -- (T, L, 1) single-channel image tensor.

    All layouts hold exactly T*L elements and are lossless.
    """

    layout: str
    data: np.ndarray
    time_steps: int
    lead_count: int
    lead_names: tuple[str, ...]

    def __post_init__(self):
        expected = {
            LAYOUT_STACKED: (self.time_steps * self.lead_count,),
            LAYOUT_MULTICHANNEL: (self.time_steps, self.lead_count),
            LAYOUT_IMAGE: (self.time_steps, self.lead_count, 1),
        }
        if self.layout not in expected:
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.data.shape != expected[self.layout]:
            raise ValueError(
                f"layout {self.layout!r} expects shape {expected[self.layout]}, "
                f"got {self.data.shape}")


def reshape(signal: EcgSignal, layout: str) -> ReshapedInput:
    """Rearrange a signal into the requested input layout (lossless)."""
    v = signal.values
    if layout == LAYOUT_STACKED:
        data = v.T.reshape(-1)  # lead-major: all of lead 1, then lead 2, ...
    elif layout == LAYOUT_MULTICHANNEL:
        data = v
    elif layout == LAYOUT_IMAGE:
        data = v.reshape(v.shape[0], v.shape[1], 1)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return ReshapedInput(layout, data, signal.time_steps, signal.lead_count,
                         signal.lead_names)


def unreshape(r: ReshapedInput) -> EcgSignal:
    """Invert :func:`reshape`."""
    if r.layout == LAYOUT_STACKED:
        v = r.data.reshape(r.lead_count, r.time_steps).T
    elif r.layout == LAYOUT_MULTICHANNEL:
        v = r.data
    elif r.layout == LAYOUT_IMAGE:
        v = r.data.reshape(r.time_steps, r.lead_count)
    else:
        raise ValueError(f"unknown layout {r.layout!r}")
    return EcgSignal(v, r.lead_names)


def batch_layout(dataset: LabeledDataset, indices: np.ndarray, layout: str) -> np.ndarray:
    """Assemble the signals at ``indices`` into one batch array.

    Returns (B, T*L) for ``stacked``, (B, T, L) for ``multichannel`` and
    (B, T, L, 1) for ``image``.
    """
    v = dataset.values[np.asarray(indices, dtype=np.int64)]
    b, t, l = v.shape
    if layout == LAYOUT_STACKED:
        return np.ascontiguousarray(v.transpose(0, 2, 1).reshape(b, t * l))
    if layout == LAYOUT_MULTICHANNEL:
        return v
    if layout == LAYOUT_IMAGE:
        return v.reshape(b, t, l, 1)
    raise ValueError(f"unknown layout {layout!r}")


# ---------------------------------------------------------------------------
# Stratified splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/val/test index sets covering a dataset exactly once."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            a = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, _freeze(a))


def _largest_remainder(n: int, ratios: tuple[float, float, float]) -> list[int]:
    """Apportion n items to the ratio parts; leftovers go to the largest
    fractional remainders, ties resolved in part order (train, val, test)."""
    quotas = [n * r for r in ratios]
    counts = [math.floor(q) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def stratified_split(dataset: LabeledDataset,
                     ratios: tuple[float, float, float] = (0.75, 0.15, 0.10),
                     seed: int = 0) -> SplitIndices:
    """Split per class according to ``ratios``, deterministically per seed.

    Every class is apportioned independently with the largest-remainder
    rule, so per-class proportions are within one sample of the requested
    ratios.  Raises ``ValueError`` for a class with fewer samples than the
    three split parts.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got sum {sum(ratios)}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in range(dataset.class_count):
        idx = dataset.class_indices(c)
        if 0 < idx.size < 3:
            raise ValueError(
                f"class {c} has {idx.size} samples, fewer than the 3 split parts")
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        n_train, n_val, n_test = _largest_remainder(idx.size, ratios)
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    cat = [np.sort(np.concatenate(p)) if p else np.empty(0, dtype=np.int64)
           for p in parts]
    return SplitIndices(train=cat[0], val=cat[1], test=cat[2])


# ---------------------------------------------------------------------------
# On-disk dataset format
# ---------------------------------------------------------------------------
#
# A dataset directory contains:
#   manifest      key=value lines: format_version, N, T, L, C, leads,
#                 labels (comma-separated ints), ventricles (optional,
#                 C comma-separated LV/RV entries, one per class)
#   signals.bin   little-endian float32, [sample][time][lead] row-major

_MANIFEST_KEYS = {"format_version", "N", "T", "L", "C", "leads", "labels",
                  "ventricles"}


def save_dataset(dataset: LabeledDataset, path: str | Path) -> None:
    """Write ``dataset`` to directory ``path`` (created if absent)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    labels = ",".join(str(int(x)) for x in dataset.labels)
    lines = [
        "format_version=1",
        f"N={len(dataset)}",
        f"T={dataset.time_steps}",
        f"L={dataset.lead_count}",
        f"C={dataset.class_count}",
        f"leads={','.join(dataset.lead_names)}",
        f"labels={labels}",
    ]
    if dataset.ventricle_of_class is not None:
        vents = ",".join(dataset.ventricle_of_class[c]
                         for c in range(dataset.class_count))
        lines.append(f"ventricles={vents}")
    (path / "manifest").write_text("\n".join(lines) + "\n")
    blob = np.ascontiguousarray(dataset.values, dtype=_DISK_DTYPE)
    (path / "signals.bin").write_bytes(blob.tobytes())


def load_dataset(path: str | Path) -> LabeledDataset:
    """Read a dataset directory written by :func:`save_dataset`.

    The round trip is bit-exact on signal values.  Raises
    ``DatasetFormatError`` on missing files, unknown format versions or a
    manifest inconsistent with the blob size.
    """
    path = Path(path)
    manifest = path / "manifest"
    blob_path = path / "signals.bin"
    if not manifest.is_file() or not blob_path.is_file():
        raise DatasetFormatError(f"{path} is not a dataset directory")
    fields: dict[str, str] = {}
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if "=" not in line:
            raise DatasetFormatError(f"manifest line {lineno} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        if key not in _MANIFEST_KEYS:
            raise DatasetFormatError(f"unknown manifest key {key!r}")
        fields[key] = value
    if fields.get("format_version") != "1":
        raise DatasetFormatError(
            f"unknown format version {fields.get('format_version')!r}")
    try:
        n, t, l, c = (int(fields[k]) for k in ("N", "T", "L", "C"))
    except KeyError as e:
        raise DatasetFormatError(f"manifest missing key {e}") from e
    leads = tuple(fields["leads"].split(",")) if fields.get("leads") else LEAD_NAMES
    raw_labels = fields.get("labels", "")
    labels = np.array([int(x) for x in raw_labels.split(",")] if raw_labels else [],
                      dtype=np.int64)
    if labels.size != n:
        raise DatasetFormatError(f"manifest declares N={n} but lists {labels.size} labels")
    blob = blob_path.read_bytes()
    if len(blob) != n * t * l * 4:
        raise DatasetFormatError(
            f"signals.bin holds {len(blob)} bytes, manifest implies {n * t * l * 4}")
    values = np.frombuffer(blob, dtype=_DISK_DTYPE).reshape(n, t, l)
    vmap = None
    if "ventricles" in fields:
        vents = fields["ventricles"].split(",")
        if len(vents) != c:
            raise DatasetFormatError(
                f"ventricles lists {len(vents)} entries for C={c} classes")
        vmap = {i: v for i, v in enumerate(vents)}
    try:
        return LabeledDataset(values=values, labels=labels, class_count=c,
                              lead_names=leads, ventricle_of_class=vmap)
    except ValueError as e:
        raise DatasetFormatError(str(e)) from e
