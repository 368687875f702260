"""Gradient-based saliency maps for trained classifiers.

All three methods explain the pre-softmax logit of a target class, never
the probability.  Batch norm runs in inference mode here (saliency is per
single sample, where batch statistics are degenerate).

* Guided backpropagation: the input gradient with a modified rule at each
  activation -- the upstream gradient passes only where both the
  activation input and the upstream gradient are strictly positive.  Its
  map always matches the input dimensionality.
* Grad-CAM: feature maps of the last conv block, weighted by the spatial
  mean of the logit gradient and rectified.  Its dimensionality follows
  the variant: T x L for the image layout, length T for the multichannel
  layout (the lead axis is collapsed), and the (stride-shortened) last
  feature length for the stacked layout.
* Guided Grad-CAM: the element-wise product of the two, defined directly
  only where shapes already agree (the image layout); 1D maps can be
  upsampled on request.

No normalization happens inside these operations; use
:func:`normalize_unit_range` for display scaling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fcn, layers
from .errors import DimensionalityError
from .signals import ReshapedInput

METHOD_GUIDED_BACKPROP = "guided_backprop"
METHOD_GRAD_CAM = "grad_cam"
METHOD_GUIDED_GRAD_CAM = "guided_grad_cam"


@dataclass(frozen=True)
class SaliencyMap:
    """Relevance scores for one (sample, class) pair.

    ``axes`` names the semantic axes of ``scores``: ("time", "lead") for
    full-resolution maps, ("position",) for 1D maps over the stacked
    sequence or a coarse feature grid, ("time",) for lead-collapsed maps.
    """

    method: str
    target_class: int
    scores: np.ndarray
    axes: tuple[str, ...]
    abs_applied: bool = False


def _single_batch(model: fcn.FcnModel, sample) -> np.ndarray:
    """One sample (ReshapedInput or bare array) as a batch of size 1."""
    if isinstance(sample, ReshapedInput):
        expected = fcn.LAYOUT_OF_VARIANT[model.variant]
        if sample.layout != expected:
            raise ValueError(
                f"model variant {model.variant!r} needs layout {expected!r}, "
                f"sample has {sample.layout!r}")
        data = sample.data
    else:
        data = np.asarray(sample)
    return data[None]


def _check_class(model: fcn.FcnModel, target_class: int) -> None:
    if not 0 <= target_class < model.class_count:
        raise ValueError(
            f"target class {target_class} out of range [0, {model.class_count})")


def _input_axes(variant: str) -> tuple[str, ...]:
    return ("position",) if variant == fcn.VARIANT_STACKED else ("time", "lead")


def _squeeze_input_grad(variant: str, dx: np.ndarray) -> np.ndarray:
    if variant == fcn.VARIANT_STACKED:
        return dx[0, :, 0]
    if variant == fcn.VARIANT_MULTICHANNEL:
        return dx[0]
    return dx[0, :, :, 0]


def guided_backprop(model: fcn.FcnModel, sample, target_class: int) -> SaliencyMap:
    """Input-resolution saliency with suppressed negative gradient flow."""
    _check_class(model, target_class)
    x = _single_batch(model, sample)
    cache = fcn.forward(model, x, mode="infer")
    dz = np.zeros((1, model.class_count), dtype=cache.z.dtype)
    dz[0, target_class] = 1.0
    _, dx = fcn.backward_from_logits(model, cache, dz, guided=True,
                                     want_param_grads=False)
    return SaliencyMap(METHOD_GUIDED_BACKPROP, target_class,
                       _squeeze_input_grad(model.variant, dx),
                       _input_axes(model.variant))


def gradcam(model: fcn.FcnModel, sample, target_class: int) -> SaliencyMap:
    """Rectified gradient-weighted combination of last-block feature maps."""
    _check_class(model, target_class)
    x = _single_batch(model, sample)
    cache = fcn.forward(model, x, mode="infer")
    dz = np.zeros((1, model.class_count), dtype=cache.z.dtype)
    dz[0, target_class] = 1.0
    # gradient of the logit w.r.t. the last post-activation feature map
    dv = dz @ model.params["dense_w"].T
    dfeat = layers.gap_backward(dv, cache.acts[-1].shape)
    spatial = tuple(range(1, dfeat.ndim - 1))
    alpha = dfeat.mean(axis=spatial)[0]           # (M_last,)
    weighted = (cache.acts[-1][0] * alpha).sum(axis=-1)
    scores = np.maximum(weighted, 0)
    if model.variant == fcn.VARIANT_IMAGE:
        axes: tuple[str, ...] = ("time", "lead")
    elif model.variant == fcn.VARIANT_MULTICHANNEL:
        axes = ("time",)
    else:
        axes = ("position",)
    return SaliencyMap(METHOD_GRAD_CAM, target_class, scores, axes)


def guided_gradcam(model: fcn.FcnModel, sample, target_class: int,
                   take_abs: bool = False,
                   interpolate: bool = False) -> SaliencyMap:
    """Element-wise product of guided backpropagation and Grad-CAM.

    The two factors only share a shape on the image layout.  For 1D maps
    of different lengths, ``interpolate=True`` upsamples the coarse map;
    any other mismatch raises ``DimensionalityError``.
    """
    guided = guided_backprop(model, sample, target_class)
    cam = gradcam(model, sample, target_class)
    cam_scores = cam.scores
    if cam_scores.shape != guided.scores.shape:
        can_stretch = (interpolate and cam_scores.ndim == 1
                       and guided.scores.ndim == 1
                       and cam_scores.size <= guided.scores.size)
        if not can_stretch:
            raise DimensionalityError(
                f"class-activation map has shape {cam_scores.shape} but the "
                f"guided map has shape {guided.scores.shape}; the product is "
                "only defined on matching shapes (image layout) unless "
                "interpolation is requested for 1D maps")
        cam_scores = interpolate_map(cam_scores, guided.scores.size)
    scores = guided.scores * cam_scores
    if take_abs:
        scores = np.abs(scores)
    return SaliencyMap(METHOD_GUIDED_GRAD_CAM, target_class, scores,
                       guided.axes, abs_applied=take_abs)


def interpolate_map(scores: np.ndarray, target_length: int) -> np.ndarray:
    """Linearly upsample a 1D map onto ``target_length`` points.

    Endpoints are preserved and original samples land exactly on grid
    nodes whenever the lengths allow it.  Downsampling is refused.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("interpolation is defined for non-empty 1D maps")
    if target_length < scores.size:
        raise ValueError(
            f"cannot interpolate a length-{scores.size} map down to {target_length}")
    if scores.size == target_length:
        return scores.copy()
    src = np.linspace(0.0, target_length - 1.0, scores.size)
    return np.interp(np.arange(target_length, dtype=np.float64), src, scores)


def normalize_unit_range(scores: np.ndarray) -> np.ndarray:
    """Presentation helper: affine rescale to [0, 1] (constant maps -> 0)."""
    lo = scores.min()
    span = scores.max() - lo
    if span == 0:
        return np.zeros_like(scores, dtype=np.float64)
    return (scores - lo) / span


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def save_saliency_csv(smap: SaliencyMap, path: str | Path,
                      lead_names: tuple[str, ...] | None = None) -> None:
    """Write a map as CSV plus a ``.meta`` sidecar.

    Two-axis maps get a ``t`` column and one column per lead; 1D maps a
    single ``score`` column.
    """
    path = Path(path)
    s = smap.scores
    lines = []
    if s.ndim == 2:
        if lead_names is None:
            from .signals import LEAD_NAMES
            lead_names = LEAD_NAMES if s.shape[1] == len(LEAD_NAMES) else tuple(
                f"ch{j}" for j in range(s.shape[1]))
        lines.append("t," + ",".join(lead_names))
        for t in range(s.shape[0]):
            lines.append(str(t) + "," + ",".join(repr(float(v)) for v in s[t]))
    elif s.ndim == 1:
        lines.append("score")
        lines.extend(repr(float(v)) for v in s)
    else:
        raise ValueError(f"cannot export a {s.ndim}-axis map")
    path.write_text("\n".join(lines) + "\n")
    meta = [f"method={smap.method}",
            f"target_class={smap.target_class}",
            f"abs={int(smap.abs_applied)}",
            f"shape={','.join(str(d) for d in s.shape)}",
            f"axes={','.join(smap.axes)}"]
    path.with_suffix(path.suffix + ".meta").write_text("\n".join(meta) + "\n")
