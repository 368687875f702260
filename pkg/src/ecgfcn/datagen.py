"""Synthetic 24-class, 12-lead dataset generator.

Each class owns a waveform template made of two raised-cosine components: a
low, wide bump (a slurred-onset stand-in) followed by a taller, narrower
complex.  The template is projected onto the leads through a per-class row
of signed amplitudes, shifted in time by a per-sample uniform jitter (peaks
are deliberately not aligned across samples) and corrupted with i.i.d.
Gaussian noise.  Classes in the first half share a "left" base projection,
classes in the second half a "right" one, so lead patterns carry a
two-level (class, ventricle) structure.

Everything is a pure function of the config: per-sample random streams are
derived from (seed, class, sample index), so generation is reproducible
and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import LEAD_NAMES, LabeledDataset, default_ventricle_map


@dataclass(frozen=True)
class TemplateParams:
    """Centers/widths/amplitudes (in time steps / millivolts) of the two
    raised-cosine components of one class template."""

    onset_center: float
    onset_width: float
    onset_amp: float
    complex_center: float
    complex_width: float
    complex_amp: float


@dataclass(frozen=True)
class GeneratorConfig:
    samples_per_class: int = 100
    noise_std: float = 0.05          # in units of the template peak (1.0)
    jitter_range: int = 10           # per-sample shift drawn from [-j, +j]
    seed: int = 0
    class_count: int = 24
    time_steps: int = 200
    lead_count: int = 12
    class_projection: np.ndarray | None = None   # (C, L) signed amplitudes
    template_params: tuple[TemplateParams, ...] | None = None

    def __post_init__(self):
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.jitter_range < 0:
            raise ValueError("jitter_range must be >= 0")
        if self.class_projection is not None:
            p = np.asarray(self.class_projection, dtype=np.float64)
            if p.shape != (self.class_count, self.lead_count):
                raise ValueError(
                    f"class_projection must be {(self.class_count, self.lead_count)}, "
                    f"got {p.shape}")
            object.__setattr__(self, "class_projection", p)
        if self.template_params is not None and \
                len(self.template_params) != self.class_count:
            raise ValueError("need one TemplateParams per class")


def _signed_amplitudes(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.5, 1.0, size=n)


def default_class_projection(class_count: int, lead_count: int, seed: int,
                             min_separation: float = 1.8) -> np.ndarray:
    """Random signed-amplitude projection rows with enforced distinctness.

    Rows are a blend of a per-ventricle base pattern (first half of the
    classes vs second half) and a per-class perturbation; a row is
    rejection-resampled until its Euclidean distance to every previously
    accepted row is at least ``min_separation``.
    """
    rng = np.random.default_rng([seed, 0xC1A5])
    half = class_count // 2
    bases = [_signed_amplitudes(rng, lead_count), _signed_amplitudes(rng, lead_count)]
    rows = np.zeros((class_count, lead_count))
    for c in range(class_count):
        base = bases[0] if c < half else bases[1]
        for _ in range(10_000):
            row = 0.55 * base + 0.9 * _signed_amplitudes(rng, lead_count)
            if c == 0 or np.linalg.norm(rows[:c] - row, axis=1).min() >= min_separation:
                rows[c] = row
                break
        else:
            raise ValueError(
                f"could not separate projection row {c}; lower min_separation")
    return rows


def default_template_params(class_count: int, time_steps: int,
                            seed: int) -> tuple[TemplateParams, ...]:
    """Per-class component timings varied slightly around common centers."""
    rng = np.random.default_rng([seed, 0x7E3F])
    params = []
    for _ in range(class_count):
        onset_c = 0.33 * time_steps + rng.uniform(-4, 4)
        complex_c = 0.55 * time_steps + rng.uniform(-4, 4)
        params.append(TemplateParams(
            onset_center=onset_c,
            onset_width=0.26 * time_steps + rng.uniform(-4, 4),
            onset_amp=0.45 + rng.uniform(-0.05, 0.05),
            complex_center=complex_c,
            complex_width=0.17 * time_steps + rng.uniform(-3, 3),
            complex_amp=1.0,
        ))
    return tuple(params)


def _raised_cosine(t: np.ndarray, center: float, width: float,
                   amp: float) -> np.ndarray:
    """amp/2 * (1 + cos(2*pi*(t-center)/width)) on |t-center| <= width/2."""
    x = t - center
    out = np.zeros_like(t)
    mask = np.abs(x) <= width / 2
    out[mask] = amp * 0.5 * (1.0 + np.cos(2.0 * np.pi * x[mask] / width))
    return out


def class_template(params: TemplateParams, time_steps: int,
                   shift: float = 0.0) -> np.ndarray:
    """Evaluate one class template, optionally time-shifted."""
    t = np.arange(time_steps, dtype=np.float64)
    return (_raised_cosine(t, params.onset_center + shift, params.onset_width,
                           params.onset_amp)
            + _raised_cosine(t, params.complex_center + shift,
                             params.complex_width, params.complex_amp))


def _check_jitter_fits(params: TemplateParams, time_steps: int,
                       jitter: int, class_index: int) -> None:
    lo = min(params.onset_center - params.onset_width / 2,
             params.complex_center - params.complex_width / 2) - jitter
    hi = max(params.onset_center + params.onset_width / 2,
             params.complex_center + params.complex_width / 2) + jitter
    if lo < 0 or hi >= time_steps:
        raise ValueError(
            f"class {class_index}: jitter +-{jitter} pushes the template to "
            f"[{lo:.1f}, {hi:.1f}], outside [0, {time_steps})")


def generate_dataset(config: GeneratorConfig) -> LabeledDataset:
    """Generate ``class_count * samples_per_class`` labeled signals.

    Deterministic per seed; sample (c, i) depends only on
    ``(config.seed, c, i)``.
    """
    c_count, t_steps, l_count = (config.class_count, config.time_steps,
                                 config.lead_count)
    projection = config.class_projection
    if projection is None:
        projection = default_class_projection(c_count, l_count, config.seed)
    templates = config.template_params
    if templates is None:
        templates = default_template_params(c_count, t_steps, config.seed)
    for c, params in enumerate(templates):
        _check_jitter_fits(params, t_steps, config.jitter_range, c)

    n = c_count * config.samples_per_class
    values = np.empty((n, t_steps, l_count), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    row = 0
    for c in range(c_count):
        for i in range(config.samples_per_class):
            rng = np.random.default_rng([config.seed, c, i])
            shift = int(rng.integers(-config.jitter_range,
                                     config.jitter_range + 1))
            wave = class_template(templates[c], t_steps, shift)
            sample = np.outer(wave, projection[c])
            if config.noise_std > 0:
                sample = sample + rng.normal(0.0, config.noise_std,
                                             size=(t_steps, l_count))
            values[row] = sample.astype(np.float32)
            labels[row] = c
            row += 1

    lead_names = LEAD_NAMES if l_count == len(LEAD_NAMES) else tuple(
        f"ch{j}" for j in range(l_count))
    return LabeledDataset(values=values, labels=labels, class_count=c_count,
                          lead_names=lead_names,
                          ventricle_of_class=default_ventricle_map(c_count))
