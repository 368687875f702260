"""Lead-importance index, exact 2x2 test and anatomical region remapping.

The lead-importance index condenses absolute saliency maps of correctly
classified samples into one C x L matrix: entry (c, l) is the share of
class c's total saliency mass that falls in lead l, so every defined row
sums to 1 and scaling a class's maps by a common positive factor changes
nothing.

The one-sided Fisher test works on a 2x2 table of correct/incorrect counts
per method and sums the hypergeometric upper tail in log space, so tiny
p-values (1e-8 and below) come out at full precision.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import LEAD_NAMES


@dataclass(frozen=True)
class LeadImportanceMatrix:
    """Per-class lead shares plus the raw sums they were computed from.

    ``values[c]`` is NaN wherever ``defined[c]`` is False (no correctly
    classified sample of that class was supplied); such rows are flagged,
    never zero-filled.
    """

    values: np.ndarray        # (C, L), rows sum to 1 where defined
    raw_sums: np.ndarray      # (C, L), per-lead absolute-saliency mass
    sample_counts: np.ndarray  # (C,)
    defined: np.ndarray       # (C,) bool
    lead_names: tuple[str, ...]


def lead_importance(maps, labels, predictions, class_count: int,
                    lead_names: tuple[str, ...] | None = None) -> LeadImportanceMatrix:
    """Aggregate absolute (time x lead) saliency maps into lead shares.

    ``maps[i]`` must be a non-negative T x L array for a sample whose
    prediction matched its label; a mismatched sample or a wrongly shaped
    map raises ``ValueError``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if not (len(maps) == labels.size == predictions.size):
        raise ValueError("maps, labels and predictions must have equal length")
    lead_count: int | None = None
    raw = None
    counts = np.zeros(class_count, dtype=np.int64)
    for i, m in enumerate(maps):
        m = np.asarray(m, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError(f"map {i} has shape {m.shape}, expected (T, L)")
        if lead_count is None:
            lead_count = m.shape[1]
            raw = np.zeros((class_count, lead_count))
        if m.shape[1] != lead_count:
            raise ValueError(f"map {i} has {m.shape[1]} leads, expected {lead_count}")
        if m.min() < 0:
            raise ValueError(f"map {i} has negative scores; pass absolute-valued maps")
        if predictions[i] != labels[i]:
            raise ValueError(
                f"sample {i} was classified as {predictions[i]} but labeled "
                f"{labels[i]}; only correctly classified samples contribute")
        if not 0 <= labels[i] < class_count:
            raise ValueError(f"label {labels[i]} out of range")
        raw[labels[i]] += m.sum(axis=0)
        counts[labels[i]] += 1
    if lead_count is None:
        raise ValueError("need at least one saliency map")
    totals = raw.sum(axis=1)
    defined = (counts > 0) & (totals > 0)
    values = np.full_like(raw, np.nan)
    values[defined] = raw[defined] / totals[defined, None]
    if lead_names is None:
        lead_names = LEAD_NAMES if lead_count == len(LEAD_NAMES) else tuple(
            f"ch{j}" for j in range(lead_count))
    return LeadImportanceMatrix(values=values, raw_sums=raw,
                                sample_counts=counts,
                                defined=defined, lead_names=lead_names)


@dataclass(frozen=True)
class VentricleImportance:
    ventricle: str
    values: np.ndarray        # (L,), sums to 1
    ranking: tuple[int, ...]  # lead indices, most important first


def ventricle_rank(li: LeadImportanceMatrix,
                   ventricle_of_class: dict[int, str]) -> dict[str, VentricleImportance]:
    """Pool raw per-lead mass over each ventricle's classes, then rank.

    Pooling happens before normalization (this is not a mean of class
    rows), so classes contribute in proportion to their saliency mass.
    Rank position 0 is the most important lead.
    """
    c_count = li.values.shape[0]
    groups: dict[str, list[int]] = {}
    for c in range(c_count):
        if not li.defined[c]:
            continue
        if c not in ventricle_of_class:
            raise ValueError(f"class {c} has saliency mass but no ventricle assigned")
        groups.setdefault(ventricle_of_class[c], []).append(c)
    if not groups:
        raise ValueError("no class has a defined importance row")
    out: dict[str, VentricleImportance] = {}
    for vent in sorted(groups):
        classes = groups[vent]
        pooled = li.raw_sums[classes].sum(axis=0)
        total = pooled.sum()
        if total <= 0:
            raise ValueError(f"ventricle {vent} has zero pooled saliency mass")
        values = pooled / total
        ranking = tuple(int(i) for i in np.argsort(-values, kind="stable"))
        out[vent] = VentricleImportance(vent, values, ranking)
    return out


# ---------------------------------------------------------------------------
# One-sided Fisher's exact test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContingencyTable2x2:
    """Counts [[a, b], [c, d]]: rows are methods, columns correct/incorrect."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        cells = (self.a, self.b, self.c, self.d)
        if any(int(x) != x or x < 0 for x in cells):
            raise ValueError(f"cells must be non-negative integers, got {cells}")
        if sum(cells) == 0:
            raise ValueError("table must have at least one positive margin")


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def fisher_one_sided(table: ContingencyTable2x2) -> float:
    """P(X >= a) for the top-left cell under fixed margins.

    X follows the hypergeometric law of drawing row-one's total from the
    population with the first column marking successes; the sum runs in
    log space over the upper tail, i.e. the probability that the first
    method is at least as correct as observed.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    n = a + b + c + d
    row1 = a + b
    col1 = a + c
    x_min = max(0, row1 - (n - col1))
    x_max = min(row1, col1)
    log_denom = _log_comb(n, row1)
    log_terms = [_log_comb(col1, x) + _log_comb(n - col1, row1 - x) - log_denom
                 for x in range(a, x_max + 1)]
    if not log_terms:
        return 0.0
    peak = max(log_terms)
    p = math.exp(peak) * sum(math.exp(t - peak) for t in log_terms)
    return min(p, 1.0) if a > x_min else 1.0


# ---------------------------------------------------------------------------
# Region remapping
# ---------------------------------------------------------------------------

SCHEME_EASY_WPW = "easy_wpw"
SCHEME_ARRUDA = "arruda"
SCHEMES = (SCHEME_EASY_WPW, SCHEME_ARRUDA)

# region -> the dataset classes it covers (many-to-many)
EASY_WPW_REGIONS: dict[str, frozenset[int]] = {
    "MV-AL": frozenset({3, 9, 4, 10, 5, 11}),
    "MV-PL": frozenset({0, 6, 1, 7, 5, 11}),
    "MV-PS": frozenset({1, 7, 2, 8}),
    "TV-AL": frozenset({13, 19, 14, 20, 15, 21, 16, 22, 17, 23}),
    "TV-PL": frozenset({12, 18, 13, 19}),
    "TV-PS": frozenset({12, 18, 1, 7, 2, 8}),
    "TV-AS": frozenset({17, 23, 2, 8, 3, 9, 4, 10}),
}

ARRUDA_REGIONS: dict[str, frozenset[int]] = {
    "LAL": frozenset({4, 10, 5, 11}),
    "LL": frozenset({0, 6, 5, 11}),
    "LP": frozenset({1, 7, 0, 6}),
    "LPL": frozenset({0, 6}),
    "PSMA": frozenset({1, 7, 2, 8}),
    "PSTA": frozenset({12, 18, 1, 7, 2, 8}),
    "MSTA": frozenset({2, 8}),
    "AS": frozenset({2, 8, 3, 9}),
    "RA": frozenset({3, 9, 4, 10, 16, 22, 17, 23}),
    "RP": frozenset({12, 18}),
    "RPL": frozenset({12, 18, 13, 19}),
    "RL": frozenset({13, 19, 14, 20}),
    "RAL": frozenset({14, 20, 15, 21, 16, 22}),
}

_SCHEME_TABLES = {SCHEME_EASY_WPW: EASY_WPW_REGIONS,
                  SCHEME_ARRUDA: ARRUDA_REGIONS}


def scheme_regions(scheme: str) -> tuple[str, ...]:
    if scheme not in _SCHEME_TABLES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return tuple(_SCHEME_TABLES[scheme])


def remap_region(class_index: int, scheme: str) -> frozenset[str]:
    """The set of scheme regions a dataset class belongs to."""
    table = _SCHEME_TABLES.get(scheme)
    if table is None:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not 0 <= class_index < 24:
        raise ValueError(f"class index {class_index} out of range [0, 24)")
    return frozenset(r for r, classes in table.items() if class_index in classes)


# ---------------------------------------------------------------------------
# Method comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonResult:
    scheme: str
    accuracy_a_pct: float          # the classifier under test
    accuracy_b_pct: float          # the baseline
    table: ContingencyTable2x2
    p_value: float
    significant: bool
    alpha: float
    correct_a: np.ndarray
    correct_b: np.ndarray
    truth_sets: tuple[frozenset[str], ...]


def dt_comparison(class_predictions, baseline_regions, true_classes,
                  scheme: str, alpha: float = 0.05) -> ComparisonResult:
    """Compare class predictions against a region-level baseline.

    Ground truth per sample is the region set of its true class.  The
    baseline's region prediction is correct when it lies in that set; a
    class prediction is correct when its own region set intersects it
    (equality of class implies equality of sets, so a perfect classifier
    scores 100%).  A one-sided exact test on the resulting 2x2 table asks
    whether the classifier's correct count is at least as extreme.
    """
    preds = np.asarray(class_predictions, dtype=np.int64)
    truth = np.asarray(true_classes, dtype=np.int64)
    regions = list(baseline_regions)
    if not (preds.size == truth.size == len(regions)):
        raise ValueError("prediction lists must have equal lengths")
    if preds.size == 0:
        raise ValueError("need at least one sample")
    valid = set(scheme_regions(scheme))
    truth_sets = tuple(remap_region(int(t), scheme) for t in truth)
    correct_a = np.zeros(preds.size, dtype=bool)
    correct_b = np.zeros(preds.size, dtype=bool)
    for i in range(preds.size):
        if regions[i] not in valid:
            raise ValueError(
                f"baseline prediction {regions[i]!r} is not a {scheme} region")
        correct_a[i] = bool(remap_region(int(preds[i]), scheme) & truth_sets[i])
        correct_b[i] = regions[i] in truth_sets[i]
    table = ContingencyTable2x2(int(correct_a.sum()), int((~correct_a).sum()),
                                int(correct_b.sum()), int((~correct_b).sum()))
    p = fisher_one_sided(table)
    return ComparisonResult(scheme=scheme,
                            accuracy_a_pct=100.0 * correct_a.mean(),
                            accuracy_b_pct=100.0 * correct_b.mean(),
                            table=table, p_value=p,
                            significant=bool(p < alpha), alpha=alpha,
                            correct_a=correct_a, correct_b=correct_b,
                            truth_sets=truth_sets)


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

def write_lead_importance_csv(li: LeadImportanceMatrix,
                              ventricles: dict[str, VentricleImportance] | None,
                              path: str | Path) -> None:
    """Heatmap rows per class plus one pooled row per ventricle."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "defined"] + list(li.lead_names))
        for c in range(li.values.shape[0]):
            row = [f"class_{c}", int(li.defined[c])]
            row += [repr(float(x)) if li.defined[c] else "nan"
                    for x in li.values[c]]
            w.writerow(row)
        for vent, vi in sorted((ventricles or {}).items()):
            w.writerow([vent, 1] + [repr(float(x)) for x in vi.values])


def write_ranking_csv(ventricles: dict[str, VentricleImportance],
                      path: str | Path) -> None:
    """Leads per ventricle ordered from rank 0 (most important) down."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        lead_count = len(next(iter(ventricles.values())).ranking)
        w.writerow(["ventricle"] + [f"rank{r}" for r in range(lead_count)])
        for vent, vi in sorted(ventricles.items()):
            names = [str(r) for r in vi.ranking]
            w.writerow([vent] + names)


def write_comparison_csv(result: ComparisonResult, path: str | Path,
                         baseline_regions=None,
                         class_predictions=None) -> None:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "truth_set", "prediction", "prediction_correct",
                    "baseline", "baseline_correct"])
        for i in range(result.correct_a.size):
            w.writerow([
                i, "|".join(sorted(result.truth_sets[i])),
                "" if class_predictions is None else int(class_predictions[i]),
                int(result.correct_a[i]),
                "" if baseline_regions is None else baseline_regions[i],
                int(result.correct_b[i])])
    summary = [
        f"scheme={result.scheme}",
        f"accuracy_model_pct={repr(result.accuracy_a_pct)}",
        f"accuracy_baseline_pct={repr(result.accuracy_b_pct)}",
        f"table={result.table.a},{result.table.b},{result.table.c},{result.table.d}",
        f"p_value={repr(result.p_value)}",
        f"alpha={repr(result.alpha)}",
        f"significant={int(result.significant)}",
    ]
    path.with_suffix(path.suffix + ".summary").write_text("\n".join(summary) + "\n")


def read_baseline_csv(path: str | Path) -> tuple[np.ndarray, str, list[str]]:
    """Read baseline predictions: columns sample, scheme, region."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or [h.strip() for h in rows[0]] != ["sample", "scheme", "region"]:
        raise ValueError(
            f"{path}: expected header 'sample,scheme,region', got {rows[:1]}")
    samples, schemes, regions = [], set(), []
    for r in rows[1:]:
        if not r:
            continue
        samples.append(int(r[0]))
        schemes.add(r[1].strip())
        regions.append(r[2].strip())
    if len(schemes) > 1:
        raise ValueError(f"baseline file mixes schemes: {sorted(schemes)}")
    if not samples:
        raise ValueError("baseline file has no rows")
    return np.asarray(samples, dtype=np.int64), schemes.pop(), regions
