"""Command-line pipeline: gen, train, explain, cluster, lead-importance, compare.

Every option can come from a ``key=value`` config file (``--config``),
with explicit flags taking precedence; unknown keys are rejected and the
fully resolved configuration is echoed next to the outputs, so any run can
be reproduced from its artifacts alone.  Exit codes: 0 success, 1
validation error, 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import clustering, datagen, fcn, signals, stats, trainer, xai
from .errors import EcgFcnError

OUT_ENV_VAR = "ECGFCN_OUT"

_METHODS = {
    "guided-backprop": "guided_backprop",
    "gradcam": "grad_cam",
    "guided-gradcam": "guided_grad_cam",
}


class _UsageError(ValueError):
    pass


def _opt(name, typ, default, help_, flag=None):
    return {"name": name, "type": typ, "default": default, "help": help_,
            "flag": flag or "--" + name.replace("_", "-")}


_COMMON = [
    _opt("seed", int, 0, "master seed for this command"),
    _opt("out", str, None, f"output directory (default ${OUT_ENV_VAR})"),
]

_OPTIONS: dict[str, list[dict]] = {
    "gen": _COMMON + [
        _opt("samples_per_class", int, 100, "signals generated per class"),
        _opt("noise_std", float, 0.05, "additive noise level (template peak = 1)"),
        _opt("jitter_range", int, 10, "per-sample time shift drawn from [-j, j]"),
    ],
    "train": _COMMON + [
        _opt("data", str, None, "dataset directory"),
        _opt("variant", str, "image2d", "stacked1d | multichannel1d | image2d"),
        _opt("ratios", str, "0.75,0.15,0.10", "train,val,test split ratios"),
        _opt("epochs", int, 100, "maximum training epochs"),
        _opt("batch_size", int, 32, "mini-batch size (>= 2)"),
        _opt("learning_rate", float, 1e-3, "step size; 0 leaves the model untouched",
             flag="--lr"),
        _opt("optimizer", str, "adam", "adam | sgd"),
        _opt("patience", int, 15, "early-stop patience on validation loss; 0 disables"),
        _opt("fine_tune", bool, False, "retrain the dense head after the main fit"),
        _opt("filters", str, "", "comma list overriding per-block filter counts"),
        _opt("kernels", str, "", "comma list overriding per-block kernel sizes"),
        _opt("strides", str, "", "comma list overriding per-block strides"),
    ],
    "explain": _COMMON + [
        _opt("data", str, None, "dataset directory"),
        _opt("checkpoint", str, None, "model checkpoint to explain"),
        _opt("method", str, "guided-gradcam",
             "guided-backprop | gradcam | guided-gradcam"),
        _opt("abs", bool, False, "store absolute scores (guided-gradcam only)"),
        _opt("samples", str, "", "comma list of dataset indices; default: "
             "correctly classified test samples"),
        _opt("ratios", str, "0.75,0.15,0.10", "split ratios (must match training)"),
    ],
    "cluster": _COMMON + [
        _opt("data", str, None, "dataset directory"),
        _opt("k_candidates", str, "2,3,4", "cluster counts to try per class"),
        _opt("max_per_class", int, 0, "cap samples per class (0 = all)"),
    ],
    "lead-importance": _COMMON + [
        _opt("data", str, None, "dataset directory"),
        _opt("checkpoint", str, None, "image2d checkpoint"),
        _opt("ratios", str, "0.75,0.15,0.10", "split ratios (must match training)"),
    ],
    "compare": _COMMON + [
        _opt("predictions", str, None, "predictions.csv written by the train command"),
        _opt("baseline", str, None, "baseline CSV: sample,scheme,region"),
        _opt("scheme", str, None, "easy_wpw | arruda"),
        _opt("alpha", float, 0.05, "significance threshold"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    p = _Parser(prog="ecgfcn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, opts in _OPTIONS.items():
        sp = sub.add_parser(cmd, help=None)
        sp.add_argument("--config", default=None,
                        help="key=value file supplying any of the flags below")
        for o in opts:
            if o["type"] is bool:
                sp.add_argument(o["flag"], dest=o["name"], action="store_const",
                                const=True, default=None, help=o["help"])
            else:
                sp.add_argument(o["flag"], dest=o["name"], type=o["type"],
                                default=None, help=o["help"])
    return p


def _parse_config_file(path: str, opts: list[dict]) -> dict:
    known = {o["name"]: o for o in opts}
    values: dict = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise _UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        typ = known[key]["type"]
        if typ is bool:
            if raw.lower() not in ("0", "1", "true", "false"):
                raise _UsageError(f"{path}:{lineno}: {key} must be boolean, got {raw!r}")
            values[key] = raw.lower() in ("1", "true")
        else:
            try:
                values[key] = typ(raw)
            except ValueError as e:
                raise _UsageError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from e
    return values


def _resolve(args: argparse.Namespace) -> dict:
    opts = _OPTIONS[args.command]
    resolved = {o["name"]: o["default"] for o in opts}
    if args.config:
        resolved.update(_parse_config_file(args.config, opts))
    for o in opts:
        flag_value = getattr(args, o["name"])
        if flag_value is not None:
            resolved[o["name"]] = flag_value
    if resolved.get("out") is None:
        resolved["out"] = os.environ.get(OUT_ENV_VAR)
    if not resolved.get("out"):
        raise _UsageError(f"--out is required (or set ${OUT_ENV_VAR})")
    return resolved


def _write_resolved(cfg: dict, command: str, out_dir: Path) -> None:
    lines = [f"command={command}"]
    for key in sorted(cfg):
        value = cfg[key]
        if isinstance(value, bool):
            value = int(value)
        lines.append(f"{key}={value}")
    (out_dir / "resolved.config").write_text("\n".join(lines) + "\n")


def _int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as e:
        raise _UsageError(f"{flag} expects a comma list of integers, got {text!r}") from e


def _ratio_tuple(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise _UsageError(f"--ratios expects three comma-separated numbers, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if not cfg.get(key):
            raise _UsageError(f"--{key.replace('_', '-')} is required")


def _hyperparams(cfg: dict, variant: str):
    filters = _int_list(cfg["filters"], "--filters")
    kernels = _int_list(cfg["kernels"], "--kernels")
    strides = _int_list(cfg["strides"], "--strides")
    if not (filters or kernels or strides):
        return None
    defaults = fcn.DEFAULT_HYPERPARAMS[variant]
    n = len(defaults)
    for name, lst in (("filters", filters), ("kernels", kernels),
                      ("strides", strides)):
        if lst and len(lst) != n:
            raise _UsageError(f"--{name} must list {n} values, got {len(lst)}")
    return tuple(
        (filters[i] if filters else defaults[i][0],
         kernels[i] if kernels else defaults[i][1],
         strides[i] if strides else defaults[i][2])
        for i in range(n))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_gen(cfg: dict) -> None:
    gen_cfg = datagen.GeneratorConfig(
        samples_per_class=cfg["samples_per_class"],
        noise_std=cfg["noise_std"],
        jitter_range=cfg["jitter_range"],
        seed=cfg["seed"])
    dataset = datagen.generate_dataset(gen_cfg)
    out = Path(cfg["out"])
    signals.save_dataset(dataset, out)
    _write_resolved(cfg, "gen", out)
    print(f"wrote {out}: N={len(dataset)} T={dataset.time_steps} "
          f"L={dataset.lead_count} C={dataset.class_count}")


def _split_from_cfg(dataset, cfg: dict) -> signals.SplitIndices:
    return signals.stratified_split(dataset, _ratio_tuple(cfg["ratios"]),
                                    seed=cfg["seed"])


def _write_predictions_csv(path: Path, indices, y_true, y_pred) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "true_class", "predicted_class"])
        for i, t, p in zip(indices, y_true, y_pred):
            w.writerow([int(i), int(t), int(p)])


def _cmd_train(cfg: dict) -> None:
    _require(cfg, "data")
    if cfg["variant"] not in fcn.VARIANTS:
        raise _UsageError(f"--variant must be one of {fcn.VARIANTS}")
    dataset = signals.load_dataset(cfg["data"])
    split = _split_from_cfg(dataset, cfg)
    model = fcn.build_model(cfg["variant"], _hyperparams(cfg, cfg["variant"]),
                            class_count=dataset.class_count,
                            in_channels=(dataset.lead_count
                                         if cfg["variant"] == fcn.VARIANT_MULTICHANNEL
                                         else 1),
                            seed=cfg["seed"])
    train_cfg = trainer.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], optimizer=cfg["optimizer"],
        patience=cfg["patience"], seed=cfg["seed"])
    model, history = trainer.fit(model, dataset, split, train_cfg)
    if cfg["fine_tune"]:
        model = trainer.fine_tune(model, dataset, split, train_cfg)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    fcn.save_checkpoint(model, out / "checkpoint.fcnw")
    trainer.write_history_csv(history, out / "history.csv")
    y_pred = trainer.predict(model, dataset, split.test)
    y_true = dataset.labels[split.test]
    metrics = trainer.metrics_from_predictions(y_true, y_pred, dataset.class_count)
    train_card = np.bincount(dataset.labels[split.train],
                             minlength=dataset.class_count)
    trainer.write_metrics_csv(metrics, out / "metrics.csv", train_card)
    _write_predictions_csv(out / "predictions.csv", split.test, y_true, y_pred)
    (out / "summary.txt").write_text(
        f"variant={cfg['variant']}\n"
        f"trainable_params={fcn.count_params(model)}\n"
        f"epochs_run={len(history)}\n"
        f"best_epoch={history.best_epoch}\n"
        f"test_accuracy_pct={repr(metrics.accuracy_pct)}\n")
    _write_resolved(cfg, "train", out)
    print(f"test accuracy {metrics.accuracy_pct:.2f}% "
          f"({fcn.count_params(model)} parameters, {len(history)} epochs)")


def _correct_test_samples(model, dataset, cfg: dict):
    split = _split_from_cfg(dataset, cfg)
    y_pred = trainer.predict(model, dataset, split.test)
    y_true = dataset.labels[split.test]
    keep = y_pred == y_true
    return split.test[keep], y_true[keep]


def _cmd_explain(cfg: dict) -> None:
    _require(cfg, "data", "checkpoint")
    if cfg["method"] not in _METHODS:
        raise _UsageError(f"--method must be one of {sorted(_METHODS)}")
    model = fcn.load_checkpoint(cfg["checkpoint"])
    dataset = signals.load_dataset(cfg["data"])
    if cfg["method"] == "guided-gradcam" and model.variant != fcn.VARIANT_IMAGE:
        raise _UsageError(
            "guided-gradcam needs matching map shapes, which only the image2d "
            "variant provides (its class-activation map spans time x lead); "
            f"this checkpoint is {model.variant}")
    layout = fcn.LAYOUT_OF_VARIANT[model.variant]
    if cfg["samples"]:
        indices = np.asarray(_int_list(cfg["samples"], "--samples"), dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= len(dataset)):
            raise _UsageError(f"--samples indices must lie in [0, {len(dataset)})")
        targets = trainer.predict(model, dataset, indices)
    else:
        indices, targets = _correct_test_samples(model, dataset, cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    for idx, target in zip(indices, targets):
        sample = signals.batch_layout(dataset, np.array([idx]), layout)[0]
        if cfg["method"] == "guided-backprop":
            smap = xai.guided_backprop(model, sample, int(target))
        elif cfg["method"] == "gradcam":
            smap = xai.gradcam(model, sample, int(target))
        else:
            smap = xai.guided_gradcam(model, sample, int(target),
                                      take_abs=cfg["abs"])
        xai.save_saliency_csv(smap, out / f"saliency_{int(idx)}.csv",
                              dataset.lead_names if smap.scores.ndim == 2 else None)
    _write_resolved(cfg, "explain", out)
    print(f"wrote {indices.size} saliency maps to {out}")


def _cmd_cluster(cfg: dict) -> None:
    _require(cfg, "data")
    dataset = signals.load_dataset(cfg["data"])
    ks = _int_list(cfg["k_candidates"], "--k-candidates")
    if not ks or any(k < 2 for k in ks):
        raise _UsageError("--k-candidates must list integers >= 2")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    need = max(ks) + 1
    summary_lines = []
    for c in range(dataset.class_count):
        idx = dataset.class_indices(c)
        if cfg["max_per_class"]:
            idx = idx[:cfg["max_per_class"]]
        if idx.size < need:
            summary_lines.append(f"class_{c}=skipped ({idx.size} samples, need {need})")
            print(f"warning: class {c} skipped ({idx.size} samples, need {need})",
                  file=sys.stderr)
            continue
        dist = clustering.pairwise_dtw_matrix([dataset.values[i] for i in idx])
        result = clustering.select_k_from_matrix(dist, ks, seed=cfg["seed"])
        clustering.write_cluster_report_csv(result, dist,
                                            out / f"clusters_class{c}.csv",
                                            sample_ids=idx)
        summary_lines.append(
            f"class_{c}=k:{result.k},silhouette:{repr(float(result.silhouette))}")
    (out / "clusters.summary").write_text("\n".join(summary_lines) + "\n")
    _write_resolved(cfg, "cluster", out)
    print(f"wrote per-class cluster reports to {out}")


def _cmd_lead_importance(cfg: dict) -> None:
    _require(cfg, "data", "checkpoint")
    model = fcn.load_checkpoint(cfg["checkpoint"])
    if model.variant != fcn.VARIANT_IMAGE:
        raise _UsageError(
            "lead importance aggregates time x lead saliency maps, so it "
            f"needs an image2d checkpoint; this one is {model.variant}")
    dataset = signals.load_dataset(cfg["data"])
    indices, targets = _correct_test_samples(model, dataset, cfg)
    maps = []
    for idx, target in zip(indices, targets):
        sample = signals.batch_layout(dataset, np.array([idx]),
                                      signals.LAYOUT_IMAGE)[0]
        maps.append(xai.guided_gradcam(model, sample, int(target),
                                       take_abs=True).scores)
    li = stats.lead_importance(maps, targets, targets, dataset.class_count,
                               dataset.lead_names)
    vmap = dataset.ventricle_of_class or signals.default_ventricle_map(
        dataset.class_count)
    vents = stats.ventricle_rank(li, vmap)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stats.write_lead_importance_csv(li, vents, out / "lead_importance.csv")
    stats.write_ranking_csv(vents, out / "lead_ranking.csv")
    _write_resolved(cfg, "lead-importance", out)
    for vent, vi in sorted(vents.items()):
        names = [li.lead_names[i] for i in vi.ranking[:4]]
        print(f"{vent}: top leads {', '.join(names)}")


def _read_predictions_csv(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["sample", "true_class", "predicted_class"]:
        raise _UsageError(
            f"{path}: expected header 'sample,true_class,predicted_class'")
    body = [r for r in rows[1:] if r]
    samples = np.array([int(r[0]) for r in body], dtype=np.int64)
    true = np.array([int(r[1]) for r in body], dtype=np.int64)
    pred = np.array([int(r[2]) for r in body], dtype=np.int64)
    return samples, true, pred


def _cmd_compare(cfg: dict) -> None:
    _require(cfg, "predictions", "baseline", "scheme")
    if cfg["scheme"] not in stats.SCHEMES:
        raise _UsageError(f"--scheme must be one of {stats.SCHEMES}")
    for key in ("predictions", "baseline"):
        if not Path(cfg[key]).is_file():
            raise _UsageError(f"missing {key} file: {cfg[key]}")
    samples, y_true, y_pred = _read_predictions_csv(cfg["predictions"])
    base_samples, base_scheme, base_regions = stats.read_baseline_csv(cfg["baseline"])
    if base_scheme != cfg["scheme"]:
        raise _UsageError(
            f"baseline file uses scheme {base_scheme!r}, --scheme says {cfg['scheme']!r}")
    by_id = {int(s): i for i, s in enumerate(samples)}
    missing = [int(s) for s in base_samples if int(s) not in by_id]
    if missing:
        raise _UsageError(
            f"baseline rows reference samples absent from predictions: {missing[:5]}")
    rows = [by_id[int(s)] for s in base_samples]
    result = stats.dt_comparison(y_pred[rows], base_regions, y_true[rows],
                                 cfg["scheme"], alpha=cfg["alpha"])
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    stats.write_comparison_csv(result, out / "comparison.csv",
                               baseline_regions=base_regions,
                               class_predictions=y_pred[rows])
    _write_resolved(cfg, "compare", out)
    verdict = "significant" if result.significant else "not significant"
    print(f"model {result.accuracy_a_pct:.1f}% vs baseline "
          f"{result.accuracy_b_pct:.1f}%: p={result.p_value:.3g} ({verdict} "
          f"at alpha={result.alpha})")


_DISPATCH = {
    "gen": _cmd_gen,
    "train": _cmd_train,
    "explain": _cmd_explain,
    "cluster": _cmd_cluster,
    "lead-importance": _cmd_lead_importance,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve(args)
        _DISPATCH[args.command](cfg)
        return 0
    except (_UsageError, ValueError, FileNotFoundError, NotADirectoryError) as e:
        print(f"ecgfcn: error: {e}", file=sys.stderr)
        return 1
    except EcgFcnError as e:
        print(f"ecgfcn: failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
