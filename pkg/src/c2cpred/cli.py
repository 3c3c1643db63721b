"""Command-line pipeline: synth, features, label, train, predict, evaluate,
importance, and a one-shot pipeline meta-command.

Conventions
-----------
* stdout is human-oriented; machine-readable results are written to files
  (CSV / PLY / model JSON). Progress goes to stderr.
* Every command exits 0 only if all outputs were written; on failure,
  partially written outputs are removed.
* All randomness is derived from the command's ``--seed`` through named
  substreams, so identical invocations produce bit-identical outputs
  (runtimes excluded).
* ``--config FILE`` supplies defaults from an INI file (sections
  ``[features] [folds] [rf] [gbdt]``, keys equal to the long flag names with
  ``-`` replaced by ``_``); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, labeling, synthetic
from .cloudio import CloudFormatError, PointCloud, read_ply, read_xyz, write_ply, write_xyz
from .ensemble import (ColumnMismatchError, GbdtConfig, ModelFormatError, RfConfig,
                       load_model, predict, save_model, train_gbdt, train_rf)
from .evaluation import assign_spatial_folds, carve_validation_cells, cross_validate
from .features import FeatureConfig, FeatureMatrix, extract_features
from .rng import substream


class CliError(Exception):
    """User-facing command failure; message is printed to stderr."""


class OutputGuard:
    """Tracks output files so failures do not leave partial artifacts."""

    def __init__(self):
        self.paths: list[Path] = []

    def register(self, path) -> Path:
        path = Path(path)
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(path)
        return path

    def cleanup(self) -> None:
        for path in self.paths:
            try:
                path.unlink(missing_ok=True)
            except OSError:
                pass


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _default_threads() -> int:
    return max(1, os.cpu_count() or 1)


def _load_cloud(path) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise CliError(f"input file not found: {path}")
    try:
        if path.suffix.lower() == ".ply":
            return read_ply(path)
        return read_xyz(path)
    except CloudFormatError as exc:
        raise CliError(str(exc)) from None


def _write_cloud(cloud: PointCloud, path, ply_format: str) -> None:
    path = Path(path)
    if path.suffix.lower() == ".xyz":
        write_xyz(cloud, path)
    else:
        write_ply(cloud, path, format=ply_format)


def _load_config_file(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise CliError(f"cannot read config file: {exc}") from None
    except configparser.Error as exc:
        raise CliError(f"config file {path}: {exc}") from None
    return parser


def _resolve(args, section: str, key: str, builtin):
    """flag > config file > builtin default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    cfg = getattr(args, "_config_parser", None)
    if cfg is not None and cfg.has_option(section, key):
        raw = cfg.get(section, key)
        try:
            if isinstance(builtin, bool):
                return raw.strip().lower() in ("1", "true", "yes", "on")
            if isinstance(builtin, int) and not isinstance(builtin, bool):
                return int(raw)
            if isinstance(builtin, float):
                return float(raw)
            return raw
        except ValueError:
            raise CliError(f"config [{section}] {key}: cannot parse {raw!r}") from None
    return builtin


def _feature_config(args) -> FeatureConfig:
    config = FeatureConfig(
        k_min=_resolve(args, "features", "k_min", 10),
        k_max=_resolve(args, "features", "k_max", 100),
        k_step=_resolve(args, "features", "k_step", 1),
        cell_size=_resolve(args, "features", "cell_size", 0.25),
        chunk_size=_resolve(args, "features", "chunk_size", 8192),
        threads=args.threads,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(f"invalid feature config: {exc}") from None
    return config


def _rf_config(args, seed: int) -> RfConfig:
    config = RfConfig(
        n_estimators=_resolve(args, "rf", "n_estimators", 100),
        max_depth=_resolve(args, "rf", "max_depth", 20),
        max_samples=_resolve(args, "rf", "max_samples", 0.5),
        max_features=_resolve(args, "rf", "max_features", 1.0 / 3.0),
        min_samples_leaf=_resolve(args, "rf", "min_samples_leaf", 1),
        seed=seed,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(f"invalid rf config: {exc}") from None
    return config


def _gbdt_config(args, seed: int) -> GbdtConfig:
    config = GbdtConfig(
        max_depth=_resolve(args, "gbdt", "gbdt_max_depth", 8),
        eta=_resolve(args, "gbdt", "eta", 0.05),
        subsample=_resolve(args, "gbdt", "subsample", 0.8),
        colsample_bytree=_resolve(args, "gbdt", "colsample_bytree", 0.8),
        num_boost_round=_resolve(args, "gbdt", "num_boost_round", 1000),
        early_stopping_rounds=_resolve(args, "gbdt", "early_stopping_rounds", 50),
        n_bins=_resolve(args, "gbdt", "n_bins", 256),
        l2_lambda=_resolve(args, "gbdt", "l2_lambda", 1.0),
        min_child_weight=_resolve(args, "gbdt", "min_child_weight", 1.0),
        seed=seed,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise CliError(f"invalid gbdt config: {exc}") from None
    return config


def _load_features(path) -> FeatureMatrix:
    try:
        return FeatureMatrix.from_csv(path)
    except (CloudFormatError, ValueError, OSError) as exc:
        raise CliError(f"cannot load features: {exc}") from None


def _load_labels(path) -> labeling.LabeledCloud:
    try:
        return labeling.LabeledCloud.from_csv(path)
    except (CloudFormatError, ValueError, OSError) as exc:
        raise CliError(f"cannot load labels: {exc}") from None


def _join_retained(fm: FeatureMatrix, lc: labeling.LabeledCloud):
    """Align features with labels by idx and keep retained rows only."""
    if len(fm) != len(lc):
        raise CliError(
            f"row-count mismatch: features have {len(fm)} rows, labels {len(lc)}")
    if not np.array_equal(fm.indices, lc.indices):
        raise CliError("features and labels disagree on point indices")
    keep = lc.retained
    if not keep.any():
        raise CliError("no retained points after the retention filter")
    return fm.X[keep], lc.c2c_mm[keep], fm.indices[keep]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, guard: OutputGuard) -> int:
    if args.dump_scene:
        path = guard.register(args.dump_scene)
        path.write_text(synthetic.default_scene_config_text(), encoding="utf-8")
        _info(f"wrote default scene config to {path}")
        return 0
    if not args.out_ref or not args.out_mls:
        raise CliError("synth requires --out-ref and --out-mls (or --dump-scene)")

    if args.scene:
        try:
            spec, law, fraction = synthetic.parse_scene_config(args.scene)
        except synthetic.SceneConfigError as exc:
            raise CliError(str(exc)) from None
    else:
        spec, law, fraction = synthetic.default_scene(), synthetic.ErrorLaw(), \
            synthetic.DEFAULT_MLS_FRACTION
    if args.seed is not None:
        spec = synthetic.SceneSpec(spec.primitives, seed=args.seed)
    if args.mls_fraction is not None:
        fraction = args.mls_fraction
    if not 0.0 < fraction <= 1.0:
        raise CliError(f"mls fraction must be in (0, 1], got {fraction}")

    t0 = time.perf_counter()
    try:
        reference = synthetic.generate_reference(spec)
        base = synthetic.subsample(reference, fraction, substream(spec.seed, "mls.subsample"))
        mls, true_err = synthetic.corrupt(base, law, substream(spec.seed, "mls.corrupt"),
                                          workers=args.threads)
    except (synthetic.SceneConfigError, ValueError) as exc:
        raise CliError(str(exc)) from None

    out_ref = guard.register(args.out_ref)
    out_mls = guard.register(args.out_mls)
    _write_cloud(reference, out_ref, args.format)
    _write_cloud(mls, out_mls, args.format)
    _info(f"scene: {len(spec.primitives)} primitives, seed {spec.seed}")
    _info(f"reference: {len(reference)} points -> {out_ref}")
    _info(f"mls: {len(mls)} points (mean planted error {true_err.mean():.2f} mm) -> {out_mls}")
    _info(f"synth took {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_features(args, guard: OutputGuard) -> int:
    cloud = _load_cloud(args.cloud)
    config = _feature_config(args)
    if len(cloud) < config.k_max + 1:
        raise CliError(
            f"cloud has {len(cloud)} points; k_max={config.k_max} requires "
            f"at least {config.k_max + 1}")
    t0 = time.perf_counter()
    fm = extract_features(cloud, config, progress=not args.quiet)
    out = guard.register(args.output)
    fm.to_csv(out)
    _info(f"features: {len(fm)} rows x {len(fm.columns)} columns -> {out} "
          f"({time.perf_counter() - t0:.1f} s)")
    if fm.degenerate is not None and fm.degenerate.any():
        _info(f"  note: {int(fm.degenerate.sum())} degenerate neighborhoods capped")
    return 0


def cmd_label(args, guard: OutputGuard) -> int:
    mls = _load_cloud(args.mls)
    reference = _load_cloud(args.reference)
    if len(mls) == 0 or len(reference) == 0:
        raise CliError("label requires non-empty scan and reference clouds")
    threshold = args.threshold_mm
    if threshold <= 0:
        raise CliError(f"--threshold-mm must be positive, got {threshold}")
    t0 = time.perf_counter()
    labels = labeling.retention_filter(
        labeling.c2c_label(mls, reference, workers=args.threads), threshold)
    out = guard.register(args.output)
    labels.to_csv(out)
    kept = int(labels.retained.sum())
    _info(f"labels: {len(labels)} points, {kept} retained "
          f"(< {threshold:g} mm), {len(labels) - kept} dropped -> {out} "
          f"({time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_train(args, guard: OutputGuard) -> int:
    fm = _load_features(args.features)
    lc = _load_labels(args.labels)
    X, y, indices = _join_retained(fm, lc)
    seed = args.seed if args.seed is not None else 0

    t0 = time.perf_counter()
    if args.model == "rf":
        config = _rf_config(args, substream(seed, "train.rf"))
        model = train_rf(X, y, config, columns=fm.columns, threads=args.threads)
        _info(f"rf: {config.n_estimators} trees on {len(X)} rows "
              f"({time.perf_counter() - t0:.1f} s)")
    else:
        config = _gbdt_config(args, substream(seed, "train.gbdt"))
        val_fraction = args.val_fraction if args.val_fraction is not None else 0.1
        if not 0.0 < val_fraction < 1.0:
            raise CliError(f"--val-fraction must be in (0, 1), got {val_fraction}")
        if args.cloud:
            cloud = _load_cloud(args.cloud)
            if len(cloud) < len(fm):
                raise CliError("cloud is smaller than the feature table")
            xy = cloud.xyz[indices]
            try:
                folds = assign_spatial_folds(xy, args.grid_size, n_folds=2,
                                             seed=substream(seed, "train.val-cells"))
                val = carve_validation_cells(np.ones(len(X), dtype=bool), folds,
                                             substream(seed, "train.val-carve"))
            except ValueError as exc:
                raise CliError(str(exc)) from None
            _info(f"gbdt: validation = 10% of grid cells "
                  f"({int(val.sum())} points, cell-level carve)")
        else:
            rng = np.random.default_rng(substream(seed, "train.val-rows"))
            val = np.zeros(len(X), dtype=bool)
            n_val = max(1, int(round(val_fraction * len(X))))
            val[rng.choice(len(X), size=n_val, replace=False)] = True
            _info(f"gbdt: validation = seeded {val_fraction:.0%} row split "
                  f"({int(val.sum())} points); pass --cloud for a cell-level carve")
        if val.all() or not val.any():
            raise CliError("validation carve left no training data")
        model = train_gbdt(X[~val], y[~val], X[val], y[val], config,
                           columns=fm.columns)
        _info(f"gbdt: {len(model.trees)} rounds (best iteration "
              f"{model.best_iteration}) on {int((~val).sum())} rows "
              f"({time.perf_counter() - t0:.1f} s)")

    out = guard.register(args.output)
    save_model(model, out)
    _info(f"model -> {out}")
    return 0


def cmd_predict(args, guard: OutputGuard) -> int:
    try:
        model = load_model(args.model)
    except ModelFormatError as exc:
        raise CliError(str(exc)) from None
    fm = _load_features(args.features)
    cloud = _load_cloud(args.cloud)
    if len(fm) != len(cloud):
        raise CliError(
            f"feature table has {len(fm)} rows but cloud has {len(cloud)} points")
    try:
        pred = predict(model, fm.X, columns=fm.columns)
    except ColumnMismatchError as exc:
        raise CliError(str(exc)) from None

    scalars = {"pred_c2c_mm": np.empty(len(cloud))}
    scalars["pred_c2c_mm"][fm.indices] = pred
    if args.labels:
        lc = _load_labels(args.labels)
        if len(lc) != len(fm) or not np.array_equal(lc.indices, fm.indices):
            raise CliError("labels do not align with the feature table")
        abs_err = np.empty(len(cloud))
        residual = np.empty(len(cloud))
        abs_err[fm.indices] = np.abs(lc.c2c_mm - pred)
        residual[fm.indices] = pred - lc.c2c_mm
        scalars["abs_err_mm"] = abs_err
        scalars["residual_mm"] = residual

    out = guard.register(args.output)
    _write_cloud(cloud.with_scalars(**scalars), out, args.format)
    _info(f"predictions ({', '.join(scalars)}) -> {out}")
    return 0


def cmd_evaluate(args, guard: OutputGuard) -> int:
    from . import report as report_mod

    cloud = _load_cloud(args.cloud)
    fm = _load_features(args.features)
    lc = _load_labels(args.labels)
    X, y, indices = _join_retained(fm, lc)
    if indices.max() >= len(cloud):
        raise CliError("feature idx exceeds cloud size; wrong cloud for this table?")
    seed = args.seed if args.seed is not None else 0

    model_names = [m.strip() for m in args.models.split(",") if m.strip()]
    for name in model_names:
        if name not in ("rf", "gbdt"):
            raise CliError(f"--models: unknown model {name!r} (expected rf and/or gbdt)")
    if not model_names:
        raise CliError("--models selected no model")

    grid = _resolve(args, "folds", "grid_size", 3.0)
    n_folds = _resolve(args, "folds", "folds", 5)
    try:
        folds = assign_spatial_folds(cloud.xyz[indices], grid, n_folds,
                                     seed=substream(seed, "folds"))
    except ValueError as exc:
        raise CliError(str(exc)) from None

    def progress(fold, name, ms):
        if not args.quiet:
            _info(f"  fold {fold} {name}: rmse {ms.rmse_mm:.2f} mm, "
                  f"r2 {ms.r2:.3f}, {ms.runtime_s:.1f} s")

    try:
        report = cross_validate(
            X, y, folds,
            rf_config=_rf_config(args, substream(seed, "cv.rf")) if "rf" in model_names else None,
            gbdt_config=_gbdt_config(args, substream(seed, "cv.gbdt")) if "gbdt" in model_names else None,
            columns=fm.columns, threads=args.threads,
            importance_repeats=args.importance_repeats,
            progress=progress,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from None

    prefix = Path(args.output)
    csv_path = guard.register(prefix.with_name(prefix.name + ".csv"))
    txt_path = guard.register(prefix.with_name(prefix.name + ".txt"))
    report_mod.write_eval_csv(report, csv_path)
    text = report_mod.format_eval_text(report)
    txt_path.write_text(text, encoding="utf-8")
    print(text, end="")

    if report.permutation:
        for name, deltas in report.permutation.items():
            path = guard.register(prefix.with_name(f"{prefix.name}_importance_{name}.csv"))
            report_mod.write_importance_csv(fm.columns, deltas, path)
            if not args.no_figures:
                fig = guard.register(prefix.with_name(f"{prefix.name}_importance_{name}.png"))
                report_mod.render_importance_figure(
                    fm.columns, deltas, fig,
                    title=f"Permutation importance ({name.upper()})")
    if not args.no_figures:
        for fig_path in report_mod.render_eval_figures(report, prefix):
            guard.register(fig_path)
    _info(f"report -> {csv_path} / {txt_path}")
    return 0


def cmd_importance(args, guard: OutputGuard) -> int:
    from . import report as report_mod
    from .evaluation import permutation_importance

    try:
        model = load_model(args.model)
    except ModelFormatError as exc:
        raise CliError(str(exc)) from None
    fm = _load_features(args.features)
    lc = _load_labels(args.labels)
    X, y, _ = _join_retained(fm, lc)
    if args.repeats < 1:
        raise CliError(f"--repeats must be >= 1, got {args.repeats}")
    seed = args.seed if args.seed is not None else 0
    try:
        deltas = permutation_importance(model, X, y, repeats=args.repeats,
                                        seed=substream(seed, "importance"))
    except (ColumnMismatchError, ValueError) as exc:
        raise CliError(str(exc)) from None

    out = guard.register(args.output)
    report_mod.write_importance_csv(fm.columns, deltas[:, None], out)
    if not args.no_figures:
        fig = guard.register(Path(out).with_suffix(".png"))
        report_mod.render_importance_figure(fm.columns, deltas[:, None], fig,
                                            title=f"Permutation importance ({model.kind.upper()})")
    order = np.argsort(deltas)[::-1][:5]
    for j in order:
        _info(f"  {fm.columns[j]}: +{deltas[j]:.3f} mm RMSE when shuffled")
    _info(f"importance ({args.repeats} repeats) -> {out}")
    return 0


def cmd_pipeline(args, guard: OutputGuard) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0

    ns = argparse.Namespace(**vars(args))
    ns.seed = seed
    if bool(args.mls) != bool(args.reference):
        raise CliError("pipeline needs both --mls and --reference, or neither")
    if args.mls and args.reference:
        mls_path, ref_path = Path(args.mls), Path(args.reference)
    else:
        mls_path = out_dir / "mls.ply"
        ref_path = out_dir / "reference.ply"
        ns.out_ref, ns.out_mls = str(ref_path), str(mls_path)
        ns.dump_scene = None
        ns.mls_fraction = getattr(args, "mls_fraction", None)
        ns.format = "binary"
        cmd_synth(ns, guard)

    ns.cloud = str(mls_path)
    ns.output = str(out_dir / "features.csv")
    ns.quiet = args.quiet
    cmd_features(ns, guard)

    ns.mls = str(mls_path)
    ns.reference = str(ref_path)
    ns.output = str(out_dir / "labels.csv")
    ns.threshold_mm = args.threshold_mm
    cmd_label(ns, guard)

    ns.features = str(out_dir / "features.csv")
    ns.labels = str(out_dir / "labels.csv")
    ns.output = str(out_dir / "report")
    cmd_evaluate(ns, guard)
    _info(f"pipeline complete -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="top-level RNG seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="data-parallelism cap (default: all cores)")
    p.add_argument("--config", default=None, help="INI file with option defaults")
    p.add_argument("--quiet", action="store_true", help="less stderr progress")


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k-min", dest="k_min", type=int, default=None)
    p.add_argument("--k-max", dest="k_max", type=int, default=None)
    p.add_argument("--k-step", dest="k_step", type=int, default=None)
    p.add_argument("--cell-size", dest="cell_size", type=float, default=None,
                   help="raster cell size in meters (default 0.25)")
    p.add_argument("--chunk-size", dest="chunk_size", type=int, default=None)


def _add_rf_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-estimators", dest="n_estimators", type=int, default=None)
    p.add_argument("--max-depth", dest="max_depth", type=int, default=None)
    p.add_argument("--max-samples", dest="max_samples", type=float, default=None)
    p.add_argument("--max-features", dest="max_features", type=float, default=None)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=int, default=None)


def _add_gbdt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gbdt-max-depth", dest="gbdt_max_depth", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--subsample", type=float, default=None)
    p.add_argument("--colsample-bytree", dest="colsample_bytree", type=float, default=None)
    p.add_argument("--num-boost-round", dest="num_boost_round", type=int, default=None)
    p.add_argument("--early-stopping-rounds", dest="early_stopping_rounds",
                   type=int, default=None)
    p.add_argument("--n-bins", dest="n_bins", type=int, default=None)
    p.add_argument("--l2-lambda", dest="l2_lambda", type=float, default=None)
    p.add_argument("--min-child-weight", dest="min_child_weight", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2cpred",
        description="Predict per-point cloud-to-cloud uncertainty from local "
                    "geometric features.")
    parser.add_argument("--version", action="version", version=f"c2cpred {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic (reference, mls) cloud pair")
    p.add_argument("--scene", default=None, help="scene config file (INI)")
    p.add_argument("--out-ref", dest="out_ref", default=None)
    p.add_argument("--out-mls", dest="out_mls", default=None)
    p.add_argument("--mls-fraction", dest="mls_fraction", type=float, default=None)
    p.add_argument("--format", choices=("ascii", "binary"), default="binary",
                   help="PLY encoding for outputs")
    p.add_argument("--dump-scene", dest="dump_scene", default=None,
                   help="write the default scene config to this path and exit")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract the 27-column feature matrix")
    p.add_argument("cloud", help="scan cloud (.ply or .xyz)")
    p.add_argument("-o", "--output", required=True, help="feature CSV path")
    _add_feature_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("label", help="compute C2C labels against a reference cloud")
    p.add_argument("mls", help="scan cloud")
    p.add_argument("reference", help="reference cloud")
    p.add_argument("-o", "--output", required=True, help="label CSV path")
    p.add_argument("--threshold-mm", dest="threshold_mm", type=float,
                   default=labeling.DEFAULT_RETENTION_MM)
    _add_common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model on features + labels")
    p.add_argument("features", help="feature CSV")
    p.add_argument("labels", help="label CSV")
    p.add_argument("-o", "--output", required=True, help="model JSON path")
    p.add_argument("--model", choices=("rf", "gbdt"), required=True)
    p.add_argument("--cloud", default=None,
                   help="scan cloud; enables the cell-level validation carve for gbdt")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)
    p.add_argument("--grid-size", dest="grid_size", type=float, default=3.0)
    _add_rf_flags(p)
    _add_gbdt_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict and write a colored cloud")
    p.add_argument("model", help="model JSON")
    p.add_argument("features", help="feature CSV")
    p.add_argument("cloud", help="scan cloud the features came from")
    p.add_argument("-o", "--output", required=True, help="output PLY path")
    p.add_argument("--labels", default=None, help="label CSV (adds abs_err/residual)")
    p.add_argument("--format", choices=("ascii", "binary"), default="binary")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="spatially blocked cross-validation report")
    p.add_argument("cloud", help="scan cloud (for fold blocking)")
    p.add_argument("features", help="feature CSV")
    p.add_argument("labels", help="label CSV")
    p.add_argument("-o", "--output", required=True,
                   help="report path prefix (writes <prefix>.csv/.txt/figures)")
    p.add_argument("--models", default="rf,gbdt")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--grid-size", dest="grid_size", type=float, default=None)
    p.add_argument("--importance-repeats", dest="importance_repeats", type=int, default=0,
                   help="permutation importance repeats per fold (0 = off)")
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    _add_rf_flags(p)
    _add_gbdt_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("importance", help="permutation feature importance of a model")
    p.add_argument("model", help="model JSON")
    p.add_argument("features", help="feature CSV")
    p.add_argument("labels", help="label CSV")
    p.add_argument("-o", "--output", required=True, help="importance CSV path")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("pipeline", help="synth -> features -> label -> evaluate")
    p.add_argument("-o", "--out-dir", dest="out_dir", required=True)
    p.add_argument("--scene", default=None, help="scene config file (INI)")
    p.add_argument("--mls", default=None, help="existing scan cloud (skips synth)")
    p.add_argument("--reference", default=None, help="existing reference cloud")
    p.add_argument("--mls-fraction", dest="mls_fraction", type=float, default=None)
    p.add_argument("--threshold-mm", dest="threshold_mm", type=float,
                   default=labeling.DEFAULT_RETENTION_MM)
    p.add_argument("--models", default="rf,gbdt")
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--grid-size", dest="grid_size", type=float, default=None)
    p.add_argument("--importance-repeats", dest="importance_repeats", type=int, default=0)
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    _add_feature_flags(p)
    _add_rf_flags(p)
    _add_gbdt_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None:
        args.threads = _default_threads()
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1

    guard = OutputGuard()
    try:
        args._config_parser = (_load_config_file(args.config)
                               if getattr(args, "config", None) else None)
        return args.func(args, guard)
    except CliError as exc:
        guard.cleanup()
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # unexpected: clean partial outputs, re-raise context
        guard.cleanup()
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
