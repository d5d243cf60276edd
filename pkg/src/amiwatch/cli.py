"""Command-line entry point: ``amiwatch <command> [options]``.

Every command reads and writes artifacts in one output directory
(``--out``, default ``out``), prints a one-line summary to stdout, and on
failure prints an error object ``{"error", "message", "exit_code"}`` to
stderr.

Exit codes:
  0  success
  1  unexpected internal error
  2  usage error (unknown command or flag, bad flag value)
  3  invalid configuration (bad key or value, missing input file)
  4  missing upstream artifact (run the producing command first)
  5  data error (schema, parsing, too little history, degenerate data)
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import autoenc, cluster, config, evalboot, gbdt, ingest, mdscore, stats
from .errors import AmiwatchError, ConfigError, MissingArtifactError

log = logging.getLogger("amiwatch")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_DATA = 0, 1, 2, 3, 4, 5

# artifact file -> command that writes it
PRODUCERS = {
    "features.csv": "ingest", "records.csv": "ingest", "ingest.json": "ingest", "injected.csv": "ingest",
    "stats.json": "stats",
    "gbdt_model.json": "train-gbdt", "gbdt_metrics.json": "train-gbdt",
    "md_calibration.json": "detect-md", "md_verdicts.csv": "detect-md",
    "ae_model.json": "train-ae", "ae_history.csv": "train-ae",
    "ae_verdicts.csv": "detect-ae",
    "cluster_scores.json": "cluster", "bootstrap.json": "bootstrap",
    "k_sweep.csv": "sweep-k",
}
FLOAT_FORMAT = "%.10g"
FIGURES = {
    "md_validation.csv": ("timestamp", "consumption", "d_m", "mav", "md_threshold",
                          "mav_threshold", "flag_md", "flag_mav", "flag_combined"),
    "md_test.csv": ("timestamp", "consumption", "d_m", "md_threshold", "flag_md"),
    "ae_error_histogram.csv": ("bin_left", "bin_right", "count", "threshold"),
    "ae_anomalies.csv": ("split", "timestamp", "consumption", "reconstruction_error",
                         "threshold", "flag"),
    "k_sweep.csv": ("split", "k", "count"),
}
HISTOGRAM_BINS = 50


class UsageError(AmiwatchError):
    code = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- artifact helpers --------------------------------------------------------

def _need(out: Path, name: str) -> Path:
    path = out / name
    if not path.is_file():
        raise MissingArtifactError(
            f"{path} not found; run `amiwatch {PRODUCERS.get(name, '?')}` first")
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, df: pd.DataFrame) -> None:
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _read_json(path: Path):
    return json.loads(path.read_text())


def _features(out: Path) -> ingest.FeatureFrame:
    return ingest.FeatureFrame.from_csv(_need(out, "features.csv"))


def _gbdt_model(out: Path) -> gbdt.GbdtModel:
    return gbdt.GbdtModel.loads(_need(out, "gbdt_model.json").read_text())


def _ae_model(out: Path) -> autoenc.AutoencoderModel:
    return autoenc.AutoencoderModel.loads(_need(out, "ae_model.json").read_text())


def _parts(ff: ingest.FeatureFrame) -> dict:
    tr, te, va = ff.split()
    return {"train": tr, "test": te, "validation": va}


def _verdicts(out: Path, name: str) -> pd.DataFrame:
    df = pd.read_csv(_need(out, name))
    df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True)
    return df


def _clean(v):
    """JSON-safe scalar; non-finite floats become null."""
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    return v


# -- commands ----------------------------------------------------------------

def cmd_ingest(cfg, out):
    inp, ing = cfg["inputs"], cfg["ingest"]
    injected = None
    if inp["meter"]:
        records = ingest.load_and_join(inp["meter"], inp["weather"], inp["holiday"],
                                       meter_id=inp["meter_id"], site_id=inp["site_id"])
        source = {"kind": "csv", "meter": Path(inp["meter"]).name}
    elif inp["synthetic_rows"]:
        syn = ingest.synthesize(int(inp["synthetic_rows"]), seed=int(inp["synthetic_seed"]))
        records, injected = syn.records, syn.injected
        source = {"kind": "synthetic", "rows": int(inp["synthetic_rows"]),
                  "seed": int(inp["synthetic_seed"]), "clean_envelope": syn.clean_envelope}
    else:
        raise ConfigError("ingest needs inputs.meter (--meter) or inputs.synthetic_rows "
                          "(--synthetic-rows)")
    imputed = ingest.impute_records(records, ing["mice_iters"], ing["mice_tol"],
                                    ing["mice_seed"])
    ff = ingest.build_features(imputed, cap=ing["cap"])
    ff.train_end, ff.test_end = ingest.resolve_boundaries(
        len(ff), cfg["split"]["train_end"], cfg["split"]["test_end"])
    ff.to_csv(out / "features.csv")
    imputed.loc[:, list(ingest.RECORD_COLUMNS)].to_csv(out / "records.csv", index=False,
                                                       lineterminator="\n")
    if injected is not None:
        inj = injected.assign(timestamp=pd.DatetimeIndex(injected["timestamp"]))
        _write_csv(out / "injected.csv", inj)
    sizes = {k: len(v) for k, v in _parts(ff).items()}
    _write_json(out / "ingest.json", {"source": source, "report": ff.report, "splits": sizes})
    return (f"ingest: {len(ff)} feature rows "
            f"(train {sizes['train']}, test {sizes['test']}, validation {sizes['validation']})")


def cmd_stats(cfg, out):
    ff = _features(out)
    column = cfg["stats"]["column"]
    if column not in ff.data.columns:
        raise ConfigError(f"stats.column {column!r} is not a feature column")
    rep = stats.report(ff.data, column)
    (out / "stats.json").write_text(stats.dumps(rep) + "\n")
    norm = rep["normality"]
    mean = next(r["mean"] for r in rep["summary"] if r["column"] == column)
    verdict = "normal" if norm["normal_at_5pct"] else "not normal"
    return (f"stats: {column} mean {mean:.3f}, KS p={norm['ks_pvalue']:.3g}, "
            f"AD={norm['ad_statistic']:.3f} ({verdict} at 5%)")


def cmd_train_gbdt(cfg, out):
    ff = _features(out)
    parts = _parts(ff)
    gcfg = config.gbdt_config(cfg)
    model = gbdt.fit(parts["train"], gcfg)
    (out / "gbdt_model.json").write_text(model.dumps() + "\n")
    metrics = {"mae": {name: gbdt.mae(p["consumption"], gbdt.predict(model, p))
                       for name, p in parts.items()}}
    folds = int(cfg["gbdt"]["cv_folds"])
    if folds:
        metrics["cv"] = gbdt.cross_validate(parts["train"], gcfg, k=folds)
    metrics["importance"] = [{"feature": f, "gain_share": g}
                             for f, g in gbdt.feature_importance(model)]
    _write_json(out / "gbdt_metrics.json", metrics)
    _write_csv(out / "gbdt_importance.csv", pd.DataFrame(metrics["importance"],
                                                         columns=["feature", "gain_share"]))
    if model.trees:
        (out / "gbdt_tree0.txt").write_text(gbdt.export_tree(model, 0) + "\n")
    cv = f", cv mean {metrics['cv']['mean_mae']:.3f}" if folds else ""
    return (f"train-gbdt: {len(model.trees)} trees, test MAE "
            f"{metrics['mae']['test']:.3f}{cv}")


def _md_distances(model, calibration, part):
    sf = mdscore.score_frame(part, gbdt.predict(model, part), calibration.features)
    return sf, mdscore.mahalanobis(sf.to_numpy(dtype=np.float64), calibration)


def cmd_detect_md(cfg, out):
    md = cfg["md"]
    ff = _features(out)
    model = _gbdt_model(out)
    parts = _parts(ff)
    ref = mdscore.score_frame(parts["validation"], gbdt.predict(model, parts["validation"]),
                              md["features"])
    cal = mdscore.calibrate(ref, lam=md["lam"], features=md["features"])
    _write_json(out / "md_calibration.json",
                {"calibration": cal.to_dict(), "w": int(md["w"]), "q": float(md["q"]),
                 "buffer": int(md["buffer"]), "threshold_mode": md["threshold_mode"]})
    if md["split"] == "both":
        groups = [("test", parts["test"]), ("validation", parts["validation"])]
    elif md["split"] == "all":
        groups = [("all", ff.data)]
    else:
        groups = [(md["split"], parts[md["split"]])]
    frames = []
    for name, part in groups:
        sf, d = _md_distances(model, cal, part)
        if md["threshold_mode"] == "trailing":
            v = mdscore.detect_trailing(d, int(md["w"]), float(md["q"]), int(md["buffer"]),
                                        part.index)
        else:
            v = mdscore.detect(d, int(md["w"]), float(md["q"]), part.index)
        labels = ff.split_labels()[ff.data.index.get_indexer(part.index)]
        v.insert(1, "split", labels)
        v.insert(2, "consumption", part["consumption"].to_numpy())
        v.insert(3, "prediction", sf["prediction"].to_numpy())
        frames.append(v)
    verdicts = pd.concat(frames, ignore_index=True)
    _write_csv(out / "md_verdicts.csv", verdicts)
    counts = ", ".join(f"{name} {int(f['flag_md'].sum())}/{len(f)}"
                       for (name, _), f in zip(groups, frames))
    return f"detect-md ({md['threshold_mode']}): MD flags {counts}"


def cmd_train_ae(cfg, out):
    ae = cfg["ae"]
    ff = _features(out)
    parts = _parts(ff)
    feats = tuple(ae["features"])
    scaler = autoenc.fit_scaler(autoenc.feature_matrix(parts["train"], feats))
    X = {n: scaler.transform(autoenc.feature_matrix(p, feats)) for n, p in parts.items()}
    net = autoenc.build_model(len(feats), seed=int(ae["seed"]))
    net.features = feats
    trained = autoenc.train(net, X["train"], X[ae["monitor_split"]],
                            batch_size=int(ae["batch_size"]),
                            max_epochs=int(ae["max_epochs"]), patience=int(ae["patience"]),
                            lr=float(ae["lr"]), seed=int(ae["seed"]))
    trained.scaler = scaler
    (out / "ae_model.json").write_text(trained.dumps() + "\n")
    hist = pd.DataFrame(trained.history, columns=["epoch", "train_loss", "val_loss"])
    _write_csv(out / "ae_history.csv", hist)
    best = trained.history[trained.best_epoch - 1]
    return (f"train-ae: {len(trained.history)} epochs, best epoch {trained.best_epoch} "
            f"(val loss {best[2]:.6g}), {trained.total_params} parameters")


def _ae_errors(model, part):
    X = model.scaler.transform(autoenc.feature_matrix(part, model.features))
    return autoenc.reconstruction_errors(model, X)


def cmd_detect_ae(cfg, out):
    k = float(cfg["ae"]["k"])
    ff = _features(out)
    model = _ae_model(out)
    parts = _parts(ff)
    frames = []
    for name in ("test", "validation"):
        part = parts[name]
        v = autoenc.detect(model, None, k, part.index, errors=_ae_errors(model, part))
        v.insert(1, "split", name)
        v.insert(2, "consumption", part["consumption"].to_numpy())
        frames.append(v)
    verdicts = pd.concat(frames, ignore_index=True)
    _write_csv(out / "ae_verdicts.csv", verdicts)
    counts = ", ".join(f"{f['split'].iloc[0]} {int(f['flag'].sum())}/{len(f)}" for f in frames)
    return f"detect-ae (k={k:g}): flags {counts}"


def cmd_sweep_k(cfg, out):
    ff = _features(out)
    model = _ae_model(out)
    parts = _parts(ff)
    ks = [float(k) for k in cfg["sweep"]["k_values"]]
    rows = []
    for name in ("test", "validation"):
        e = _ae_errors(model, parts[name])
        rows += [(name, k, c) for k, c in autoenc.k_sweep(model, None, ks, errors=e)]
    _write_csv(out / "k_sweep.csv", pd.DataFrame(rows, columns=["split", "k", "count"]))
    test = [c for s, _, c in rows if s == "test"]
    return f"sweep-k: {len(ks)} multipliers, test counts {test[0]} .. {test[-1]}"


def cmd_cluster(cfg, out):
    cl = cfg["cluster"]
    if cl["source"] == "md":
        df, flag_col, score = _verdicts(out, "md_verdicts.csv"), "flag_md", "d_m"
    else:
        df, flag_col, score = _verdicts(out, "ae_verdicts.csv"), "flag", "reconstruction_error"
    sel = df[(df["split"] == cl["split"]) & (df[flag_col] == 1)].reset_index(drop=True)
    if len(sel) < 2:
        raise ValueError(f"only {len(sel)} anomalies in the {cl['split']} split; "
                         "clustering needs at least two")
    points = cluster.anomaly_points(sel, score)
    dendro = cluster.upgma(points)
    height = None if cl["height"] is None else float(cl["height"])
    assign = cluster.cut(dendro, height)
    (out / "dendrogram.json").write_text(dendro.to_json() + "\n")
    _write_csv(out / "dendrogram.csv", dendro.to_frame())
    _write_csv(out / "clusters.csv", pd.DataFrame({"timestamp": sel["timestamp"],
                                                   "label": assign.labels}))
    scores = {"source": cl["source"], "split": cl["split"], "n_points": len(sel),
              "height": assign.height, "n_clusters": assign.n_clusters,
              "silhouette": None, "davies_bouldin": None}
    if 2 <= assign.n_clusters < len(sel):
        scores["silhouette"] = cluster.silhouette(points, assign)
        scores["davies_bouldin"] = _clean(cluster.davies_bouldin(points, assign))
    _write_json(out / "cluster_scores.json", scores)
    sil = "n/a" if scores["silhouette"] is None else f"{scores['silhouette']:.3f}"
    db = "n/a" if scores["davies_bouldin"] is None else f"{scores['davies_bouldin']:.3f}"
    return (f"cluster: {len(sel)} anomalies -> {assign.n_clusters} clusters, "
            f"silhouette {sil}, Davies-Bouldin {db}")


def cmd_bootstrap(cfg, out):
    bs = cfg["bootstrap"]
    ff = _features(out)
    model = _gbdt_model(out)
    part = _parts(ff)[bs["split"]]
    rep = evalboot.bootstrap_ci(part["consumption"], gbdt.predict(model, part),
                                metric=evalboot.mae, B=int(bs["B"]),
                                level=float(bs["level"]), seed=int(bs["seed"]))
    _write_json(out / "bootstrap.json", {**rep.to_dict(), "split": bs["split"]})
    return (f"bootstrap: {bs['split']} MAE {rep.estimate:.3f}, "
            f"{100 * rep.level:g}% CI [{rep.ci_low:.3f}, {rep.ci_high:.3f}]")


def _stream_line(line, builder, model, cal, state):
    rec = json.loads(line)
    if not isinstance(rec, dict) or "ts" not in rec or "value" not in rec:
        raise ValueError("record needs 'ts' and 'value'")
    row, status = builder.push(rec["ts"], rec["value"], rec.get("temperature"),
                               rec.get("holiday") or 0)
    base = {"ts": rec["ts"], "d_m": None, "mav": None, "flag_md": 0, "flag_mav": 0,
            "flag_combined": 0, "warming_up": True, "status": status}
    if row is None:
        return base
    x = np.array([[row[f] for f in model.features]], dtype=np.float64)
    row["prediction"] = float(gbdt.predict(model, x)[0])
    point = np.array([row[f] for f in cal.features], dtype=np.float64)
    v, _ = mdscore.stream_score(point, state, rec["ts"])
    return {"ts": rec["ts"], "d_m": v.d_m, "mav": v.mav, "flag_md": v.flag_md,
            "flag_mav": v.flag_mav, "flag_combined": v.flag_combined,
            "warming_up": v.warming_up, "status": status}


def cmd_stream(cfg, out, args):
    model = _gbdt_model(out)
    doc = _read_json(_need(out, "md_calibration.json"))
    cal = mdscore.Calibration.from_dict(doc["calibration"])
    md = cfg["md"]
    # flags given on the command line win over the detect-md settings
    w = int(md["w"] if args.w is not None else doc["w"])
    q = float(md["q"] if args.q is not None else doc["q"])
    buf = int(md["buffer"] if args.buffer is not None else doc["buffer"])
    state = mdscore.StreamState(cal, w=w, q=q, buffer=buf)
    builder = ingest.OnlineFeatureBuilder(cap=cfg["ingest"]["cap"])
    src = open(args.input) if args.input else sys.stdin
    dst = open(args.output, "w") if args.output else sys.stdout
    n = errors = flags = 0
    try:
        for line in src:
            if not line.strip():
                continue
            n += 1
            try:
                res = _stream_line(line, builder, model, cal, state)
            except (ValueError, TypeError, KeyError) as exc:
                errors += 1
                res = {"ts": None, "error": str(exc), "line": n}
            flags += res.get("flag_md", 0)
            dst.write(json.dumps(res, allow_nan=False) + "\n")
            dst.flush()
    finally:
        if args.input:
            src.close()
        if args.output:
            dst.close()
    return f"stream: {n} records, {flags} MD flags, {errors} rejected", sys.stderr


def _split_counts(df, cols):
    out = {}
    for name, g in df.groupby("split", sort=True):
        out[name] = {"rows": int(len(g)), **{c: int(g[c].sum()) for c in cols}}
    return out


def _recall(df, flag_col, spikes):
    res = {}
    for name, g in df.groupby("split", sort=True):
        hit = g["timestamp"].isin(spikes)
        if hit.any():
            res[name] = {"injected": int(hit.sum()),
                         "recall": float(g.loc[hit, flag_col].mean()),
                         "flagged_share": float(g[flag_col].mean())}
    return res


def cmd_report(cfg, out):
    md = _verdicts(out, "md_verdicts.csv")
    ae = _verdicts(out, "ae_verdicts.csv")
    sweep = pd.read_csv(_need(out, "k_sweep.csv"))
    figdir = out / "figures"
    figdir.mkdir(exist_ok=True)
    va = md[md["split"] == "validation"]
    te = md[md["split"] == "test"]
    figs = {"md_validation.csv": va, "md_test.csv": te, "k_sweep.csv": sweep}
    ae_te = ae[ae["split"] == "test"]
    if len(ae_te):
        e = ae_te["reconstruction_error"].to_numpy()
        counts, edges = np.histogram(e, bins=HISTOGRAM_BINS, range=(0.0, float(e.max())))
        figs["ae_error_histogram.csv"] = pd.DataFrame(
            {"bin_left": edges[:-1], "bin_right": edges[1:], "count": counts,
             "threshold": float(ae_te["threshold"].iloc[0])})
    figs["ae_anomalies.csv"] = ae
    for name, df in figs.items():
        _write_csv(figdir / name, df[list(FIGURES[name])])
    rep = {"md": _split_counts(md, ["flag_md", "flag_mav", "flag_combined"]),
           "ae": _split_counts(ae, ["flag"]),
           "figures": {f"figures/{n}": list(FIGURES[n]) for n in sorted(figs)}}
    for key, name in (("ingest", "ingest.json"), ("gbdt", "gbdt_metrics.json"),
                      ("cluster", "cluster_scores.json"), ("bootstrap", "bootstrap.json")):
        if (out / name).is_file():
            rep[key] = _read_json(out / name)
    if (out / "stats.json").is_file():
        rep["normality"] = _read_json(out / "stats.json")["normality"]
    if (out / "injected.csv").is_file():
        inj = pd.read_csv(out / "injected.csv")
        spikes = pd.to_datetime(inj.loc[inj["kind"] == "spike", "timestamp"], utc=True)
        rep["injection_recall"] = {"md": _recall(md, "flag_md", spikes),
                                   "ae": _recall(ae, "flag", spikes)}
    _write_json(out / "report.json", rep)
    return f"report: report.json and {len(figs)} figure tables in {figdir}"


# -- argument parsing --------------------------------------------------------

# (flag, section, key, type, help)
OVERRIDES = {
    "inputs": [("--meter", "inputs", "meter", str, "meter CSV (timestamp, meter_id, value)"),
               ("--weather", "inputs", "weather", str, "weather CSV (timestamp, site_id, temperature)"),
               ("--holiday", "inputs", "holiday", str, "holiday CSV (date)"),
               ("--meter-id", "inputs", "meter_id", str, "meter to select from the meter CSV"),
               ("--site-id", "inputs", "site_id", str, "site to select from the weather CSV"),
               ("--synthetic-rows", "inputs", "synthetic_rows", int,
                "generate a synthetic series of this many hourly readings"),
               ("--synthetic-seed", "inputs", "synthetic_seed", int, "seed for the synthetic series"),
               ("--train-end", "split", "train_end", float,
                "end of the train split (row count, or fraction in (0, 1))"),
               ("--test-end", "split", "test_end", float,
                "end of the test split (row count, or fraction in (0, 1))"),
               ("--mice-seed", "ingest", "mice_seed", int, "seed for the imputation start")],
    "stats": [("--column", "stats", "column", str, "column for the normality tests")],
    "gbdt": [("--n-trees", "gbdt", "n_trees", int, "boosting rounds"),
             ("--learning-rate", "gbdt", "learning_rate", float, "shrinkage"),
             ("--max-depth", "gbdt", "max_depth", int, "tree depth limit"),
             ("--min-samples-leaf", "gbdt", "min_samples_leaf", int, "smallest leaf"),
             ("--cv-folds", "gbdt", "cv_folds", int, "chronological CV folds (0 = off)"),
             ("--gbdt-seed", "gbdt", "seed", int, "row-subsampling seed")],
    "md": [("--q", "md", "q", float, "threshold quantile"),
           ("--window", "md", "w", int, "moving-average window"),
           ("--buffer", "md", "buffer", int, "trailing threshold buffer length"),
           ("--lam", "md", "lam", float, "covariance regularization"),
           ("--threshold-mode", "md", "threshold_mode", str, "global or trailing"),
           ("--split", "md", "split", str, "test, validation, both or all")],
    "ae": [("--k", "ae", "k", float, "threshold multiplier"),
           ("--batch-size", "ae", "batch_size", int, "mini-batch size"),
           ("--max-epochs", "ae", "max_epochs", int, "epoch limit"),
           ("--patience", "ae", "patience", int, "early-stopping patience"),
           ("--ae-seed", "ae", "seed", int, "initialization and shuffling seed")],
    "cluster": [("--source", "cluster", "source", str, "md or ae verdicts"),
                ("--cluster-split", "cluster", "split", str, "test or validation"),
                ("--height", "cluster", "height", float, "cut height (default: largest gap)")],
    "bootstrap": [("--resamples", "bootstrap", "B", int, "number of resamples"),
                  ("--level", "bootstrap", "level", float, "confidence level"),
                  ("--boot-seed", "bootstrap", "seed", int, "resampling seed"),
                  ("--boot-split", "bootstrap", "split", str, "split to evaluate")],
    "sweep": [("--k-values", "sweep", "k_values", lambda s: [float(v) for v in s.split(",")],
               "comma-separated multipliers")],
}
COMMANDS = {
    "ingest": (cmd_ingest, ["inputs"], "load or synthesize data and build features"),
    "stats": (cmd_stats, ["stats"], "summary statistics and normality tests"),
    "train-gbdt": (cmd_train_gbdt, ["gbdt"], "fit the boosted regressor"),
    "detect-md": (cmd_detect_md, ["md"], "Mahalanobis/moving-average detection"),
    "train-ae": (cmd_train_ae, ["ae"], "train the autoencoder"),
    "detect-ae": (cmd_detect_ae, ["ae"], "reconstruction-error detection"),
    "cluster": (cmd_cluster, ["cluster"], "cluster detected anomalies"),
    "bootstrap": (cmd_bootstrap, ["bootstrap"], "bootstrap CI of the regression MAE"),
    "sweep-k": (cmd_sweep_k, ["sweep"], "anomaly count per threshold multiplier"),
    "stream": (cmd_stream, ["md"], "score NDJSON readings from stdin one at a time"),
    "report": (cmd_report, [], "aggregate artifacts into report.json and figure tables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="amiwatch", description=__doc__.split("\n")[0],
                     epilog=__doc__[__doc__.index("Exit codes:"):],
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file (flags win over it)")
    common.add_argument("--out", default="out", help="artifact directory (default: out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, (_, groups, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        for group in groups:
            for flag, _s, key, typ, h in OVERRIDES[group]:
                p.add_argument(flag, dest=key, type=typ, default=None, help=h)
        if name == "stream":
            p.add_argument("--input", help="NDJSON file instead of stdin")
            p.add_argument("--output", help="NDJSON file instead of stdout")
    return parser


def _overrides(args, groups) -> dict:
    res = {}
    for group in groups:
        for _flag, section, key, _typ, _h in OVERRIDES[group]:
            v = getattr(args, key, None)
            if v is None:
                continue
            if isinstance(v, float) and section == "split" and v.is_integer() and v >= 1:
                v = int(v)
            res.setdefault(section, {})[key] = v
    return res


def _fail(exc, code):
    err = {"error": getattr(exc, "code", type(exc).__name__), "message": str(exc),
           "exit_code": code}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("no command given; see `amiwatch --help`")
    except UsageError as exc:
        return _fail(exc, EXIT_USAGE)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    func, groups, _ = COMMANDS[args.command]
    try:
        cfg = config.load(args.config, _overrides(args, groups))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        res = func(cfg, out, args) if args.command == "stream" else func(cfg, out)
        msg, stream = res if isinstance(res, tuple) else (res, sys.stdout)
        print(msg, file=stream)
        return EXIT_OK
    except ConfigError as exc:
        return _fail(exc, EXIT_CONFIG)
    except MissingArtifactError as exc:
        return _fail(exc, EXIT_ARTIFACT)
    except (AmiwatchError, ValueError, KeyError) as exc:
        return _fail(exc, EXIT_DATA)
    except Exception as exc:  # noqa: BLE001 - last-resort error object
        log.debug("internal error", exc_info=True)
        return _fail(exc, EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
