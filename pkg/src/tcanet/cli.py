"""Command-line harness: pdf-fit, train-rbm, train-dbn, train-aec, eval.

Config precedence is CLI flags > key=value config file > built-in defaults.
Training commands write a metrics CSV (stable schema epoch,phase,mse,
cond_ll,val_err with a config echo in comment lines), periodic PGM
reconstruction dumps, and a final `.tcam` model file.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from tcanet.activations import BaseKind
from tcanet.autoenc import ae_evaluate, train_autoencoder
from tcanet.config import TrainConfig
from tcanet.data import (
    dither,
    holdout_split,
    load_idx,
    load_model,
    save_model,
    subset,
    write_pgm,
)
from tcanet.dbn import (
    classification_error,
    init_dbn,
    reconstruction_error,
    swap_top_mixture,
    top_train,
    train_layerwise,
    updown_finetune,
)
from tcanet.errors import TrainingFailure
from tcanet.pdf_estimation import TargetLaw, demodalize, density, fit_univariate
from tcanet.rbm import reconstruction_metrics, train_rbm_phases

_BASES = {"ted": BaseKind.TED, "sigmoid": BaseKind.SIGMOID_BERNOULLI,
          "linear": BaseKind.LINEAR_GAUSSIAN}

# defaults shared by the training commands; a config file overrides these,
# explicit flags override both
_DEFAULTS = {
    "classes": "3,8,9",
    "per_class": 500,
    "hidden": 32,
    "top": 256,
    "mixtures": 3,
    "base": "ted",
    "cd_k": 1,
    "lr": 0.05,
    "tca_lr": 0.01,
    "lambda_fe": 1.0,
    "batch_size": 100,
    "epochs_a": 10,
    "epochs_b": 5,
    "epochs_c": 10,
    "seed": 0,
    "dither_mean": 0.05,
    "dump_every": 0,
    "out_dir": ".",
    "target": "uniform01",
    "epochs": 500,
    "holdout": 0,
    "epochs_top": 10,
    "epochs_updown_frozen": 0,
    "epochs_updown": 5,
    "plateau": 0,
    "freeze_tca": False,
}


def _add_common(p):
    p.add_argument("--config", help="key=value config file (flags win)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def _add_data_flags(p):
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--classes")
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--dither-mean", dest="dither_mean", type=float)


def _add_train_flags(p):
    p.add_argument("--mixtures", type=int)
    p.add_argument("--base", choices=sorted(_BASES))
    p.add_argument("--cd-k", dest="cd_k", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--tca-lr", dest="tca_lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs-a", dest="epochs_a", type=int)
    p.add_argument("--epochs-b", dest="epochs_b", type=int)
    p.add_argument("--epochs-c", dest="epochs_c", type=int)
    p.add_argument("--freeze-tca", dest="freeze_tca", action="store_true", default=None)
    p.add_argument("--dump-every", dest="dump_every", type=int)
    p.add_argument("--plateau", type=int,
                   help="end a phase early after this many epochs without a 0.1%% MSE gain")


def _read_config_file(path):
    cfg = {}
    with open(path) as f:
        for ln, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            cfg[key.strip().replace("-", "_")] = val.strip()
    return cfg


def _resolve(args):
    """Merged settings dict: defaults, then config file, then explicit flags."""
    merged = dict(_DEFAULTS)
    if getattr(args, "config", None):
        file_cfg = _read_config_file(args.config)
        for key, val in file_cfg.items():
            if key not in merged:
                raise ValueError(f"unknown config key {key!r}")
            ref = merged[key]
            merged[key] = type(ref)(val) if not isinstance(ref, bool) else val.lower() in ("1", "true", "yes")
    for key, val in vars(args).items():
        if key in ("config", "command", "fn") or val is None:
            continue
        merged[key] = val
    return merged


def _train_config(s):
    return TrainConfig(lr=s["lr"], tca_lr=s["tca_lr"], cd_k=s["cd_k"],
                       batch_size=s["batch_size"], freeze_tca=bool(s.get("freeze_tca", False)),
                       lambda_fe=s["lambda_fe"], seed=s["seed"])


def _load_dataset(s):
    ds = load_idx(s["images"], s["labels"])
    classes = [int(c) for c in str(s["classes"]).split(",")]
    ds = subset(ds, classes, s["per_class"])
    rng = np.random.default_rng(s["seed"])
    return dither(ds, s["dither_mean"], rng)


def _csv_writer(path, settings, fieldnames=("epoch", "phase", "mse", "cond_ll", "val_err")):
    f = open(path, "w", newline="")
    for key in sorted(settings):
        f.write(f"# {key}={settings[key]}\n")
    w = csv.DictWriter(f, fieldnames=fieldnames, restval="")
    w.writeheader()
    return f, w


def _dump_recons(model, X, out_dir, tag, count=4):
    from tcanet.rbm import gibbs_chain

    x1, _, _ = gibbs_chain(model, X[:count], 1, "deterministic")
    for i in range(min(count, X.shape[0])):
        write_pgm(os.path.join(out_dir, f"recon_{tag}_{i}.pgm"), x1[i])


def _worker_count():
    raw = os.environ.get("TCA_NUM_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_eval(fn, X, n_workers):
    """Apply fn to row chunks of X in a small thread pool; fn is read-only.

    Returns (results, weights) so callers can average per-sample metrics
    exactly even when the chunks are unequal.
    """
    if n_workers <= 1 or X.shape[0] < 2 * n_workers:
        return [fn(X)], np.array([X.shape[0]])
    chunks = np.array_split(np.arange(X.shape[0]), n_workers)
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        out = list(pool.map(lambda idx: fn(X[idx]), chunks))
    return out, np.array([c.size for c in chunks])


def cmd_pdf_fit(args) -> int:
    s = _resolve(args)
    try:
        x = np.loadtxt(args.input, ndmin=1)
    except OSError as e:
        print(f"error: cannot read samples: {e}", file=sys.stderr)
        return 1
    base = _BASES[s["base"]]
    target = TargetLaw(s["target"])
    cfg = TrainConfig(lr=s["lr"], seed=s["seed"], epochs=s["epochs"])
    try:
        params, trace = fit_univariate(x, base, s["mixtures"], target, cfg)
    except TrainingFailure as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    os.makedirs(s["out_dir"], exist_ok=True)
    save_model(params, os.path.join(s["out_dir"], "pdf_model.tcam"))
    y = demodalize(params, x)
    np.savetxt(os.path.join(s["out_dir"], "transformed.txt"), y)
    grid = np.linspace(x.min() - 1.0, x.max() + 1.0, 512)
    fx = demodalize(params, grid)
    dens = density(params, target, grid)
    with open(os.path.join(s["out_dir"], "curve.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "f", "density"])
        for row in zip(grid, fx, dens):
            w.writerow([f"{v:.10g}" for v in row])
    from scipy import stats

    if target is TargetLaw.UNIFORM01:
        ks = stats.kstest(y, "uniform").statistic
    else:
        ks = stats.kstest(y, "norm").statistic
    print(f"pdf-fit: n={x.size} m={s['mixtures']} base={s['base']} "
          f"loglik={trace[-1]:.6f} ks={ks:.4f}")
    return 0


def cmd_train_rbm(args) -> int:
    s = _resolve(args)
    X = _load_dataset(s).X
    base = _BASES[s["base"]]
    cfg = _train_config(s)
    os.makedirs(s["out_dir"], exist_ok=True)
    f, w = _csv_writer(os.path.join(s["out_dir"], "rbm_metrics.csv"), s)
    model_box = {}

    def cb(row):
        w.writerow({"epoch": row["epoch"], "phase": row["phase"],
                    "mse": f"{row['mse']:.8f}", "cond_ll": f"{row['cond_ll']:.6f}"})
        if s["dump_every"] and row["epoch"] % s["dump_every"] == 0 and "model" in model_box:
            _dump_recons(model_box["model"], X, s["out_dir"], f"ep{row['epoch']}")

    try:
        m, hist = train_rbm_phases(X, s["hidden"], base, base, s["mixtures"], cfg,
                                   s["epochs_a"], s["epochs_b"], s["epochs_c"],
                                   callback=cb, model_sink=model_box,
                                   plateau_epochs=s["plateau"] or None)
    except TrainingFailure as e:
        f.close()
        print(f"error: {e}", file=sys.stderr)
        return 1
    f.close()
    save_model(m, os.path.join(s["out_dir"], "rbm_model.tcam"))
    _dump_recons(m, X, s["out_dir"], "final")
    mse, ll = reconstruction_metrics(m, X, k=1)
    print(f"train-rbm: final mse={mse:.6f} cond_ll={ll:.4f} "
          f"epochs={s['epochs_a']}+{s['epochs_b']}+{s['epochs_c']}")
    return 0


def cmd_train_dbn(args) -> int:
    s = _resolve(args)
    ds = _load_dataset(s)
    base = _BASES[s["base"]]
    cfg = _train_config(s)
    rng = np.random.default_rng(s["seed"])
    train, val = holdout_split(ds, s["holdout"], seed=s["seed"]) if s["holdout"] else (ds, None)
    os.makedirs(s["out_dir"], exist_ok=True)
    f, w = _csv_writer(os.path.join(s["out_dir"], "dbn_metrics.csv"), s)
    classes = [int(c) for c in str(s["classes"]).split(",")]
    d = init_dbn(train.X.shape[1], [s["hidden"]], s["top"], classes, base, base, rng)

    def cb_layer(row):
        w.writerow({"epoch": row["epoch"], "phase": f"layer{row['layer']}-{row['phase']}",
                    "mse": f"{row['mse']:.8f}", "cond_ll": f"{row['cond_ll']:.6f}"})

    try:
        d, _ = train_layerwise(d, train.X, s["mixtures"], cfg,
                               s["epochs_a"], s["epochs_b"], s["epochs_c"],
                               callback=cb_layer)
        d = swap_top_mixture(d, s["mixtures"], rng)

        def cb_top(row):
            w.writerow({"epoch": row["epoch"], "phase": "top",
                        "val_err": row.get("val_err", "")})

        d, _ = top_train(d, train.X, train.y, cfg, s["epochs_top"],
                         X_val=val.X if val else None, y_val=val.y if val else None,
                         callback=cb_top)

        def cb_ud(phase):
            def cb(row):
                w.writerow({"epoch": row["epoch"], "phase": phase,
                            "mse": f"{row['recon_mse']:.8f}",
                            "val_err": row.get("val_err", "")})
            return cb

        if s["epochs_updown_frozen"]:
            frozen_cfg = cfg.replace(freeze_tca=True)
            d, _ = updown_finetune(d, train.X, train.y, frozen_cfg,
                                   s["epochs_updown_frozen"],
                                   X_val=val.X if val else None,
                                   y_val=val.y if val else None,
                                   callback=cb_ud("updown-frozen"))
        d, _ = updown_finetune(d, train.X, train.y, cfg, s["epochs_updown"],
                               X_val=val.X if val else None,
                               y_val=val.y if val else None,
                               callback=cb_ud("updown"))
    except TrainingFailure as e:
        f.close()
        print(f"error: {e}", file=sys.stderr)
        return 1
    f.close()
    save_model(d, os.path.join(s["out_dir"], "dbn_model.tcam"))
    train_err = classification_error(d, train.X, train.y)
    msg = f"train-dbn: train_err={train_err:.4f}"
    if val is not None:
        msg += f" val_err={classification_error(d, val.X, val.y):.4f}"
    print(msg)
    return 0


def cmd_train_aec(args) -> int:
    s = _resolve(args)
    if s["mixtures"] < 1:
        print("error: --mixtures must be >= 1", file=sys.stderr)
        return 1
    ds = _load_dataset(s)
    train, test = holdout_split(ds, s["holdout"], seed=s["seed"]) if s["holdout"] else (ds, None)
    base = _BASES[s["base"]]
    cfg = _train_config(s)
    os.makedirs(s["out_dir"], exist_ok=True)
    f, w = _csv_writer(os.path.join(s["out_dir"], "aec_metrics.csv"), s)

    def cb(row):
        w.writerow({"epoch": row["epoch"], "phase": row["phase"], "mse": f"{row['mse']:.8f}"})

    try:
        m, hist = train_autoencoder(train.X, (s["hidden"], 8), base, s["mixtures"], cfg,
                                    epochs_frozen=s["epochs_a"], epochs_tca=s["epochs_c"],
                                    callback=cb)
    except TrainingFailure as e:
        f.close()
        print(f"error: {e}", file=sys.stderr)
        return 1
    f.close()
    save_model(m, os.path.join(s["out_dir"], "aec_model.tcam"))
    frozen_rows = [r["mse"] for r in hist if r["phase"] == "frozen"]
    tca_rows = [r["mse"] for r in hist if r["phase"] == "tca"]
    print("AEC train MSE comparison")
    print(f"  no-tca  train={min(frozen_rows):.6f}" +
          (f" test={'n/a'}" if test is None else ""))
    if tca_rows:
        print(f"  tca     train={min(tca_rows):.6f}")
    if test is not None:
        print(f"  final test mse={ae_evaluate(m, test.X):.6f}")
    return 0


def cmd_eval(args) -> int:
    s = _resolve(args)
    try:
        model = load_model(args.model)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    ds = _load_dataset(s)
    workers = _worker_count()
    kind = type(model).__name__
    if kind == "RbmModel":
        parts, wts = _parallel_eval(lambda X: reconstruction_metrics(model, X, k=1), ds.X, workers)
        mse = float(np.average([p[0] for p in parts], weights=wts))
        ll = float(np.average([p[1] for p in parts], weights=wts))
        print(f"eval rbm: mse={mse:.6f} cond_ll={ll:.4f}")
    elif kind == "DbnModel":
        err = classification_error(model, ds.X, ds.y)
        cfg = _train_config(s)
        recon = reconstruction_error(model, ds.X, ds.y, cfg)
        print(f"eval dbn: class_err={err:.4f} recon_mse={recon:.6f}")
    elif kind == "AeModel":
        parts, wts = _parallel_eval(lambda X: ae_evaluate(model, X), ds.X, workers)
        print(f"eval ae: mse={float(np.average(parts, weights=wts)):.6f}")
    else:
        print(f"error: cannot evaluate model kind {kind}", file=sys.stderr)
        return 1
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tcanet",
                                description="compound-activation networks: training and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("pdf-fit", help="fit a univariate density-flattening map")
    pf.add_argument("--input", required=True, help="sample file, one value per line")
    pf.add_argument("--mixtures", type=int)
    pf.add_argument("--base", choices=sorted(_BASES))
    pf.add_argument("--target", choices=[t.value for t in TargetLaw])
    pf.add_argument("--lr", type=float)
    pf.add_argument("--epochs", type=int)
    _add_common(pf)
    pf.set_defaults(fn=cmd_pdf_fit)

    tr = sub.add_parser("train-rbm", help="three-phase single-layer RBM training")
    _add_data_flags(tr)
    _add_train_flags(tr)
    tr.add_argument("--hidden", type=int)
    _add_common(tr)
    tr.set_defaults(fn=cmd_train_rbm)

    td = sub.add_parser("train-dbn", help="layerwise + top + up-down DBN training")
    _add_data_flags(td)
    _add_train_flags(td)
    td.add_argument("--hidden", type=int)
    td.add_argument("--top", type=int)
    td.add_argument("--lambda-fe", dest="lambda_fe", type=float)
    td.add_argument("--holdout", type=int)
    td.add_argument("--epochs-top", dest="epochs_top", type=int)
    td.add_argument("--epochs-updown-frozen", dest="epochs_updown_frozen", type=int)
    td.add_argument("--epochs-updown", dest="epochs_updown", type=int)
    _add_common(td)
    td.set_defaults(fn=cmd_train_dbn)

    ta = sub.add_parser("train-aec", help="two-phase auto-encoder training")
    _add_data_flags(ta)
    _add_train_flags(ta)
    ta.add_argument("--hidden", type=int)
    ta.add_argument("--holdout", type=int)
    _add_common(ta)
    ta.set_defaults(fn=cmd_train_aec)

    ev = sub.add_parser("eval", help="print metrics of a saved model on a dataset")
    ev.add_argument("--model", required=True)
    _add_data_flags(ev)
    _add_common(ev)
    ev.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
