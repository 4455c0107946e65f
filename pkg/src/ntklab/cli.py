"""Seeded experiment harness.

Subcommands: gen (datasets), train (full run directories with manifests),
spectrum (eigenvalue summaries), compare-linearized (frozen-kernel replay),
report (aggregate tables). Exit codes: 0 success, 1 usage error, 2
runtime/numeric error.

A run's master seed derives one sub-seed per concern (init/data/mask/split)
at fixed offsets, so changing how one stream is consumed cannot shift the
others.
"""

import argparse
import json
import os
import random
import re
import sys
import warnings
from array import array
from dataclasses import replace
from datetime import datetime, timezone
from importlib import resources
from math import isinf, isnan, nan, sqrt

from ntklab import __version__
from ntklab.backend import NAME as BACKEND_NAME
from ntklab.backend import ops
from ntklab import data as datamod
from ntklab import dynamics as dyn
from ntklab.errors import ConfigError, InstabilityError, NtklabError
from ntklab.kernel import ntk_matrix, snapshot_from_theta
from ntklab.linalg import (
    DenseMatrix,
    block,
    fmt,
    load_matrix,
    load_vector,
    mat_vec,
    save_matrix,
    save_vector,
    transpose,
)
from ntklab.model import batch_forward, init_params, param_count

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

FOURIER_RESNET = "fourier_resnet"
MLP_BASELINE = "mlp"
LINEARIZED = "linearized"
COMPARISONS = (FOURIER_RESNET, MLP_BASELINE, LINEARIZED)

SEED_STREAMS = {"init": 0, "data": 1, "mask": 2, "split": 3}

TRACE_HEADER = "epoch,train_loss,val_loss,metric,lambda_max,frob_deviation,lin_divergence"
DRIFT_HEADER = "epoch_from,epoch_to,step_drift,cum_from,cum_to,triangle_slack,alpha_sup_ref"


class UsageError(Exception):
    pass


def derive_seed(master, label):
    return master + SEED_STREAMS[label] * (1 << 32)


def thread_cap():
    raw = os.environ.get("NTKLAB_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        warnings.warn(f"NTKLAB_THREADS={raw!r} is not an integer; using 1")
        return 1
    return max(1, cap)


class _Parser(argparse.ArgumentParser):
    """argparse with the documented usage exit code (1, not argparse's 2)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- gen

def cmd_gen(args):
    try:
        if args.task == "sinusoid":
            spec = datamod.SinusoidSpec(
                input_dim=args.d, modes=args.modes, n=args.n,
                noise_std=args.noise, seed=args.seed,
            )
            ds = datamod.gen_sinusoid(spec)
        else:
            spec = datamod.GmmSpec(
                input_dim=args.d, classes=args.classes, n=args.n, seed=args.seed,
                mean_scale=args.mean_scale,
            )
            ds = datamod.gen_gmm(spec)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or f"{args.task}.csv"
    datamod.save_dataset(out, ds)
    print(f"wrote {ds.n} rows to {out} (meta: {datamod._meta_path(out)})")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _build_dataset(raw, data_seed, split_seed):
    kind = raw.get("kind")
    if kind == "sinusoid":
        spec = datamod.SinusoidSpec(
            input_dim=raw["input_dim"], modes=raw["modes"], n=raw["n"],
            noise_std=raw.get("noise_std", 0.0), seed=data_seed,
        )
        ds = datamod.gen_sinusoid(spec)
    elif kind == "gmm":
        spec = datamod.GmmSpec(
            input_dim=raw["input_dim"], classes=raw["classes"], n=raw["n"],
            seed=data_seed, weights=raw.get("weights"), means=raw.get("means"),
            cov_diags=raw.get("cov_diags"), mean_scale=raw.get("mean_scale", 2.0),
        )
        ds = datamod.gen_gmm(spec)
    elif kind == "csv":
        ds = datamod.load_csv(
            raw["path"], target_col=raw.get("target_col", -1),
            task=raw.get("task", datamod.REGRESSION),
            has_header=raw.get("has_header", False),
        )
    else:
        raise ConfigError(f"unknown data kind {kind!r}")
    ds = datamod.split(ds, stratify=raw.get("stratify", True), seed=split_seed)
    ds, _scaler = datamod.standardize(ds)
    return ds


def _load_run_config(path, out_override=None, comparisons_override=None):
    raw = _read_json(path)
    for key in ("master_seed", "output_dir", "model", "train", "data"):
        if key not in raw:
            raise ConfigError(f"run config missing {key!r}")
    if "init_seed" in raw["model"]:
        raise ConfigError("model.init_seed is derived from master_seed; remove it")
    if "seed" in raw["train"]:
        raise ConfigError("train.seed is derived from master_seed; remove it")
    if out_override:
        raw["output_dir"] = out_override
    if comparisons_override:
        raw["comparisons"] = comparisons_override
    comps = raw.get("comparisons", [FOURIER_RESNET])
    for c in comps:
        if c not in COMPARISONS:
            raise ConfigError(f"unknown comparison {c!r} (choose from {COMPARISONS})")
    if len(set(comps)) != len(comps):
        raise ConfigError("duplicate comparison labels")
    return raw, comps


def match_mlp_width(cfg):
    """Hidden width for the no-embedding plain MLP whose parameter count is
    closest to the reference model's; ties go to the wider net."""
    target = param_count(cfg)

    def count(w):
        return param_count(
            replace(cfg, hidden_width=w, residual_enabled=False, fourier_enabled=False)
        )

    w = 1
    while count(w) < target:
        w += 1
    if w == 1:
        return 1
    below, above = count(w - 1), count(w)
    return w if above - target <= target - below else w - 1


def _mlp_config(cfg):
    return replace(
        cfg,
        hidden_width=match_mlp_width(cfg),
        residual_enabled=False,
        fourier_enabled=False,
    )


def _jnum(v):
    """Float for JSON, None when missing or non-finite (keeps files strict)."""
    if v is None or isnan(v) or isinf(v):
        return None
    return v


def _eval_predictions(pred, y_mat, labels, loss_kind):
    if loss_kind == dyn.MSE:
        loss = dyn.mse_loss(pred, y_mat)
        try:
            metric = dyn.r2_score(pred, y_mat)
        except NtklabError:
            metric = nan
        return loss, metric
    loss = dyn.cross_entropy_loss(pred, labels)
    return loss, dyn.accuracy(pred, labels)


def _eval_split(params, cfg, ds, idxs, loss_kind):
    if not idxs:
        return nan, nan
    x = ds.feature_rows(idxs)
    trace = batch_forward(params, cfg, x)
    if loss_kind == dyn.MSE:
        return _eval_predictions(trace.y, ds.target_rows(idxs), None, loss_kind)
    return _eval_predictions(trace.y, None, ds.label_rows(idxs), loss_kind)


def _write_trace_csv(path, records):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.epoch},{fmt(r.train_loss)},{fmt(r.val_loss)},{fmt(r.metric)},"
                f"{fmt(r.lambda_max)},{fmt(r.frob_deviation)},{fmt(r.lin_divergence)}\n"
            )


def _emit_artifacts(subdir, comp, cfg, tcfg, trace, ds, test_loss, test_metric, bound_eps):
    os.makedirs(subdir, exist_ok=True)
    _write_trace_csv(os.path.join(subdir, "trace.csv"), trace.records)
    with open(os.path.join(subdir, "kernel_trace.csv"), "w", encoding="ascii") as fh:
        fh.write("epoch,lambda_max,frob_deviation\n")
        for s in trace.snapshots:
            fh.write(f"{s.epoch},{fmt(s.lambda_max)},{fmt(s.frob_deviation)}\n")
    for s in trace.snapshots:
        save_vector(os.path.join(subdir, f"spectrum_epoch{s.epoch}.csv"), s.eigenvalues)
        if s.theta.rows <= 512:
            save_matrix(os.path.join(subdir, f"theta_epoch{s.epoch}.csv"), s.theta)
    with open(os.path.join(subdir, "modes.csv"), "w", encoding="ascii") as fh:
        fh.write("epoch,mode,projection\n")
        for mr in trace.mode_records:
            for i, p in enumerate(mr.projections):
                fh.write(f"{mr.epoch},{i},{fmt(p)}\n")
    rows = dyn.drift_report(trace, cfg)
    with open(os.path.join(subdir, "drift_report.csv"), "w", encoding="ascii") as fh:
        fh.write(DRIFT_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.epoch_from},{r.epoch_to},{fmt(r.step_drift)},{fmt(r.cum_from)},"
                f"{fmt(r.cum_to)},{fmt(r.triangle_slack)},{fmt(r.alpha_sup_ref)}\n"
            )
    save_vector(os.path.join(subdir, "params_final.csv"), trace.final_params.theta)
    scalar_mse = tcfg.loss_kind == dyn.MSE and cfg.output_dim == 1
    if scalar_mse:
        with open(os.path.join(subdir, "f_train.csv"), "w", encoding="ascii") as fh:
            for row in trace.f_train:
                fh.write(",".join(fmt(v) for v in row) + "\n")
        save_vector(os.path.join(subdir, "train_targets.csv"), trace.y_train)
        final_snap = trace.snapshots[-1]
        try:
            rep = dyn.generalization_bound(
                final_snap, trace.f_train[-1], trace.y_train, epsilon=bound_eps
            )
            bound = {
                "value": rep.value,
                "epsilon": rep.epsilon,
                "lambda_floor": rep.lambda_floor,
                "floored_modes": rep.floored_modes,
                "epoch": final_snap.epoch,
            }
        except NtklabError as exc:
            bound = {"value": None, "reason": str(exc)}
    else:
        bound = {"value": None, "reason": "defined for scalar MSE tasks"}
    _write_json(os.path.join(subdir, "bound.json"), bound)
    last = trace.records[-1]
    metrics = {
        "comparison": comp,
        "task": ds.task,
        "loss_kind": tcfg.loss_kind,
        "hidden_width": cfg.hidden_width,
        "param_count": trace.final_params.total,
        "n_train": len(ds.splits["train"]),
        "n_val": len(ds.splits["val"]),
        "n_test": len(ds.splits["test"]),
        "final_train_loss": _jnum(last.train_loss),
        "final_val_loss": _jnum(last.val_loss),
        "final_val_metric": _jnum(last.metric),
        "test_loss": _jnum(test_loss),
        "test_metric": _jnum(test_metric),
        "lambda_max_final": _jnum(last.lambda_max),
        "frob_deviation_final": _jnum(last.frob_deviation),
        "lin_divergence_final": _jnum(last.lin_divergence),
    }
    _write_json(os.path.join(subdir, "metrics.json"), metrics)


def _run_trained_comparison(subdir, comp, cfg, tcfg, ds, bound_eps, init_seed):
    params = init_params(cfg, random.Random(init_seed))
    trace = dyn.train(params, cfg, ds, tcfg)
    test_loss, test_metric = _eval_split(
        trace.final_params, cfg, ds, ds.splits["test"], tcfg.loss_kind
    )
    _emit_artifacts(subdir, comp, cfg, tcfg, trace, ds, test_loss, test_metric, bound_eps)


def _run_linearized_comparison(subdir, cfg, tcfg, ds, bound_eps, init_seed):
    """Frozen-kernel model: exact GD on the initial tangent kernel, with
    held-out predictions driven through the cross-kernel block."""
    if tcfg.loss_kind != dyn.MSE or cfg.output_dim != 1:
        raise ConfigError("linearized comparison needs a scalar MSE task")
    params = init_params(cfg, random.Random(init_seed))
    sp = ds.splits
    tr, va, te = sp["train"], sp["val"], sp["test"]
    n_tr, n_va, n_te = len(tr), len(va), len(te)
    all_idx = tr + va + te
    x_all = ds.feature_rows(all_idx)
    theta_all, _ = ntk_matrix(params, cfg, x_all)
    n_all = len(all_idx)
    th_tr = block(theta_all, 0, n_tr, 0, n_tr)
    th_cross = block(theta_all, n_tr, n_all, 0, n_tr)
    f_all = batch_forward(params, cfg, x_all).y
    f0_tr = array("d", f_all.data[:n_tr])
    f0_ev = array("d", f_all.data[n_tr:])
    y_tr = array("d", ds.target_rows(tr).data)
    outs_ev, outs_tr = dyn.linearized_cross_trajectory(
        th_tr, th_cross, f0_tr, f0_ev, y_tr, tcfg.learning_rate, tcfg.epochs
    )
    snap0 = snapshot_from_theta(th_tr, epoch=0)
    y_va = ds.target_rows(va) if n_va else None
    vt0 = transpose(snap0.eigen.eigenvectors)
    records, mode_records = [], []
    for t in range(tcfg.epochs + 1):
        ftr = outs_tr[t]
        d = ops.sub(ftr, y_tr)
        train_loss = sum(v * v for v in d) / n_tr
        val_loss = metric = nan
        if n_va:
            pv = DenseMatrix(n_va, 1, array("d", outs_ev[t][:n_va]))
            val_loss, metric = _eval_predictions(pv, y_va, None, dyn.MSE)
        records.append(
            dyn.EpochRecord(t, train_loss, val_loss, metric, snap0.lambda_max, 0.0, 0.0)
        )
        if t % tcfg.snapshot_stride == 0 or t == tcfg.epochs:
            mode_records.append(dyn.ModeRecord(t, mat_vec(vt0, d)))
    trace = dyn.TrainingTrace(
        records=records,
        snapshots=[snap0],
        mode_records=mode_records,
        f_train=[array("d", o) for o in outs_tr],
        final_params=params,
        eta=tcfg.learning_rate,
        n_train=n_tr,
        loss_kind=tcfg.loss_kind,
        y_train=y_tr,
        lin_unstable=tcfg.learning_rate * (2.0 / n_tr) * snap0.lambda_max >= 2.0,
    )
    test_loss = test_metric = nan
    if n_te:
        pt = DenseMatrix(n_te, 1, array("d", outs_ev[-1][n_va:]))
        test_loss, test_metric = _eval_predictions(pt, ds.target_rows(te), None, dyn.MSE)
    _emit_artifacts(subdir, LINEARIZED, cfg, tcfg, trace, ds, test_loss, test_metric, bound_eps)


def cmd_train(args):
    try:
        raw, comps = _load_run_config(args.config, args.out, args.comparisons)
        master = raw["master_seed"]
        seeds = {label: derive_seed(master, label) for label in SEED_STREAMS}
        ds = _build_dataset(raw["data"], seeds["data"], seeds["split"])
        cfg_full = replace(
            _model_config_from(raw["model"]), init_seed=seeds["init"]
        )
        tcfg = dyn.TrainConfig(seed=seeds["mask"], **raw["train"])
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid run config: {exc}") from None
    outdir = raw["output_dir"]
    os.makedirs(outdir, exist_ok=True)
    started = _now()
    bound_eps = raw.get("bound_epsilon", 0.0)
    datamod.save_dataset(os.path.join(outdir, "dataset.csv"), ds)
    ds_hash = datamod.file_sha256(os.path.join(outdir, "dataset.csv"))
    comp_status = {}
    for comp in comps:
        subdir = os.path.join(outdir, comp)
        os.makedirs(subdir, exist_ok=True)
        if comp == FOURIER_RESNET:
            cfg = cfg_full
        elif comp == MLP_BASELINE:
            cfg = _mlp_config(cfg_full)
        else:
            cfg = cfg_full
        try:
            if comp == LINEARIZED:
                _run_linearized_comparison(subdir, cfg, tcfg, ds, bound_eps, seeds["init"])
            else:
                _run_trained_comparison(subdir, comp, cfg, tcfg, ds, bound_eps, seeds["init"])
            comp_status[comp] = {"status": "ok", "dataset_sha256": ds_hash}
        except InstabilityError as exc:
            if exc.partial_trace is not None and exc.partial_trace.records:
                _write_trace_csv(os.path.join(subdir, "trace.csv"), exc.partial_trace.records)
            with open(os.path.join(subdir, "error.txt"), "w", encoding="utf-8") as fh:
                fh.write(f"{exc}\n")
            comp_status[comp] = {
                "status": "failed", "error": str(exc), "dataset_sha256": ds_hash,
            }
        except NtklabError as exc:
            with open(os.path.join(subdir, "error.txt"), "w", encoding="utf-8") as fh:
                fh.write(f"{exc}\n")
            comp_status[comp] = {
                "status": "failed", "error": str(exc), "dataset_sha256": ds_hash,
            }
    artifacts = {}
    for root, _dirs, files in os.walk(outdir):
        for name in sorted(files):
            if name == "manifest.json":
                continue
            full = os.path.join(root, name)
            rel = os.path.relpath(full, outdir)
            artifacts[rel] = datamod.file_sha256(full)
    manifest = {
        "config": raw,
        "started": started,
        "finished": _now(),
        "library_version": __version__,
        "backend": BACKEND_NAME,
        "threads": thread_cap(),
        "derived_seeds": seeds,
        "dataset_sha256": ds_hash,
        "comparisons": comp_status,
        "artifacts": artifacts,
    }
    _write_json(os.path.join(outdir, "manifest.json"), manifest)
    failed = [c for c, s in comp_status.items() if s["status"] != "ok"]
    for comp in comps:
        state = comp_status[comp]
        line = f"{comp}: {state['status']}"
        if state["status"] != "ok":
            line += f" ({state['error']})"
        print(line)
    print(f"run directory: {outdir}")
    return EXIT_RUNTIME if failed else EXIT_OK


def _model_config_from(raw):
    from ntklab.model import ModelConfig

    return ModelConfig(**raw)


# ---------------------------------------------------------------- spectrum

def _resolve_comparison(run_dir, comparison):
    if comparison:
        sub = os.path.join(run_dir, comparison)
        if not os.path.isdir(sub):
            raise NtklabError(f"no comparison directory {comparison!r} in {run_dir}")
        return sub
    cands = [
        d for d in sorted(os.listdir(run_dir))
        if os.path.isfile(os.path.join(run_dir, d, "kernel_trace.csv"))
    ]
    if len(cands) == 1:
        return os.path.join(run_dir, cands[0])
    if not cands:
        raise NtklabError(f"no comparison directories with artifacts in {run_dir}")
    raise UsageError(f"multiple comparisons {cands}; pick one with --comparison")


def cmd_spectrum(args):
    sub = _resolve_comparison(args.run_dir, args.comparison)
    path = os.path.join(sub, f"spectrum_epoch{args.epoch}.csv")
    if not os.path.isfile(path):
        avail = sorted(
            int(m.group(1))
            for f in os.listdir(sub)
            if (m := re.fullmatch(r"spectrum_epoch(\d+)\.csv", f))
        )
        raise NtklabError(f"no snapshot at epoch {args.epoch}; available epochs: {avail}")
    vals = load_vector(path)
    lam_max, lam_min = vals[0], vals[-1]
    if lam_max > 0.0:
        floor = 1e-12 * lam_max
        cond = lam_max / max(lam_min, floor)
        eff_rank = sum(vals) / lam_max
    else:
        cond = eff_rank = nan
    summary = {
        "epoch": args.epoch,
        "n_modes": len(vals),
        "lambda_max": lam_max,
        "lambda_min": lam_min,
        "condition_number": cond,
        "effective_rank": eff_rank,
        "spectrum_file": path,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------- compare-linearized

def cmd_compare_linearized(args):
    run_dir = args.run_dir
    manifest = _read_json(os.path.join(run_dir, "manifest.json"))
    tr_raw = manifest["config"]["train"]
    model_raw = manifest["config"]["model"]
    if tr_raw.get("loss_kind", dyn.MSE) != dyn.MSE or model_raw.get("output_dim", 1) != 1:
        raise NtklabError("unsupported task: linearized replay needs scalar MSE runs")
    sub = _resolve_comparison(run_dir, args.comparison)
    theta_path = os.path.join(sub, "theta_epoch0.csv")
    if not os.path.isfile(theta_path):
        raise NtklabError(
            "theta_epoch0.csv not stored (kernel matrices are written only for "
            "train sets of at most 512 samples)"
        )
    theta = load_matrix(theta_path)
    f_rows = []
    with open(os.path.join(sub, "f_train.csv"), "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                f_rows.append(array("d", (float(t) for t in line.split(","))))
    y = load_vector(os.path.join(sub, "train_targets.csv"))
    eta = tr_raw["learning_rate"]
    steps = len(f_rows) - 1
    snap = snapshot_from_theta(theta)
    outs, unstable = dyn.linearized_trajectory(snap, f_rows[0], y, eta, steps)
    rs = sqrt(len(y))
    out_path = os.path.join(sub, "lin_divergence.csv")
    with open(out_path, "w", encoding="ascii") as fh:
        fh.write("epoch,divergence\n")
        final = 0.0
        for t, (fa, fl) in enumerate(zip(f_rows, outs)):
            s = 0.0
            for a, b in zip(fa, fl):
                d = a - b
                s += d * d
            final = sqrt(s) / rs
            fh.write(f"{t},{fmt(final)}\n")
    print(
        json.dumps(
            {
                "epochs": steps,
                "final_divergence": final,
                "unstable": unstable,
                "output": out_path,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return EXIT_OK


# ---------------------------------------------------------------- report

def _published_rows(task):
    text = resources.files("ntklab").joinpath("reference_tables.json").read_text()
    tables = json.loads(text)
    key = "synthetic_regression" if task == datamod.REGRESSION else "synthetic_classification"
    rows = []
    for r in tables[key]["rows"]:
        if task == datamod.REGRESSION:
            rows.append(
                {
                    "comparison": r["model"],
                    "source": "published",
                    "runs": None,
                    "test_loss_mean": r["mse"],
                    "test_loss_std": r["mse_std"],
                    "test_metric_mean": r["r2"],
                    "test_metric_std": r["r2_std"],
                    "display": r["display"],
                }
            )
        else:
            rows.append(
                {
                    "comparison": r["model"],
                    "source": "published",
                    "runs": None,
                    "test_loss_mean": r["cross_entropy"],
                    "test_loss_std": r["cross_entropy_std"],
                    "test_metric_mean": r["accuracy_pct"] / 100.0,
                    "test_metric_std": r["accuracy_pct_std"] / 100.0,
                    "display": r["display"],
                }
            )
    return rows


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    m = sum(vals) / len(vals)
    var = sum((v - m) ** 2 for v in vals) / len(vals)
    return m, sqrt(var)


def cmd_report(args):
    groups = {}
    tasks = set()
    for run_dir in args.run_dirs:
        manifest = _read_json(os.path.join(run_dir, "manifest.json"))
        for comp, state in manifest["comparisons"].items():
            if state["status"] != "ok":
                continue
            metrics = _read_json(os.path.join(run_dir, comp, "metrics.json"))
            tasks.add(metrics["task"])
            groups.setdefault(comp, []).append(metrics)
    if not groups:
        raise NtklabError("no completed comparisons found in the given run dirs")
    if len(tasks) > 1:
        raise NtklabError(f"cannot aggregate mixed task kinds: {sorted(tasks)}")
    task = tasks.pop()
    rows = []
    for comp in sorted(groups):
        ms = groups[comp]
        loss_m, loss_s = _mean_std([m["test_loss"] for m in ms])
        met_m, met_s = _mean_std([m["test_metric"] for m in ms])
        frob_m, _ = _mean_std([m["frob_deviation_final"] for m in ms])
        lam_m, _ = _mean_std([m["lambda_max_final"] for m in ms])
        rows.append(
            {
                "comparison": comp,
                "source": "this_run",
                "runs": len(ms),
                "test_loss_mean": loss_m,
                "test_loss_std": loss_s,
                "test_metric_mean": met_m,
                "test_metric_std": met_s,
                "frob_deviation_mean": frob_m,
                "lambda_max_mean": lam_m,
            }
        )
    published = _published_rows(task)
    loss_name = "mse" if task == datamod.REGRESSION else "cross_entropy"
    metric_name = "r2" if task == datamod.REGRESSION else "accuracy"
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    cols = [
        "comparison", "source", "runs",
        f"test_{loss_name}_mean", f"test_{loss_name}_std",
        f"test_{metric_name}_mean", f"test_{metric_name}_std",
        "frob_deviation_mean", "lambda_max_mean",
    ]
    def _cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return fmt(v)
        return str(v)

    with open(csv_path, "w", encoding="ascii") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows + published:
            fh.write(
                ",".join(
                    _cell(x)
                    for x in (
                        r["comparison"], r["source"], r.get("runs"),
                        r.get("test_loss_mean"), r.get("test_loss_std"),
                        r.get("test_metric_mean"), r.get("test_metric_std"),
                        r.get("frob_deviation_mean"), r.get("lambda_max_mean"),
                    )
                )
                + "\n"
            )
    report = {
        "task": task,
        "loss": loss_name,
        "metric": metric_name,
        "rows": rows,
        "published_reference": published,
        "published_note": "published rows are context only, never asserted",
    }
    _write_json(os.path.join(args.out, "report.json"), report)
    for r in rows:
        print(
            f"{r['comparison']:>16} ({r['runs']} runs): "
            f"{loss_name} {r['test_loss_mean']:.4f} +/- {r['test_loss_std']:.4f}  "
            f"{metric_name} {r['test_metric_mean']:.4f} +/- {r['test_metric_std']:.4f}"
        )
    for r in published:
        print(
            f"{r['comparison']:>16} (published): "
            f"{loss_name} {r['test_loss_mean']:.4f} +/- {r['test_loss_std']:.4f}  "
            f"{metric_name} {r['test_metric_mean']:.4f} +/- {r['test_metric_std']:.4f}"
        )
    print(f"wrote {csv_path} and {os.path.join(args.out, 'report.json')}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    parser = _Parser(prog="ntklab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset CSV")
    p_gen.add_argument("--task", choices=("sinusoid", "gmm"), required=True)
    p_gen.add_argument("--d", type=int, required=True, help="input dimension")
    p_gen.add_argument("--n", type=int, required=True, help="sample count")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--modes", type=int, default=1, help="sinusoid mode count")
    p_gen.add_argument("--noise", type=float, default=0.0, help="sinusoid noise std")
    p_gen.add_argument("--classes", type=int, default=2, help="gmm class count")
    p_gen.add_argument("--mean-scale", type=float, default=2.0, help="gmm mean spread")
    p_gen.add_argument("--out", help="output CSV path (default <task>.csv)")
    p_gen.set_defaults(func=cmd_gen)

    p_train = sub.add_parser("train", help="run training from a JSON config")
    p_train.add_argument("config", help="run config JSON file")
    p_train.add_argument("--out", help="override output_dir")
    p_train.add_argument(
        "--comparisons",
        type=lambda s: s.split(","),
        help=f"comma list from {','.join(COMPARISONS)}",
    )
    p_train.set_defaults(func=cmd_train)

    p_spec = sub.add_parser("spectrum", help="summarize a stored eigen-spectrum")
    p_spec.add_argument("run_dir")
    p_spec.add_argument("--epoch", type=int, required=True)
    p_spec.add_argument("--comparison")
    p_spec.set_defaults(func=cmd_spectrum)

    p_cmp = sub.add_parser(
        "compare-linearized", help="replay frozen-kernel dynamics against a run"
    )
    p_cmp.add_argument("run_dir")
    p_cmp.add_argument("--comparison", default=FOURIER_RESNET)
    p_cmp.set_defaults(func=cmd_compare_linearized)

    p_rep = sub.add_parser("report", help="aggregate metrics across run dirs")
    p_rep.add_argument("run_dirs", nargs="+")
    p_rep.add_argument("--out", default=".", help="directory for report.csv/json")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NtklabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
