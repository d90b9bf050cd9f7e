"""Command-line front end; owns every file format the package writes.

All floats in CSV files are written with 17 significant digits so they
round-trip exactly. JSON documents carry a ``schema_version`` and are
written with sorted keys, so a fixed seed gives byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, active, evaluation, fisher, net, posterior
from .sparse import sparsify_eigenbasis

SCHEMA_VERSION = 1
OUTPUT_ENV = "SPARSEINF_OUTPUT_DIR"
DEFAULT_OUTPUT = "sparseinf_out"
DEFAULT_EPOCHS = 20000
FLOAT_FMT = "%.17g"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------


def output_dir(flag: str | None) -> Path:
    """``--out-dir`` if given, else ``$SPARSEINF_OUTPUT_DIR``, else the default."""
    path = Path(flag or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    if v is None:
        return ""
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_json(path: Path, doc: dict) -> Path:
    doc = {"schema_version": SCHEMA_VERSION, **doc}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_dataset(path: Path, X, y, classification: bool = False) -> Path:
    X = np.asarray(X, dtype=float)
    X = X[:, None] if X.ndim == 1 else X.reshape(X.shape[0], int(np.prod(X.shape[1:])))
    header = [f"x_{i}" for i in range(X.shape[1])] + (["label"] if classification else ["y"])
    if classification:
        rows = [list(x) + [int(lab)] for x, lab in zip(X, np.asarray(y).ravel())]
    else:
        rows = [list(x) + [float(t)] for x, t in zip(X, np.asarray(y, dtype=float).ravel())]
    return write_csv(path, header, rows)


def read_dataset(path, n_inputs: int | None = None):
    """``(X, y, kind)``; ``kind`` is ``regression``, ``classification`` or ``inputs``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not xcols:
        raise ValueError(f"{path}: header needs x_0..x_d columns")
    X = np.array([[float(r[i]) for i in xcols] for r in rows], dtype=float).reshape(len(rows), len(xcols))
    if "y" in header:
        j = header.index("y")
        return X, np.array([[float(r[j])] for r in rows]).reshape(len(rows), 1), "regression"
    if "label" in header:
        j = header.index("label")
        return X, np.array([int(r[j]) for r in rows], dtype=int), "classification"
    return X, None, "inputs"


def gen_toy(path: Path, seed: int, n_points: int = 100) -> Path:
    """``x ~ U(-4, 4)``, ``y = x^3 + N(0, 9)``."""
    X, y = active.toy_data(np.random.default_rng(seed), n_points)
    return write_dataset(path, X, y)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _grid(text: str) -> np.ndarray:
    lo, hi, n = text.split(",")
    return np.linspace(float(lo), float(hi), int(n))[:, None]


def _rank(text: str):
    if text == "full" or text.endswith("%"):
        return text
    return int(text)


def _seed_streams(seed: int, count: int):
    return np.random.default_rng(seed).spawn(count)


# ---------------------------------------------------------------------------
# stages shared by the subcommands and the pipeline
# ---------------------------------------------------------------------------


def stage_train(args, X, y, kind: str, seed: int):
    sizes = tuple(int(s) for s in args.layers.split(","))
    loss = "cross_entropy" if kind == "classification" else "mse"
    spec = net.NetworkSpec(sizes, args.activation, loss)
    if sizes[0] != X.shape[1]:
        raise ValueError(f"network expects {sizes[0]} inputs, data has {X.shape[1]}")
    cfg = net.TrainConfig(
        optimizer=args.optimizer, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=seed
    )
    res = net.train_map(spec, X, y, cfg)
    return spec, res


def posterior_config(args) -> posterior.PosteriorConfig:
    return posterior.PosteriorConfig(
        N_scale=args.n_scale,
        tau=args.tau,
        rank_K=_rank(args.rank),
        K_mc=args.k_mc,
        estimator=args.estimator,
        degenerate_policy=args.policy,
        label_mode=args.label_mode,
    )


def sample_rows(post: posterior.Posterior, count: int, rng: np.random.Generator):
    """``count`` draws of all parameters, layer blocks concatenated."""
    streams = rng.spawn(count)
    for r in streams:
        layer_rngs = r.spawn(len(post.layers))
        yield np.concatenate([lp.draw(lr) for lp, lr in zip(post.layers, layer_rngs)])


def prediction_outputs(post, X, y, kind, method: str, k_mc: int, rng, out: Path, grid: bool) -> tuple[dict, list[Path]]:
    files = []
    metrics: dict = {}
    if post.spec.loss == "mse":
        pred = posterior.predict_linearized(post, X) if method == "linearized" else posterior.predict_mc(post, X, k_mc, rng)
        std = np.sqrt(pred.var)
        K = pred.mean.shape[1]
        header = ["id"] + [f"mean_{k}" for k in range(K)] + [f"std_{k}" for k in range(K)]
        rows = [[i, *pred.mean[i], *std[i]] for i in range(X.shape[0])]
        files.append(write_csv(out / "predictions.csv", header, rows))
        if grid or X.shape[1] == 1:
            m, s = pred.mean[:, 0], std[:, 0]
            band_rows = [[X[i, 0], m[i], *(v for z in (1, 2, 3) for v in (m[i] - z * s[i], m[i] + z * s[i]))] for i in range(len(m))]
            files.append(write_csv(out / "bands.csv", ["x", "mean", "lo1", "hi1", "lo2", "hi2", "lo3", "hi3"], band_rows))
        if kind == "regression":
            rmse, ll = evaluation.regression_metrics(pred.mean, y, pred.var)
            metrics.update(rmse=rmse, test_log_likelihood=ll)
        metrics["mean_std"] = float(std.mean())
    else:
        pred = posterior.predict_mc(post, X, k_mc, rng)
        P = pred.probs
        header = ["id"] + [f"p_{c}" for c in range(P.shape[1])]
        files.append(write_csv(out / "predictions.csv", header, [[i, *P[i]] for i in range(P.shape[0])]))
        ent = evaluation.normalized_entropy(P)
        counts, edges = np.histogram(ent, bins=10, range=(0.0, 1.0))
        files.append(write_csv(out / "entropy_hist.csv", ["lo", "hi", "count"], [[edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)]))
        metrics["mean_normalized_entropy"] = float(ent.mean())
        if kind == "classification":
            bins = evaluation.reliability_bins(P, y)
            rows = [
                [bins.edges[i], bins.edges[i + 1], int(bins.count[i]), None if bins.count[i] == 0 else bins.accuracy[i], None if bins.count[i] == 0 else bins.confidence[i]]
                for i in range(len(bins.count))
            ]
            files.append(write_csv(out / "reliability.csv", ["lo", "hi", "count", "accuracy", "confidence"], rows))
            metrics["ece"] = evaluation.ece(P, y)
            metrics["accuracy"] = float(np.mean(P.argmax(axis=1) == y))
    return metrics, files


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_toy(args) -> int:
    out = output_dir(args.out_dir)
    path = gen_toy(out / args.name, args.seed, args.n_points)
    print(path)
    return 0


def cmd_train(args) -> int:
    out = output_dir(args.out_dir)
    X, y, kind = read_dataset(args.data)
    spec, res = stage_train(args, X, y, kind, args.seed)
    net.save_checkpoint(out / "checkpoint.json", spec, res.weights, args.seed)
    write_csv(out / "loss_trace.csv", ["epoch", "loss"], [[i, v] for i, v in enumerate(res.loss_trace)])
    print(json.dumps({"initial_loss": res.loss_trace[0], "final_loss": res.loss_trace[-1]}))
    return 0


def _load_post_inputs(args):
    spec, weights, _ = net.load_checkpoint(args.checkpoint)
    X, y, kind = read_dataset(args.data)
    return spec, weights, X, y, kind


def cmd_posterior(args) -> int:
    out = output_dir(args.out_dir)
    spec, weights, X, y, _ = _load_post_inputs(args)
    post = posterior.build_posterior(spec, weights, X, y, posterior_config(args), np.random.default_rng(args.seed))
    write_json(out / "posterior.json", posterior.posterior_to_json(post))
    print(json.dumps(post.info, sort_keys=True))
    return 0


def _load_posterior(path) -> posterior.Posterior:
    return posterior.posterior_from_json(json.loads(Path(path).read_text()))


def cmd_sample(args) -> int:
    out = output_dir(args.out_dir)
    post = _load_posterior(args.posterior)
    rows = list(sample_rows(post, args.count, np.random.default_rng(args.seed)))
    P = len(rows[0]) if rows else sum(lp.N for lp in post.layers)
    write_csv(out / "samples.csv", [f"theta_{i}" for i in range(P)], rows)
    return 0


def cmd_predict(args) -> int:
    out = output_dir(args.out_dir)
    post = _load_posterior(args.posterior)
    if args.grid:
        X, y, kind = _grid(args.grid), None, "inputs"
    else:
        X, y, kind = read_dataset(args.data)
    metrics, _ = prediction_outputs(post, X, y, kind, args.method, args.k_mc, np.random.default_rng(args.seed), out, bool(args.grid))
    write_json(out / "metrics.json", {"metrics": metrics})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def rank_sweep(spec, weights, X, y, fractions, rng, label_mode="model_sampled") -> list[dict]:
    """Frobenius errors per layer for INF at each rank fraction plus the fixed-rank baselines."""
    factors = net.per_sample_factors(spec, weights, X, y, label_mode, rng)
    rows = []
    for li, f in enumerate(factors):
        I = fisher.exact_block_im(f)
        basis = fisher.build_eigenbasis(f)
        N = basis.N
        baselines = {
            "diag": np.diag(basis.exact_diag),
            "kfac": fisher.kfac(f).materialize(),
            "efb": basis.efb_matrix(),
        }
        for name, M in baselines.items():
            rep = evaluation.frobenius_errors(I, M, name, 1.0)
            rows.append({"layer": li, "K": N, "L": N, **rep.to_dict()})
        for frac in fractions:
            K = max(1, min(N, int(round(frac / 100.0 * N))))
            form = sparsify_eigenbasis(basis, K)
            rep = evaluation.frobenius_errors(I, form.matrix(), "inf", frac / 100.0)
            rows.append({"layer": li, "K": K, "L": form.L, **rep.to_dict()})
    return rows


SWEEP_RANK_COLUMNS = ["layer", "estimator", "rank_fraction", "K", "L", "diag_err", "offdiag_err"]


def cmd_sweep_rank(args) -> int:
    out = output_dir(args.out_dir)
    spec, weights, X, y, _ = _load_post_inputs(args)
    rows = rank_sweep(spec, weights, X, y, _floats(args.fractions), np.random.default_rng(args.seed), args.label_mode)
    write_csv(out / "sweep_rank.csv", SWEEP_RANK_COLUMNS, [[r[c] for c in SWEEP_RANK_COLUMNS] for r in rows])
    return 0


def cmd_sweep_hyper(args) -> int:
    out = output_dir(args.out_dir)
    spec, weights, X, y, _ = _load_post_inputs(args)
    Xt, yt, kind = read_dataset(args.test_data) if args.test_data else (X, y, "regression")
    if spec.loss != "mse" or kind != "regression":
        raise SystemExit("sweep-hyper needs a regression model and regression test data")
    factor_rng, pair_rng = _seed_streams(args.seed, 2)
    factors = net.per_sample_factors(spec, weights, X, y, args.label_mode, factor_rng)
    pairs = posterior.log_uniform_pairs(pair_rng, args.count, _floats(args.n_range), _floats(args.tau_range))
    rows = []
    for N_scale, tau in pairs:
        cfg = posterior.PosteriorConfig(N_scale=float(N_scale), tau=float(tau), rank_K=_rank(args.rank), estimator=args.estimator, label_mode=args.label_mode)
        post = posterior.build_posterior(spec, weights, X, y, cfg, None, factors=factors)
        pred = posterior.predict_linearized(post, Xt)
        rmse, ll = evaluation.regression_metrics(pred.mean, yt, pred.var)
        rows.append([N_scale, tau, rmse, ll])
    write_csv(out / "sweep_hyper.csv", ["N_scale", "tau", "rmse", "test_log_likelihood"], rows)
    return 0


def active_summary(trajs: list[active.ActiveTrajectory], seeds: list[int], ranks: list[str]) -> dict:
    by = {(t.strategy, t.rank): [] for t in trajs}
    for t in trajs:
        by[(t.strategy, t.rank)].append(t.rmse)
    full = ranks[0]
    var_final = np.array([r[-1] for r in by[("variance", full)]])
    rnd_final = np.array([r[-1] for r in by[("random", full)]])
    wins = int(np.sum(var_final < rnd_final))
    summary = {
        "seeds": seeds,
        "wins_variance_over_random": wins,
        "sign_test_p": active.sign_test_p(wins, len(seeds)),
        "mean_final_rmse": {f"{s}@{r}": float(np.mean([x[-1] for x in v])) for (s, r), v in by.items()},
    }
    for r in ranks[1:]:
        a = np.array(by[("variance", r)])
        b = np.array(by[("variance", full)])
        gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
        sd = b.std(axis=0, ddof=1) if len(seeds) > 1 else np.zeros(b.shape[1])
        summary[f"within_2sd_{r}_vs_{full}"] = bool(np.all(gap <= 2 * sd))
    return summary


def run_active_experiment(seeds: list[int], ranks: list[str], config: active.ActiveConfig):
    trajs = []
    for s in seeds:
        for strategy in active.STRATEGIES:
            for r in ranks if strategy == "variance" else ranks[:1]:
                trajs.append(active.run_active(s, strategy, config, r))
    return trajs


def cmd_active_learn(args) -> int:
    out = output_dir(args.out_dir)
    seeds = [args.seed + i for i in range(args.seeds)]
    ranks = [r.strip() for r in args.ranks.split(",")]
    cfg = active.ActiveConfig(iterations=args.iterations, n_initial=args.n_initial, n_pool=args.n_pool)
    trajs = run_active_experiment(seeds, ranks, cfg)
    rows = [[t.seed, t.strategy, t.rank, i, v] for t in trajs for i, v in enumerate(t.rmse)]
    write_csv(out / "active_learning.csv", ["seed", "strategy", "rank", "iteration", "rmse"], rows)
    summary = active_summary(trajs, seeds, ranks)
    if any(t.stopped_early for t in trajs):
        summary["stopped_early"] = True
    write_json(out / "active_learning.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    out = output_dir(args.out_dir)
    if args.trials == 0:
        print("warning: 0 trials requested; nothing was checked", file=sys.stderr)
    report = evaluation.verify_guarantees(args.trials, np.random.default_rng(args.seed), fault=args.fault_inject)
    write_json(out / "verify.json", report.to_dict())
    for name in evaluation.CHECKS:
        print(f"{name}: {report.passes[name]}/{report.runs[name]}")
    if not report.ok:
        print(f"FAILED: {len(report.failures)} violations", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def verify_manifest(path) -> bool:
    """Re-hash every artifact listed in a manifest."""
    doc = json.loads(Path(path).read_text())
    root = Path(path).parent
    return all(sha256_file(root / name) == digest for st in doc["stages"] for name, digest in st["outputs"].items())


def run_pipeline(args) -> int:
    out = output_dir(args.out_dir)
    data_rng, train_seed_rng, post_rng, sample_rng, pred_rng = _seed_streams(args.seed, 5)
    manifest = {"command": "run", "seed": args.seed, "version": __version__, "config": _config_record(args), "stages": []}
    state: dict = {}

    def stage(name, fn):
        try:
            outputs, extra = fn()
        except Exception as exc:  # recorded with the stage name, then re-raised as StageError
            manifest["stages"].append({"name": name, "status": "failed", "error": f"{type(exc).__name__}: {exc}", "outputs": {}})
            raise StageError(name, exc) from exc
        manifest["stages"].append({"name": name, "status": "ok", "outputs": {p.name: sha256_file(p) for p in outputs}, **extra})

    def s_data():
        if args.data:
            X, y, kind = read_dataset(args.data)
            path = write_dataset(out / "data.csv", X, y, kind == "classification")
        else:
            path = gen_toy(out / "data.csv", int(data_rng.integers(2**31)), args.n_points)
            X, y, kind = read_dataset(path)
        state.update(X=X, y=y, kind=kind)
        return [path], {"rows": int(X.shape[0])}

    def s_train():
        spec, res = stage_train(args, state["X"], state["y"], state["kind"], int(train_seed_rng.integers(2**31)))
        path = out / "checkpoint.json"
        net.save_checkpoint(path, spec, res.weights, args.seed)
        state.update(spec=spec, weights=res.weights)
        return [path], {"initial_loss": res.loss_trace[0], "final_loss": res.loss_trace[-1]}

    def s_posterior():
        post = posterior.build_posterior(state["spec"], state["weights"], state["X"], state["y"], posterior_config(args), post_rng)
        state["post"] = post
        path = write_json(out / "posterior.json", posterior.posterior_to_json(post))
        return [path], {"layers": post.info["layers"]}

    def s_sparsify():
        layers = state["post"].info["layers"]
        return [], {"layers": [{"N": e["N"], "K": e["K"], "L": e["L"]} for e in layers]}

    def s_validity():
        return [], {"verdicts": [e["verdict"] for e in state["post"].info["layers"]]}

    def s_sample():
        post = state["post"]
        rows = list(sample_rows(post, args.samples, sample_rng))
        P = sum(lp.N for lp in post.layers)
        return [write_csv(out / "samples.csv", [f"theta_{i}" for i in range(P)], rows)], {"count": args.samples}

    def s_predict():
        X = _grid(args.grid) if state["spec"].layer_sizes[0] == 1 else state["X"]
        metrics, files = prediction_outputs(state["post"], X, None, "inputs", args.method, args.k_mc, pred_rng, out, True)
        state["metrics"] = metrics
        return files, {}

    def s_metrics():
        post = state["post"]
        X, y = state["X"], state["y"]
        metrics = dict(state["metrics"])
        if state["kind"] == "regression":
            pred = posterior.predict_linearized(post, X)
            rmse, ll = evaluation.regression_metrics(pred.mean, y, pred.var)
            metrics.update(train_rmse=rmse, train_log_likelihood=ll)
            if X.shape[1] == 1:
                metrics["std_ratio_far_vs_near"] = std_ratio(post)
        path = write_json(out / "metrics.json", {"metrics": metrics})
        rows = [[k, v] for k, v in sorted(metrics.items())]
        return [path, write_csv(out / "metrics.csv", ["metric", "value"], rows)], {}

    try:
        for name, fn in (
            ("data", s_data),
            ("train", s_train),
            ("posterior", s_posterior),
            *((("sparsify", s_sparsify), ("validity", s_validity)) if args.estimator == "inf" else ()),
            ("sample", s_sample),
            ("predict", s_predict),
            ("metrics", s_metrics),
        ):
            stage(name, fn)
        code = 0
    except StageError as err:
        print(str(err), file=sys.stderr)
        code = 2
    manifest["status"] = "ok" if code == 0 else "failed"
    write_json(out / "manifest.json", manifest)
    return code


def std_ratio(post, near=3.0, far=(5.0, 6.0), n=1201) -> float:
    """Mean linearized predictive std over ``far <= |x| <= far`` divided by that over ``|x| <= near``."""
    x = np.linspace(-far[1], far[1], n)[:, None]
    sd = np.sqrt(posterior.predict_linearized(post, x).var[:, 0])
    ax = np.abs(x[:, 0])
    return float(sd[(ax >= far[0]) & (ax <= far[1])].mean() / sd[ax <= near].mean())


def _config_record(args) -> dict:
    keys = ("layers", "activation", "optimizer", "lr", "epochs", "batch_size", "n_scale", "tau", "rank", "k_mc", "estimator", "policy", "label_mode", "n_points", "samples", "method", "grid")
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p, seed=True):
    p.add_argument("--out-dir", default=None, help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    if seed:
        p.add_argument("--seed", type=int, required=True)


def _train_flags(p):
    p.add_argument("--layers", default="1,7,1", help="comma-separated layer sizes, input first")
    p.add_argument("--activation", default="relu", choices=net.ACTIVATIONS)
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=DEFAULT_EPOCHS)
    p.add_argument("--batch-size", type=int, default=None)


def _posterior_flags(p):
    p.add_argument("--estimator", default="inf", choices=posterior.ESTIMATORS)
    p.add_argument("--rank", default="full", help="'full', an integer K, or a percentage such as 50%%")
    p.add_argument("--n-scale", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--k-mc", type=int, default=100)
    p.add_argument("--policy", default="deterministic_dims", choices=posterior.POLICIES)
    p.add_argument("--label-mode", default="model_sampled", choices=net.LABEL_MODES)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparseinf", description="Sparse information-form Laplace posteriors for small networks.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="write the cubic toy regression dataset")
    _common(p)
    p.add_argument("--n-points", type=int, default=100)
    p.add_argument("--name", default="toy.csv")
    p.set_defaults(fn=cmd_gen_toy)

    p = sub.add_parser("train", help="fit MAP weights")
    _common(p)
    p.add_argument("--data", required=True)
    _train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("posterior", help="build a layer-wise posterior from a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    _posterior_flags(p)
    p.set_defaults(fn=cmd_posterior)

    p = sub.add_parser("sample", help="draw parameter samples from a posterior file")
    _common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--count", type=int, default=100)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("predict", help="predictive mean and spread")
    _common(p)
    p.add_argument("--posterior", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--grid", help="lo,hi,n for a 1-d input grid (write --grid=-6,6,121 for a negative lo)")
    p.add_argument("--method", default="linearized", choices=("linearized", "mc"))
    p.add_argument("--k-mc", type=int, default=100)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("sweep-rank", help="Frobenius errors against the exact block information matrix")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fractions", default="25,50,75,100", help="rank percentages")
    p.add_argument("--label-mode", default="model_sampled", choices=net.LABEL_MODES)
    p.set_defaults(fn=cmd_sweep_rank)

    p = sub.add_parser("sweep-hyper", help="log-uniform (N, tau) search")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", default=None)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--n-range", default="1,1000")
    p.add_argument("--tau-range", default="1e-3,10")
    p.add_argument("--estimator", default="inf", choices=posterior.ESTIMATORS)
    p.add_argument("--rank", default="full")
    p.add_argument("--label-mode", default="model_sampled", choices=net.LABEL_MODES)
    p.set_defaults(fn=cmd_sweep_hyper)

    p = sub.add_parser("active-learn", help="variance vs random acquisition on the toy task")
    _common(p)
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds starting at --seed")
    p.add_argument("--iterations", type=int, default=active.ActiveConfig.iterations)
    p.add_argument("--n-initial", type=int, default=active.ActiveConfig.n_initial)
    p.add_argument("--n-pool", type=int, default=active.ActiveConfig.n_pool)
    p.add_argument("--ranks", default="full,20%", help="first entry is the reference rank")
    p.set_defaults(fn=cmd_active_learn)

    p = sub.add_parser("verify", help="run the estimator guarantee suite")
    _common(p)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--fault-inject", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("run", help="end-to-end pipeline with a hashed manifest")
    _common(p)
    p.add_argument("--data", default=None, help="dataset CSV (default: generate the toy set)")
    p.add_argument("--n-points", type=int, default=100)
    _train_flags(p)
    _posterior_flags(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--method", default="linearized", choices=("linearized", "mc"))
    p.add_argument("--grid", default="-6,6,121")
    p.set_defaults(fn=run_pipeline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.fn(args) or 0)


if __name__ == "__main__":
    sys.exit(main())
