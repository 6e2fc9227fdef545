"""Command-line entry point covering the full workflow.

Subcommands: generate, train, eval, predict, intervene, interpret, curve,
serve.  Exit codes: 0 success, 1 usage error, 2 unreadable or malformed
input, 3 numerical failure.  Errors print one line to stderr in the form
``error[<kind>]: <reason>``.

Every command that writes a primary output also writes
``<output>.manifest.json`` next to it (atomically) recording the command,
resolved configuration, seeds, input/output paths, package version, and
wall-clock time.  Concept indices on the command line are 0-based.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from . import data as ed
from . import inference as inf
from . import interpret as it
from . import model as em
from . import training as tr
from .diffcore import NonFiniteError
from .persist import CheckpointError, load_checkpoint, save_checkpoint
from .prob import TableError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; we want 1
        raise UsageError(message)


def _apply_thread_cap() -> None:
    cap = os.environ.get("ECBM_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        raise UsageError(f"ECBM_THREADS must be an integer, got {cap!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)
    except ImportError:
        pass


def _atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_manifest(output_path: str, command: str, args: argparse.Namespace,
                    inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in sorted(vars(args).items())
                   if k != "func" and v is not None},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": f"ecbm-{__version__}",
        "started_utc": datetime.fromtimestamp(
            started, tz=timezone.utc).isoformat(),
        "wall_clock_seconds": round(time.time() - started, 6),
    }
    _atomic_write_text(f"{output_path}.manifest.json",
                       json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# generator spec files (flat key=value)
# ---------------------------------------------------------------------------

def parse_spec_file(path: str) -> ed.GeneratorSpec:
    values = {}
    with open(path) as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ed.DatasetFormatError(f"{path}:{n}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        prototypes = tuple(tuple(int(b) for b in row)
                           for row in values["prototypes"].split(","))
        couplings = tuple(
            tuple(int(v) for v in pair.split(":"))
            for pair in values.get("couplings", "").split(",") if pair)
        return ed.GeneratorSpec(
            n_concepts=int(values["n_concepts"]),
            n_classes=int(values["n_classes"]),
            feature_dim=int(values["feature_dim"]),
            n_examples=int(values["n_examples"]),
            prototypes=prototypes,
            flip_prob=float(values.get("flip_prob", 0.05)),
            couplings=couplings,
            feature_seed=int(values.get("feature_seed", 0)),
            feature_noise=float(values.get("feature_noise", 0.1)),
        )
    except KeyError as exc:
        raise ed.DatasetFormatError(f"{path}: missing field {exc}") from exc
    except ValueError as exc:
        raise ed.DatasetFormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    started = time.time()
    spec = parse_spec_file(args.spec)
    dataset = ed.generate(spec, seed=args.seed)
    ed.save(dataset, args.out)
    _write_manifest(args.out, "generate", args, [args.spec], [args.out], started)
    print(f"wrote {len(dataset)} examples to {args.out} "
          f"(hash {dataset.generator_hash})")
    return 0


def _train_config(args) -> tr.TrainConfig:
    return tr.TrainConfig(
        epochs=args.epochs, batch_size=args.batch,
        learning_rate=args.lr, momentum=args.momentum,
        negative_samples=args.negatives,
        perturb_fraction=args.perturb_fraction,
        perturb_bit_prob=args.perturb_bit_prob, seed=args.seed)


def cmd_train(args) -> int:
    started = time.time()
    dataset = ed.load(args.data)
    cfg = em.ModelConfig(
        n_concepts=dataset.n_concepts, n_classes=dataset.n_classes,
        feature_dim=dataset.feature_dim, embed_dim=args.embed_dim,
        dropout_p=args.dropout, lambda_c=args.lambda_c,
        lambda_g=args.lambda_g, lambda_c_inf=args.lambda_c_inf,
        lambda_g_inf=args.lambda_g_inf)
    theta = em.init_theta(cfg, seed=args.seed)
    theta, history = tr.train(theta, dataset, _train_config(args))
    save_checkpoint(args.out, theta)
    losses_path = f"{args.out}.losses.tsv"
    lines = ["epoch\tl_class\tl_concept\tl_global\tl_total"]
    for i, h in enumerate(history, start=1):
        lines.append(f"{i}\t{h.l_class:.17g}\t{h.l_concept:.17g}"
                     f"\t{h.l_global:.17g}\t{h.l_total:.17g}")
    _atomic_write_text(losses_path, "\n".join(lines) + "\n")
    _write_manifest(args.out, "train", args, [args.data],
                    [args.out, losses_path], started)
    print(f"epoch 1 total loss {history[0].l_total:.6f} -> "
          f"epoch {len(history)} total loss {history[-1].l_total:.6f}")
    print(f"checkpoint: {args.out}")
    return 0


def _inference_config(args) -> inf.InferenceConfig:
    kwargs = {}
    for name in ("step_size", "max_iters", "tol"):
        if getattr(args, name, None) is not None:
            kwargs[name] = getattr(args, name)
    return inf.InferenceConfig(**kwargs)


def cmd_eval(args) -> int:
    started = time.time()
    theta = load_checkpoint(args.ckpt)
    dataset = ed.load(args.data)
    config = _inference_config(args)
    if args.mode == "gradient":
        concepts, classes, _, _ = inf.predict_batch(
            theta, dataset.features, config)
    else:
        points = []
        concepts = np.empty_like(dataset.concepts, dtype=np.int64)
        classes = np.empty(len(dataset), dtype=np.int64)
        for j in range(len(dataset)):
            c_marg, y_marg = inf.exact_marginals(
                theta, dataset.features[j], {}, config)
            concepts[j] = (c_marg >= 0.5).astype(np.int64)
            classes[j] = int(y_marg.argmax())
    metrics = ed.evaluate_predictions(concepts, classes, dataset)
    summary = {
        "concept_accuracy": metrics.concept,
        "overall_concept_accuracy": metrics.overall_concept,
        "class_accuracy": metrics.class_,
        "n_examples": len(dataset),
        "mode": args.mode,
    }
    print(f"{'metric':<26} value")
    for key in ("concept_accuracy", "overall_concept_accuracy",
                "class_accuracy"):
        print(f"{key:<26} {summary[key]:.6f}")
    if args.out:
        _atomic_write_text(args.out,
                           json.dumps(summary, indent=2, sort_keys=True) + "\n")
        _write_manifest(args.out, "eval", args, [args.ckpt, args.data],
                        [args.out], started)
    return 0


def _example_features(args, theta):
    if args.features is not None:
        x = np.array([float(v) for v in args.features.split(",")])
        if x.shape[0] != theta.config.feature_dim:
            raise ed.DatasetFormatError(
                f"expected {theta.config.feature_dim} features, got {x.shape[0]}")
        return x, None
    if args.data is None or args.index is None:
        raise UsageError("provide either --features or --data with --index")
    dataset = ed.load(args.data)
    if not 0 <= args.index < len(dataset):
        raise ed.DatasetFormatError(
            f"index {args.index} outside dataset of {len(dataset)} examples")
    return dataset.features[args.index], dataset


def cmd_predict(args) -> int:
    theta = load_checkpoint(args.ckpt)
    x, dataset = _example_features(args, theta)
    res = inf.predict(theta, x, _inference_config(args))
    payload = {
        "concept_probs": [float(v) for v in res.state.c_hat],
        "class_probs": [float(v) for v in res.state.y_hat],
        "rounded": {"concepts": [int(v) for v in res.concepts],
                    "class": res.class_index},
        "energies": {
            "class": res.energies.e_class,
            "concept": float(res.energies.e_concept_per_k.sum()),
            "concept_per_k": [float(v) for v in res.energies.e_concept_per_k],
            "global": res.energies.e_global,
            "joint": res.energies.e_joint,
        },
        "iterations": res.iterations,
    }
    if dataset is not None and args.index is not None:
        payload["ground_truth"] = {
            "concepts": [int(v) for v in dataset.concepts[args.index]],
            "class": int(dataset.labels[args.index]),
        }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _parse_fixes(pairs, n_concepts) -> dict:
    mask = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--fix expects k=bit, got {pair!r}")
        k, _, bit = pair.partition("=")
        try:
            mask[int(k)] = int(bit)
        except ValueError as exc:
            raise UsageError(f"--fix expects integers, got {pair!r}") from exc
    return inf.check_mask(mask, n_concepts)


def cmd_intervene(args) -> int:
    started = time.time()
    theta = load_checkpoint(args.ckpt)
    x, _ = _example_features(args, theta)
    mask = _parse_fixes(args.fix, theta.config.n_concepts)
    config = _inference_config(args)
    if args.mode == "exact":
        table = inf.intervene_exact(theta, x, mask, config)
        text = table.to_text()
        if args.out:
            _atomic_write_text(args.out, text)
            _write_manifest(args.out, "intervene", args,
                            [args.ckpt], [args.out], started)
        else:
            print(text, end="")
    else:
        res = inf.intervene_gradient(theta, x, mask, config)
        payload = {
            "concept_probs": [float(v) for v in res.state.c_hat],
            "class_probs": [float(v) for v in res.state.y_hat],
            "rounded": {"concepts": [int(v) for v in res.concepts],
                        "class": res.class_index},
            "fixed": {str(k): v for k, v in sorted(mask.items())},
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_interpret(args) -> int:
    started = time.time()
    theta = load_checkpoint(args.ckpt)
    dataset = ed.load(args.data)
    cfg = it.EstimatorConfig(mode=args.mode, seed=args.seed)
    k_total = theta.config.n_concepts

    def resolve(query):
        if args.mode == "soft":
            return _soft_answer(theta, dataset, query, cfg)
        est = it.hard_estimates(theta, dataset, query, cfg,
                                predictions=_hard_predictions(theta, dataset, cfg))
        if not est.defined:
            return None  # conditioning event absent: undefined, not zero
        return est.table

    outputs = []
    if args.query == "marginal" and args.k is None:
        # one row per concept: the class's per-concept importance profile
        if args.class_index is None:
            raise UsageError("--class is required for --query marginal")
        lines = ["k\tp_one"]
        if args.mode == "soft":
            tables = it.marginal_concept_importance(
                theta, dataset, args.class_index, cfg)
            preds = None
        else:
            preds = _hard_predictions(theta, dataset, cfg)
            tables = []
            for k in range(k_total):
                est = it.hard_estimates(
                    theta, dataset, it.MarginalQuery(k, args.class_index),
                    cfg, predictions=preds)
                tables.append(est.table if est.defined else None)
        for k, table in enumerate(tables):
            p1 = "nan" if table is None else f"{table.probs[1]:.17g}"
            lines.append(f"{k}\t{p1}")
        text = "\n".join(lines) + "\n"
    else:
        query = _build_query(args)
        table = resolve(query)
        if table is None:
            text = ("# undefined: the conditioning event never occurs "
                    "in the rounded predictions\n")
        else:
            text = table.to_text()
    if args.out:
        _atomic_write_text(args.out, text)
        outputs.append(args.out)
        _write_manifest(args.out, "interpret", args,
                        [args.ckpt, args.data], outputs, started)
    else:
        print(text, end="")
    return 0


_HARD_PRED_CACHE: dict = {}


def _hard_predictions(theta, dataset, cfg):
    key = id(dataset)
    if key not in _HARD_PRED_CACHE:
        _HARD_PRED_CACHE[key] = it.predictions_for(theta, dataset, cfg)
    return _HARD_PRED_CACHE[key]


def _build_query(args):
    if args.query == "marginal":
        if args.k is None or args.class_index is None:
            raise UsageError("--query marginal needs --k and --class")
        return it.MarginalQuery(k=args.k, class_index=args.class_index)
    if args.query == "joint":
        if args.class_index is None:
            raise UsageError("--query joint needs --class")
        return it.JointQuery(class_index=args.class_index)
    if args.query == "cond-class":
        if None in (args.k, args.kp, args.ckp, args.class_index):
            raise UsageError("--query cond-class needs --k --kp --ckp --class")
        return it.CondGivenClassQuery(k=args.k, kp=args.kp,
                                      value_kp=args.ckp,
                                      class_index=args.class_index)
    if args.query == "cond":
        if None in (args.k, args.kp, args.ckp):
            raise UsageError("--query cond needs --k --kp --ckp")
        return it.CondQuery(k=args.k, kp=args.kp, value_kp=args.ckp)
    raise UsageError(f"unknown query {args.query!r}")


def _soft_answer(theta, dataset, query, cfg):
    if isinstance(query, it.MarginalQuery):
        return it.marginal_concept_importance(
            theta, dataset, query.class_index, cfg)[query.k]
    if isinstance(query, it.JointQuery):
        _, table = it.joint_concept_importance(
            theta, dataset, query.class_index,
            np.zeros(theta.config.n_concepts), cfg)
        if table is None:
            raise inf.EnumerationLimitError(
                "joint table too large to enumerate")
        return table
    if isinstance(query, it.CondGivenClassQuery):
        return it.concept_conditional_given_class(
            theta, dataset, query.k, query.kp, query.value_kp,
            query.class_index, cfg)
    return it.concept_conditional(theta, dataset, query.k, query.kp,
                                  query.value_kp, cfg)


def cmd_curve(args) -> int:
    started = time.time()
    theta = load_checkpoint(args.ckpt)
    dataset = ed.load(args.data)
    try:
        ratios = [float(v) for v in args.ratios.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"--ratios expects comma-separated reals: {exc}")
    points = ed.intervention_curve(theta, dataset, ratios, mode=args.mode,
                                   seed=args.seed,
                                   config=_inference_config(args))
    lines = ["ratio\tconcept\toverall_concept\tclass"]
    for p in points:
        lines.append(f"{p.ratio:.17g}\t{p.concept:.17g}"
                     f"\t{p.overall_concept:.17g}\t{p.class_:.17g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write_text(args.out, text)
        _write_manifest(args.out, "curve", args, [args.ckpt, args.data],
                        [args.out], started)
    else:
        print(text, end="")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceState, create_app

    theta = load_checkpoint(args.ckpt)
    dataset = ed.load(args.data)
    state = ServiceState.build(theta, dataset, split=args.split,
                               config=_inference_config(args))
    app = create_app(state)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def _add_inference_flags(p):
    p.add_argument("--step-size", type=float, dest="step_size", default=None,
                   help="inference optimizer step size (default 0.1)")
    p.add_argument("--max-iters", type=int, dest="max_iters", default=None,
                   help="inference iteration cap (default 100)")
    p.add_argument("--tol", type=float, default=None,
                   help="energy-delta convergence tolerance (default 1e-6)")


def build_parser() -> _Parser:
    parser = _Parser(prog="ecbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"ecbm-{__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset file")
    p.add_argument("--spec", required=True, help="key=value generator spec file")
    p.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--epochs", type=int, default=30, help="epochs (default 30)")
    p.add_argument("--batch", type=int, default=64, help="batch size (default 64)")
    p.add_argument("--lr", type=float, default=1e-2,
                   help="learning rate (default 0.01)")
    p.add_argument("--momentum", type=float, default=0.0,
                   help="SGD momentum (default 0)")
    p.add_argument("--seed", type=int, default=0,
                   help="init/shuffle/sampling seed (default 0)")
    p.add_argument("--lambda-c", type=float, dest="lambda_c", default=0.3,
                   help="concept loss weight (default 0.3)")
    p.add_argument("--lambda-g", type=float, dest="lambda_g", default=0.3,
                   help="global loss weight (default 0.3)")
    p.add_argument("--lambda-c-inf", type=float, dest="lambda_c_inf",
                   default=1.0, help="joint-energy concept weight (default 1)")
    p.add_argument("--lambda-g-inf", type=float, dest="lambda_g_inf",
                   default=0.01, help="joint-energy global weight (default 0.01)")
    p.add_argument("--negatives", type=int, default=20,
                   help="random negative vectors per batch (default 20)")
    p.add_argument("--perturb-fraction", type=float, dest="perturb_fraction",
                   default=0.2, help="share of examples perturbed (default 0.2)")
    p.add_argument("--perturb-bit-prob", type=float, dest="perturb_bit_prob",
                   default=0.2, help="per-bit flip probability (default 0.2)")
    p.add_argument("--embed-dim", type=int, dest="embed_dim", default=16,
                   help="embedding and hidden width (default 16)")
    p.add_argument("--dropout", type=float, default=0.2,
                   help="head dropout probability (default 0.2)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy metrics for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("gradient", "exact"), default="gradient",
                   help="prediction mode (default gradient)")
    p.add_argument("--out", help="machine-readable JSON summary path")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict one example")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset file (with --index)")
    p.add_argument("--index", type=int, help="0-based example index")
    p.add_argument("--features", help="inline comma-separated features")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("intervene", help="pin concepts and re-infer")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset file (with --index)")
    p.add_argument("--index", type=int)
    p.add_argument("--features", help="inline comma-separated features")
    p.add_argument("--fix", action="append", metavar="K=BIT",
                   help="pin concept K (0-based) to BIT; repeatable")
    p.add_argument("--mode", choices=("exact", "gradient"), default="exact",
                   help="intervention mode (default exact)")
    p.add_argument("--out", help="write the posterior table here")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_intervene)

    p = sub.add_parser("interpret", help="conditional-interpretation tables")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query", required=True,
                   choices=("marginal", "joint", "cond-class", "cond"))
    p.add_argument("--class", type=int, dest="class_index",
                   help="0-based class index")
    p.add_argument("--k", type=int, help="0-based concept index")
    p.add_argument("--kp", type=int, help="0-based conditioning concept index")
    p.add_argument("--ckp", type=int, choices=(0, 1),
                   help="conditioning concept value")
    p.add_argument("--mode", choices=("soft", "hard"), default="soft",
                   help="Boltzmann sums or rounded counting (default soft)")
    p.add_argument("--seed", type=int, default=0,
                   help="Monte Carlo seed (default 0)")
    p.add_argument("--out", help="write the table here")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("curve", help="intervention-ratio accuracy table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", default="0,0.25,0.5,0.75,1",
                   help="comma-separated ratios (default 0,0.25,0.5,0.75,1)")
    p.add_argument("--mode", choices=("exact", "gradient"), default="exact",
                   help="intervention mode (default exact)")
    p.add_argument("--seed", type=int, default=0,
                   help="per-example concept-choice seed (default 0)")
    p.add_argument("--out", help="write the TSV table here")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("serve", help="HTTP service over a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test",
                   help="name of the served split (default test)")
    p.add_argument("--port", type=int, default=8571)
    p.add_argument("--host", default="127.0.0.1")
    _add_inference_flags(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    try:
        _apply_thread_cap()
        parser = build_parser()
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 1
    except (ed.DatasetFormatError, CheckpointError, TableError,
            FileNotFoundError, IsADirectoryError, PermissionError,
            ValueError) as exc:
        print(f"error[input]: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, tr.TrainingDiverged, FloatingPointError) as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
