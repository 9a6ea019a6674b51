"""Command-line entry point: ``ccvgae {synth,split,train,eval,svd,fewshot,theory}``.

Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 failed check.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import graphio, metagraph, model, synth, theory, trainer
from .autodiff import NumericError, SingularMatrixError

log = logging.getLogger("ccvgae")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(items: list[str] | None) -> trainer.TrainConfig:
    """Merge JSON config files and ``key=value`` overrides, in order."""
    merged: dict = {}
    for item in items or []:
        if "=" in item and not Path(item).exists():
            key, _, raw = item.partition("=")
            merged[key.strip()] = _parse_value(raw.strip())
        else:
            try:
                merged.update(json.loads(Path(item).read_text()))
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {item}: {exc}") from None
    try:
        return trainer.TrainConfig.from_dict(merged)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(str(exc).strip('"')) from None


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec = synth.gen_spec(args.k, args.n, args.noise_var, args.seed)
    g = synth.write_dataset(spec, args.out)
    log.info("wrote %d-node graph with %d edges to %s", g.n, len(g.edges), args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    g = graphio.load_graph(args.data)
    split = graphio.split_edges(g, args.val_frac, args.test_frac, args.seed)
    out = Path(args.out) if args.out else Path(args.data) / "split.json"
    split.save(out)
    log.info("split %d edges: %d/%d/%d -> %s", len(g.edges), len(split.train_pos),
             len(split.val_pos), len(split.test_pos), out)
    return EXIT_OK


def _load_split(args, g, cfg=None):
    if args.split:
        split = graphio.EdgeSplit.load(args.split)
    elif (Path(args.data) / "split.json").is_file():
        split = graphio.EdgeSplit.load(Path(args.data) / "split.json")
    elif cfg is not None:
        split = graphio.split_edges(g, cfg.val_frac, cfg.test_frac, cfg.seed)
    else:
        raise UsageError("no --split given and no split.json next to the data")
    try:
        split.check(g)
    except AssertionError:
        raise UsageError("split does not match the dataset") from None
    return split


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    g = graphio.load_graph(args.data)
    split = _load_split(args, g, cfg)
    params, report = trainer.fit(g, split, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.checkpoint_save(params, out / "checkpoint.json")
    obj = report.to_json()
    if not args.timing:
        obj["wall_time_s"] = None
    write_json(out / "report.json", obj)
    log.info("test auc=%.4f ap=%.4f", report.auc, report.ap)
    return EXIT_OK


def cmd_eval(args) -> int:
    params = model.checkpoint_load(args.checkpoint)
    g = graphio.load_graph(args.data)
    split = _load_split(args, g)
    start = time.perf_counter()
    report = trainer.evaluate(params, g, split)
    obj = report.to_json()
    obj["wall_time_s"] = time.perf_counter() - start if args.timing else None
    write_json(args.out, obj)
    log.info("test auc=%.4f ap=%.4f", report.auc, report.ap)
    return EXIT_OK


def cmd_svd(args) -> int:
    params = model.checkpoint_load(args.checkpoint)
    g = graphio.load_graph(args.data)
    split = _load_split(args, g)
    if params.dims[0] != g.d:
        raise model.CheckpointError(f"checkpoint expects d={params.dims[0]}, data has d={g.d}")
    latent = model.latent_factors(params, graphio.normalize(g, split.train_pos), g.attrs)
    write_json(args.out, {"spectrum": trainer.svd_spectrum(latent)})
    return EXIT_OK


def cmd_fewshot(args) -> int:
    spec = synth.gen_spec(args.k, args.n, args.noise_var, args.seed)
    family = metagraph.build_family(spec, args.family_count, args.seed)
    cfg = metagraph.MetaConfig(seed=args.seed, meta_epochs=args.meta_epochs,
                               inner_loops=args.meta_loops, inner_lr=args.inner_lr,
                               outer_lr=args.outer_lr, latent_dim=args.k, signature_dim=args.k)
    cells = metagraph.run_fewshot(family, cfg, _ints(args.loops), _floats(args.fractions))
    config = cfg.to_dict()
    config.update(family_count=args.family_count, noise_var=args.noise_var, n=args.n)
    write_json(args.out, {"cells": cells, "config": config})
    return EXIT_OK


def run_theory_suite(seed: int = 0, samples: int = 100_000) -> list[dict]:
    """Every numerical check with its measurements and pass flag."""
    from itertools import product

    from .autodiff import Tape
    from .objective import dag_penalty

    rng = np.random.default_rng(seed)
    checks = []

    rows = theory.bound_grid()
    checks.append({"name": "linear_bound_grid", "params": {"grid_points": 2001},
                   "rows": [r.to_json() for r in rows], "passed": all(r.passed for r in rows)})

    demos = [("omega=1,r=[0,1]", theory.LinearUniformSpec.two_dim(1.0))]
    demos += [(f"random-{i}", theory.LinearUniformSpec.random(rng)) for i in range(10)]
    for name, spec in demos:
        res = theory.construct_q_demo(spec, samples, seed=int(rng.integers(2**31)))
        ok = bool(max(res["ks"]) < 0.05 and res["corr_diff"] < 0.02
                  and abs(res["corr_built"] - res["corr_analytic"]) < 0.02)
        checks.append({"name": "construct_q_demo", "params": {"spec": name, "samples": samples},
                       "measured": res, "bounds": {"ks": 0.05, "corr": 0.02}, "passed": ok})

    mismatches = 0
    for bits in product((0.0, 1.0), repeat=12):
        phi = np.zeros((4, 4))
        phi[~np.eye(4, dtype=bool)] = bits
        h = dag_penalty(Tape().const(phi)).item()
        mismatches += not ((h < 1e-9) if theory.acyclicity_oracle(phi) else (h > 1e-6))
    checks.append({"name": "dag_penalty_iff_acyclic", "params": {"k": 4, "cases": 4096},
                   "measured": {"mismatches": mismatches}, "passed": mismatches == 0})

    bad = 0
    for _ in range(500):
        phi = theory.random_dag(int(rng.integers(1, 9)), rng)
        ok, _ = theory.perm_triangular_check(phi)
        bad += not ok
    checks.append({"name": "perm_triangular", "params": {"cases": 500, "max_k": 8, "brute_force_max_k": 6},
                   "measured": {"failures": bad}, "passed": bad == 0})

    cons = theory.consistency_check(synth.gen_spec(16, 100, 1.0, seed), seed=seed)
    checks.append({"name": "consistency_slope", "params": {"counts": cons["counts"]},
                   "measured": cons, "bounds": {"slope": [-0.6, -0.4]},
                   "passed": bool(-0.6 <= cons["slope"] <= -0.4)})
    return checks


def cmd_theory(args) -> int:
    checks = run_theory_suite(args.seed, args.samples)
    ok = all(c["passed"] for c in checks)
    write_json(args.out, {"checks": checks, "passed": ok, "seed": args.seed})
    for c in checks:
        log.info("%-26s %s", c["name"], "PASS" if c["passed"] else "FAIL")
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ccvgae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic SCM graph")
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--noise-var", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="split edges into train/val/test")
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="default: <data>/split.json")
    s.add_argument("--val-frac", type=float, default=0.05)
    s.add_argument("--test-frac", type=float, default=0.10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train and evaluate")
    s.add_argument("--data", required=True)
    s.add_argument("--split")
    s.add_argument("--config", action="append", metavar="FILE|KEY=VALUE",
                   help="JSON file of TrainConfig keys or a single override; repeatable")
    s.add_argument("--out", required=True, help="directory for checkpoint.json and report.json")
    s.add_argument("--timing", action="store_true", help="record wall time (breaks byte-identical output)")
    s.set_defaults(func=cmd_train)

    for name, func, default_out in (("eval", cmd_eval, "report.json"), ("svd", cmd_svd, "svd.json")):
        s = sub.add_parser(name)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--split")
        s.add_argument("--out", default=default_out)
        if name == "eval":
            s.add_argument("--timing", action="store_true")
        s.set_defaults(func=func)

    s = sub.add_parser("fewshot", help="few-shot sweep on a synthetic graph family")
    s.add_argument("--family-count", type=int, default=12)
    s.add_argument("--loops", default="10,30,50,70")
    s.add_argument("--fractions", default="0.05,0.10")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-var", type=float, default=1.0)
    s.add_argument("--k", type=int, default=16)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--meta-epochs", type=int, default=metagraph.MetaConfig.meta_epochs)
    s.add_argument("--meta-loops", type=int, default=metagraph.MetaConfig.inner_loops)
    s.add_argument("--inner-lr", type=float, default=metagraph.MetaConfig.inner_lr)
    s.add_argument("--outer-lr", type=float, default=metagraph.MetaConfig.outer_lr)
    s.add_argument("--out", default="fewshot_report.json")
    s.set_defaults(func=cmd_fewshot)

    s = sub.add_parser("theory", help="run the numerical verification suite")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--out", default="theory_report.json")
    s.set_defaults(func=cmd_theory)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = max(int(os.environ.get("CCVGAE_THREADS", "1")), 1)
    try:
        with threadpool_limits(limits=threads):
            return args.func(args)
    except (trainer.TrainingDiverged, NumericError, SingularMatrixError) as exc:
        print(f"ccvgae: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, FileNotFoundError, graphio.GraphFormatError, model.CheckpointError,
            model.ConfigError, ValueError) as exc:
        print(f"ccvgae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
