"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 missing/unreadable artifact,
4 numeric failure during training or sampling.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from repmolgen import pipeline
from repmolgen.config import load_config
from repmolgen.errors import (
    ConfigError,
    DependencyError,
    InvariantViolationError,
    NumericError,
    ParseError,
    RepMolGenError,
)


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, (DependencyError, ParseError, OSError)):
        return 3
    if isinstance(exc, (NumericError, InvariantViolationError)):
        return 4
    return 1


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load(args) -> tuple:
    cfg = load_config(args.config)
    run_dir = pipeline.resolve_run_dir(args.run_dir, args.config)
    return cfg, run_dir


def _cmd_gen_corpus(args) -> int:
    cfg, run_dir = _load(args)
    pipeline.cmd_gen_corpus(cfg, run_dir, force=args.force)
    return 0


def _cmd_pretrain_encoder(args) -> int:
    cfg, run_dir = _load(args)
    pipeline.cmd_pretrain_encoder(cfg, run_dir, force=args.force)
    return 0


def _cmd_train(args) -> int:
    cfg, run_dir = _load(args)
    pipeline.cmd_train(cfg, run_dir, which=args.which, force=args.force)
    return 0


def _cmd_sample(args) -> int:
    cfg, run_dir = _load(args)
    result = pipeline.cmd_sample(
        cfg, run_dir, count=args.count, seed=args.seed,
        condition=args.condition, tag=args.tag, temperature=args.temperature,
        psi=args.psi, corrector_steps=args.corrector_steps,
        guidance_w=args.guidance_w, steps=args.steps)
    _print_json(result.metrics.to_dict())
    return 0


def _cmd_condition(args) -> int:
    cfg, run_dir = _load(args)
    report = pipeline.cmd_condition(cfg, run_dir, args.values,
                                    count=args.count, seed=args.seed,
                                    force=args.force)
    _print_json(report)
    return 0


def _cmd_eval(args) -> int:
    report = pipeline.cmd_eval(args.samples, args.reference, seed=args.seed)
    _print_json(report.to_dict())
    return 0


def _cmd_theory(args) -> int:
    from repmolgen.theory import (
        ScoreNet,
        bimodal_2d_instance,
        check_loss_equivalence,
        check_subspace_dimension,
        check_tv_nonincrease,
        two_component_instance,
    )

    rng = np.random.default_rng(args.seed)
    if args.check == "loss-eq":
        dist = two_component_instance(args.r_mode)
        net = ScoreNet(dist.k, dist.r_dim, hidden=32, rng=rng)
        report = check_loss_equivalence(dist, net, rng, samples=args.samples)
    elif args.check == "tv":
        dist = bimodal_2d_instance(args.r_mode)
        report = check_tv_nonincrease(dist, args.steps, rng,
                                      train_steps=args.train_steps,
                                      sample_count=args.samples,
                                      bins=args.bins)
    else:
        report = check_subspace_dimension(args.n_atoms, args.trials, rng)
    _print_json(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="repmolgen",
        description="Two-stage molecule generation on a synthetic corpus: a "
                    "representation generator feeds an equivariant molecule "
                    "generator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True,
                       help="experiment configuration JSON")
        p.add_argument("--run-dir", default=None,
                       help=f"run directory (default: "
                            f"${pipeline.RUN_ROOT_ENV}/<config stem>)")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing artifacts")

    p = sub.add_parser("gen-corpus", help="generate and split the toy corpus")
    add_common(p)
    p.set_defaults(func=_cmd_gen_corpus)

    p = sub.add_parser("pretrain-encoder",
                       help="pretrain the geometric encoder by denoising")
    add_common(p)
    p.set_defaults(func=_cmd_pretrain_encoder)

    p = sub.add_parser("train", help="train the generators")
    add_common(p)
    p.add_argument("--which", choices=("rep", "mol", "both"), default="both")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="sample molecules and evaluate them")
    add_common(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--condition", type=float, default=None,
                   help="property value to condition on")
    p.add_argument("--tag", default="samples", help="output file stem")
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--psi", type=float, default=None)
    p.add_argument("--corrector-steps", type=int, default=None)
    p.add_argument("--guidance-w", type=float, default=None)
    p.add_argument("--steps", type=int, default=None,
                   help="reverse-diffusion steps for the molecule stage")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("condition",
                       help="retrain the representation generator with a "
                            "property input and report conditional MAE")
    add_common(p)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_condition)

    p = sub.add_parser("eval", help="evaluate a sample file against a "
                                    "reference file")
    p.add_argument("--samples", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("theory", help="run an analytic verification check")
    p.add_argument("check", choices=("loss-eq", "tv", "subspace"))
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r-mode", default=None,
                   help="what the representation reveals "
                        "(label/identity/constant)")
    p.add_argument("--steps", type=int, default=200,
                   help="diffusion steps for the tv check")
    p.add_argument("--train-steps", type=int, default=2000)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--n-atoms", type=int, default=8)
    p.add_argument("--trials", type=int, default=2000)
    p.set_defaults(func=_cmd_theory)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "theory" and args.r_mode is None:
        args.r_mode = "label" if args.check == "loss-eq" else "identity"
    try:
        return args.func(args)
    except (RepMolGenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
