"""Command-line entry points: synth, register-iter, train, register-model, evaluate, ablate."""
import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import fileio
from .affine import GeometricParams
from .experiment import ABLATIONS, DeskProtocol, make_pairs, register_with_model, run_ablation, run_protocol
from .metrics import evaluate_case
from .model import C2FViTConfig, ModelState, init_weights
from .optim import IterRegConfig, iterative_register
from .phantom import make_pair
from .report import case_rows, format_delimited, format_table, summary

CONFIGS = {"desk": C2FViTConfig.desk, "toy": C2FViTConfig.toy, "full": C2FViTConfig.full}


def _model_config(name, dims):
    cfg = CONFIGS[name]()
    if dims is not None and dims != cfg.input_size:
        cfg = replace(cfg, input_size=dims)
    return cfg


def cmd_synth(args):
    if args.translate is not None:
        params = GeometricParams(np.array(args.translate), np.zeros(3), np.ones(3), np.zeros(3))
        pair = make_pair(args.dims, args.seed, params=params)
    else:
        pair = make_pair(args.dims, args.seed, args.magnitude)
    os.makedirs(args.out, exist_ok=True)
    out = lambda name: os.path.join(args.out, name)  # noqa: E731
    fileio.write_volume(out("fixed"), pair.fixed)
    fileio.write_volume(out("moving"), pair.moving)
    fileio.write_volume(out("fixed_labels"), pair.fixed_labels)
    fileio.write_volume(out("moving_labels"), pair.moving_labels)
    from .volume import center_of_mass

    fileio.write_affine(
        out("truth.json"), pair.matrix, pair.params, center_of_mass(pair.fixed),
        provenance=f"synth dims={args.dims} seed={args.seed} magnitude={args.magnitude}",
    )
    print(f"wrote pair to {args.out}")
    return 0


def cmd_register_iter(args):
    F = fileio.read_volume(args.fixed, kind="image")
    M = fileio.read_volume(args.moving, kind="image")
    cfg_kw = {}
    if args.iterations:
        cfg_kw["iterations"] = tuple(args.iterations)
    if args.lr:
        cfg_kw["lr"] = tuple(args.lr)
    cfg = IterRegConfig.rigid(levels=args.levels, **cfg_kw) if args.rigid else IterRegConfig(levels=args.levels, **cfg_kw)
    log = open(args.log, "w") if args.log else None
    try:
        params, A, trace = iterative_register(F, M, cfg, log=log)
    finally:
        if log:
            log.close()
    from .volume import center_of_mass

    fileio.write_affine(args.out, A, params, center_of_mass(F), provenance="register-iter")
    print(f"final loss {trace[-1][2]:.6f}; wrote {args.out}")
    return 0


def _protocol(args):
    return DeskProtocol(
        dims=args.dims, train_pairs=args.pairs, test_pairs=args.test_pairs, magnitude=args.magnitude,
        steps=args.steps, lr=args.lr, seed=args.seed, semi=getattr(args, "semi", False),
    )


def cmd_train(args):
    cfg = _model_config(args.config, args.dims)
    protocol = _protocol(args)
    log = open(args.log, "w") if args.log else sys.stdout
    try:
        result, state = run_protocol(cfg, protocol, log=log, log_every=args.log_every)
    finally:
        if args.log:
            log.close()
    state.save(args.out, extra={"history": np.array(result.history)})
    print(
        f"held-out median DSC {result.median_initial:.4f} -> {result.median_final:.4f} "
        f"(median improvement {result.median_improvement:+.4f}); wrote {args.out}"
    )
    return 0


def cmd_register_model(args):
    F = fileio.read_volume(args.fixed, kind="image")
    M = fileio.read_volume(args.moving, kind="image")
    if args.checkpoint:
        state = ModelState.load(args.checkpoint)
    else:
        state = init_weights(_model_config(args.config, F.dims[0]), seed=args.seed)
    A = register_with_model(F, M, state, com_init=args.com_init)
    fileio.write_affine(args.out, A, provenance="register-model" + (" --com-init" if args.com_init else ""))
    print(f"wrote {args.out}")
    return 0


def cmd_evaluate(args):
    results = []
    for i, (f_lab, m_lab, aff) in enumerate(args.case):
        S_F = fileio.read_volume(f_lab, kind="labels")
        S_M = fileio.read_volume(m_lab, kind="labels")
        A = fileio.read_affine(aff).matrix
        results.append(evaluate_case(S_F, S_M, A, case_id=f"case{i}"))
    rows = case_rows(results)
    print(format_table(rows))
    s = summary(results)
    print()
    print(format_table([s]))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(format_delimited(rows))
    return 0


def cmd_ablate(args):
    cfg = _model_config(args.config, args.dims)
    log = open(args.log, "w") if args.log else None
    try:
        results = run_ablation(cfg, _protocol(args), tuple(args.variants), log=log, log_every=args.log_every)
    finally:
        if log:
            log.close()
    rows = [
        {"variant": name, "median_initial": r.median_initial, "median_final": r.median_final,
         "median_improvement": r.median_improvement}
        for name, r in results.items()
    ]
    print(format_table(rows))
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(format_delimited(rows))
    return 0


def _add_protocol_args(p, steps):
    p.add_argument("--config", choices=sorted(CONFIGS), default="desk")
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--pairs", type=int, default=200, help="number of synthetic training pairs")
    p.add_argument("--test-pairs", type=int, default=20)
    p.add_argument("--magnitude", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--log", help="write the key=value training log here")
    p.add_argument("--log-every", type=int, default=100)


def build_parser():
    parser = argparse.ArgumentParser(prog="c2fvit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="phantom, warped copy and ground-truth affine")
    p.add_argument("--dims", type=int, default=32)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--magnitude", type=float, default=0.2)
    p.add_argument("--translate", type=float, nargs=3, metavar=("TX", "TY", "TZ"),
                   help="pure translation instead of a random draw")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register-iter", help="iterative coarse-to-fine baseline")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--iterations", type=int, nargs="+")
    p.add_argument("--lr", type=float, nargs="+")
    p.add_argument("--rigid", action="store_true", help="optimize translation and rotation only")
    p.add_argument("--log")
    p.set_defaults(func=cmd_register_iter)

    p = sub.add_parser("train", help="train a model on synthetic pairs")
    _add_protocol_args(p, 2000)
    p.add_argument("--semi", action="store_true", help="add the Dice term on phantom labels")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register-model", help="predict an affine with a trained model")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--out", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--identity-model", dest="config", choices=sorted(CONFIGS),
                     help="use a freshly initialized model of this size (predicts the identity)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--com-init", action="store_true", help="pre-align centres of mass first")
    p.set_defaults(func=cmd_register_model)

    p = sub.add_parser("evaluate", help="DSC / DSC30 / HD95 report")
    p.add_argument("--case", nargs=3, action="append", required=True,
                   metavar=("FIXED_LABELS", "MOVING_LABELS", "AFFINE"))
    p.add_argument("--csv", help="also write delimited rows here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="progressive vs non-progressive, decoupled vs direct head")
    _add_protocol_args(p, 2000)
    p.add_argument("--variants", nargs="+", default=list(ABLATIONS), choices=sorted(ABLATIONS))
    p.add_argument("--csv")
    p.set_defaults(func=cmd_ablate, semi=False)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        print(f"c2fvit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
