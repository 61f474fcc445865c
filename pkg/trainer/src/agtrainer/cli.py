"""Trainer command line: train / predict / eval over AGX1 tile directories."""

from __future__ import annotations

import argparse
import sys

from .model import TrainerConfig


def cmd_train(args) -> int:
    from .train import train

    cfg = TrainerConfig(
        epochs=args.epochs, batch_size=args.batch_size, T=args.steps,
        curriculum_epochs=args.curriculum_epochs, lambda_cls=args.lambda_cls,
        gate_gamma=args.gamma, widths=tuple(args.widths), seed=args.seed,
        lr=args.lr,
    )
    result = train(args.tiles, args.out, cfg, log_every=args.log_every)
    print(f"final loss {result['history'][-1]:.6f} -> {result['checkpoint']}")
    return 0


def cmd_predict(args) -> int:
    from .predict import predict

    written = predict(args.checkpoint, args.tiles, args.out, seed=args.seed)
    print(f"wrote {len(written)} prediction tiles to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .predict import evaluate, write_eval

    report = evaluate(args.pred, args.truth)
    print(f"MAE {report['mae_db']:.3f} dB over {len(report['per_tile_mae_db'])} tiles")
    if args.out:
        write_eval(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="agtrainer", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the denoiser on AGX1 tiles")
    p.add_argument("--tiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--steps", type=int, default=250)
    p.add_argument("--curriculum-epochs", type=int, default=10)
    p.add_argument("--lambda-cls", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--widths", type=int, nargs=4, default=[32, 64, 128, 256])
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="inpaint full fields from sparse tiles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tiles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="MAE between prediction and truth tiles")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
