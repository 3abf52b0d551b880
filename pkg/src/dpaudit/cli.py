"""Command-line interface.

Subcommands: account, calibrate, train, attack, audit, oracle, bound.
Numeric answers print as bare decimal numbers so they compose in shells;
exit code 2 means bad usage or a malformed config, 1 a runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .accountant import (
    AnalysisKind,
    PrivacyBudget,
    SgdConfig,
    account,
    calibrate_sigma,
)
from .attack import best_advantage, export_losses, roc_curve, tpr_at_fpr, yeom_attack
from .bounds import advantage_upper_bound, eps_lower_bound
from .experiment import ExperimentConfig, emit_report, run_experiment
from .oracle import run_suite
from .trainer import (
    accuracy,
    generate_synthetic,
    load_csv,
    load_model,
    per_example_losses,
    save_csv,
    save_model,
    train_dpsgd,
)


def _fmt(x: float) -> str:
    return format(x, ".6g")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpaudit",
        description="DP-SGD privacy auditing: accounting bounds, membership "
        "inference, and attack-derived epsilon lower bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("account", help="one-shot (eps, delta) accounting")
    p.add_argument("--sigma", type=float, required=True, help="noise multiplier")
    p.add_argument("--q", type=float, required=True, help="sampling rate")
    p.add_argument("--steps", type=int, required=True, help="step count")
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument(
        "--analysis",
        choices=[k.value for k in AnalysisKind],
        required=True,
    )

    p = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    p.add_argument("--target-eps", type=float, required=True)
    p.add_argument(
        "--analysis", choices=[k.value for k in AnalysisKind], required=True
    )
    p.add_argument("--q", type=float, default=0.02)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--delta", type=float, default=1e-5)

    p = sub.add_parser("train", help="train one DP-SGD logistic regression")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV file: integer label first, features after")
    src.add_argument(
        "--synthetic",
        metavar="N,DIM,CLASSES,SEPARATION",
        help="generate a synthetic train/holdout pair",
    )
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--q", type=float, default=0.02)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", help="write the trained model here")
    p.add_argument(
        "--save-data", metavar="DIR", help="write train.csv/holdout.csv (synthetic only)"
    )

    p = sub.add_parser("attack", help="loss-threshold membership inference")
    p.add_argument("--model", required=True, help="model file from `train`")
    p.add_argument("--train", required=True, help="member CSV")
    p.add_argument("--holdout", required=True, help="non-member CSV")
    p.add_argument("--target-fpr", type=float, default=0.05)
    p.add_argument("--export-member-losses", metavar="FILE")
    p.add_argument("--export-nonmember-losses", metavar="FILE")

    p = sub.add_parser("audit", help="full experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")

    p = sub.add_parser("oracle", help="exact verification of the attack bounds")
    p.add_argument("--seed", type=int, default=20240)

    p = sub.add_parser("bound", help="translate between epsilon and advantage")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument(
        "--advantage", type=float, help="attack advantage -> epsilon lower bound"
    )
    which.add_argument("--eps", type=float, help="epsilon -> advantage upper bound")
    p.add_argument("--delta", type=float, default=1e-5)

    return parser


def _cmd_account(args: argparse.Namespace) -> int:
    config = SgdConfig(
        sigma=args.sigma,
        clip=1.0,
        q=args.q,
        steps=args.steps,
        lr=0.1,
        epochs=max(1, round(args.steps * args.q)),
        seed=0,
    )
    budget = account(config, AnalysisKind(args.analysis), args.delta)
    print(_fmt(budget.eps))
    return 0


def _cmd_calibrate(args: argparse.Namespace) -> int:
    template = SgdConfig.from_epochs(
        sigma=1.0, clip=1.0, q=args.q, lr=0.1, epochs=args.epochs, seed=0
    )
    sigma = calibrate_sigma(
        args.target_eps, AnalysisKind(args.analysis), template, args.delta
    )
    print(_fmt(sigma))
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    if args.synthetic:
        try:
            n, dim, classes, separation = args.synthetic.split(",")
            n, dim, classes, separation = int(n), int(dim), int(classes), float(separation)
        except ValueError:
            print(
                "error: --synthetic expects N,DIM,CLASSES,SEPARATION", file=sys.stderr
            )
            return 2
        train, holdout = generate_synthetic(n, dim, classes, separation, args.seed)
        if args.save_data:
            os.makedirs(args.save_data, exist_ok=True)
            save_csv(train, os.path.join(args.save_data, "train.csv"))
            save_csv(holdout, os.path.join(args.save_data, "holdout.csv"))
    else:
        train, holdout = load_csv(args.data), None

    config = SgdConfig.from_epochs(
        sigma=args.sigma,
        clip=args.clip,
        q=args.q,
        lr=args.lr,
        epochs=args.epochs,
        seed=args.seed,
    )
    model, trace = train_dpsgd(train, config)
    print(f"steps {model.steps_run}")
    print(f"final_train_loss {_fmt(model.final_train_loss)}")
    print(f"train_accuracy {_fmt(accuracy(model, train))}")
    if holdout is not None:
        print(f"holdout_accuracy {_fmt(accuracy(model, holdout))}")
    if args.model_out:
        save_model(model, args.model_out)
        print(f"model {args.model_out}")
    return 0


def _cmd_attack(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    train = load_csv(args.train)
    holdout = load_csv(args.holdout)
    result = yeom_attack(model, train, holdout)
    member = per_example_losses(model, train)
    nonmember = per_example_losses(model, holdout)
    curve = roc_curve(member, nonmember)
    best_adv, best_thr = best_advantage(curve)
    fixed = tpr_at_fpr(curve, args.target_fpr)

    print(f"threshold {_fmt(result.threshold)}")
    print(f"tpr {_fmt(result.tpr)}")
    print(f"fpr {_fmt(result.fpr)}")
    print(f"advantage {_fmt(result.advantage)}")
    print(f"tpr_at_fpr_{args.target_fpr:g} {_fmt(fixed.tpr)}")
    print(f"best_advantage {_fmt(best_adv)}")
    print(f"best_threshold {_fmt(best_thr)}")
    if args.export_member_losses:
        export_losses(member, args.export_member_losses)
    if args.export_nonmember_losses:
        export_losses(nonmember, args.export_nonmember_losses)
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            config = ExperimentConfig.from_json(fh.read())
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: malformed config {args.config}: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(config)
    out_dir = args.out or config.output_dir
    written = emit_report(report, out_dir)
    for row in report.rows:
        if row.error is not None:
            print(f"sigma {_fmt(row.sigma)}: FAILED: {row.error}")
        else:
            print(
                f"sigma {_fmt(row.sigma)}: accuracy {_fmt(row.accuracy)} "
                f"tpr@{report.metadata['target_fpr']:g} {_fmt(row.attack_tpr)} "
                f"eps_rdp {_fmt(row.eps_rdp)} eps_lower {_fmt(row.eps_lower)}"
            )
    for path in written:
        print(f"wrote {path}")
    if report.rows and all(r.error is not None for r in report.rows):
        return 1
    return 0


def _cmd_oracle(args: argparse.Namespace) -> int:
    result = run_suite(seed=args.seed)
    print(
        f"prop1: {'pass' if result.prop1_passed else 'fail'}, "
        f"prop2: {'pass' if result.prop2_passed else 'fail'} "
        f"({result.mechanisms} mechanisms, min prop1 slack "
        f"{_fmt(result.prop1_min_slack)}, min prop2 gap {_fmt(result.prop2_min_gap)})"
    )
    return 0


def _cmd_bound(args: argparse.Namespace) -> int:
    if args.advantage is not None:
        print(_fmt(eps_lower_bound(args.advantage, args.delta)))
    else:
        print(_fmt(advantage_upper_bound(PrivacyBudget(eps=args.eps, delta=args.delta))))
    return 0


def cli_main(argv: list[str] | None = None) -> int:
    """Parses arguments and dispatches; returns the process exit code."""
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "account": _cmd_account,
        "calibrate": _cmd_calibrate,
        "train": _cmd_train,
        "attack": _cmd_attack,
        "audit": _cmd_audit,
        "oracle": _cmd_oracle,
        "bound": _cmd_bound,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
