"""Command-line entry point: simulate, fit, value, bounds, diagnose, serve.

Exit codes: 0 success, 1 input/validation problems, 2 numerical failures
(non-convergence, infeasible tables, too-sparse bootstraps).  Error messages
go to standard error; results go to standard output or `--out` files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .bounds import TrialCounts, balke_pearl_ate_bounds, natural_att_bounds
from .core import (
    NumericalError,
    ValidationError,
    load_dataset,
    save_dataset,
)
from .diagnose import diagnose_dataset
from .estimate import (
    REPORT_ROWS,
    _ROW_STREAM,
    EstimationConfig,
    RegimeArtifact,
    bootstrap_value_ci,
    run_fit,
)
from .serve import build_server
from .simulate import SAMPLE_MODES, build_example_law, draw_sample, law_from_json

logger = logging.getLogger(__name__)

ROW_TITLES = {
    "observed": "E(Y)",
    "optimal_L": "E(Y^g_opt)",
    "superoptimal_LA": "E(Y^g_sup)",
    "superoptimal_LAZ": "E(Y^g_z-sup)",
}
EXAMPLE_LAWS = ("example1", "example2", "example3")


class _Parser(argparse.ArgumentParser):
    """Argument errors become validation errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise ValidationError(message)


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ValidationError(f"cannot read {path!r}: {err}") from err


def _write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as err:
        raise ValidationError(f"cannot write {path!r}: {err}") from err


def _load_config(args) -> EstimationConfig:
    if getattr(args, "config", None):
        raw = _read_text(args.config)
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as err:
            raise ValidationError(f"config file is not valid JSON: {err}") from err
        config = EstimationConfig.from_dict(doc)
    else:
        config = EstimationConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _load_artifact(path: str) -> RegimeArtifact:
    return RegimeArtifact.from_json(_read_text(path))


def _check_schema_match(artifact: RegimeArtifact, dataset) -> None:
    schema = dataset.schema
    if tuple(schema.covariates) != tuple(artifact.covariates):
        raise ValidationError(
            "artifact/data schema mismatch: artifact covariates "
            f"{list(artifact.covariates)!r} vs data covariates {list(schema.covariates)!r}"
        )
    for name in artifact.covariates:
        declared = {str(level) for level in artifact.levels[name]}
        unseen = sorted(str(v) for v in schema.levels[name] if str(v) not in declared)
        if unseen:
            raise ValidationError(
                f"artifact/data schema mismatch: covariate {name!r} has level(s) "
                f"{unseen!r} absent from the artifact"
            )
    if artifact.has_instrument and not schema.has_instrument:
        raise ValidationError(
            "artifact/data schema mismatch: artifact expects an instrument column 'z'"
        )


def _value_report(value_estimates: dict) -> str:
    lines = ["Estimated regime values", f"{'regime':<14} {'estimate':>9}   95% CI"]
    for label in REPORT_ROWS:
        if label not in value_estimates:
            continue
        row = value_estimates[label]
        lines.append(
            f"{ROW_TITLES[label]:<14} {row['point']:>9.4f}   "
            f"[{row['ci_lo']:.4f}, {row['ci_hi']:.4f}]"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.law in EXAMPLE_LAWS:
        law = build_example_law(int(args.law[-1]), c=args.c)
    else:
        law = law_from_json(_read_text(args.law))
    dataset = draw_sample(law, args.n, seed=args.seed if args.seed is not None else 0, mode=args.mode)
    if args.out:
        save_dataset(dataset, args.out)
    else:
        from .core import serialize_dataset

        sys.stdout.write(serialize_dataset(dataset))
    return 0


def cmd_fit(args) -> int:
    dataset = load_dataset(args.input)
    config = _load_config(args)
    artifact = run_fit(dataset, config)
    _write_text(args.out, artifact.to_json())
    print(_value_report(artifact.value_estimates))
    if artifact.flags:
        print("flags: " + ", ".join(artifact.flags))
    return 0


def cmd_value(args) -> int:
    artifact = _load_artifact(args.artifact)
    dataset = load_dataset(args.input)
    _check_schema_match(artifact, dataset)
    config = _load_config(args) if (args.config or args.seed is not None) else artifact.config
    estimates = {}
    for label in REPORT_ROWS:
        if label not in artifact.regimes:
            continue
        point, ci, _info = bootstrap_value_ci(
            dataset, artifact.regime(label), config, stream=_ROW_STREAM[label]
        )
        estimates[label] = {"point": point, "ci_lo": ci.lo, "ci_hi": ci.hi}
    print(_value_report(estimates))
    if args.out:
        _write_text(args.out, json.dumps({"type": "value_estimates", "rows": estimates}, indent=2, sort_keys=True))
    return 0


def cmd_bounds(args) -> int:
    counts = TrialCounts.from_csv(_read_text(args.input))
    if args.estimand == "ate":
        interval = balke_pearl_ate_bounds(counts)
    else:
        interval = natural_att_bounds(counts, natural_a=int(args.estimand[-1]))
    print(f"lower {interval.lo:>8.4f}")
    print(f"upper {interval.hi:>8.4f}")
    return 0


def cmd_diagnose(args) -> int:
    artifact = _load_artifact(args.artifact)
    dataset = load_dataset(args.input)
    _check_schema_match(artifact, dataset)
    config = _load_config(args) if (args.config or args.seed is not None) else artifact.config
    report = diagnose_dataset(
        dataset, config=config, regime=artifact.regime("superoptimal_LA")
    )
    print(report.to_text())
    if args.out:
        _write_text(args.out, json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_serve(args) -> int:
    artifact = _load_artifact(args.artifact)
    server = build_server(artifact, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(
        f"consultation service on http://{host}:{port} (GET /meta, POST /recommend)",
        flush=True,
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="superregime", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset and write it as CSV")
    p.add_argument("--law", required=True, help=f"one of {', '.join(EXAMPLE_LAWS)} or a law JSON file")
    p.add_argument("--n", type=int, required=True, help="number of rows")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=SAMPLE_MODES, default="observational")
    p.add_argument("--c", type=float, default=None, help="uptake slope for example3")
    p.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit regimes on a CSV and write a regime artifact")
    p.add_argument("--input", required=True, help="observational CSV with an instrument column")
    p.add_argument("--config", default=None, help="JSON file mirroring the estimation config")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--out", required=True, help="artifact JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("value", help="re-estimate regime values on new data with a fitted artifact")
    p.add_argument("--artifact", required=True, help="regime artifact JSON")
    p.add_argument("--input", required=True, help="observational CSV")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON output path")
    p.set_defaults(func=cmd_value)

    p = sub.add_parser("bounds", help="partial-identification bounds from two-arm trial counts")
    p.add_argument("--input", required=True, help="counts CSV with columns y,a,z,count")
    p.add_argument("--estimand", choices=("ate", "att0", "att1"), default="ate")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("diagnose", help="confounding diagnostic for an artifact on a dataset")
    p.add_argument("--artifact", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON report path")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("serve", help="serve consultation recommendations from an artifact")
    p.add_argument("--artifact", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
