"""Command-line interface: `datafuse estimate` and `datafuse simulate`.

Results go to stdout (JSON by default), errors to stderr as
{"error": {"kind": ..., "detail": ...}}. Exit codes: 0 success, 2 input
validation error, 3 numerical failure. DATAFUSE_SEED serves as a fallback
seed when --seed is absent.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .debias import DebiasConfig, estimate_dbs
from .errors import DataFuseError, IoError, MalformedInput, ZeroStandardError
from .model import (
    FunctionalDescriptor,
    FunctionalKind,
    read_internal_csv,
    read_summary_json,
    validate_summary,
)
from .fusion import (
    estimate_crude,
    estimate_eff,
    estimate_int,
    prepare_inputs,
    wald_inference,
)
from .sim import ScenarioConfig, export_tables, format_table, run_replications

_EST_METHODS = ("int", "crd", "eff", "dbs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise MalformedInput(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="datafuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="fuse an internal dataset with summaries")
    est.add_argument("--internal", required=True, help="internal data CSV")
    est.add_argument(
        "--summary", action="append", required=True,
        help="summary statistic JSON (repeat for several sources)",
    )
    est.add_argument(
        "--tau", required=True,
        help="target functional descriptor: inline JSON or a path to a JSON file",
    )
    est.add_argument(
        "--beta", default=None,
        help="optional binding override (JSON list of descriptors); "
        "only valid with a single summary",
    )
    est.add_argument("--method", choices=_EST_METHODS, default="eff")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--null", type=float, default=0.0)
    est.add_argument("--side", choices=("upper", "lower", "two_sided"), default="upper")
    est.add_argument("--debias-config", default=None, help="DebiasConfig JSON file")
    est.add_argument("--seed", type=int, default=None)
    est.add_argument("--format", choices=("json", "table"), default="json")
    est.add_argument("--out", default=None, help="write output here instead of stdout")

    simp = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    simp.add_argument("--config", default=None, help="ScenarioConfig JSON/TOML file")
    simp.add_argument("--scenario", choices=("I", "II_biased", "II_unbiased"), default=None)
    simp.add_argument("--n", type=int, default=None)
    simp.add_argument("--m", type=int, default=None)
    simp.add_argument("--reps", type=int, default=None)
    simp.add_argument("--seed", type=int, default=None)
    simp.add_argument("--methods", default=None, help="comma-separated method names")
    simp.add_argument("--level", type=float, default=None)
    simp.add_argument("--tau", default=None, help="scenario II coefficients, e.g. '1,1'")
    simp.add_argument("--out-dir", default=None, help="directory for the CSV tables")
    simp.add_argument("--threads", type=int, default=1)
    return parser


def _env_seed():
    raw = os.environ.get("DATAFUSE_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise MalformedInput(f"DATAFUSE_SEED must be an integer, got {raw!r}") from None


def _parse_descriptor(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    path = Path(text)
    if path.exists():
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise MalformedInput(f"cannot parse descriptor file {text}: {exc}") from exc
    raise MalformedInput(f"--tau/--beta value is neither JSON nor an existing file: {text!r}")


def _roles_from_tau(desc: FunctionalDescriptor) -> dict:
    args = desc.args
    if desc.kind is FunctionalKind.AIPW_ATE:
        return {
            "outcome": args["outcome"],
            "treatment": args["treatment"],
            "covariates": tuple(args["covariates"]),
        }
    if desc.kind in (FunctionalKind.JOINT_OLS, FunctionalKind.MARGINAL_OLS,
                     FunctionalKind.GLM_MARGINAL):
        return {"outcome": args["outcome"]}
    return {}


def _cmd_estimate(args) -> int:
    tau_desc = FunctionalDescriptor.from_json(_parse_descriptor(args.tau))
    data = read_internal_csv(args.internal, **_roles_from_tau(tau_desc))
    summaries = [read_summary_json(p) for p in args.summary]
    if args.beta is not None:
        if len(summaries) != 1:
            raise MalformedInput("--beta override requires exactly one --summary")
        obj = _parse_descriptor(args.beta)
        entries = obj if isinstance(obj, list) else [obj]
        binding = [FunctionalDescriptor.from_json(e) for e in entries]
        s = summaries[0]
        summaries = [validate_summary(s.beta, s.sigma1, s.m, binding, s.source_id)]

    seed = args.seed if args.seed is not None else _env_seed()
    inputs = prepare_inputs(data, tau_desc, summaries)
    selection = None
    if args.method == "int":
        result = estimate_int(inputs, args.level)
    elif args.method == "crd":
        result = estimate_crude(inputs, args.level)
    elif args.method == "eff":
        result = estimate_eff(inputs, args.level)
    else:
        debias_cfg = DebiasConfig()
        if args.debias_config is not None:
            try:
                with open(args.debias_config, encoding="utf-8") as fh:
                    debias_cfg = DebiasConfig.from_dict(json.load(fh))
            except OSError as exc:
                raise IoError(f"cannot read {args.debias_config}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise MalformedInput(f"{args.debias_config}: invalid JSON: {exc}") from exc
        if seed is not None:
            debias_cfg = replace(debias_cfg, seed=seed)
        result, selection = estimate_dbs(inputs, debias_cfg, args.level)

    out = result.to_json_dict()
    try:
        z, p, _ = wald_inference(result, null=args.null, side=args.side)
        out["test"] = {
            "null": args.null,
            "side": args.side,
            "z": z.tolist(),
            "p": p.tolist(),
        }
    except ZeroStandardError:
        out["warnings"].append("zero standard error: test skipped")
    if selection is not None:
        out["selection"] = selection.to_json_dict()

    if args.format == "table":
        text = _estimate_table(out)
    else:
        text = json.dumps(out, indent=2)
    _emit(text, args.out)
    return 0


def _estimate_table(out: dict) -> str:
    lines = [f"{'method':<8}{'param':>6}{'estimate':>14}{'se':>12}{'p_one_sided':>13}"]
    test_p = out.get("test", {}).get("p")
    for j, est in enumerate(out["estimate"]):
        p = test_p[j] if test_p is not None else out["p_one_sided"][j]
        p_txt = f"{p:>13.4f}" if p is not None else f"{'NA':>13}"
        lines.append(
            f"{out['method']:<8}{j:>6}{est:>14.6f}{out['se'][j]:>12.6f}{p_txt}"
        )
    return "\n".join(lines)


def _emit(text: str, out_path):
    if out_path is None:
        print(text)
        return
    try:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {out_path}: {exc}") from exc


def _load_config_file(path: str) -> dict:
    suffix = Path(path).suffix.lower()
    try:
        if suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: invalid JSON: {exc}") from exc
    except Exception as exc:  # tomllib.TOMLDecodeError without a hard import
        raise MalformedInput(f"{path}: invalid TOML: {exc}") from exc


def _cmd_simulate(args) -> int:
    cfg = _load_config_file(args.config) if args.config else {}
    if args.scenario is not None:
        cfg["scenario"] = args.scenario
    if "scenario" not in cfg:
        raise MalformedInput("simulate needs --scenario or a config file naming one")
    for key in ("n", "m", "reps", "level"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    if args.methods is not None:
        cfg["methods"] = tuple(s.strip() for s in args.methods.split(",") if s.strip())
    if args.tau is not None:
        try:
            cfg["tau"] = tuple(float(v) for v in args.tau.split(","))
        except ValueError:
            raise MalformedInput(f"--tau must be comma-separated numbers: {args.tau!r}") from None
    seed = args.seed if args.seed is not None else _env_seed()
    if seed is not None:
        cfg["seed"] = seed
    if args.out_dir is not None:
        cfg["out_dir"] = args.out_dir
    if args.threads < 1:
        raise MalformedInput(f"--threads must be >= 1, got {args.threads}")

    config = ScenarioConfig.from_dict(cfg)
    result = run_replications(config, threads=args.threads)
    print(format_table(result.rows))
    if config.out_dir is not None:
        out_dir = Path(config.out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create {out_dir}: {exc}") from exc
        paths = export_tables(result, out_dir / "metrics.csv")
        print(f"wrote {paths[0]} and {paths[1]}", file=sys.stderr)
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "estimate":
            return _cmd_estimate(args)
        return _cmd_simulate(args)
    except DataFuseError as exc:
        payload = {"error": {"kind": exc.kind, "detail": str(exc)}}
        print(json.dumps(payload), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
