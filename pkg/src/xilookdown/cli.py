"""Command-line entry points: simulate, coalescent, distance, verify.

Every command reads a JSON config (``--config``) whose entries may be
overridden by flags, writes deterministic artifacts to ``--out`` and embeds
the package version in its report.  Exit codes: 0 success, 1 a verification
suite failed, 2 invalid input.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coalescent import CoalescentError, block_count_profile, equilibrium_tree, external_branches, to_newick
from .event_stream import EventSampler, generate
from .io import format_state, path_csv, state_from_text
from .lookdown import MarkedState, PlainState, detect_jumps, evolve
from .mmspace import (
    EXACT_MAX_POINTS,
    FiniteMMSpace,
    finite_space_from_matrix,
    ghp_small,
    gromov_prohorov_small,
    prohorov_distance,
    space_from_json,
)
from .rng import as_seed
from .verify import SUITES, map_replicates, run_suite
from .xi_model import SCOPES, classify_dust, xi_from_json


class ConfigError(ValueError):
    """Invalid configuration or input file."""


@dataclass
class RunConfig:
    model: dict
    n: int
    horizon: float = 1.0
    scope: str | None = None
    representation: str = "plain"
    initial: str = "zero"
    initial_path: str | None = None
    seed: int = 0
    replicates: int = 1
    times: list = field(default_factory=list)
    record_path: bool = False

    def validate(self) -> "RunConfig":
        try:
            xi = xi_from_json(self.model)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid model: {exc}") from None
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError("n must be a positive integer")
        if not self.horizon >= 0:
            raise ConfigError("horizon must be nonnegative")
        if self.representation not in ("plain", "marked"):
            raise ConfigError("representation must be 'plain' or 'marked'")
        if self.scope is None:
            self.scope = "touches_level" if self.representation == "marked" else "changes_gamma"
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}")
        if self.representation == "marked" and self.scope != "touches_level":
            raise ConfigError("the marked representation needs scope 'touches_level'")
        if self.scope == "touches_level" and classify_dust(xi) != "dust":
            raise ConfigError("scope 'touches_level' needs a model with dust")
        if self.initial not in ("zero", "file", "equilibrium"):
            raise ConfigError("initial must be 'zero', 'file' or 'equilibrium'")
        if self.initial == "file" and not self.initial_path:
            raise ConfigError("initial 'file' needs initial_path")
        if self.initial == "equilibrium" and (self.n < 2 or xi.is_zero()):
            raise ConfigError("an equilibrium initial state needs n >= 2 and a nonzero model")
        if not isinstance(self.replicates, int) or self.replicates < 1:
            raise ConfigError("replicates must be a positive integer")
        self.times = sorted(float(t) for t in self.times) or [float(self.horizon)]
        if self.times[0] < 0 or self.times[-1] > self.horizon:
            raise ConfigError("snapshot times must lie in [0, horizon]")
        as_seed(self.seed)
        return self


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return obj


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")


def default_threads() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:
        return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------- simulate

def _initial(cfg: dict, sd, initial_text: str | None):
    n = cfg["n"]
    marked = cfg["representation"] == "marked"
    if cfg["initial"] == "file":
        st = state_from_text(initial_text)
        if st.n != n:
            raise ConfigError(f"initial file has {st.n} levels, config says {n}")
        if marked and not isinstance(st, MarkedState):
            raise ConfigError("marked representation needs a marked initial file (final u line)")
        if not marked and isinstance(st, MarkedState):
            st = PlainState(st.rho(), 0.0)
        return st
    if cfg["initial"] == "equilibrium":
        tree = equilibrium_tree(xi_from_json(cfg["model"]), n, sd.child(2))
        return MarkedState.from_ru(tree.r, tree.u) if marked else PlainState(tree.rho.copy())
    return MarkedState.zero(n) if marked else PlainState(np.zeros((n, n)))


def _simulate_worker(seeds, cfg, initial_text):
    xi = xi_from_json(cfg["model"])
    sampler = None if xi.is_zero() else EventSampler(xi, cfg["n"], cfg["scope"])
    out = []
    for sd in seeds:
        init = _initial(cfg, sd, initial_text)
        stream = generate(xi, cfg["n"], (0.0, cfg["horizon"]), cfg["scope"], sd.child(0), sampler=sampler)
        path, snaps = evolve(init, stream, cfg["horizon"], record=cfg["record_path"], checkpoints=cfg["times"])
        log = detect_jumps(stream)
        jumps = {"theta": list(log.theta), "theta_f": list(log.theta_f),
                 "theta_prime_proxy": list(log.theta_prime_proxy),
                 "escapes": [list(e) for e in log.escapes]}
        out.append({"events": stream.to_csv(), "states": [format_state(s) for s in snaps],
                    "jumps": _dumps(jumps), "path": path_csv(path) if cfg["record_path"] else None,
                    "count": len(stream), "theta": len(log.theta), "theta_f": len(log.theta_f)})
    return out


def cmd_simulate(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = RunConfig(**raw).validate()
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    initial_text = None
    if cfg.initial == "file":
        try:
            initial_text = Path(cfg.initial_path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {cfg.initial_path}: {exc.strerror}") from None
        try:
            state_from_text(initial_text)
        except ValueError as exc:
            raise ConfigError(f"malformed initial file: {exc}") from None
    cfgd = asdict(cfg)
    try:
        results = map_replicates(_simulate_worker, as_seed(cfg.seed), cfg.replicates, args.threads,
                                 cfg=cfgd, initial_text=initial_text)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    summary = []
    for r, res in enumerate(results):
        _write(out, f"events_{r:04d}.csv", res["events"])
        _write(out, f"jumps_{r:04d}.json", res["jumps"])
        for k, text in enumerate(res["states"]):
            _write(out, f"state_{r:04d}_{k:03d}.txt", text)
        if res["path"] is not None:
            _write(out, f"path_{r:04d}.csv", res["path"])
        summary.append({"replicate": r, "events": res["count"], "theta": res["theta"], "theta_f": res["theta_f"]})
    report = {"command": "simulate", "version": __version__, "config": cfgd, "replicates": summary}
    _write(out, "report.json", _dumps(report))
    print(f"simulate: {cfg.replicates} replicate(s), {sum(s['events'] for s in summary)} events -> {out}")
    return 0


# ---------------------------------------------------------------- coalescent

def _tree_worker(seeds, model, n):
    from .coalescent import _Samplers

    xi = xi_from_json(model)
    samplers = _Samplers(xi, "touches_level" if classify_dust(xi) == "dust" else "changes_gamma")
    out = []
    for sd in seeds:
        tree = equilibrium_tree(xi, n, sd, samplers)
        out.append((to_newick(tree), tree.u.tolist(), float(tree.rho[0, 1]), float(tree.height)))
    return out


def cmd_coalescent(args) -> int:
    raw = _load_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    allowed = {"model", "n", "replicates", "seed", "profile"}
    if set(raw) - allowed:
        raise ConfigError(f"unknown coalescent settings {sorted(set(raw) - allowed)}")
    try:
        xi = xi_from_json(raw.get("model", {}))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid model: {exc}") from None
    n = raw.get("n")
    if not isinstance(n, int) or n < 2:
        raise ConfigError("a coalescent needs n >= 2 leaves")
    if xi.is_zero():
        raise ConfigError("the model has no mass: lineages never merge")
    reps = raw.get("replicates", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replicates must be a positive integer")
    seed = as_seed(raw.get("seed", 0))
    try:
        trees = map_replicates(_tree_worker, seed.child(0), reps, args.threads, model=raw["model"], n=n)
    except CoalescentError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    _write(out, "trees.nwk", "".join(t[0] + "\n" for t in trees))
    lines = ["replicate,leaf,u"]
    for r, (_, u, _, _) in enumerate(trees):
        lines.extend(f"{r},{i + 1},{v!r}" for i, v in enumerate(u))
    _write(out, "external_branches.csv", "\n".join(lines) + "\n")
    report = {"command": "coalescent", "version": __version__,
              "config": {"model": raw["model"], "n": n, "replicates": reps, "seed": seed.to_json()},
              "mean_rho_12": float(np.mean([t[2] for t in trees])),
              "mean_height": float(np.mean([t[3] for t in trees])),
              "mean_external_branch": float(np.mean([np.mean(t[1]) for t in trees])),
              "star_fraction": float(np.mean([t[0].count("(") == 1 for t in trees]))}
    prof = raw.get("profile", {})
    if not isinstance(prof, dict):
        raise ConfigError("profile must be an object")
    prof = {"ns": [n], "grid": [0.1, 0.5, 1.0, 2.0, 5.0], "replicates": min(reps, 1000), **prof}
    try:
        bp = block_count_profile(xi, prof.get("ns", [n]), prof["grid"], prof.get("replicates", 100),
                                 seed.child(1), prof.get("tolerance", 0.15))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"invalid profile settings: {exc}") from None
    _write(out, "block_counts.csv", bp.to_csv())
    report["profile"] = {"stabilizes": bp.stabilizes, "ratio": bp.ratio}
    _write(out, "report.json", _dumps(report))
    print(f"coalescent: {reps} tree(s), mean rho_12 = {report['mean_rho_12']:.6g} -> {out}")
    return 0


# ---------------------------------------------------------------- distance

def _read_space(path: str) -> FiniteMMSpace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        if text.lstrip().startswith("{"):
            return space_from_json(text)
        from .io import parse_matrix

        mat, marks = parse_matrix(text)
        return finite_space_from_matrix(mat, marks)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed space file {path}: {exc}") from None


def cmd_distance(args) -> int:
    A, B = _read_space(args.a), _read_space(args.b)
    result = {"method": args.method, "version": __version__}
    if args.method == "prohorov":
        if A.dist.shape != B.dist.shape or not np.array_equal(A.dist, B.dist):
            raise ConfigError("the Prohorov distance compares two measures on one point set")
        result.update(value=prohorov_distance(A.weights, B.weights, A), mode="exact")
    else:
        if args.method == "mgp" and (A.marks is None or B.marks is None):
            raise ConfigError("marked GP needs marks in both files")
        if args.method == "ghp":
            res = ghp_small(A, B, exact_limit=args.exact_limit)
        else:
            res = gromov_prohorov_small(A, B, marked=args.method == "mgp", exact_limit=args.exact_limit)
        result.update(res.to_json())
        if res.mode != "exact":
            result["warning"] = f"size exceeds the exact limit of {args.exact_limit} points; bounds reported"
    text = _dumps(result)
    if args.out:
        _write(Path(args.out), "distance.json", text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; known: {', '.join(sorted(SUITES))}", file=sys.stderr)
        return 2
    overrides = _load_json(args.config)
    seed = 0 if args.seed is None else args.seed
    try:
        reports = run_suite(args.suite, overrides, seed, args.threads)
    except KeyError as exc:
        raise ConfigError(f"invalid suite config: {exc}") from None
    passed = all(r.passed for r in reports)
    doc = {"command": "verify", "suite": args.suite, "version": __version__, "seed": seed,
           "overrides": overrides, "passed": passed, "reports": [r.to_json() for r in reports]}
    if args.out:
        _write(Path(args.out), f"verify_{args.suite}.json", _dumps(doc))
    for r in reports:
        for c in r.criteria:
            stat = float(c.statistic) if isinstance(c.statistic, (int, float, np.number)) else c.statistic
            print(f"{'PASS' if c.passed else 'FAIL'} {r.name}/{c.name}: {stat!r} [{c.rule}]")
    print(f"suite {args.suite}: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xilookdown", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
        sp.add_argument("--threads", type=int, default=default_threads(), help="worker processes")
        sp.add_argument("--out", default=out_default, help="output directory")

    sp = sub.add_parser("simulate", help="lookdown evolution of distance matrices")
    common(sp)
    sp.set_defaults(func=cmd_simulate)
    sp = sub.add_parser("coalescent", help="equilibrium trees and block-count profiles")
    common(sp)
    sp.set_defaults(func=cmd_coalescent)
    sp = sub.add_parser("distance", help="Prohorov, GP, marked GP or GHP between two spaces")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--method", choices=["prohorov", "gp", "mgp", "ghp"], default="ghp")
    sp.add_argument("--exact-limit", type=int, default=EXACT_MAX_POINTS)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_distance)
    sp = sub.add_parser("verify", help="run a verification suite")
    sp.add_argument("suite")
    common(sp, out_default=None)
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return 2
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
