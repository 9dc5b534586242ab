"""Command-line driver: configuration, pipeline orchestration, CSV/JSON output.

Exit codes: 0 when every verdict is green, 2 when an invariant fails, 1 on
configuration or solver errors.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TumorlinError
from .evolution import evolve_coupled
from .kinetics import KineticParams, check_conditions
from .modes import assemble_mode, translation_mode_residual, uk_properties
from .stability import (decay_survey, find_gamma_star, spectral_constants,
                        survey_initial_data, theorem81_report)
from .stationary import SolverOptions, solve_stationary, validate_stationary

EXIT_OK, EXIT_ERROR, EXIT_INVARIANT = 0, 1, 2

_PARAM_KEYS = {"n": "n", "lambda": "lambda_nutrient", "lambda_nutrient": "lambda_nutrient",
               "k_B": "k_B", "k_D": "k_D", "k_P": "k_P", "k_Q": "k_Q"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n: int = 3
    lambda_nutrient: float = 1.0
    k_B: float = 3.0
    k_D: float = 2.0
    k_P: float = 2.0
    k_Q: float = 1.0
    grid_n: int = 4096
    k_max: int = 12
    gammas: list = field(default_factory=lambda: [5.0, 50.0, 500.0])
    T: float = 10.0
    dt_cfl: float = 0.5
    trials: int = 3
    alpha: float = 2.0
    beta: float = 2.0
    output_dir: str = "out"
    seed: int = 0
    lambda_target: float = 0.01
    theorem_k_max: int = 6
    theorem_T: float = 30.0

    def params(self) -> KineticParams:
        return KineticParams(n=self.n, lambda_nutrient=self.lambda_nutrient, k_B=self.k_B,
                             k_D=self.k_D, k_P=self.k_P, k_Q=self.k_Q,
                             gamma=self.gammas[0] if self.gammas else 1.0)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value, where: str):
    name = _PARAM_KEYS.get(key, key)
    if name not in _FIELDS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    default = getattr(RunConfig(), name)
    try:
        if name == "gammas":
            if isinstance(value, str):
                value = [v for v in value.replace(",", " ").split() if v]
            out = [float(v) for v in value]
            if not all(g > 0 and math.isfinite(g) for g in out):
                raise ValueError("surface tensions must be positive")
            return name, out
        if isinstance(default, bool):
            return name, str(value).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            f = float(value)
            if f != int(f):
                raise ValueError("expected an integer")
            return name, int(f)
        if isinstance(default, float):
            return name, float(value)
        return name, str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: key {key!r}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Read a JSON object or key=value lines (``#`` starts a comment)."""
    values = {}
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: line {exc.lineno}: {exc.msg}") from None
        for key, value in data.items():
            if isinstance(value, dict) and key == "params":
                for pk, pv in value.items():
                    name, v = _coerce(pk, pv, f"{source}: params")
                    values[name] = v
                continue
            name, v = _coerce(key, value, source)
            values[name] = v
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}: line {lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            name, v = _coerce(key, value, f"{source}: line {lineno}")
            values[name] = v
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return str(obj)


def write_json(path: Path, data):
    _atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


class Pipeline:
    """Lazily solved stationary state shared by the subcommands."""

    def __init__(self, cfg: RunConfig, outdir: Path, threads: int = 1):
        self.cfg = cfg
        self.outdir = outdir
        self.threads = threads
        self._sol = None

    @property
    def sol(self):
        if self._sol is None:
            self._sol = solve_stationary(self.cfg.params(), SolverOptions(N=self.cfg.grid_n))
        return self._sol

    def stationary(self, args):
        sol = self.sol
        rows = zip(sol.r, sol.c, sol.dc, sol.p, sol.dp, sol.v, sol.dv, sol.f, sol.g)
        write_csv(self.outdir / "stationary.csv",
                  ["r", "c_s", "dc_s", "p_s", "dp_s", "v_s", "dv_s", "f_star", "g_star"], rows)
        report = validate_stationary(sol)
        print(f"R_s = {fmt(sol.R_s)}")
        for name, _, idx, value in report.failed():
            print(f"invariant failed: {name} at node {idx} (value {fmt(value)})")
        return report.ok

    def modes(self, args):
        sol = self.sol
        gamma = args.gamma if getattr(args, "gamma", None) is not None else self.cfg.gammas[0]
        rows = []
        ok = True
        for k in range(self.cfg.k_max + 1):
            md = assemble_mode(sol, k, gamma)
            rows.append((k, md.theta_k, md.lambda_k, md.alpha_k, md.alpha_tilde_k,
                         md.a_k_0, md.a_k_R, md.mu_k))
            if abs(md.a_k_R - sol.f_p[-1]) > 1e-10:
                print(f"invariant failed: a_{k}(R_s) != f_p*(R_s)")
                ok = False
        write_csv(self.outdir / "modes.csv", ["k", "theta_k", "lambda_k", "alpha_k",
                                              "alpha_tilde_k", "a_k_0", "a_k_Rs", "mu_k"], rows)
        for name, passed, margin in uk_properties(sol, self.cfg.k_max):
            if not passed:
                print(f"invariant failed: {name} (margin {fmt(margin)})")
                ok = False
        c1, a1, _ = translation_mode_residual(sol, gamma)
        if a1 > 1e-7:
            print(f"invariant failed: |alpha~_1| = {fmt(a1)} > 1e-7")
            ok = False
        try:
            spectral_constants(sol, self.cfg.k_max)
        except TumorlinError as exc:
            print(f"invariant failed: {exc}")
            ok = False
        print(f"modes k=0..{self.cfg.k_max} at gamma={fmt(gamma)} written")
        return ok

    def evolve(self, args):
        sol = self.sol
        k, gamma = args.k, args.gamma
        phi0, eta0 = survey_initial_data(sol, k, 1, self.cfg.seed)
        traj = evolve_coupled(sol, assemble_mode(sol, k, gamma), gamma, phi0[0], eta0[0],
                              self.cfg.T, cfl=self.cfg.dt_cfl, alpha=self.cfg.alpha)
        write_csv(self.outdir / f"trajectory_k{k}.csv", ["t", "sup", "l1", "l2", "eta", "Jk"],
                  traj.rows())
        print(f"k={k} gamma={fmt(gamma)}: {len(traj.t)} samples to t={fmt(traj.t[-1])}")
        return True

    def survey(self, args):
        sol, cfg = self.sol, self.cfg
        consts = spectral_constants(sol, cfg.k_max, check=False)
        rep = decay_survey(sol, cfg.gammas, range(cfg.k_max + 1), cfg.T, trials=cfg.trials,
                           seed=cfg.seed, cfl=cfg.dt_cfl, alpha=cfg.alpha, threads=self.threads)
        write_csv(self.outdir / "decay.csv", ["k", "gamma", "trial", "rate_sup", "rate_l1",
                                              "rate_l2", "rate_eta", "r2"],
                  [row.values() for row in rep.rows])
        verdict = survey_verdict(rep, cfg.gammas)
        write_json(self.outdir / "report.json", {"spectral_constants": consts.as_dict(),
                                                 "decay": rep.as_dict(), "verdict": verdict})
        print(f"survey: {len(rep.rows)} rows, verdict {'green' if verdict['ok'] else 'red'}")
        return verdict["ok"]

    def _gamma_star(self):
        cfg = self.cfg
        return find_gamma_star(self.sol, range(2, cfg.k_max + 1), cfg.lambda_target, T=cfg.T,
                               cfl=cfg.dt_cfl)

    def gammastar(self, args):
        est = self._gamma_star()
        consts = spectral_constants(self.sol, self.cfg.k_max, check=False)
        ok = est.margin > 0
        write_json(self.outdir / "report.json", {"spectral_constants": consts.as_dict(),
                                                 "gamma_star": est.as_dict(),
                                                 "verdict": {"ok": ok}})
        print(f"gamma_hat = {fmt(est.gamma_hat)} (binding k={est.binding_k}, "
              f"margin {fmt(est.margin)})")
        return ok

    def theorem81(self, args):
        cfg = self.cfg
        gamma = getattr(args, "gamma", None)
        extra = {}
        if gamma is None:
            est = self._gamma_star()
            gamma = max(50.0, 2.0 * est.gamma_hat)
            extra["gamma_star"] = est.as_dict()
        summary = theorem81_report(self.sol, gamma, cfg.alpha, cfg.beta, cfg.theorem_k_max,
                                   cfg.theorem_T, seed=cfg.seed, cfl=cfg.dt_cfl)
        ok = summary.rate <= -cfg.lambda_target and summary.reduction >= 1e3
        write_csv(self.outdir / "theorem81.csv", ["t", "deviation"],
                  zip(summary.t, summary.deviation))
        write_json(self.outdir / "theorem81.json", {**extra, "summary": summary.as_dict(),
                                                    "verdict": {"ok": ok}})
        print(f"theorem81: gamma={fmt(gamma)} rate={fmt(summary.rate)} "
              f"reduction={fmt(summary.reduction)}")
        return ok


def survey_verdict(rep, gammas) -> dict:
    """Radial decay, translation-deviation decay and the gamma ordering of eta-rates."""
    cells = rep.cells
    radial = [c.worst < 0 for c in cells.values() if c.k == 0]
    translation = [c.worst < 0 for c in cells.values() if c.k == 1]
    ordering = []
    for c in cells.values():
        if c.k < 2:
            continue
        low = cells.get((c.k, c.gamma / 10.0))
        if low is not None:
            ordering.append(c.worst_eta <= low.worst_eta + 0.05 * abs(low.worst_eta))
    flagged = [[c.k, c.gamma] for c in cells.values() if c.flagged]
    ok = all(radial) and all(translation) and all(ordering)
    return {"ok": ok, "radial_decay": all(radial), "translation_deviation_decay":
            all(translation), "gamma_ordering": all(ordering), "flagged_cells": flagged}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tumorlin", description=__doc__.splitlines()[0])
    parser.add_argument("-c", "--config", help="JSON object or key=value file")
    parser.add_argument("--threads", type=int, default=1, help="cap on parallel survey cells")
    parser.add_argument("-o", "--output-dir", help="override output_dir")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stationary", help="solve the radial stationary state")
    p = sub.add_parser("modes", help="assemble mode data for k=0..k_max")
    p.add_argument("--gamma", type=float)
    p = sub.add_parser("evolve", help="integrate one coupled mode system")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--gamma", type=float, required=True)
    sub.add_parser("survey", help="decay rates over gammas x degrees x trials")
    sub.add_parser("gammastar", help="locate the empirical surface-tension threshold")
    p = sub.add_parser("theorem81", help="multi-mode convergence to the translation limit")
    p.add_argument("--gamma", type=float)
    return parser


def _with_common_options(argv):
    """Let -c/--threads/-o appear after the subcommand as well as before it."""
    argv = list(argv)
    front, rest = [], []
    i = 0
    takes_value = {"-c", "--config", "--threads", "-o", "--output-dir"}
    while i < len(argv):
        a = argv[i]
        if a in takes_value and i + 1 < len(argv):
            front += [a, argv[i + 1]]
            i += 2
            continue
        if any(a.startswith(opt + "=") for opt in takes_value if opt.startswith("--")):
            front.append(a)
        else:
            rest.append(a)
        i += 1
    return front + rest


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(_with_common_options(argv))
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.output_dir:
        cfg.output_dir = args.output_dir
    outdir = Path(os.environ.get("TUMORLIN_OUTDIR") or cfg.output_dir)
    try:
        report = check_conditions(cfg.params())
    except ValueError as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not report.ok:
        print(f"invalid parameters: {report.message()}", file=sys.stderr)
        return EXIT_ERROR
    pipe = Pipeline(cfg, outdir, threads=max(1, args.threads))
    try:
        ok = getattr(pipe, args.command)(args)
    except TumorlinError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if ok else EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
