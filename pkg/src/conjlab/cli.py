"""Command-line front-end: ``conjlab verify|conjugate|differentiate --config run.json``.

A config is a JSON object::

    {
      "catalog": {"id": "S3", "params": {"nu": 0.1}},
      "grids": {"t": {"start": 0, "stop": 5, "num": 11},
                "tau": [0.0, 1.0, 2.0],
                "box": [-2, 2],
                "points": 4},
      "tol": {"rtol": 1e-8, "quad_tol": 1e-10},
      "checks": {"identity_tol": 1e-5, "fd_delta": 1e-5},
      "output": {"dir": "conjlab-output"}
    }

Exit codes: 0 when every check passes, 1 on soft failures (a condition or
identity check fails, singular dG), 2 on fatal conditions (q_hat >= 1, a
failed contraction, an invalid config).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .catalog import get_entry
from .conjugacy import ContractionError, ConvergenceError, G_map, H_map, check_equivalence, w_star
from .dichotomy import ConfigurationError, sufficient_conditions, jsonable, verify_c1, verify_c5
from .flows import CapabilityError, IntegrationError, variational_flow
from .settings import Settings
from .smoothness import (
    BoundLedger,
    SingularityError,
    central_difference,
    d2w_star_detail,
    dG,
    dH,
    dw_star,
    second_derivative_bound,
    relative_error,
    verify_second_order_condition,
)

log = logging.getLogger("conjlab")

EXIT_OK, EXIT_SOFT, EXIT_FATAL = 0, 1, 2

DEFAULT_CHECKS = {
    "identity_tol": 1e-5,
    "fd_delta": 1e-5,
    "fd2_delta": 1e-3,
    "fd_rel_tol": 1e-4,
    "fd2_rel_tol": 1e-3,
    "inverse_tol": 1e-6,
    "symmetry_tol": 1e-6,
    "second_order": True,
}


@dataclass
class RunConfig:
    catalog_id: str
    params: dict[str, Any]
    t_grid: np.ndarray
    taus: np.ndarray
    box: np.ndarray  # (d, 2) after resolution, or (2,) before
    n_points: int
    settings: Settings
    checks: dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_CHECKS))
    out_dir: Path = Path("conjlab-output")
    raw: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        cat = data.get("catalog")
        if not isinstance(cat, dict) or "id" not in cat:
            raise ConfigurationError("config needs catalog.id")
        grids = data.get("grids", {})
        t_grid = _grid(grids.get("t", {"start": 0.0, "stop": 5.0, "num": 11}), "grids.t")
        taus = _grid(grids.get("tau", [0.0, 1.0, 2.0]), "grids.tau")
        if np.any(t_grid < 0) or np.any(taus < 0):
            raise ConfigurationError("grids.t and grids.tau must be nonnegative")
        box = np.asarray(grids.get("box", [-2.0, 2.0]), float)
        if not np.all(np.isfinite(box)) or box.shape[-1] != 2 or box.ndim not in (1, 2):
            raise ConfigurationError("grids.box must be finite [lo, hi] or a list of per-coordinate pairs")
        if np.any(box[..., 0] > box[..., 1]):
            raise ConfigurationError("grids.box needs lo <= hi")
        n_points = int(grids.get("points", 4))
        if n_points < 1:
            raise ConfigurationError("grids.points must be positive")
        tol = data.get("tol", {})
        for k, v in tol.items():
            if not isinstance(v, (int, float, str)) or (k not in ("method",) and not float(v) > 0):
                raise ConfigurationError(f"tol.{k} must be positive")
        try:
            settings = Settings().with_overrides(**tol)
        except TypeError as exc:
            raise ConfigurationError(f"unknown tolerance key in tol: {exc}") from None
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        checks = {**DEFAULT_CHECKS, **data.get("checks", {})}
        for k in ("identity_tol", "fd_delta", "fd2_delta", "fd_rel_tol", "fd2_rel_tol", "inverse_tol", "symmetry_tol"):
            if not float(checks[k]) > 0:
                raise ConfigurationError(f"checks.{k} must be positive")
        out_dir = Path(data.get("output", {}).get("dir", "conjlab-output"))
        return cls(str(cat["id"]), dict(cat.get("params", {})), t_grid, taus, box, n_points, settings,
                   checks, out_dir, data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def sample_points(self, dimension: int, seed: int) -> np.ndarray:
        box = self.box if self.box.ndim == 2 else np.tile(self.box, (dimension, 1))
        if box.shape != (dimension, 2):
            raise ConfigurationError(f"grids.box has {box.shape[0]} coordinate ranges, system dimension is {dimension}")
        rng = np.random.default_rng(seed)
        return rng.uniform(box[:, 0], box[:, 1], size=(self.n_points, dimension))


def _grid(spec, name: str) -> np.ndarray:
    if isinstance(spec, dict):
        try:
            g = np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
        except KeyError as exc:
            raise ConfigurationError(f"{name} needs start, stop and num") from exc
    else:
        g = np.atleast_1d(np.asarray(spec, float))
    if g.size == 0 or not np.all(np.isfinite(g)):
        raise ConfigurationError(f"{name} must be a nonempty finite grid")
    return g


class Table:
    """Rows for the CSV output; value columns are padded to the widest row."""

    def __init__(self, dimension: int):
        self.d = dimension
        self.rows: list[dict] = []

    def add(self, quantity: str, t, tau, point, value, residual, bound, status: str) -> None:
        self.rows.append({
            "quantity": quantity,
            "t": t,
            "tau": tau,
            "point": [] if point is None else list(np.ravel(point)),
            "value": list(np.ravel(np.asarray(value, float))),
            "residual": residual,
            "bound": bound,
            "status": status,
        })

    def write(self, path: Path) -> None:
        width = max((len(r["value"]) for r in self.rows), default=1)
        header = (["quantity", "t", "tau"] + [f"point_{i}" for i in range(self.d)]
                  + [f"value_{i}" for i in range(width)] + ["residual", "bound", "status"])
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.rows:
                pts = [_fmt(x) for x in r["point"]] + [""] * (self.d - len(r["point"]))
                vals = [_fmt(x) for x in r["value"]] + [""] * (width - len(r["value"]))
                w.writerow([r["quantity"], _fmt(r["t"]), _fmt(r["tau"]), *pts, *vals,
                            _fmt(r["residual"]), _fmt(r["bound"]), r["status"]])


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    return repr(float(x))


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(jsonable(payload), indent=2, sort_keys=False) + "\n")


def _header(cfg: RunConfig, entry, seed: int | None, command: str) -> dict:
    return {
        "command": command,
        "catalog": {"id": entry.id, "params": entry.params},
        "seed": seed,
        "settings": cfg.settings.to_dict(),
        "grids": {"t": cfg.t_grid, "tau": cfg.taus, "box": cfg.box, "points": cfg.n_points},
        "checks": cfg.checks,
    }


def cmd_verify(cfg: RunConfig, out_dir: Path, seed: int | None = None) -> tuple[int, dict]:
    """Check the dichotomy and perturbation hypotheses; write ``verify.json``."""
    entry = get_entry(cfg.catalog_id, cfg.params)
    problem = entry.problem(cfg.settings)
    st = cfg.settings
    report = verify_c1(entry.spec, entry.sys, settings=st, flow=problem.flow)
    report = report.merge(problem.hypotheses)
    report = report.merge(verify_c5(entry.spec, entry.sys, entry.nl, cfg.taus, st))

    sufficient: dict[str, Any] = {}
    for level in ("C1", "C2"):
        try:
            sufficient[level] = sufficient_conditions(entry.spec, entry.sys, entry.nl, level)
        except ConfigurationError as exc:
            sufficient[level] = {"unavailable": str(exc)}
    second_order = {}
    if entry.nl.V_env is not None:
        for tau in cfg.taus:
            try:
                r = verify_second_order_condition(problem, float(tau))
                second_order[str(float(tau))] = {"passed": r.passed, "value": r.value, "rate": r.rate,
                                                 "horizon": r.horizon, "bound": r.method}
            except (CapabilityError, ConfigurationError) as exc:
                second_order[str(float(tau))] = {"unavailable": str(exc)}

    q_hat = report.q_hat
    if q_hat is None or not q_hat < 1:
        code = EXIT_FATAL
    else:
        code = EXIT_OK if report.all_passed else EXIT_SOFT
    payload = {
        **_header(cfg, entry, seed, "verify"),
        "report": report.to_dict(),
        "sufficient_conditions": sufficient,
        "second_order_condition": second_order,
        "exit_code": code,
    }
    _write_json(out_dir / "verify.json", payload)
    log.info("verify: p_hat=%s q_hat=%s passed=%s exit=%d", report.p_hat, q_hat, report.passed, code)
    return code, payload


def _gate(cfg: RunConfig, out_dir: Path, force: bool, seed: int) -> int | None:
    if force:
        return None
    code, _ = cmd_verify(cfg, out_dir, seed)
    if code != EXIT_OK:
        log.error("hypotheses not verified (exit %d); rerun with --force to proceed anyway", code)
        return code
    return None


def cmd_conjugate(cfg: RunConfig, out_dir: Path, seed: int = 42, force: bool = False) -> tuple[int, dict]:
    """Tabulate H and G and the equivalence residuals; write ``conjugate.json`` and ``conjugate.csv``."""
    gated = _gate(cfg, out_dir, force, seed)
    if gated is not None:
        return gated, {}
    entry = get_entry(cfg.catalog_id, cfg.params)
    problem = entry.problem(cfg.settings)
    d = problem.dimension
    points = cfg.sample_points(d, seed)
    tol = float(cfg.checks["identity_tol"])
    table = Table(d)

    worst_map = 0.0
    for t in cfg.t_grid:
        for x in points:
            H = H_map(problem, float(t), x)
            G = G_map(problem, float(t), x)
            table.add("H-id", t, t, x, H.value - x, H.error_bound, problem.p_hat, _status(H.bounded))
            table.add("G-id", t, t, x, G.value - x, G.error_bound, problem.p_hat, _status(G.bounded))
            worst_map = max(worst_map, H.error_bound, G.error_bound)

    failures = []
    summary: dict[str, float] = {}
    for tau in cfg.taus:
        for x in points:
            rep = check_equivalence(problem, float(tau), x, x, cfg.t_grid, tol)
            for key, val in rep.details.items():
                name = key.replace("bounded_margin", "bounded")
                ok = rep.passed[name]
                if name.startswith("bounded"):
                    bound = rep.meta["bounded_tol"]
                elif name.startswith("solution_mapping"):
                    bound = tol * rep.meta["solution_mapping_scale"]
                else:
                    bound = tol
                table.add(key, "", tau, x, [val], val, bound, _status(ok))
                summary[key] = max(summary.get(key, -math.inf), float(val))
                if not ok:
                    failures.append({"check": key, "tau": float(tau), "point": x, "value": val})

    code = EXIT_OK if not failures else EXIT_SOFT
    table.write(out_dir / "conjugate.csv")
    payload = {
        **_header(cfg, entry, seed, "conjugate"),
        "points": points,
        "p_hat": problem.p_hat,
        "q_hat": problem.q_hat,
        "identity_tol": tol,
        "max_residuals": summary,
        "max_map_error_bound": worst_map,
        "failures": failures,
        "exit_code": code,
    }
    _write_json(out_dir / "conjugate.json", payload)
    return code, payload


def cmd_differentiate(cfg: RunConfig, out_dir: Path, seed: int = 42, force: bool = False) -> tuple[int, dict]:
    """Tabulate dG, dH, dw (and d2w) with finite-difference discrepancies and bound margins."""
    gated = _gate(cfg, out_dir, force, seed)
    if gated is not None:
        return gated, {}
    entry = get_entry(cfg.catalog_id, cfg.params)
    problem = entry.problem(cfg.settings)
    nl = problem.nl
    d = problem.dimension
    points = cfg.sample_points(d, seed)
    ck = cfg.checks
    delta = float(ck["fd_delta"])
    table = Table(d)
    singular, failures = [], []
    worst: dict[str, float] = {}
    second = bool(ck["second_order"]) and nl.d2f is not None and nl.V_env is not None

    def record(name, tau, x, value, disc, bound, extra_ok=True):
        ok = bool(disc <= bound) and extra_ok
        table.add(name, "", tau, x, value, disc, bound, _status(ok))
        worst[name] = max(worst.get(name, -math.inf), float(disc))
        if not ok:
            failures.append({"check": name, "tau": float(tau), "point": x, "discrepancy": disc})

    s_offsets = cfg.t_grid
    for tau in cfg.taus:
        tau = float(tau)
        ledger = BoundLedger(problem.sys, nl, tau)
        for x in points:
            try:
                dGv = dG(problem, tau, x)
                dHv = dH(problem, tau, x)
                G_at = G_map(problem, tau, x).value
                dH_G = dH(problem, tau, G_at)
            except SingularityError as exc:
                singular.append({"tau": tau, "point": x, "condition": exc.condition})
                table.add("dG", "", tau, x, [math.nan], math.nan, "", "singular")
                continue
            fdG = central_difference(lambda e: G_map(problem, tau, e).value, x, delta)
            fdH = central_difference(lambda e: H_map(problem, tau, e).value, x, delta)
            record("dG", tau, x, dGv, relative_error(dGv, fdG, 1e-6), ck["fd_rel_tol"])
            record("dH", tau, x, dHv, relative_error(dHv, fdH, 1e-6), ck["fd_rel_tol"])
            defect = float(np.abs(dH_G @ dGv - np.eye(d)).max())
            record("dH(G)*dG-I", tau, x, [defect], defect, ck["inverse_tol"])

            dwv = dw_star(problem, tau, x)
            fdw = central_difference(lambda e: w_star(problem, 0.0, tau, e), x, delta)
            record("dw", tau, x, dwv, float(np.abs(dwv - fdw).max()), ck["fd_rel_tol"] * max(1.0, float(np.abs(fdw).max())))

            # Gronwall and second-variation bound margins along s = tau + offsets
            s_grid = tau + s_offsets
            vf = variational_flow(problem.sys, nl, tau, x, s_grid, order=2 if second else 1, settings=problem.settings)
            z_norm = np.linalg.norm(vf.z(s_grid), ord=2, axis=(-2, -1))
            margin = float((z_norm / ledger.psi(s_grid)).max())
            # the bound is attained when f does not depend on y; allow integrator noise
            slack = 1.0 + 100 * problem.settings.rtol
            table.add("gronwall_margin", "", tau, x, [margin], margin, slack, _status(margin <= slack))
            worst["gronwall_margin"] = max(worst.get("gronwall_margin", -math.inf), margin)
            if margin > slack:
                failures.append({"check": "gronwall_margin", "tau": tau, "point": x, "discrepancy": margin})

            if second:
                d2 = d2w_star_detail(problem, tau, x)
                fd2 = central_difference(lambda e: dw_star(problem, tau, e), x, float(ck["fd2_delta"]))
                scale = max(1.0, float(np.abs(fd2).max()))
                disc = float(np.abs(d2.value - fd2).max()) / scale
                table.add("d2w", "", tau, x, d2.value, disc, ck["fd2_rel_tol"],
                          ("pass" if disc <= ck["fd2_rel_tol"] else "fail") + ("" if d2.certified else "-uncertified"))
                worst["d2w"] = max(worst.get("d2w", -math.inf), disc)
                if disc > ck["fd2_rel_tol"]:
                    failures.append({"check": "d2w", "tau": tau, "point": x, "discrepancy": disc})
                sym = float(np.abs(d2.value - np.swapaxes(d2.value, -1, -2)).max())
                record("d2w_symmetry", tau, x, [sym], sym, ck["symmetry_tol"])
                try:
                    pi = second_derivative_bound(problem.sys, nl, problem.spec, s_grid, tau, method="auto")
                    w_norm = np.array([np.linalg.norm(np.asarray(wi).reshape(d, d * d), 2) for wi in vf.w(s_grid)])
                    with np.errstate(divide="ignore", invalid="ignore"):
                        ratio = np.where(pi > 0, w_norm / pi, np.where(w_norm > 0, np.inf, 0.0))
                    m2 = float(ratio.max())
                    table.add("second_variation_margin", "", tau, x, [m2], m2, 1.0, _status(m2 <= 1.0))
                    worst["second_variation_margin"] = max(worst.get("second_variation_margin", -math.inf), m2)
                except (ConfigurationError, CapabilityError) as exc:
                    log.warning("second-variation bound unavailable: %s", exc)

    code = EXIT_SOFT if (singular or failures) else EXIT_OK
    table.write(out_dir / "differentiate.csv")
    payload = {
        **_header(cfg, entry, seed, "differentiate"),
        "points": points,
        "fd_delta": delta,
        "fd2_delta": float(ck["fd2_delta"]),
        "second_order": second,
        "max_discrepancies": worst,
        "singular_points": singular,
        "failures": failures,
        "exit_code": code,
    }
    _write_json(out_dir / "differentiate.json", payload)
    return code, payload


COMMANDS = {"verify": cmd_verify, "conjugate": cmd_conjugate, "differentiate": cmd_differentiate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conjlab", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--force", action="store_true", help="skip the hypothesis gate")
    parser.add_argument("--seed", type=int, default=42, help="seed for sampled points (default 42)")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        out_dir = Path(args.out) if args.out else cfg.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "verify":
            code, _ = cmd_verify(cfg, out_dir, args.seed)
        else:
            code, _ = COMMANDS[args.command](cfg, out_dir, seed=args.seed, force=args.force)
    except (ConfigurationError, ContractionError, ConvergenceError, IntegrationError, CapabilityError) as exc:
        print(f"conjlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL
    print(f"conjlab {args.command}: exit {code}, reports in {out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
