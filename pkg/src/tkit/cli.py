"""Command-line front end.

Exit status: 0 success, 1 malformed input or out-of-range option, 2 input
violating a hypothesis of the algorithm, 3 search failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .geometry import Ball, GridSpec, default_grid
from .poly import PolyMap
from .rank_m import covering_budget, perturb_rank_m, perturb_rank_m_family
from .rank_one import (ConstantsProfile, check_delta, perturb_rank_one,
                       perturb_rank_one_family)
from .search import HypothesisError, SearchFailure
from .transversality import (TransversalityCertificate, certify_transverse, margin_field,
                             min_singular_value, right_inverse, Rejection)

EXIT_OK, EXIT_SCHEMA, EXIT_HYPOTHESIS, EXIT_SEARCH = 0, 1, 2, 3
SUBCOMMANDS = ("certify", "perturb-1", "perturb-m", "family", "construct", "budget",
               "lemma4-check")


class InputError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tkit", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--input", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--eta", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spacing", type=float)
    p.add_argument("--budget", type=int, default=2048,
                   help="candidate offsets scored per search")
    p.add_argument("--plot", action="store_true")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--region", type=float, default=3.0)
    p.add_argument("--budget-report", type=Path)
    p.add_argument("--strict", action="store_true",
                   help="also enforce the size normalization of the input map")
    return p


# -- helpers ----------------------------------------------------------------------


def _load_json(path: Path | None):
    if path is None:
        raise InputError("--input is required")
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _load_map(path: Path | None) -> PolyMap:
    return PolyMap.from_dict(_load_json(path))


def _grid(ball: Ball, spacing: float | None) -> GridSpec:
    if spacing is None:
        return default_grid(ball)
    if not spacing > 0:
        raise InputError("--spacing must be positive")
    return GridSpec(ball, spacing)


def _emit(args, payload) -> None:
    text = tio.dumps(payload)
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)


def _sidecar(args, suffix: str) -> Path | None:
    return None if args.out is None else args.out.with_suffix(suffix)


def _write_margin_csv(path: Path | None, p: PolyMap, grid: GridSpec, full: bool) -> None:
    if path is None:
        return
    pts = grid.points()
    margin, absf, sigma, _ = margin_field(p, pts, full)
    tio.write_csv(path, *tio.margin_rows(pts, absf, sigma, margin))


def _write_map_svg(path: Path | None, p: PolyMap, ball: Ball, title: str) -> None:
    """|f| on the first coordinate plane through the ball center."""
    if path is None:
        return
    m = 96
    r = ball.radius
    c = ball.center
    xs = c[0].real + np.linspace(-r, r, m)
    ys = c[0].imag + np.linspace(-r, r, m)
    Z = (xs[None, :] + 1j * ys[:, None]).ravel()
    pts = np.repeat(c[None, :], len(Z), axis=0)
    pts[:, 0] = Z
    vals = np.linalg.norm(p._eval_batch(pts), axis=1).reshape(m, m)
    vals[np.abs(Z.reshape(m, m) - c[0]) > r] = np.nan
    path.write_text(tio.svg_heatmap(vals, (xs[0], xs[-1], ys[0], ys[-1]), title=title))


def _profile(args) -> ConstantsProfile:
    return ConstantsProfile()


def _eta(args, profile: ConstantsProfile) -> float:
    eta = profile.eta_of_delta(args.delta) if args.eta is None else args.eta
    if not eta > 0:
        raise InputError("--eta must be positive")
    return eta


# -- subcommands ------------------------------------------------------------------


def cmd_certify(args) -> int:
    data = _load_json(args.input)
    if "certificate" in data and "perturbed_map" in data:
        # re-validate an emitted result
        p = PolyMap.from_dict(data["perturbed_map"])
        old = TransversalityCertificate.from_dict(data["certificate"])
        cert = certify_transverse(p, old.ball, old.grid, not old.holomorphic_only)
        eta = float(data.get("eta", old.margin))
        out = {"certificate": cert.to_dict(), "eta": eta, "valid": cert.margin >= eta,
               "reference_margin": old.margin}
    else:
        p = PolyMap.from_dict(data)
        ball = Ball.unit(p.n)
        grid = _grid(ball, args.spacing)
        cert = certify_transverse(p, ball, grid)
        out = {"certificate": cert.to_dict(), "map": p.to_dict()}
        if args.eta is not None:
            out["eta"] = args.eta
            out["valid"] = cert.margin >= args.eta
    _emit(args, out)
    _write_margin_csv(_sidecar(args, ".csv"), p, cert.grid, not cert.holomorphic_only)
    if args.plot:
        _write_map_svg(_sidecar(args, ".svg"), p, cert.ball, "|f|")
    return EXIT_OK


def _result_payload(f: PolyMap, res) -> dict:
    pert = res.perturbed(f)
    d = res.to_dict()
    d["map"] = f.to_dict()
    d["perturbed_map"] = pert.to_dict()
    return d


def cmd_perturb(args, rank_m: bool) -> int:
    f = _load_map(args.input)
    check_delta(args.delta)
    profile = _profile(args)
    eta = _eta(args, profile)
    grid = None if args.spacing is None else _grid(Ball.unit(f.n), args.spacing)
    if rank_m:
        res = perturb_rank_m(f, args.delta, profile, grid, args.seed, budget=args.budget,
                             strict=args.strict, eta=eta)
        if args.budget_report is not None and "covering_budget" in res.details:
            tio.write_json(args.budget_report, res.details["covering_budget"])
    else:
        if f.m != 1:
            raise InputError("perturb-1 needs a scalar map (m = 1)")
        res = perturb_rank_one(f, args.delta, profile, grid, args.seed, budget=args.budget,
                               strict=args.strict, eta=eta)
    _emit(args, _result_payload(f, res))
    pert = res.perturbed(f)
    _write_margin_csv(_sidecar(args, ".csv"), pert, res.certificate.grid,
                      not res.certificate.holomorphic_only)
    if args.plot:
        _write_map_svg(_sidecar(args, ".svg"), pert, res.certificate.ball, "|f - affine|")
    return EXIT_OK


def cmd_family(args) -> int:
    data = _load_json(args.input)
    if not isinstance(data, dict) or "maps" not in data:
        raise InputError('family input must be {"maps": [...], "ts": [...]}')
    fs = [PolyMap.from_dict(m) for m in data["maps"]]
    if len(fs) < 2 or len({(f.n, f.m) for f in fs}) != 1:
        raise InputError("family needs at least two maps of equal shape")
    ts = data.get("ts")
    check_delta(args.delta)
    profile = _profile(args)
    solver = perturb_rank_one_family if fs[0].m == 1 else perturb_rank_m_family
    res = solver(fs, args.delta, profile, None, args.seed, ts=ts, budget=args.budget,
                 strict=args.strict)
    _emit(args, res.to_dict())
    return EXIT_OK


def cmd_budget(args) -> int:
    f = _load_map(args.input)
    check_delta(args.delta)
    profile = _profile(args)
    eta = _eta(args, profile)
    d = profile.truncation_degree(eta)
    b = covering_budget(f.m * (f.n + 1), d, args.delta, eta)
    _emit(args, b.to_dict())
    if args.budget_report is not None:
        tio.write_json(args.budget_report, b.to_dict())
    return EXIT_OK


def cmd_covector_check(args) -> int:
    if args.input is not None:
        data = _load_json(args.input)
        try:
            L = np.array([[complex(a, b) for a, b in row] for row in data["matrix"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"bad matrix: {exc}") from exc
        alpha = float(data.get("alpha", args.eta or 1e-12))
        sig = min_singular_value(L)
        R = right_inverse(L, alpha)
        out = {"sigma_min": sig, "alpha": alpha, "accepted": not isinstance(R, Rejection)}
        if not isinstance(R, Rejection):
            out["right_inverse_norm"] = float(np.linalg.norm(R, 2))
            out["identity_error"] = float(np.linalg.norm(L @ R - np.eye(L.shape[0]), 2))
        _emit(args, out)
        return EXIT_OK
    from .equivalence import equivalence_suite
    _emit(args, equivalence_suite(seed=args.seed))
    return EXIT_OK


def cmd_construct(args) -> int:
    from .flatmodel import ModelConfig, extract_zero_set, global_iteration
    check_delta(args.delta)
    cfg = ModelConfig(n=args.n, k=args.k, region_radius=args.region)
    s, report = global_iteration(cfg, delta0=args.delta, seed=args.seed)
    region = cfg.region
    zeros = extract_zero_set(s, region, certified_margin=report["eta_star"])
    report["zeros"] = [z.to_dict() for z in zeros]
    report["zero_count"] = len(zeros)
    report["all_symplectic"] = all(z.symplectic for z in zeros)
    if cfg.n == 1:
        from .flatmodel import boundary_winding
        report["boundary_winding"] = boundary_winding(s, region.radius)
    out = args.out or Path("run")
    out.mkdir(parents=True, exist_ok=True)
    tio.write_json(out / "report.json", report)
    tio.write_json(out / "section.json", s.to_dict())
    _construct_field(s, cfg, zeros, out)
    return EXIT_OK


def _construct_field(s, cfg, zeros, out: Path) -> None:
    from .flatmodel import section_margin_field
    r = cfg.region.radius
    m = 120
    ticks = np.linspace(-r, r, m)
    Z = (ticks[None, :] + 1j * ticks[:, None]).ravel()
    pts = np.zeros((len(Z), cfg.n), np.complex128)
    pts[:, 0] = Z
    margin, absv, sigma, _ = section_margin_field(s, pts, cfg.use_full_gradient)
    inside = np.abs(Z) <= r
    tio.write_csv(out / "margin.csv", *tio.margin_rows(pts[inside], absv[inside],
                                                        sigma[inside], margin[inside]))
    vals = absv.reshape(m, m).copy()
    vals[~inside.reshape(m, m)] = np.nan
    pz = np.array([z.point[0] for z in zeros]) if zeros else None
    (out / "section.svg").write_text(
        tio.svg_heatmap(vals, (-r, r, -r, r), pz, title=f"|s| k={cfg.k}"))


HANDLERS = {
    "certify": cmd_certify,
    "perturb-1": lambda a: cmd_perturb(a, False),
    "perturb-m": lambda a: cmd_perturb(a, True),
    "family": cmd_family,
    "construct": cmd_construct,
    "budget": cmd_budget,
    "lemma4-check": cmd_covector_check,
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return HANDLERS[args.subcommand](args)
    except HypothesisError as exc:
        print(f"hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except SearchFailure as exc:
        print(f"search failed: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_SEARCH
    except (InputError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
