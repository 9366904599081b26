"""Command-line front end: ``relugeo <cone|image|fit|replicate> ...``.

Matrices are read from headerless CSV files (one row per line) or named
built-ins (``paper_s``, ``paper_t``).  Every command prints a short summary
and, with ``--out``, writes a JSON run record.

Exit codes: 0 on a completed analysis whatever its verdict, 2 on unreadable
input or bad arguments, 3 on mismatched dimensions, 4 when an exact
enumeration exceeds its cap and ``--numeric`` was not given.
"""

from __future__ import annotations

import argparse
import datetime
import enum
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from relugeo import __version__
from relugeo.cone import EnumerationCapError, cone_dim, cone_membership, enumerate_faces
from relugeo.core import Activation, NetworkSpec, ShapeError
from relugeo.datasets import BUILTIN
from relugeo.erm import FitConfig, fit, replicate_nonclosed_sequence
from relugeo.geometry import (dim_upper_bound, fit_distance_2layer_q1, generic_dim_2layer,
                              generic_dim_is_heuristic, membership_2layer_general,
                              membership_2layer_q1, numerical_image_dim)
from relugeo.smooth import default_chain_config, epsilon_grid_analysis, suspected_fraction

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_PARSE = 2
EXIT_SHAPE = 3
EXIT_CAP = 4


class InputError(Exception):
    """Unreadable or malformed input (exit code 2)."""


class DimensionError(Exception):
    """Inputs whose shapes do not fit together (exit code 3)."""


# -- run records -------------------------------------------------------------------


@dataclass
class RunRecord:
    """Everything needed to reproduce and audit one command."""

    command: str
    config: dict
    seed: int | None
    results: dict
    digests: dict = field(default_factory=dict)
    wall_time: float = 0.0
    timestamp: str = ""
    version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version, "command": self.command,
            "version": self.version, "config": self.config, "seed": self.seed,
            "digests": self.digests, "results": self.results,
            "wall_time": self.wall_time, "timestamp": self.timestamp,
        }

    def to_json(self) -> str:
        return json.dumps(jsonable(self.to_dict()), indent=2, sort_keys=True, allow_nan=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {data.get('schema_version')!r}")
        return cls(command=data["command"], config=data["config"], seed=data["seed"],
                   results=data["results"], digests=data.get("digests", {}),
                   wall_time=data.get("wall_time", 0.0), timestamp=data.get("timestamp", ""),
                   version=data.get("version", ""), schema_version=data["schema_version"])

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def jsonable(obj):
    """Convert numpy values, enums and sets into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(jsonable(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- input ---------------------------------------------------------------------------


def to_csv(M) -> str:
    """Serialize a matrix so that :func:`parse_csv` reads it back exactly."""
    M = np.array(M, dtype=float, ndmin=2)
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in M)


def parse_csv(text: str) -> np.ndarray:
    """Parse headerless comma-separated rows into a 2-D float array."""
    rows = [line.strip() for line in text.splitlines()]
    rows = [line for line in rows if line]
    if not rows:
        raise InputError("empty matrix")
    try:
        M = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise InputError(f"cannot parse CSV: {exc}") from None
    if not np.all(np.isfinite(M)):
        raise InputError("matrix has non-finite entries")
    return M


def load_matrix(source: str):
    """Read a CSV file or a built-in name; returns ``(matrix, sha256 hex)``."""
    if source in BUILTIN:
        M = BUILTIN[source].copy()
        return M, hashlib.sha256(to_csv(M).encode()).hexdigest()
    path = Path(source)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {source}: {exc.strerror}") from None
    try:
        text = data.decode()
    except UnicodeDecodeError:
        raise InputError(f"{source} is not text") from None
    return parse_csv(text), hashlib.sha256(data).hexdigest()


def _int_list(text: str) -> list:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _fit_config(args, **defaults) -> FitConfig:
    """FitConfig from defaults, then ``--config``, then explicit flags."""
    data = dict(defaults)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError("config file must hold a JSON object")
        data.update(loaded)
    for flag, name in (("restarts", "restarts"), ("seed", "seed"), ("max_iters", "max_iters")):
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    try:
        return FitConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad fit configuration: {exc}") from None


def _vector(M, n: int, name: str) -> np.ndarray:
    if M.shape[0] == 1 and M.shape[1] == n and n != 1:
        M = M.T
    if M.shape[0] != n:
        raise DimensionError(f"{name} has {M.shape[0]} rows, the sample has {n}")
    return M


def _fit_summary(report) -> dict:
    return {
        "best_loss": report.best_loss, "best_theta": report.best_theta,
        "best_norm": report.best_norm, "best_restart": report.best_restart,
        "restart_losses": report.restart_losses, "iterations": report.iterations,
        "grad_norm": report.grad_norm, "threshold": report.threshold,
        "classification": report.classification, "heuristic": True,
        "trajectories": [{"iterations": t.iterations, "loss": t.loss, "norm": t.norm}
                         for t in report.trajectories],
    }


# -- commands --------------------------------------------------------------------------


def cmd_cone(args, digests) -> dict:
    S, digests["sample"] = load_matrix(args.sample)
    if args.action == "dim":
        dim = cone_dim(S)
        print(f"cone dimension: {dim}")
        return {"dimension": dim}
    if args.action == "member":
        if args.response is None:
            raise InputError("cone member needs --response (the vector to test)")
        x, digests["response"] = load_matrix(args.response)
        x = _vector(x, S.shape[0], "vector")
        if x.shape[1] != 1:
            raise DimensionError("cone member takes a single column")
        res = cone_membership(S, x[:, 0], args.tol)
        print("MEMBER" if res.member else "NON_MEMBER")
        if res.member:
            print(f"witness a={np.array2string(res.a)} b={res.b:.6g} residual={res.residual:.3g}")
        return {"verdict": "MEMBER" if res.member else "NON_MEMBER", "a": res.a, "b": res.b,
                "residual": res.residual, "support": res.support}
    faces = enumerate_faces(S, cap=args.cap)
    print(f"{len(faces)} realizable support patterns (1-based indices):")
    for f in faces.faces:
        print("  {" + ",".join(str(i + 1) for i in sorted(f.index_set)) + f"}}  dim {f.dimension}")
    return {"faces": [{"index_set": sorted(f.index_set), "dimension": f.dimension,
                       "a": f.a, "b": f.b} for f in faces.faces]}


def cmd_image(args, digests) -> dict:
    S, digests["sample"] = load_matrix(args.sample)
    n, p = S.shape
    if args.action in ("dim", "bound"):
        q = args.outputs or 1
        d = args.width
        if args.action == "bound":
            upper = dim_upper_bound(S, d, q)
            generic = generic_dim_2layer(p, d, q, n)
            print(f"upper bound: {upper}")
            print(f"generic dimension for n >= threshold: "
                  f"{'n too small' if generic is None else generic}"
                  f"{' (heuristic)' if generic_dim_is_heuristic(q) else ''}")
            return {"upper_bound": upper, "generic_dim": generic,
                    "generic_heuristic": generic_dim_is_heuristic(q)}
        spec = NetworkSpec((p, d, q), args.activation)
        rep = numerical_image_dim(spec, S, trials=args.trials, seed=args.seed or 0, rel_tol=args.rank_tol)
        print(f"numerical rank max: {rep.numerical_rank_max} (upper bound {rep.theoretical_upper}, "
              f"generic {rep.generic_formula})")
        return {"numerical_rank_max": rep.numerical_rank_max, "upper_bound": rep.theoretical_upper,
                "generic_dim": rep.generic_formula, "histogram": rep.histogram,
                "skipped": rep.skipped, "trials": rep.trials, "generic_heuristic": rep.generic_heuristic}

    if args.response is None:
        raise InputError(f"image {args.action} needs --response")
    T, digests["response"] = load_matrix(args.response)
    T = _vector(T, n, "response")
    q = T.shape[1]
    if args.outputs is not None and args.outputs != q:
        raise DimensionError(f"--outputs {args.outputs} but the response has {q} columns")
    d = args.width
    config = _fit_config(args, restarts=8, max_iters=2000, norm_cap=1e3)
    tol = args.tol if args.tol is not None else 1e-9

    if args.action == "member":
        cert = None
        if q == 1:
            try:
                cert = membership_2layer_q1(S, T[:, 0], d, tol=tol, cap=args.cap)
            except EnumerationCapError:
                if not args.numeric:
                    raise
        if cert is None:
            cert = membership_2layer_general(S, T, d, config,
                                             tol=args.tol if args.tol is not None else 1e-7)
        print(f"{cert.verdict.value} (path: {cert.path})")
        if cert.residual is not None:
            print(f"residual: {cert.residual:.6g}")
        return {"verdict": cert.verdict, "path": cert.path, "residual": cert.residual,
                "theta": cert.theta, "pattern": None if cert.pattern is None else cert.pattern.to_list(),
                "patterns_tried": cert.patterns_tried}

    if q == 1:
        try:
            res = fit_distance_2layer_q1(S, T[:, 0], d, tol=tol, cap=args.cap)
        except EnumerationCapError:
            if not args.numeric:
                raise
        else:
            print(f"distance: {res.distance:.12g} (path: exact)")
            return {"distance": res.distance, "path": "exact", "nearest": res.nearest,
                    "theta": res.theta, "pattern": res.pattern.to_list()}
    report = fit(NetworkSpec((p, d, q)), S, T, config)
    dist = math.sqrt(report.best_loss)
    print(f"distance upper bound: {dist:.12g} (path: numeric)")
    return {"distance": dist, "path": "numeric", "upper_bound_only": True,
            "fit": _fit_summary(report)}


def cmd_fit(args, digests) -> dict:
    S, digests["sample"] = load_matrix(args.sample)
    T, digests["response"] = load_matrix(args.response)
    T = _vector(T, S.shape[0], "response")
    widths = args.widths or [S.shape[1], 2, T.shape[1]]
    if widths[0] != S.shape[1]:
        raise DimensionError(f"--widths starts with {widths[0]}, the sample has {S.shape[1]} columns")
    if widths[-1] != T.shape[1]:
        raise DimensionError(f"--widths ends with {widths[-1]}, the response has {T.shape[1]} columns")
    spec = NetworkSpec(tuple(widths), args.activation)
    config = _fit_config(args)
    report = fit(spec, S, T, config)
    print(f"best squared loss: {report.best_loss:.6g}")
    print(f"best weight norm: {report.best_norm:.6g} (threshold {report.threshold:.6g})")
    print(f"attainment (heuristic): {report.classification.value}")
    out = _fit_summary(report)
    out["widths"] = list(spec.widths)
    out["activation"] = spec.activation
    out["fit_config"] = config.to_dict()
    return out


def cmd_replicate(args, digests) -> dict:
    if args.target == "nonclosed":
        if args.dump:
            folder = Path(args.dump)
            folder.mkdir(parents=True, exist_ok=True)
            for name, M in BUILTIN.items():
                (folder / f"{name}.csv").write_text(to_csv(M))
            print(f"wrote {', '.join(sorted(BUILTIN))} to {folder}")
        ks = args.k or [1, 10, 100, 1000, 10**6]
        rows = replicate_nonclosed_sequence(ks)
        print(f"{'k':>10}  {'distance':>22}  {'sqrt(5)/k':>22}  {'norm':>14}")
        for k, dist, nrm in rows:
            print(f"{k:>10}  {dist:>22.15g}  {math.sqrt(5) / k:>22.15g}  {nrm:>14.6g}")
        out = {"sequence": [{"k": k, "distance": dist, "norm": nrm} for k, dist, nrm in rows]}
        if not args.no_fit:
            from relugeo.datasets import PAPER_S, PAPER_T
            config = _fit_config(args)
            report = fit(NetworkSpec((2, 2, 2)), PAPER_S, PAPER_T, config)
            print(f"fit: loss {report.best_loss:.3g}, norm {report.best_norm:.4g}, "
                  f"attainment (heuristic): {report.classification.value}")
            out["fit"] = _fit_summary(report)
        return out

    center = [0.0, 2.0, 1.0]
    eps = 0.05 if args.epsilon is None else args.epsilon
    grid = 5 if args.grid is None else args.grid
    overrides = {}
    for flag, name in (("restarts", "restarts"), ("seed", "seed"), ("max_iters", "max_iters")):
        if getattr(args, flag, None) is not None:
            overrides[name] = getattr(args, flag)
    try:
        config = default_chain_config(**overrides)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    results = epsilon_grid_analysis(center, eps, grid, config, args.activation)
    excess = [r.excess for r in results]
    centre = min(results, key=lambda r: float(np.max(np.abs(r.t - center))))
    print(f"{len(results)} grid points, epsilon {eps:g}, activation {results[0].activation.value}"
          f"{' (extension)' if results[0].extension else ''}")
    print(f"center best loss {centre.best_loss:.9g}, isotonic bound {centre.bound:.9g}")
    print(f"loss - bound: min {min(excess):.3g}, max {max(excess):.3g}")
    print(f"min norm {min(r.best_norm for r in results):.4g}; "
          f"suspected non-attained (heuristic): {100 * suspected_fraction(results):.1f}%")
    return {"center": center, "epsilon": eps, "grid": grid,
            "suspected_fraction": suspected_fraction(results),
            "points": [r.to_dict() for r in results]}


# -- parser ------------------------------------------------------------------------------


def _add_fit_flags(p) -> None:
    p.add_argument("--restarts", type=int, help="number of restarts")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="iterations per restart")
    p.add_argument("--config", help="JSON file with FitConfig fields; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relugeo", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="write the JSON run record here")
        return p

    cone = common(sub.add_parser("cone", help="ReLU cone of a sample"))
    cone.add_argument("action", choices=["dim", "member", "faces"])
    cone.add_argument("--sample", required=True, help="CSV file or built-in name")
    cone.add_argument("--response", help="vector to test (cone member)")
    cone.add_argument("--tol", type=float, help="support tolerance")
    cone.add_argument("--cap", type=int, default=16, help="largest n for face enumeration")

    image = common(sub.add_parser("image", help="image of a two-layer ReLU network"))
    image.add_argument("action", choices=["member", "distance", "dim", "bound"])
    image.add_argument("--sample", required=True, help="CSV file or built-in name")
    image.add_argument("--response", help="CSV file or built-in name")
    image.add_argument("--width", type=int, required=True, help="hidden width d")
    image.add_argument("--outputs", type=int, help="output count q")
    image.add_argument("--activation", default="relu", choices=[a.value for a in Activation])
    image.add_argument("--tol", type=float, help="residual tolerance")
    image.add_argument("--numeric", action="store_true",
                       help="fall back to the numeric search past the enumeration cap")
    image.add_argument("--cap", type=int, default=16, help="largest n for exact enumeration")
    image.add_argument("--trials", type=int, default=20, help="random draws for image dim")
    image.add_argument("--rank-tol", dest="rank_tol", type=float, default=1e-8,
                       help="relative singular value cutoff for image dim")
    _add_fit_flags(image)

    fitp = common(sub.add_parser("fit", help="least-squares fit with attainment diagnosis"))
    fitp.add_argument("--sample", required=True, help="CSV file or built-in name")
    fitp.add_argument("--response", required=True, help="CSV file or built-in name")
    fitp.add_argument("--widths", type=_int_list, help="layer widths, e.g. 2,2,2")
    fitp.add_argument("--activation", default="relu", choices=[a.value for a in Activation])
    _add_fit_flags(fitp)

    rep = common(sub.add_parser("replicate", help="built-in non-attainment examples"))
    rep.add_argument("target", choices=["nonclosed", "tanh"])
    rep.add_argument("--k", type=_int_list, help="sequence indices, e.g. 1,10,100")
    rep.add_argument("--no-fit", dest="no_fit", action="store_true",
                     help="skip the fit diagnosis (nonclosed)")
    rep.add_argument("--dump", metavar="DIR", help="write the built-in CSV files to DIR")
    rep.add_argument("--epsilon", type=float, help="half-width of the target box (tanh)")
    rep.add_argument("--grid", type=int, help="grid points per axis (tanh)")
    rep.add_argument("--activation", default="tanh", choices=["tanh", "sigmoid"])
    _add_fit_flags(rep)
    return parser


COMMANDS = {"cone": cmd_cone, "image": cmd_image, "fit": cmd_fit, "replicate": cmd_replicate}


def _record_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("out",)}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    digests = {}
    start = time.perf_counter()
    try:
        results = COMMANDS[args.command](args, digests)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (DimensionError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except EnumerationCapError as exc:
        print(f"error: {exc}; pass --numeric for the numeric search", file=sys.stderr)
        return EXIT_CAP
    if args.out:
        record = RunRecord(
            command=" ".join(x for x in (args.command, getattr(args, "action", None),
                                         getattr(args, "target", None)) if x),
            config=_record_config(args), seed=getattr(args, "seed", None) or 0, results=results,
            digests=digests, wall_time=time.perf_counter() - start,
            timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat())
        record.save(args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
