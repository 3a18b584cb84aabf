"""Command-line front end: ``cfsf estimate | simulate | check``.

Settings come from (lowest to highest precedence) built-in defaults, a flat
``key = value`` config file, the environment (``CFSF_OUTPUT_DIR``,
``CFSF_WORKERS``) and command-line flags. Exit codes: 0 success, 1 invalid
input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from cfsf import _backend
from cfsf.data import ObservationTable
from cfsf.design import (
    RegressorSpec,
    TransformSpec,
    check_full_rank,
    first_stage_design,
    second_stage_design,
)
from cfsf.errors import InvalidInput, NumericalError, ValidationError
from cfsf.first_stage import TrimRule, control_function
from cfsf.inference import BootstrapFailed, bands, bootstrap_ensemble, default_workers
from cfsf.pipeline import EstimatorConfig, estimate, prepare
from cfsf.simulate import TriangularDesign, generate

log = logging.getLogger("cfsf")


def _floats(text):
    return tuple(float(t) for t in str(text).replace(";", ",").split(",") if t.strip())


def _names(text):
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _flag(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise InvalidInput(f"not a boolean: {text!r}")


def _optional_flag(text):
    return None if str(text).strip().lower() in ("", "auto", "none") else _flag(text)


def _z1_values(text):
    """``0;1`` or ``0,1;1,0`` (one conditioning vector per ``;``)."""
    return tuple(_floats(part) for part in str(text).split(";") if part.strip())


def _transform(text):
    """``raw_plus_intercept``, ``polynomial:<degree>`` or ``cubic_bspline:<n_knots>``."""
    kind, _, arg = str(text).strip().partition(":")
    if kind == "polynomial":
        return TransformSpec("polynomial", degree=int(arg or 2))
    if kind == "cubic_bspline":
        return TransformSpec("cubic_bspline", n_knots=int(arg or 4))
    return TransformSpec(kind)


@dataclass
class RunConfig:
    input: str = ""
    y: str = "y"
    x: str = "x"
    z2: tuple = ("z2",)
    z1: tuple = ()
    first_stage: str = "qr"
    second_stage: str = "qr"
    link: str = "logit"
    M: int = 599
    S: int = 599
    B: int = 199
    epsilon: float = 0.01
    alpha: float = 0.1
    trim_lower: float = -np.inf
    trim_upper: float = np.inf
    x_points: int = 5
    x_dsf_points: int = 3
    x_range: tuple = (0.1, 0.9)
    y_points: int = 15
    y_range: tuple = (0.1, 0.9)
    taus: tuple = (0.25, 0.5, 0.75)
    y_discrete: bool = False
    first_stage_transform: str = "raw_plus_intercept"
    treatment_transform: str = "raw_plus_intercept"
    covariate_transform: str = "raw_plus_intercept"
    control_transform: str = "raw_plus_intercept"
    rearrange: bool | None = None
    conditional_z1: tuple = ()
    asf_ls: bool = False
    seed: int = 0
    output_dir: str = "cfsf_output"
    workers: int = field(default_factory=default_workers)

    def estimator(self) -> EstimatorConfig:
        spec = RegressorSpec(
            first_stage=_transform(self.first_stage_transform),
            treatment=_transform(self.treatment_transform),
            covariates=(_transform(self.covariate_transform),),
            control=_transform(self.control_transform),
        )
        return EstimatorConfig(
            first_stage=self.first_stage, second_stage=self.second_stage, link=self.link,
            M=self.M, S=self.S, epsilon=self.epsilon,
            trim=TrimRule(self.trim_lower, self.trim_upper), spec=spec,
            x_points=self.x_points, x_range=tuple(self.x_range),
            x_dsf_points=self.x_dsf_points, y_points=self.y_points,
            y_range=tuple(self.y_range), taus=tuple(self.taus), y_discrete=self.y_discrete,
            rearrange=self.rearrange, conditional_z1=tuple(self.conditional_z1),
            asf_ls=self.asf_ls,
        )

    def validate(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput("alpha must lie in (0, 1)")
        if self.B < 0 or self.B == 1:
            raise InvalidInput("B must be 0 (no bootstrap) or at least 2")
        if self.workers < 1:
            raise InvalidInput("workers must be at least 1")
        self.estimator()

    def record(self) -> dict:
        """Settings that determine the outputs (not where or how fast they are made)."""
        out = asdict(self)
        for k in ("output_dir", "workers"):
            out.pop(k)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in out.items()}


_PARSERS = {
    "z2": _names, "z1": _names, "M": int, "S": int, "B": int, "epsilon": float,
    "alpha": float, "trim_lower": float, "trim_upper": float, "x_points": int,
    "x_dsf_points": int, "x_range": _floats, "y_points": int, "y_range": _floats,
    "taus": _floats, "y_discrete": _flag, "rearrange": _optional_flag,
    "conditional_z1": _z1_values, "asf_ls": _flag, "seed": int, "workers": int,
}
KEYS = {f.name.lower(): f.name for f in fields(RunConfig)}


def _set(cfg: RunConfig, key: str, value):
    name = KEYS.get(key.lower().replace("-", "_"))
    if name is None:
        raise InvalidInput(f"unknown configuration key {key!r}")
    try:
        setattr(cfg, name, _PARSERS.get(name, str)(value))
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"bad value {value!r} for {name}: {exc}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from None
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise InvalidInput(f"malformed config {path}: {exc}") from None
    return dict(parser["run"])


def build_config(args, environ) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        for k, v in read_config(args.config).items():
            _set(cfg, k, v)
    if environ.get("CFSF_OUTPUT_DIR"):
        cfg.output_dir = environ["CFSF_OUTPUT_DIR"]
    if environ.get("CFSF_WORKERS"):
        _set(cfg, "workers", environ["CFSF_WORKERS"])
    for name in KEYS.values():
        value = getattr(args, name, None)
        if value is not None:
            _set(cfg, name, value)
    cfg.validate()
    return cfg


@dataclass
class RunReport:
    timings: dict
    rank: dict
    failures: list
    warnings: list
    manifest: dict
    exit_code: int = 0


_COORDS = {"DSF": ("y", "x"), "QSF": ("tau", "x"), "ASF": ("x",)}


def _file_name(name: str) -> str:
    return name.lower().replace("|", "_").replace(",", "_") + ".csv"


def _fmt(v) -> str:
    return repr(float(v))


def _write_surface(path: Path, kind, region, estimates, band=None):
    cols = list(_COORDS[kind]) + ["estimate"]
    if band is not None:
        cols += ["se", "lower", "upper"]
    lines = [",".join(cols)]
    for i in range(len(estimates)):
        row = [_fmt(c) for c in np.atleast_1d(region[i])] + [_fmt(estimates[i])]
        if band is not None:
            row += [_fmt(band.se[i]), _fmt(band.lower[i]), _fmt(band.upper[i])]
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _rank_diagnostics(table, est) -> dict:
    R = first_stage_design(table.z, est.reduced_form.spec)
    keep = est.control.trim == 1
    W = second_stage_design(table.x[keep], table.z1[keep], est.control.v_hat[keep],
                            est.reduced_form.spec)
    out = {}
    for stage, D in (("first_stage", R), ("second_stage", W)):
        eig, ok = check_full_rank(D)
        out[stage] = {"min_eigenvalue": eig, "full_rank": ok}
    return out


def load_table(cfg: RunConfig) -> ObservationTable:
    if not cfg.input:
        raise InvalidInput("no input file given (key 'input')")
    return ObservationTable.from_csv(cfg.input, y=cfg.y, x=cfg.x, z2=cfg.z2, z1=cfg.z1)


def run_pipeline(cfg: RunConfig) -> RunReport:
    """Estimate, bootstrap and band every surface; write CSVs and a manifest."""
    timings = {}
    t0 = time.perf_counter()
    table = load_table(cfg)
    econf = cfg.estimator()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        setup = prepare(table, econf)
        est = estimate(table, econf, None, setup)
    timings["estimate"] = time.perf_counter() - t0
    notes = [str(w.message) for w in caught]
    rank = _rank_diagnostics(table, est)

    band_map, failures, exit_code = {}, [], 0
    if cfg.B == 0:
        notes.append("B = 0: bootstrap disabled, writing point estimates only")
    else:
        t1 = time.perf_counter()
        try:
            ens = bootstrap_ensemble(table, econf, cfg.B, cfg.seed, workers=cfg.workers,
                                     setup=setup)
            failures = [list(f) for f in ens.failures]
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                band_map = bands(est.surfaces, ens, cfg.alpha, econf.y_discrete)
            notes += [str(w.message) for w in caught]
        except BootstrapFailed as exc:
            failures = [list(f) for f in exc.failures]
            notes.append(f"banding aborted: {exc}")
            exit_code = 2
        timings["bootstrap"] = time.perf_counter() - t1

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, surf in est.surfaces.items():
        band = band_map.get(name)
        path = out / _file_name(name)
        if band is not None and len(band.center) != len(surf):
            # discrete-outcome QSF band lives on the inverted DSF region
            _write_surface(path, surf.kind, band.region, band.center, band)
        else:
            _write_surface(path, surf.kind, surf.region, surf.estimates, band)
        files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
    for note in notes:
        log.warning(note)
    manifest = {
        "config": cfg.record(),
        "backend": _backend.NAME,
        "n": table.n,
        "rank": rank,
        "bootstrap": {"B": cfg.B, "failures": failures},
        "warnings": notes,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    timings["total"] = time.perf_counter() - t0
    for stage, secs in timings.items():
        log.info("%s: %.2f s", stage, secs)
    return RunReport(timings, rank, failures, notes, manifest, exit_code)


def check_command(cfg: RunConfig) -> dict:
    """Validate config and data, fit the first stage and report design ranks."""
    table = load_table(cfg)
    econf = cfg.estimator()
    setup = prepare(table, econf)
    R = first_stage_design(table.z, setup.spec)
    eig1, ok1 = check_full_rank(R)
    out = {"n": table.n, "first_stage": {"min_eigenvalue": eig1, "full_rank": ok1}}
    if ok1:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cf = control_function(table, None, setup.spec, method=econf.first_stage, M=econf.M,
                                  epsilon=econf.epsilon, link=econf.link, trim=econf.trim,
                                  x_grid=setup.x_grid)
        keep = cf.trim == 1
        W = second_stage_design(table.x[keep], table.z1[keep], cf.v_hat[keep], setup.spec)
        eig2, ok2 = check_full_rank(W)
        out["second_stage"] = {"min_eigenvalue": eig2, "full_rank": ok2}
    return out


DESIGN_FLAGS = ("pi1", "pi2", "sigma_x", "b1", "b2", "s1", "s2", "theta", "z_p", "z1_p",
                "pi3", "b3")


def simulate_command(args) -> Path:
    params = {k: getattr(args, k) for k in DESIGN_FLAGS if getattr(args, k) is not None}
    design = TriangularDesign(z_law=args.z_law, **params)
    table = generate(design, args.n, args.seed)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path)
    return path


def _parser():
    p = argparse.ArgumentParser(prog="cfsf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def config_flags(sp):
        sp.add_argument("config", nargs="?", help="flat key = value config file")
        for name in KEYS.values():
            sp.add_argument("--" + name.replace("_", "-"), dest=name, metavar="VALUE")

    config_flags(sub.add_parser("estimate", help="estimate structural functions and bands"))
    config_flags(sub.add_parser("check", help="validate config and data, report ranks"))
    sim = sub.add_parser("simulate", help="write a simulated data set as CSV")
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output", "-o", required=True)
    sim.add_argument("--z-law", dest="z_law", default="standard_normal",
                     choices=("standard_normal", "bernoulli"))
    for name in DESIGN_FLAGS:
        sim.add_argument("--" + name.replace("_", "-"), dest=name, type=float)
    return p


def main(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="cfsf: %(message)s", stream=sys.stderr)
    try:
        if args.command == "simulate":
            print(simulate_command(args))
            return 0
        cfg = build_config(args, environ)
        if args.command == "check":
            print(json.dumps(check_command(cfg), indent=2))
            return 0
        report = run_pipeline(cfg)
        print(Path(cfg.output_dir) / "manifest.json")
        return report.exit_code
    except ValidationError as exc:
        print(f"cfsf: error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"cfsf: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
