"""Command-line front end.

Subcommands
-----------
synth            design a controller from a problem configuration
verify           sampled invariance, ISS, ISSf, embedding and homogeneity checks
simulate         closed-loop run written as CSV plus a plotting script
reproduce-paper  benchmark acceptance criteria

Exit codes: 0 success, 1 verification or run failure, 2 infeasible
synthesis, 3 input error.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .cone import ConeSpec, embedding_check, invariance_margin, iss_margin, issf_check
from .dilation import canonical_norm, check_field_homogeneity, dilate
from .exceptions import (ConeError, ConfigError, DilationError, IntegrationError,
                         NonovershootError, PlantError, SynthesisError)
from .simulation import PerturbationSpec, SimConfig, min_barrier, simulate
from .synthesis import HomogeneousController, LinearPlant, full_pipeline, lmi_residuals

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INFEASIBLE = 2
EXIT_INPUT = 3

ARTIFACT_FORMAT = "nonovershoot-controller/1"
ARTIFACT_NAME = "controller.txt"
REPORT_NAME = "verify_report.txt"
TRACE_NAME = "trace.csv"
PLOT_NAME = "plot_trace.py"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ProblemConfig:
    """Validated problem description."""

    plant: LinearPlant
    cone: ConeSpec
    rho: float = 4.0
    mu: float = -0.75
    gain: np.ndarray | None = None
    x0: np.ndarray | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    mixed: bool = False
    samples: int = 2048
    seed: int = 0
    issf_r: np.ndarray | None = None
    q_grid: np.ndarray = field(default_factory=lambda: np.linspace(-1.0, 1.0, 9))
    out: Path = Path("out")


def _matrix(data, name, shape=None):
    try:
        M = np.array(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not a numeric array") from exc
    if M.ndim == 1 and shape is not None and len(shape) == 2:
        M = M.reshape(1, -1) if shape[0] == 1 else M.reshape(-1, 1)
    if shape is not None:
        for want, got in zip(shape, M.shape):
            if want is not None and want != got:
                raise ConfigError(f"{name} has shape {M.shape}, expected {shape}")
        if M.ndim != len(shape):
            raise ConfigError(f"{name} has shape {M.shape}, expected {len(shape)} axes")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"{name} contains non-finite entries")
    return M


def _section(raw, key):
    sec = raw.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section '{key}' must be a mapping")
    return sec


def _pick(sec, key, conv, default, name):
    if key not in sec or sec[key] is None:
        return default
    try:
        return conv(sec[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is malformed: {sec[key]!r}") from exc


def parse_config(raw: dict) -> ProblemConfig:
    """Validate a configuration mapping (dimension checks run first)."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    plant_sec = _section(raw, "plant")
    if "A" not in plant_sec or "B" not in plant_sec:
        raise ConfigError("plant needs A and B")
    A = _matrix(plant_sec["A"], "plant.A", (None, None))
    n = A.shape[0]
    if A.shape != (n, n):
        raise ConfigError(f"plant.A must be square, got {A.shape}")
    B = _matrix(plant_sec["B"], "plant.B", (n, None))
    m = B.shape[1]
    cone_sec = _section(raw, "cone")
    if "H" not in cone_sec:
        raise ConfigError("cone needs H")
    H = _matrix(cone_sec["H"], "cone.H", (None, n))
    labels = cone_sec.get("labels")
    try:
        cone = ConeSpec(H, labels=tuple(labels) if labels else None)
    except ConeError as exc:
        raise ConfigError(f"cone.H: {exc}") from exc
    plant = LinearPlant(A, B)

    gain = raw.get("gain")
    gain = None if gain is None else _matrix(gain, "gain", (m, n))
    sim_sec = _section(raw, "sim")
    x0 = sim_sec.get("x0")
    x0 = None if x0 is None else _matrix(x0, "sim.x0", (n,))
    try:
        sim = SimConfig(t_final=_pick(sim_sec, "t_final", float, 10.0, "sim.t_final"),
                        rel_tol=_pick(sim_sec, "rel_tol", float, 1e-8, "sim.rel_tol"),
                        abs_tol=_pick(sim_sec, "abs_tol", float, 1e-10, "sim.abs_tol"),
                        stride=_pick(sim_sec, "stride", float, 1e-3, "sim.stride"),
                        origin_clamp=_pick(sim_sec, "origin_clamp", float, 1e-9,
                                           "sim.origin_clamp"),
                        method=_pick(sim_sec, "method", str, "dp45", "sim.method"))
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc
    pert = _parse_perturbation(_section(sim_sec, "perturbation"), n)
    samp = _section(raw, "sampling")
    issf_r = samp.get("issf_r")
    issf_r = None if issf_r is None else _matrix(issf_r, "sampling.issf_r", (cone.p,))
    q_grid = _matrix(samp.get("q_grid", np.linspace(-1.0, 1.0, 9)), "sampling.q_grid")
    cfg = ProblemConfig(
        plant=plant, cone=cone,
        rho=_pick(raw, "rho", float, 4.0, "rho"),
        mu=_pick(raw, "mu", float, -0.75, "mu"),
        gain=gain, x0=x0, sim=sim, perturbation=pert,
        mixed=bool(sim_sec.get("mixed", False)),
        samples=_pick(samp, "samples", int, 2048, "sampling.samples"),
        seed=_pick(samp, "seed", int, 0, "sampling.seed"),
        issf_r=issf_r, q_grid=q_grid.ravel(),
        out=Path(_pick(_section(raw, "output"), "dir", str, "out", "output.dir")))
    if cfg.samples < 1:
        raise ConfigError("sampling.samples must be positive")
    if not cfg.rho > 0.0:
        raise ConfigError("rho must be positive")
    return cfg


def _parse_perturbation(sec, n):
    kind = sec.get("kind", "none")
    kw = dict(kind=kind)
    for key in ("nu", "freq", "noise_magnitude", "additive_magnitude", "hold"):
        if key in sec:
            kw[key] = _pick(sec, key, float, None, f"perturbation.{key}")
    if "seed" in sec:
        kw["seed"] = _pick(sec, "seed", int, 0, "perturbation.seed")
    if "D" in sec:
        kw["D"] = _matrix(sec["D"], "perturbation.D", (n,))
    if "additive_direction" in sec:
        kw["additive_direction"] = _matrix(sec["additive_direction"],
                                           "perturbation.additive_direction", (n,))
    try:
        return PerturbationSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"perturbation: {exc}") from exc


def load_config(path) -> ProblemConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# Controller artifact
# ---------------------------------------------------------------------------

def _num(v: float) -> str:
    return "%.17g" % float(v)


def _emit_matrix(lines, name, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lines.append(f"  {name}:")
    lines.append(f"    shape: [{M.shape[0]}, {M.shape[1]}]")
    lines.append("    values: [" + ", ".join(_num(v) for v in M.ravel()) + "]")


def write_artifact(path, ctrl: HomogeneousController, cone: ConeSpec, tau, mu_range,
                   extra: dict | None = None):
    """Write the controller as a YAML-readable text document.

    Every matrix is listed with its shape and row-major values at 17
    significant digits.
    """
    G0 = ctrl.G0
    n = ctrl.plant.n
    Y0 = ctrl.K0 @ (G0 - np.eye(n))
    lines = [f"format: {ARTIFACT_FORMAT}",
             f"mu: {_num(ctrl.mu)}",
             f"tau: {_num(tau)}",
             f"mu_range: [{_num(mu_range[0])}, {_num(mu_range[1])}]"]
    for key, val in (extra or {}).items():
        lines.append(f"{key}: {_num(val)}")
    lines.append("matrices:")
    for name, M in (("A", ctrl.plant.A), ("B", ctrl.plant.B), ("H", cone.H),
                    ("K", ctrl.K), ("K0", ctrl.K0), ("G0", G0), ("Y0", Y0),
                    ("G_d", ctrl.dilation.generator), ("P", ctrl.dilation.weight)):
        _emit_matrix(lines, name, M)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_artifact(path):
    """Load an artifact written by :func:`write_artifact`.

    Returns
    -------
    (HomogeneousController, dict)
        The dict holds the scalar entries and every stored matrix.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"controller artifact not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != ARTIFACT_FORMAT:
        raise ConfigError(f"{path} is not a controller artifact")
    mats = {}
    try:
        for name, entry in doc["matrices"].items():
            vals = np.array([float(v) for v in entry["values"]])
            mats[name] = vals.reshape([int(k) for k in entry["shape"]])
        mu = float(doc["mu"])
        info = dict(mu=mu, tau=float(doc["tau"]),
                    mu_range=tuple(float(v) for v in doc["mu_range"]), matrices=mats)
        plant = LinearPlant(mats["A"], mats["B"])
        ctrl = HomogeneousController.build(plant, mats["K"], mats["K0"], mats["G0"], mu,
                                           mats["P"])
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"malformed controller artifact {path}: {exc}") from exc
    return ctrl, info


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _apply_overrides(cfg: ProblemConfig, args) -> ProblemConfig:
    if getattr(args, "mu", None) is not None:
        cfg.mu = args.mu
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "samples", None) is not None:
        if args.samples < 1:
            raise ConfigError("--samples must be positive")
        cfg.samples = args.samples
    if getattr(args, "out", None) is not None:
        cfg.out = Path(args.out)
    return cfg


def cmd_synth(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if not -1.0 <= cfg.mu < 0.0:
        raise ConfigError(f"mu = {cfg.mu} is outside [-1, 0)")
    if not cfg.cone.is_square:
        raise ConfigError("check failed: cone.H must be square")
    try:
        cfg.cone.inverse()
    except ConeError as exc:
        raise ConfigError(f"check failed: cone.H invertible ({exc})") from exc
    t0 = time.perf_counter()
    ctrl, report = full_pipeline(cfg.plant, cfg.cone, cfg.rho, cfg.mu,
                                 samples=cfg.samples, K=cfg.gain)
    hom = report.homogenization
    if report.linear is not None:
        print(f"linear gain: J = {report.linear.J:.6g} after "
              f"{report.linear.iterations} iterations")
    else:
        print("linear gain: taken from configuration")
    print(f"homogenization: residual {hom.residual:.3g}, tau {hom.tau:.6g}, "
          f"mu range [{hom.mu_range[0]:.6g}, {hom.mu_range[1]:.6g})")
    print("Lyapunov weight: " + ", ".join(f"{k} {v:.4g}" for k, v in report.lmi.items()))
    for m in report.margins:
        print(m.summary())
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / ARTIFACT_NAME
    write_artifact(path, ctrl, cfg.cone, hom.tau, hom.mu_range,
                   extra={"homogenization_residual": hom.residual})
    print(f"wrote {path} ({time.perf_counter() - t0:.2f} s)")
    return EXIT_OK


def _controller_path(args, cfg):
    return Path(args.controller) if args.controller else cfg.out / ARTIFACT_NAME


def _check_consistent(ctrl, cfg):
    if ctrl.plant.n != cfg.plant.n or ctrl.plant.m != cfg.plant.m:
        raise ConfigError("controller artifact and configuration have different dimensions")


def verify_controller(ctrl: HomogeneousController, cfg: ProblemConfig):
    """Run every sampled check; returns a list of (name, passed, text)."""
    cone, dil = cfg.cone, ctrl.dilation
    rows = []
    inv = invariance_margin(ctrl.field, dil, cone, cfg.samples, seed=cfg.seed)
    rows.append(("invariance", inv.passed, _margin_text(inv)))

    pert = cfg.perturbation
    if pert.kind == "state_multiplicative" and pert.D is not None:
        D, nu = np.asarray(pert.D, dtype=float), pert.nu

        def perturbed(z, q):
            return ctrl.field(z) + D * abs(q[0] * z[0]) ** nu

        iss = iss_margin(perturbed, dil, cone, cfg.q_grid, cfg.samples, seed=cfg.seed)
        rows.append(("iss", iss.passed, _margin_text(iss)))
    else:
        rows.append(("iss", True, "not applicable: no state-multiplicative perturbation"))

    if cfg.issf_r is not None:
        issf = issf_check(ctrl, cone, cfg.issf_r, cfg.samples, seed=cfg.seed)
        static = issf.details["static_certificate"]
        rows.append(("issf", issf.passed, _margin_text(issf)
                     + "\n  static certificate: " + " ".join(_num(v) for v in static)))
    else:
        rows.append(("issf", True, "not applicable: sampling.issf_r not given"))

    emb = embedding_check(cone, dil, ctrl.G0, samples=cfg.samples, seed=cfg.seed)
    if not emb.applicable:
        rows.append(("embedding", True, "not applicable: H(-G0)H^-1 is not Metzler"))
    else:
        text = f"{emb.samples} samples"
        if emb.counterexample is not None:
            text += "\n  witness: " + " ".join(_num(v) for v in emb.counterexample)
        rows.append(("embedding", emb.holds, text))

    hom = check_field_homogeneity(ctrl.field, dil, ctrl.mu,
                                  samples=max(8, min(64, cfg.samples)), seed=cfg.seed)
    text = f"worst residual {hom.margin:.3e} (tolerance {hom.tolerance:g})"
    rows.append(("field_homogeneity", hom.passed, text))

    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for x, s in zip(rng.standard_normal((200, cfg.plant.n)), rng.uniform(-3, 3, 200)):
        v = canonical_norm(dil, x).value
        worst = max(worst, abs(canonical_norm(dil, dilate(dil, s, x)).value
                               / (math.exp(s) * v) - 1.0))
    rows.append(("norm_homogeneity", worst <= 1e-9, f"worst relative error {worst:.3e}"))

    a, b, c = lmi_residuals(dil.weight, ctrl.closed_loop_matrix, dil.generator)
    rows.append(("lyapunov_weight", a < 0 < min(b, c),
                 f"max eig sym(P(A+BK)) {a:.4g}, min eig sym(P G_d) {b:.4g}, "
                 f"min eig P {c:.4g}"))
    return rows


def _margin_text(rep):
    text = (f"worst margin {rep.worst:+.6e} over {rep.samples} samples; per constraint "
            + " ".join(f"{v:+.4e}" for v in rep.per_constraint))
    if rep.witness is not None:
        text += "\n  witness: " + " ".join(_num(v) for v in rep.witness)
    return text


def cmd_verify(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    ctrl, _ = read_artifact(_controller_path(args, cfg))
    _check_consistent(ctrl, cfg)
    rows = verify_controller(ctrl, cfg)
    lines = []
    for name, ok, text in rows:
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {text}")
    doc = "\n".join(lines) + "\n"
    print(doc, end="")
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / REPORT_NAME).write_text(doc, encoding="utf-8")
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_FAILED


PLOT_SCRIPT = '''"""Plot a closed-loop trace written by ``nonovershoot simulate``.

Usage: python plot_trace.py [trace.csv] [figure.png]
"""
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

src = sys.argv[1] if len(sys.argv) > 1 else "trace.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "trace.png"
with open(src, newline="") as fh:
    rows = list(csv.reader(fh))
head, data = rows[0], [[float(v) for v in r] for r in rows[1:]]
cols = {name: [r[k] for r in data] for k, name in enumerate(head)}
groups = [("x", "state"), ("u", "input"), ("phi", "barrier")]
fig, axes = plt.subplots(len(groups) + 1, 1, sharex=True, figsize=(7, 9))
for ax, (prefix, label) in zip(axes, groups):
    for name in head:
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            ax.plot(cols["t"], cols[name], label=name)
    ax.set_ylabel(label)
    ax.legend(loc="upper right")
    ax.grid(True)
axes[-1].semilogy(cols["t"], [max(v, 1e-16) for v in cols["homnorm"]])
axes[-1].set_ylabel("homogeneous norm")
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(dst)
'''


def write_trace_csv(path, trace):
    """Locale-independent CSV with ``repr``-exact floats."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace.columns())
        for row in trace.table():
            w.writerow([repr(float(v)) for v in row])


def cmd_simulate(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    ctrl, _ = read_artifact(_controller_path(args, cfg))
    _check_consistent(ctrl, cfg)
    if cfg.x0 is None:
        raise ConfigError("sim.x0 is required for simulate")
    pert = cfg.perturbation
    if args.seed is not None:
        pert = replace(pert, seed=args.seed)
    try:
        trace = simulate(cfg.plant, ctrl, cfg.x0, cfg.sim, pert, cfg.cone, mixed=cfg.mixed)
    except IntegrationError as exc:
        print(f"integration failed at t = {exc.t}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(cfg.out / TRACE_NAME, trace)
    (cfg.out / PLOT_NAME).write_text(PLOT_SCRIPT, encoding="utf-8")
    mb = min_barrier(trace)
    print(f"{len(trace.times)} samples, clamped at {trace.clamped_at}, "
          f"sup |x| {np.max(np.linalg.norm(trace.states, axis=1)):.6g}")
    print("min barrier: " + " ".join(f"{v:.6g}" for v in mb))
    print(f"wrote {cfg.out / TRACE_NAME} and {cfg.out / PLOT_NAME}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from .acceptance import CRITERIA, Runs, run_criteria

    if args.list:
        for key, title, _ in CRITERIA:
            print(f"{key} {title}")
        return EXIT_OK
    results = run_criteria(Runs(seed=args.seed or 0))
    for r in results:
        print(r.line())
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_FAILED


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonovershoot",
        description="Nonovershooting homogeneous state feedback: design, check, simulate.",
        epilog="exit codes: 0 success, 1 verification or run failure, "
               "2 infeasible synthesis, 3 input error")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="problem configuration (YAML)")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="sampling / noise seed")
        p.add_argument("--samples", type=int, help="samples per boundary slice")

    p = sub.add_parser("synth", help="design a controller")
    common(p)
    p.add_argument("--mu", type=float, help="homogeneity degree (overrides mu)")
    p.set_defaults(func=cmd_synth)
    p = sub.add_parser("verify", help="run the sampled certificates")
    common(p)
    p.add_argument("--controller", help=f"artifact path (default OUT/{ARTIFACT_NAME})")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("simulate", help="closed-loop run to CSV")
    common(p)
    p.add_argument("--controller", help=f"artifact path (default OUT/{ARTIFACT_NAME})")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("reproduce-paper", help="benchmark acceptance criteria")
    p.add_argument("--list", action="store_true", help="list the criteria without running")
    p.add_argument("--seed", type=int, help="noise seed")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except SynthesisError as exc:
        stage = f" [{exc.stage}]" if exc.stage else ""
        print(f"infeasible{stage}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, PlantError, ConeError, DilationError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NonovershootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
