"""Command-line interface.

Subcommands emit CSV (single header row) or JSON (``params``, ``rows``,
``diagnostics``). When ``--out`` is given, a JSON sidecar ``<out>.meta.json``
records every parameter and the build version. Relative output paths are
resolved under ``$PHASECAP_OUTPUT_DIR`` when that variable is set.

Exit codes: 0 success, 2 usage error, 3 solver or convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import (
    capacity_fixed_gain,
    capacity_rician_noncoherent,
    ergodic_capacity_csir,
    ergodic_capacity_phase_only,
    ktc_check,
    mutual_information,
    optimal_psk_input,
)
from .exceptions import ConvergenceError, DomainError, SolverError
from .mc_sim import (
    SimConfig,
    empirical_mutual_information,
    gaussian_input_rate,
    mutual_information_stderr,
    sample_channel,
)
from .models import FixedGain, InputDistribution, NoncoherentRician, RayleighCSIR, RayleighCSIT
from .phase_quantizer import DEFAULT_QUADRATURE, QuantizerConfig
from .power_control import ergodic_capacity_csit, solve_power_policy

OUTPUT_DIR_ENV = "PHASECAP_OUTPUT_DIR"
EXIT_USAGE = 2
EXIT_SOLVER = 3
CIRCLE_ORDER = 1024


class UsageError(Exception):
    """Invalid combination of command-line options."""


@dataclass(frozen=True)
class SweepSpec:
    """Evaluation grid ``start .. stop`` with ``steps`` points."""

    variable: str
    start: float
    stop: float
    steps: int
    scale: str = "linear"

    def __post_init__(self):
        if self.variable not in ("snr_db", "gain_sq", "theta"):
            raise UsageError(f"unknown sweep variable {self.variable!r}")
        if not self.start < self.stop:
            raise UsageError("sweep needs start < stop")
        if self.steps < 2:
            raise UsageError("sweep needs at least 2 steps")
        if self.scale not in ("linear", "log"):
            raise UsageError("sweep scale must be linear or log")
        if self.scale == "log" and self.start <= 0:
            raise UsageError("log sweep needs start > 0")

    @classmethod
    def parse(cls, variable, text):
        parts = text.split(":")
        if len(parts) not in (3, 4):
            raise UsageError(f"sweep {text!r} must be START:STOP:STEPS[:linear|log]")
        try:
            start, stop, steps = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise UsageError(f"bad sweep {text!r}: {exc}") from None
        return cls(variable, start, stop, steps, parts[3] if len(parts) == 4 else "linear")

    def values(self):
        if self.scale == "log":
            return np.geomspace(self.start, self.stop, self.steps)
        return np.linspace(self.start, self.stop, self.steps)


def git_describe():
    """``git describe`` of the source tree, or the package version outside git."""
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return res.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


# ----------------------------------------------------------------- helpers

def _g_los(args):
    return args.g_los_mag * complex(math.cos(math.radians(args.g_los_deg)),
                                    math.sin(math.radians(args.g_los_deg)))


def _snr_grid(args):
    if args.sweep is not None and args.snr_db is not None:
        raise UsageError("give either --snr-db or --sweep, not both")
    if args.sweep is not None:
        return [float(v) for v in SweepSpec.parse("snr_db", args.sweep).values()]
    if args.snr_db is None:
        raise UsageError("one of --snr-db or --sweep is required")
    return [float(v) for v in args.snr_db]


def _single_snr(args):
    if args.snr_db is None:
        raise UsageError("--snr-db is required")
    return args.snr_db


def _power(snr_db, noise_power):
    return 10.0 ** (snr_db / 10.0) * noise_power


def _parse_psk(text, bits, g_los):
    """``psk:M[:BETA]`` with ``BETA`` in radians or ``optimal``."""
    parts = text.split(":")
    if parts[0] != "psk" or len(parts) not in (2, 3):
        raise UsageError(f"bad PSK scheme {text!r}; use psk:M[:beta|optimal]")
    try:
        order = int(parts[1])
    except ValueError:
        raise UsageError(f"bad PSK order in {text!r}") from None
    if order < 1:
        raise UsageError("PSK order must be >= 1")
    beta = parts[2] if len(parts) == 3 else "0"
    if beta == "optimal":
        return lambda P: (optimal_psk_input(P, g_los, bits) if order == 2 ** bits
                          else InputDistribution.psk(order, P, math.pi / order - np.angle(g_los)))
    try:
        offset = float(beta)
    except ValueError:
        raise UsageError(f"bad PSK offset in {text!r}") from None
    return lambda P: InputDistribution.psk(order, P, offset)


def _parse_input(text, bits, g_los):
    """Input spec for ``simulate``: ``psk:...`` or ``point:AMPLITUDE:PHASE``."""
    if text.startswith("psk:"):
        return _parse_psk(text, bits, g_los)
    parts = text.split(":")
    if parts[0] == "point" and len(parts) == 3:
        try:
            amp, phase = float(parts[1]), float(parts[2])
        except ValueError:
            raise UsageError(f"bad point input {text!r}") from None
        return lambda P: InputDistribution.from_arrays(amp, phase, 1.0)
    raise UsageError(f"bad input {text!r}; use psk:M[:beta|optimal] or point:AMP:PHASE")


def _run_parallel(func, items, workers):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, items))
    return [func(it) for it in items]


# ---------------------------------------------------------------- commands

def _capacity_point(job):
    model, bits, snr_db, sigma_sq, g_los, gamma_sq = job
    P = _power(snr_db, sigma_sq)
    if model == "fixed":
        return capacity_fixed_gain(P, sigma_sq, g_los, bits)
    if model == "rician":
        return capacity_rician_noncoherent(P, sigma_sq, g_los, gamma_sq, bits)
    if model == "csir":
        return ergodic_capacity_csir(P, sigma_sq, gamma_sq, bits)
    if model == "csit":
        return ergodic_capacity_csit(P, sigma_sq, gamma_sq, bits)
    if model == "csit-phase":
        return ergodic_capacity_phase_only(P, sigma_sq, gamma_sq, bits)
    raise UsageError(f"unknown model {model!r}")


def cmd_capacity(args):
    g_los = _g_los(args)
    gamma_sq = args.gamma_sq
    if args.kappa is not None:
        if args.model != "rician":
            raise UsageError("--kappa only applies to --model rician")
        if args.kappa <= 0:
            raise UsageError("--kappa must be > 0")
        gamma_sq = abs(g_los) ** 2 / args.kappa
    if args.model == "rician" and gamma_sq is None:
        raise UsageError("--model rician needs --gamma-sq or --kappa")
    if args.model in ("csir", "csit", "csit-phase") and gamma_sq is None:
        gamma_sq = 1.0
    snrs = _snr_grid(args)
    jobs = [(args.model, args.bits, s, args.noise_power, g_los, gamma_sq) for s in snrs]
    caps = _run_parallel(_capacity_point, jobs, args.workers)
    params = {"model": args.model, "gamma_sq": gamma_sq}
    return ["snr_db", "capacity_bits"], [[s, c] for s, c in zip(snrs, caps)], params, {}


def _rate_point(job):
    scheme, bits, snr_db, sigma_sq, g_los, samples, seed = job
    P = _power(snr_db, sigma_sq)
    if scheme == "gaussian":
        rate, se = gaussian_input_rate(P / sigma_sq, bits, samples, seed, g_los=g_los)
        return rate, se
    if scheme == "circle":
        dist = InputDistribution.psk(CIRCLE_ORDER, P)
    else:
        dist = _parse_psk(scheme, bits, g_los)(P)
    return mutual_information(dist, FixedGain(sigma_sq, g_los), bits), 0.0


def cmd_rates(args):
    g_los = _g_los(args)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    if not schemes:
        raise UsageError("--schemes is empty")
    for s in schemes:
        if s not in ("circle", "gaussian"):
            _parse_psk(s, args.bits, g_los)
    if "gaussian" in schemes and args.seed is None:
        raise UsageError("the gaussian scheme is randomized and needs --seed")
    snrs = _snr_grid(args)
    jobs = [(sc, args.bits, s, args.noise_power, g_los, args.samples, args.seed)
            for s in snrs for sc in schemes]
    res = _run_parallel(_rate_point, jobs, args.workers)
    rows = [[j[2], j[0], r, se] for j, (r, se) in zip(jobs, res)]
    return ["snr_db", "scheme", "rate_bits", "stderr"], rows, {"schemes": schemes}, {}


def cmd_power_policy(args):
    P = _power(_single_snr(args), args.noise_power)
    policy = solve_power_policy(P, args.noise_power, args.gamma_sq, args.bits)
    grid = SweepSpec.parse("gain_sq", args.gain_sq_range).values()
    power = policy.evaluate(grid)
    rows = [[float(g), float(p)] for g, p in zip(grid, power)]
    diag = {"eta": policy.eta, "cutoff_gain_sq": policy.cutoff_gain_sq,
            "constraint_residual": policy.constraint_residual,
            "relative_residual": policy.constraint_residual / P}
    print(f"eta={policy.eta:.12g} cutoff_gain_sq={policy.cutoff_gain_sq:.12g} "
          f"relative_residual={diag['relative_residual']:.3g}", file=sys.stderr)
    return ["gain_sq", "allocated_power"], rows, {}, diag


def cmd_ktc(args):
    g_los = _g_los(args)
    P = _power(_single_snr(args), args.noise_power)
    alphas = (SweepSpec.parse("gain_sq", args.alpha_grid).values() if args.alpha_grid
              else np.linspace(0.0, 4.0 * P, 200))
    betas = (SweepSpec.parse("theta", args.beta_grid).values() if args.beta_grid
             else np.linspace(-math.pi, math.pi, 256, endpoint=False))
    dist = optimal_psk_input(P, g_los, args.bits)
    rep = ktc_check(dist, P, args.noise_power, g_los, args.bits, alphas, betas)
    rows = [[float(a), float(b), float(rep.slack[i, j])]
            for i, a in enumerate(rep.alphas) for j, b in enumerate(rep.betas)]
    diag = {"mu": rep.mu, "capacity": rep.capacity, "min_slack": rep.grid_min_slack,
            "slack_at_masspoints": rep.slack_at_masspoints,
            "num_violations": len(rep.violating_points)}
    print(f"min slack: {rep.grid_min_slack:.3e}", file=sys.stderr)
    for p, s in zip(dist, rep.slack_at_masspoints):
        print(f"mass point alpha={p.power:.6g} beta={p.phase:+.6f}: slack {s:+.3e}",
              file=sys.stderr)
    return ["alpha", "beta", "slack"], rows, {}, diag


def cmd_simulate(args):
    if args.seed is None:
        raise UsageError("simulate is randomized and needs --seed")
    g_los = _g_los(args)
    sigma_sq = args.noise_power
    make_input = _parse_input(args.input, args.bits, g_los)
    if args.input.startswith("psk:"):
        dist = make_input(_power(_single_snr(args), sigma_sq))
    else:
        dist = make_input(None)
    gamma_sq = 1.0 if args.gamma_sq is None else args.gamma_sq
    if args.model == "fixed":
        model = FixedGain(sigma_sq, g_los)
    elif args.model == "rician":
        model = NoncoherentRician(sigma_sq, g_los, gamma_sq)
    elif args.model == "csir":
        model = RayleighCSIR(sigma_sq, gamma_sq)
    else:
        model = RayleighCSIT(sigma_sq, gamma_sq)
    cfg = SimConfig(args.seed, args.samples, model, dist, QuantizerConfig(args.bits))
    hist = sample_channel(cfg, workers=args.workers)
    counts = hist.counts.reshape(-1, *hist.counts.shape[-2:])
    rows = [[s, i, y, int(counts[s, i, y])]
            for s in range(counts.shape[0]) for i in range(counts.shape[1])
            for y in range(counts.shape[2])]
    mi = empirical_mutual_information(hist)
    se = mutual_information_stderr(hist)
    print(f"plug-in MI {mi:.6f} bits (stderr {se:.2e})", file=sys.stderr)
    return (["stratum", "input", "output", "count"], rows, {"gamma_sq": gamma_sq},
            {"mutual_information": mi, "stderr": se, "total": hist.total})


# ------------------------------------------------------------------ output

def _format_cell(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render(fmt, header, rows, params, diagnostics):
    if fmt == "json":
        body = {"params": params, "rows": [dict(zip(header, r)) for r in rows],
                "diagnostics": diagnostics}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        writer.writerow([_format_cell(v) for v in r])
    return buf.getvalue()


def _resolve_out(path):
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _collect_params(args):
    skip = {"func", "config", "out", "format", "workers"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ------------------------------------------------------------------ parser

def _add_common(p, snr=True, sweep=True):
    p.add_argument("--bits", type=int, default=3, help="quantizer resolution b")
    p.add_argument("--noise-power", type=float, default=1.0, help="sigma^2")
    p.add_argument("--g-los-mag", type=float, default=1.0, help="|g_los|")
    p.add_argument("--g-los-deg", type=float, default=0.0, help="angle of g_los in degrees")
    if snr:
        p.add_argument("--snr-db", type=float, nargs="+" if sweep else None,
                       default=None, help="P / sigma^2 in dB")
    if sweep:
        p.add_argument("--sweep", default=None, metavar="START:STOP:STEPS[:log]",
                       help="SNR grid in dB")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--workers", type=int, default=1, help="parallel processes")
    p.add_argument("--config", default=None, help="key=value file with defaults")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phasecap", description="Capacity of channels with b-bit phase quantization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="capacity or ergodic capacity vs SNR")
    _add_common(p)
    p.add_argument("--model", choices=("fixed", "rician", "csir", "csit", "csit-phase"),
                   default="fixed")
    p.add_argument("--gamma-sq", type=float, default=None, help="scattered power gamma^2")
    p.add_argument("--kappa", type=float, default=None, help="Rician factor (rician only)")
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("rates", help="information rates of PSK / circle / Gaussian inputs")
    _add_common(p)
    p.add_argument("--schemes", default="psk:8:optimal,psk:4,psk:16,circle",
                   help="comma list of psk:M[:beta|optimal], circle, gaussian")
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("power-policy", help="optimal CSIT power allocation vs |g|^2")
    _add_common(p, sweep=False)
    p.add_argument("--gamma-sq", type=float, default=1.0)
    p.add_argument("--gain-sq-range", default="0:5:201", metavar="START:STOP:STEPS[:log]")
    p.set_defaults(func=cmd_power_policy)

    p = sub.add_parser("ktc", help="Kuhn-Tucker slack surface of the optimal PSK")
    _add_common(p, sweep=False)
    p.add_argument("--alpha-grid", default=None, metavar="START:STOP:STEPS")
    p.add_argument("--beta-grid", default=None, metavar="START:STOP:STEPS")
    p.set_defaults(func=cmd_ktc)

    p = sub.add_parser("simulate", help="Monte Carlo joint histogram and plug-in MI")
    _add_common(p, sweep=False)
    p.add_argument("--model", choices=("fixed", "rician", "csir", "csit"), default="fixed")
    p.add_argument("--gamma-sq", type=float, default=None)
    p.add_argument("--input", default="psk:8:optimal",
                   help="psk:M[:beta|optimal] or point:AMP:PHASE")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def _read_config(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key.replace("-", "_")] = val
    return values


_RANGE_FLAGS = ("--sweep", "--gain-sq-range", "--alpha-grid", "--beta-grid")


def _join_range_values(argv):
    """Attach range values to their flag so ``--sweep -10:20:7`` parses."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _RANGE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` so flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = _read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        act = actions.get(key)
        if act is None or key in ("config", "help"):
            raise UsageError(f"unknown config key {key!r}")
        conv = act.type or str
        if act.nargs == "+":
            defaults[key] = [conv(v) for v in raw.split()]
        else:
            defaults[key] = conv(raw)
        if act.choices is not None and defaults[key] not in act.choices:
            raise UsageError(f"config value {raw!r} not allowed for {key}")
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    argv = _join_range_values(sys.argv[1:] if argv is None else list(argv))
    try:
        args = _apply_config(parser, argv)
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        header, rows, extra, diag = args.func(args)
    except (UsageError, DomainError, OSError) as exc:
        print(f"phasecap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ConvergenceError) as exc:
        print(f"phasecap: solver failure: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace:
            print(f"bracket trace: {trace}", file=sys.stderr)
        return EXIT_SOLVER

    params = _collect_params(args)
    params.update(extra)
    params["tolerances"] = {"abs_tol": DEFAULT_QUADRATURE.abs_tol,
                            "rel_tol": DEFAULT_QUADRATURE.rel_tol,
                            "max_subdivisions": DEFAULT_QUADRATURE.max_subdivisions}
    params["version"] = git_describe()
    text = render(args.format, header, rows, params, diag)
    if args.out is None:
        sys.stdout.write(text)
        return 0
    out = _resolve_out(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    meta = {"command": args.command, "params": params, "diagnostics": diag}
    Path(str(out) + ".meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
