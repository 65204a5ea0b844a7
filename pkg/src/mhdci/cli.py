"""Command-line entry point: configuration, runs, checkpoints, diagnostics and oracles.

Exit codes: 0 ok, 1 usage or configuration error, 2 regime failure under
strict_regime, 3 internal assertion.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import amplitudes, blocks, diagnostics, geometry, invdiv, iteration, params as params_mod, spectral
from .params import ParamSet

EXIT_OK, EXIT_USAGE, EXIT_REGIME, EXIT_INTERNAL = 0, 1, 2, 3

# desk defaults: everything fits on a 64^3 grid
DESK_PARAMS = {"block_lambda": 1, "lattice": "minimal"}


_UNHASHED = ("params", "output_dir", "dump_fields", "emit_vtk")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    params: ParamSet = field(default_factory=lambda: ParamSet(**DESK_PARAMS))
    strict_products: bool = False
    strict_regime: bool = False
    sampling: str = "bandlimited"
    output_dir: str = "mhdci_out"
    dump_fields: bool = True
    emit_vtk: bool = False
    tol_residual_factor: float = 10.0
    tol_identity: float = 1e-10
    tol_oracle_slope: float = 0.05

    def canonical(self):
        """Sorted key = value text of every setting that changes computed values.

        The output switches only decide what is written and are left out.
        q_max stays in: it fixes the padding of the level-0 time window.
        """
        items = dict(self.params.as_dict())
        for f in fields(self):
            if f.name not in _UNHASHED:
                items[f.name] = getattr(self, f.name)
        return "\n".join(f"{k} = {_fmt_value(v)}" for k, v in sorted(items.items())) + "\n"

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _fmt_value(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, int) and v.bit_length() > 1000:
        return hex(v)  # decimal conversion of huge integers is refused by Python
    return str(v)


_PARAM_TYPES = {"a": int, "b": int, "beta": float, "eta": float, "c_u": float, "c_B": float, "q_max": int,
                "grid_n": int, "time_n": int, "t_pad": float, "t_end": float, "strict": bool,
                "block_lambda": int, "lattice": str}
_RUN_TYPES = {"strict_products": bool, "strict_regime": bool, "sampling": str, "output_dir": str,
              "dump_fields": bool, "emit_vtk": bool, "tol_residual_factor": float, "tol_identity": float,
              "tol_oracle_slope": float}


def _parse(key, raw, typ):
    raw = raw.strip()
    if raw.lower() == "none" and key in ("t_pad", "block_lambda"):
        return None
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is int and "^" in raw:
            base, exp = raw.split("^", 1)
            return int(base) ** int(exp)
        return typ(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def config_from_text(text, overrides=None) -> RunConfig:
    """Flat key = value text (an optional [mhdci] section header is accepted).

    Integer keys also accept ``base^exponent`` so that regimes with huge a
    can be written down.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    body = text if text.lstrip().startswith("[") else "[mhdci]\n" + text
    try:
        cp.read_string(body)
    except configparser.Error as e:
        raise UsageError(f"malformed config: {e}") from None
    values = {}
    for sec in cp.sections():
        values.update(cp[sec])
    values.update(overrides or {})
    pvals, rvals = dict(DESK_PARAMS), {}
    for key, raw in values.items():
        if key in _PARAM_TYPES:
            pvals[key] = _parse(key, raw, _PARAM_TYPES[key])
        elif key in _RUN_TYPES:
            rvals[key] = _parse(key, raw, _RUN_TYPES[key])
        else:
            raise UsageError(f"unknown config key {key!r}")
    try:
        cfg = RunConfig(params=ParamSet(**pvals), **rvals)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if cfg.sampling not in ("bandlimited", "pointwise"):
        raise UsageError(f"sampling must be bandlimited or pointwise, got {cfg.sampling!r}")
    for name in ("tol_residual_factor", "tol_identity", "tol_oracle_slope"):
        if not getattr(cfg, name) > 0:
            raise UsageError(f"{name} must be positive")
    return cfg


def load_config(path, overrides=None) -> RunConfig:
    if path is None:
        return config_from_text("", overrides)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    return config_from_text(text, overrides)


def _prepare_output(cfg: RunConfig):
    d = cfg.output_dir
    try:
        os.makedirs(d, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=d):
            pass
    except OSError as e:
        raise UsageError(f"output_dir {d!r} is not writable: {e}") from None
    return d


# ---------------------------------------------------------------- validate

def nyquist_audit(cfg: RunConfig):
    """Rows (level, frame k, multiplier, kappa, harmonics, alias_free_squares, required_wavenumber)."""
    p = cfg.params
    grid = spectral.Grid3(p.grid_n)
    rows = []
    for q in range(p.q_max):
        try:
            lam, r, kappa = params_mod.block_scale(p, q)
        except ValueError as e:
            rows.append((q, "all", "-", "-", 0, False, str(e)))
            continue
        for f in geometry.all_frames():
            N = geometry.frame_multiplier(f, p.lattice)
            m = blocks.max_harmonic(f, N, kappa, grid, cfg.strict_products, True)
            clean = m >= 1
            if not clean:
                m = blocks.max_harmonic(f, N, kappa, grid, cfg.strict_products, False)
            top = max(abs(c) for c in f.lattice_vector(N))
            need = kappa * top * blocks.effective_bandwidth() / r
            rows.append((q, "(" + ",".join(str(c) for c in f.k) + ")", N, kappa, m, clean, f"{need:.4g}"))
    return rows


def format_table(head, rows):
    rows = [list(map(str, head))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)


def cmd_validate(cfg: RunConfig, out=sys.stdout):
    p = cfg.params
    failed = False
    out.write(f"config_hash = {cfg.config_hash}\n")
    for q in range(max(p.q_max, 1)):
        reps = params_mod.validate_regime(p, q)
        out.write(f"regime inequalities at q={q}\n{params_mod.format_reports(reps)}\n")
        failed |= any(not (r.symbolic_pass and r.numeric_pass) for r in reps)
    audit = nyquist_audit(cfg)
    out.write("block resolution audit\n")
    out.write(format_table(["q", "k", "N", "kappa", "harmonics", "alias_free_squares", "needed_wavenumber"],
                           audit) + "\n")
    if any(r[4] < 1 for r in audit):
        out.write("some frames cannot hold a single harmonic on this grid\n")
    if failed and cfg.strict_regime:
        return EXIT_REGIME
    return EXIT_OK


# ---------------------------------------------------------------- run / step / diagnose

def _write_level(cfg: RunConfig, s: iteration.State, directory):
    if cfg.dump_fields:
        iteration.save_checkpoint(s, os.path.join(directory, f"level_{s.q}"), cfg.config_hash, cfg.params)
    if cfg.emit_vtk:
        spectral.write_vtk(os.path.join(directory, f"level_{s.q}.vtk"),
                           {"u": s.u[-1], "B": s.B[-1], "p": s.p[-1]}, title=f"mhdci {cfg.config_hash} q={s.q}")


def _scalar_audits(rep):
    """Worst value over the time slices of every scalar audit of a step report."""
    if rep is None:
        return {}
    keys = sorted(k for k, v in rep.audits[0].items() if isinstance(v, (float, int)))
    return {k: float(rep.max_audit(k)) for k in keys}


def _emit_reports(cfg: RunConfig, states, directory, out):
    reports = []
    text = [f"config_hash = {cfg.config_hash}\n"]
    for s in states:
        rep = s.meta.get("report")
        margins = rep.margins if rep is not None else []
        audits = _scalar_audits(rep)
        d = diagnostics.diagnose(s, margins, audits, cfg.strict_products)
        reports.append(d)
        text.append(diagnostics.summary(d))
        res_ok = all(r["residual_u"] <= cfg.tol_residual_factor * r["residual_tol_u"]
                     and r["residual_B"] <= cfg.tol_residual_factor * r["residual_tol_B"] for r in d.rows)
        text.append(f"residuals within {cfg.tol_residual_factor:g} x tolerance: {'yes' if res_ok else 'no'}\n")
    diagnostics.write_csv(reports, os.path.join(directory, "diagnostics.csv"), cfg.config_hash)
    hel = diagnostics.helicity_growth_report(states, cfg.params)
    text.append("magnetic helicity against the level-0 closed form\n")
    text.append(format_table(hel.table()[0], hel.table()[1:]) + "\n")
    text.append(f"asymptotic deviation bound at a={cfg.params.a}: {hel.asymptotic_bound!r}\n")
    for k, v in hel.doubling.items():
        text.append(f"{k}: {v}\n")
    body = "".join(text)
    with open(os.path.join(directory, "summary.txt"), "w", newline="\n") as fh:
        fh.write(body)
    with open(os.path.join(directory, "config.txt"), "w", newline="\n") as fh:
        fh.write(f"# config_hash = {cfg.config_hash}\n" + cfg.canonical())
    out.write(body)
    return reports


def cmd_run(cfg: RunConfig, resume=None, out=sys.stdout):
    d = _prepare_output(cfg)
    p = cfg.params
    if resume is not None:
        s = iteration.load_checkpoint(resume)
        if s.meta.get("config_hash") != cfg.config_hash:
            raise UsageError(f"checkpoint {resume} was written with config {s.meta.get('config_hash')}, "
                             f"not {cfg.config_hash}")
        states = [s]
    else:
        times, _ = iteration.time_grid(p)
        states = [iteration.initial_state(p, times, spectral.Grid3(p.grid_n))]
        _write_level(cfg, states[0], d)
    while states[-1].q < p.q_max:
        q = states[-1].q
        try:
            new = iteration.step(states[-1], p, cfg.strict_products, cfg.sampling)
        except iteration.InternalError as e:
            raise iteration.InternalError(f"level {q} -> {q + 1}: {e}") from e
        except ValueError as e:
            raise UsageError(f"level {q} -> {q + 1}: {e}") from e
        states.append(new)
        _write_level(cfg, new, d)
    _emit_reports(cfg, states, d, out)
    return EXIT_OK


def cmd_step(cfg: RunConfig, checkpoint, out=sys.stdout):
    """One step from a checkpoint, regardless of q_max."""
    d = _prepare_output(cfg)
    s = iteration.load_checkpoint(checkpoint)
    new = iteration.step(s, cfg.params, cfg.strict_products, cfg.sampling)
    _write_level(cfg, new, d)
    rep = new.meta["report"]
    out.write(f"config_hash = {cfg.config_hash}\nstep {s.q} -> {new.q}\n")
    out.write(iteration.format_margins(rep.margins) + "\n")
    for k, v in _scalar_audits(rep).items():
        out.write(f"audit {k}: {v:.3e}\n")
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig, checkpoint, out=sys.stdout):
    s = iteration.load_checkpoint(checkpoint)
    rep = diagnostics.diagnose(s, strict_products=cfg.strict_products)
    path = os.path.join(_prepare_output(cfg), f"diagnose_level_{s.q}.csv")
    diagnostics.write_csv([rep], path, s.meta.get("config_hash", ""))
    out.write(diagnostics.summary(rep))
    return EXIT_OK


# ---------------------------------------------------------------- tables

def cmd_dump_tables(cfg: RunConfig, out=sys.stdout):
    def fr(v):
        return "(" + ", ".join(str(c) for c in v) + ")"

    out.write("skew frames (k, k1, k2, weight^2 at 0)\n")
    rows = [(fr(f.k), fr(f.k1), fr(f.k2), str(g)) for f, g in zip(geometry.lambda_B(), geometry.GAMMA_B_AT_ZERO)]
    out.write(format_table(["k", "k1", "k2", "gamma^2(0)"], rows) + "\n")
    out.write("symmetric frames (k, k1, k2, weight^2 at Id)\n")
    w = geometry.gamma_u(np.eye(3))
    rows = [(fr(f.k), fr(f.k1), fr(f.k2), f"{x:.12g}") for f, x in zip(geometry.lambda_u(), w)]
    out.write(format_table(["k", "k1", "k2", "gamma^2(Id)"], rows) + "\n")
    out.write("symmetric directions in set-builder form (match the k1 column up to sign)\n")
    for v in geometry.lambda_u_prose_directions():
        out.write(fr(v) + "\n")
    out.write(f"eps_B = {geometry.EPS_B!r}\neps_u = {geometry.eps_u()!r}\n")
    return EXIT_OK


# ---------------------------------------------------------------- oracles

@dataclass
class OracleResult:
    name: str
    measured: float
    expected: float
    tol: float

    @property
    def passed(self):
        return bool(abs(self.measured - self.expected) <= self.tol)

    def line(self):
        return f"{self.name} {self.measured!r} {self.expected!r} {self.tol!r} {'pass' if self.passed else 'FAIL'}"


def corrupted_skew_frames():
    """Skew frame table with k1 and k2 of one frame exchanged (harness self-test)."""
    fr = list(geometry.lambda_B())
    f = fr[3]
    fr[3] = geometry.WaveVectorFrame(f.k, f.k2, f.k1, f.set_tag)
    return tuple(fr)


def _band_limited_vector(rng, grid, kmax=4):
    fh = np.zeros((3,) + grid.shape, dtype=complex)
    idx = np.arange(-kmax, kmax + 1) % grid.n
    sub = np.ix_(idx, idx, idx)
    for c in range(3):
        fh[c][sub] = rng.normal(size=(len(idx),) * 3) + 1j * rng.normal(size=(len(idx),) * 3)
    v = spectral.ifft(fh, grid)
    return spectral.project_nonzero(v)


def oracle_suite(cfg: RunConfig | None = None, frames_B=None, seed=0, grid_n=32):
    """Every closed-form or independently computed check, as OracleResults."""
    cfg = cfg or RunConfig()
    tol = cfg.tol_identity
    rng = np.random.default_rng(seed)
    res = []
    fB = frames_B or geometry.lambda_B()

    A = geometry.random_skew(rng, 10000, radius=geometry.EPS_B)
    wB = geometry.gamma_B(A)
    res.append(OracleResult("geometry.skew_reconstruction",
                            float(np.max(np.abs(geometry.reconstruct_skew(wB, fB) - A))), 0.0, tol))
    res.append(OracleResult("geometry.skew_nonpositive_weights", float(np.sum(wB <= 0)), 0.0, 0.0))
    S = geometry.random_sym(rng, 10000, radius=geometry.eps_u())
    wU = geometry.gamma_u(S)
    res.append(OracleResult("geometry.sym_reconstruction",
                            float(np.max(np.abs(geometry.reconstruct_sym(wU) - S))), 0.0, tol))
    res.append(OracleResult("geometry.sym_nonpositive_weights", float(np.sum(wU <= 0)), 0.0, 0.0))
    zero = geometry.reconstruct_skew(np.array([float(g) for g in geometry.GAMMA_B_AT_ZERO]), fB)
    res.append(OracleResult("geometry.skew_weights_at_zero", float(np.max(np.abs(zero))), 0.0, tol))
    res.append(OracleResult("geometry.sym_weights_at_identity",
                            float(np.max(np.abs(geometry.gamma_u(np.eye(3)) - 0.5))), 0.0, tol))

    g = spectral.Grid3(grid_n)
    v = _band_limited_vector(rng, g)
    R = invdiv.inv_div_sym(v)
    res.append(OracleResult("invdiv.symmetric_identity", invdiv.divergence_defect(R, v), 0.0, tol))
    f = spectral.leray_project(_band_limited_vector(rng, g))
    RB = invdiv.inv_div_skew(f)
    res.append(OracleResult("invdiv.skew_identity", invdiv.divergence_defect(RB, f), 0.0, tol))

    prof = blocks.make_profile()
    l2 = blocks.norm_oracle_1d(prof, 16.0, 1.0, 2)
    res.append(OracleResult("blocks.shear_l2_squared_over_8pi3", l2 ** 2 / (8 * np.pi ** 3), 1.0, 1e-3))
    blk = blocks.sample_block(prof, geometry.lambda_B()[0], 4.0, 0.25, g, lattice="minimal", mode="bandlimited")
    res.append(OracleResult("blocks.bandlimited_mean_square", blk.info["mean_square"], 1.0, 1e-3))
    slopes = blocks.norm_slopes()
    worst_l = max(abs(sl[0] - M) for (p, M), sl in slopes.items())
    worst_r = max(abs(sl[1] - ((0.0 if p == np.inf else 1.0 / p) - 0.5)) for (p, M), sl in slopes.items())
    res.append(OracleResult("blocks.norm_slope_in_lambda_max_error", worst_l, 0.0, cfg.tol_oracle_slope))
    res.append(OracleResult("blocks.norm_slope_in_r_max_error", worst_r, 0.0, cfg.tol_oracle_slope))
    expo, _ = blocks.product_support_exponent()
    res.append(OracleResult("blocks.product_support_exponent", expo, 2.0, 0.1))

    x = g.coords()
    z = np.zeros(g.shape)
    a = np.sin(x[0]) + z
    rows = diagnostics.decorrelation_sweep(3.0 + z, geometry.lambda_B()[0], [4], g)
    res.append(OracleResult("decorrelation.constant_amplitude_ratio", rows[0].ratio, 1.0, tol))
    kap = min(16, g.n // 4)  # keeps kappa + 1 below Nyquist
    rows = diagnostics.decorrelation_sweep(a, geometry.lambda_B()[0], [kap], g)
    res.append(OracleResult(f"decorrelation.sin_amplitude_ratio_kappa{kap}", rows[0].ratio, 1.0, 0.05))
    rep = invdiv.commutator_gain_check(1.0 + z, lambda k: np.cos(k * x[0]) + z, [4, 8], 2)
    res.append(OracleResult("commutator.constant_amplitude_ratio", float(np.max(np.abs(rep.ratio - 1))), 0.0, tol))
    ks = [g.n // 8, g.n // 4, 3 * g.n // 8]
    rep = invdiv.commutator_gain_check(a, lambda k: np.cos(k * x[0]) + np.cos(k * x[1]) + z, ks, 2)
    res.append(OracleResult("commutator.decay_slope", rep.slope, -1.0, 0.1))

    Rs = 0.3 * geometry.random_skew(rng, 2000, radius=1.0)
    amp = amplitudes.magnetic_amplitudes(Rs, 0.5)
    res.append(OracleResult("amplitudes.magnetic_cancellation",
                            amplitudes.magnetic_cancellation_defect(amp, Rs), 0.0, tol))
    E = geometry.random_sym(rng, 2000, radius=1.0) - np.eye(3)[:, :, None]
    Ru = 0.3 * spectral.symmetric_traceless(E)
    ampu = amplitudes.velocity_amplitudes(Ru, amp.G, 0.5)
    res.append(OracleResult("amplitudes.velocity_cancellation",
                            amplitudes.velocity_cancellation_defect(ampu, Ru, amp.G), 0.0, tol))
    zz = np.linspace(1.0, 2.0, 100001)[1:-1]
    c = amplitudes.chi(zz)
    viol = float(np.sum((zz > 2 * c) | (2 * c > 4 * zz)))
    res.append(OracleResult("amplitudes.chi_sandwich_violations", viol, 0.0, 0.0))
    return res


def cmd_oracles(cfg: RunConfig, corrupt_frame=False, out=sys.stdout):
    frames = corrupted_skew_frames() if corrupt_frame else None
    results = oracle_suite(cfg, frames_B=frames)
    out.write(f"# config_hash = {cfg.config_hash}\n# name measured expected tolerance result\n")
    for r in results:
        out.write(r.line() + "\n")
    n_fail = sum(not r.passed for r in results)
    out.write(f"# {len(results) - n_fail} passed, {n_fail} failed\n")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser():
    ap = _Parser(prog="mhdci", description="Convex-integration iteration for relaxed ideal MHD on the 3-torus.")
    ap.add_argument("--config", help="flat key = value config file")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    ap.add_argument("--output-dir", help="override output_dir")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", help="regime inequalities and block resolution audit")
    p = sub.add_parser("run", help="initial state and q_max steps with checkpoints and diagnostics")
    p.add_argument("--resume", help="continue from a checkpoint directory")
    p = sub.add_parser("step", help="one step from a checkpoint")
    p.add_argument("checkpoint")
    p = sub.add_parser("oracles", help="run the oracle suite")
    p.add_argument("--corrupt-frame", action="store_true", help="self-test with a corrupted frame table")
    sub.add_parser("dump-tables", help="print the wavevector tables")
    p = sub.add_parser("diagnose", help="diagnostics of a checkpoint")
    p.add_argument("checkpoint")
    return ap


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v
        if args.output_dir:
            overrides["output_dir"] = args.output_dir
        cfg = load_config(args.config, overrides)
        if args.command == "validate":
            return cmd_validate(cfg, out)
        if args.command == "run":
            return cmd_run(cfg, args.resume, out)
        if args.command == "step":
            return cmd_step(cfg, args.checkpoint, out)
        if args.command == "oracles":
            return cmd_oracles(cfg, args.corrupt_frame, out)
        if args.command == "dump-tables":
            return cmd_dump_tables(cfg, out)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, args.checkpoint, out)
    except UsageError as e:
        sys.stderr.write(f"mhdci: {e}\n")
        return EXIT_USAGE
    except (iteration.InternalError, AssertionError) as e:
        sys.stderr.write(f"mhdci: internal assertion: {e}\n")
        return EXIT_INTERNAL
    return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
