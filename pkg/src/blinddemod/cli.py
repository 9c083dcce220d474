"""Command-line interface.

Subcommands: ``synth``, ``solve``, ``cert``, ``experiment``, ``doa``.  Every
subcommand accepts ``--seed``, ``--out-dir``, ``--workers`` and ``--config``;
the config file is INI-style with one section per subcommand (plus an optional
``[global]`` section) and command-line flags override it.

Exit codes: 0 success, 1 input error, 2 computation flagged (solver did not
converge, or certificate conditions failed).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certificates import certify, gamma_bound
from .ensembles import (
    NoiseSpec,
    dft_subspace,
    instance_seeds,
    make_dictionary,
    make_instance,
)
from .experiments import (
    NOISE_HEADER,
    PHASE_HEADER,
    PRESETS,
    DoaConfig,
    doa_gnuplot,
    noise_gnuplot,
    noise_preset,
    phase_gnuplot,
    phase_preset,
    run_doa_demo,
    run_noise_curve,
    run_phase_transition,
    success_test,
    write_csv,
)
from .extraction import extract_parameters
from .operators import Dictionary, MeasurementOperator, SubspaceBasis, operator_norm_estimate
from .solver import SolverConfig, solve_noisy, solve_regularized
from .textio import format_value, read_matrix, write_kv, write_matrix

log = logging.getLogger("blinddemod")

EXIT_OK, EXIT_INPUT, EXIT_FLAGGED = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the input-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


_FMT = argparse.ArgumentDefaultsHelpFormatter


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed")
    g.add_argument("--out-dir", default=".", help="directory for output files")
    g.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    g.add_argument("--config", default=None, help="INI config file (flags override it)")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    d = SolverConfig()
    g = p.add_argument_group("solver")
    g.add_argument("--rho", type=float, default=d.rho, help="ADMM penalty")
    g.add_argument("--tol-abs", type=float, default=d.tol_abs, help="absolute tolerance")
    g.add_argument("--tol-rel", type=float, default=d.tol_rel, help="relative tolerance")
    g.add_argument("--max-iter", type=int, default=d.max_iter, help="iteration cap")
    g.add_argument("--over-relaxation", type=float, default=d.over_relaxation,
                   help="relaxation factor in [1, 1.8]")
    g.add_argument("--adaptive-rho", action=argparse.BooleanOptionalAction, default=d.adaptive_rho,
                   help="residual balancing of rho")


def _solver_config(a) -> SolverConfig:
    return SolverConfig(rho=a.rho, tol_abs=a.tol_abs, tol_rel=a.tol_rel, max_iter=a.max_iter,
                        over_relaxation=a.over_relaxation, adaptive_rho=a.adaptive_rho)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blinddemod", description=__doc__.split("\n\n")[0], formatter_class=_FMT)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="sample an instance", formatter_class=_FMT)
    p.add_argument("--ensemble", choices=("gaussian", "fourier"), default="gaussian")
    p.add_argument("-N", type=int, default=40, help="number of measurements")
    p.add_argument("-M", type=int, default=60, help="number of atoms")
    p.add_argument("-K", type=int, default=3, help="subspace dimension")
    p.add_argument("-J", type=int, default=2, help="number of active atoms")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--eta", type=float, default=None, help="noise l2 norm")
    noise.add_argument("--nsr-db", type=float, default=None, help="noise-to-signal ratio in dB")
    p.add_argument("--write-operator", action="store_true", help="also write A and B")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="recover X from measurements", formatter_class=_FMT)
    p.add_argument("--measurements", default=None, help="measurement file [out-dir/measurements.txt]")
    p.add_argument("--truth", default=None, help="ground-truth file for the success test")
    p.add_argument("--dictionary", default=None, help="explicit dictionary file (else regenerated)")
    p.add_argument("--basis", default=None, help="explicit basis file (else DFT subspace)")
    p.add_argument("--mode", choices=("noiseless", "noisy", "regularized"), default=None,
                   help="program to solve [noisy if --eta given, regularized if --lambda given]")
    p.add_argument("--eta", type=float, default=None, help="noise budget [from the measurement file]")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="regularization weight")
    p.add_argument("--threshold", type=float, default=1e-3, help="relative support threshold")
    p.add_argument("--success-threshold", type=float, default=1e-5, help="relative error for success")
    _solver_flags(p)
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("cert", help="verify recovery certificates", formatter_class=_FMT)
    p.add_argument("--truth", default=None, help="ground-truth file [out-dir/truth.txt]")
    p.add_argument("--dictionary", default=None, help="explicit dictionary file (else regenerated)")
    p.add_argument("--basis", default=None, help="explicit basis file (else DFT subspace)")
    p.add_argument("--method", choices=("ls", "golfing"), default="ls")
    p.add_argument("-P", type=int, default=None, help="golfing rounds [smallest admissible]")
    p.add_argument("--gamma", type=float, default=None, help="operator-norm bound [analytic]")
    p.add_argument("--estimate-norm", action="store_true", help="also estimate ||L|| by power iteration")
    p.add_argument("--partition-attempts", type=int, default=50, help="golfing partition resampling budget")
    _common(p)
    p.set_defaults(func=cmd_cert)

    p = sub.add_parser("experiment", help="run a Monte-Carlo study", formatter_class=_FMT)
    p.add_argument("name", choices=PRESETS, help="study to run")
    p.add_argument("--preset", choices=("desk", "paper"), default="desk", help="problem scale")
    p.add_argument("--ensemble", choices=("gaussian", "fourier", "both"), default="gaussian")
    p.add_argument("--trials", type=int, default=None, help="trials per cell [20 desk, 40 paper]")
    p.add_argument("--nsr-db", type=float, nargs="+", default=None,
                   help="NSR grid for the noise study [-60 ... 20 step 10]")
    _solver_flags(p)
    _common(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("doa", help="direction-of-arrival demo", formatter_class=_FMT)
    d = DoaConfig()
    p.add_argument("-N", type=int, default=d.N, help="array elements")
    p.add_argument("-K", type=int, default=d.K, help="calibration subspace dimension")
    p.add_argument("--angles", type=int, nargs="+", default=list(d.angles), help="source angles (deg)")
    p.add_argument("--snr-db", type=float, default=d.snr_db, help="20 log10(||L(X0)|| / ||n||)")
    p.add_argument("--draws", type=int, default=d.draws, help="noise draws")
    p.add_argument("--baseline", action="store_true", help="also run the shared-calibration l1 baseline")
    _solver_flags(p)
    _common(p)
    p.set_defaults(func=cmd_doa)
    return parser


# -- config file --------------------------------------------------------------

def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    path = Path(known.config)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    ini = configparser.ConfigParser()
    ini.optionxform = str  # keys such as N and n differ
    try:
        ini.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise InputError(f"cannot parse {path}: {exc}") from None
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name, sp in subparsers.choices.items():
        values = {}
        for section in ("global", name):
            if ini.has_section(section):
                values.update(ini.items(section))
        if not values:
            continue
        actions = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, raw in values.items():
            dest = key.replace("-", "_")
            dest = {"lambda": "lam"}.get(dest, dest)
            if dest not in actions:
                if ini.has_section(name) and key in ini[name]:
                    raise InputError(f"{path}: unknown key {key!r} in [{name}]")
                continue
            defaults[dest] = _convert(actions[dest], raw, path, key)
        sp.set_defaults(**defaults)


def _convert(action: argparse.Action, raw: str, path, key):
    try:
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction,
                               argparse.BooleanOptionalAction)):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        conv = action.type or str
        if action.nargs in ("+", "*"):
            return [conv(tok) for tok in raw.replace(",", " ").split()]
        val = conv(raw.strip())
        if action.choices is not None and val not in action.choices:
            raise ValueError(f"{val!r} not in {list(action.choices)}")
        return val
    except ValueError as exc:
        raise InputError(f"{path}: bad value for {key}: {exc}") from None


# -- helpers ------------------------------------------------------------------

def _out(a, name: str) -> Path:
    d = Path(a.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def _read(path) -> tuple[np.ndarray, dict]:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {p}")
    try:
        return read_matrix(p)
    except ValueError as exc:
        raise InputError(f"{p}: {exc}") from None


def _meta_int(meta: dict, key: str, path) -> int:
    try:
        return int(meta[key])
    except (KeyError, ValueError):
        raise InputError(f"{path}: header field {key!r} missing or not an integer") from None


def _operator(a, meta: dict, path) -> MeasurementOperator:
    """Operator from explicit files, or regenerated from the instance header."""
    N, M, K = (_meta_int(meta, k, path) for k in ("N", "M", "K"))
    if a.dictionary:
        A, _ = _read(a.dictionary)
        A = A.real if not np.any(A.imag) else A
        dictionary = Dictionary(A)
    else:
        ens = meta.get("ensemble")
        if ens not in ("gaussian", "fourier"):
            raise InputError(f"{path}: no ensemble in header; pass --dictionary")
        seed = _meta_int(meta, "seed", path)
        dictionary = make_dictionary(ens, N, M, instance_seeds(seed)[0])
    if a.basis:
        B, _ = _read(a.basis)
        basis = SubspaceBasis(B, tol=1e-10)
    else:
        basis = dft_subspace(N, K)
    op = MeasurementOperator(dictionary, basis)
    if (op.N, op.M, op.K) != (N, M, K):
        raise InputError(f"operator is {(op.N, op.M, op.K)} but {path} says {(N, M, K)}")
    return op


def _header(a, extra: dict | None = None) -> list[str]:
    skip = {"func", "workers", "config", "verbose", "out_dir"} | set(extra or {})
    keys = sorted(k for k in vars(a) if k not in skip)
    lines = [f"{k} = {format_value(getattr(a, k))}" for k in keys]
    return ["effective configuration:"] + lines + [f"{k} = {format_value(v)}" for k, v in (extra or {}).items()]


# -- commands -----------------------------------------------------------------

def cmd_synth(a) -> int:
    if not 0 < a.K < a.N < a.M:
        raise InputError(f"need 0 < K < N < M, got N={a.N}, M={a.M}, K={a.K}")
    if not 0 <= a.J <= a.M:
        raise InputError(f"need 0 <= J <= M, got J={a.J}, M={a.M}")
    noise = None
    if a.eta is not None:
        noise = NoiseSpec(eta=a.eta)
    elif a.nsr_db is not None:
        noise = NoiseSpec(target_nsr_db=a.nsr_db)
    inst = make_instance(a.ensemble, a.N, a.M, a.K, a.J, a.seed, noise)
    meta = {"ensemble": a.ensemble, "N": a.N, "M": a.M, "K": a.K, "J": a.J, "seed": a.seed}
    write_matrix(_out(a, "truth.txt"), inst.truth.X0,
                 {**meta, "support": list(inst.truth.support) or "none"})
    write_matrix(_out(a, "measurements.txt"), inst.y, {**meta, "eta": inst.eta})
    if a.write_operator:
        write_matrix(_out(a, "dictionary.txt"), inst.op.A, meta)
        write_matrix(_out(a, "basis.txt"), inst.op.B, meta)
    return EXIT_OK


def cmd_solve(a) -> int:
    mpath = a.measurements or os.path.join(a.out_dir, "measurements.txt")
    y, meta = _read(mpath)
    if y.shape[1] != 1:
        raise InputError(f"{mpath}: expected a single column, got {y.shape}")
    y = y[:, 0]
    op = _operator(a, meta, mpath)
    if y.shape[0] != op.N:
        raise InputError(f"{mpath}: {y.shape[0]} measurements but N={op.N}")
    mode = a.mode or ("regularized" if a.lam is not None else "noisy" if a.eta is not None else "noiseless")
    cfg = _solver_config(a)
    if mode == "regularized":
        if a.lam is None:
            raise InputError("--mode regularized needs --lambda")
        res = solve_regularized(y, op, a.lam, cfg)
    else:
        eta = 0.0
        if mode == "noisy":
            eta = a.eta if a.eta is not None else float(meta.get("eta", 0.0))
        res = solve_noisy(y, op, eta, cfg)
    summary = res.summary()
    if a.truth:
        X0, _ = _read(a.truth)
        ok, err = success_test(res.X_hat, X0, a.success_threshold)
        summary.update(rel_err=err, success=ok)
    model = extract_parameters(res.X_hat, op.basis, a.threshold)
    summary["support"] = list(model.support) or "none"
    hdr = _header(a, {"mode": mode})
    write_matrix(_out(a, "X_hat.txt"), res.X_hat, {"N": op.N, "M": op.M, "K": op.K, "mode": mode})
    write_kv(_out(a, "result.txt"), summary, hdr)
    _out(a, "model.txt").write_text(model.to_table(), encoding="utf-8")
    return EXIT_OK if res.converged else EXIT_FLAGGED


def cmd_cert(a) -> int:
    tpath = a.truth or os.path.join(a.out_dir, "truth.txt")
    X0, meta = _read(tpath)
    op = _operator(a, meta, tpath)
    if X0.shape != (op.K, op.M):
        raise InputError(f"{tpath}: X0 has shape {X0.shape}, expected {(op.K, op.M)}")
    if not np.any(X0):
        raise InputError(f"{tpath}: ground truth is zero; nothing to certify")
    gamma = a.gamma
    if gamma is None:
        ens = op.dictionary.ensemble_tag
        if ens == "explicit":
            gamma = operator_norm_estimate(op).value
        else:
            gamma = gamma_bound(ens, op.N, op.M, op.K)
    try:
        report, raw = certify(op, X0, a.method, gamma, a.P, a.seed, a.estimate_norm,
                              a.partition_attempts)
    except np.linalg.LinAlgError as exc:
        print(f"blinddemod: certificate failed: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    except RuntimeError as exc:
        print(f"blinddemod: golfing partition failed: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    items = report.as_dict()
    if a.method == "golfing":
        items["P"] = raw.partition.P
        items["partition_attempts"] = raw.partition.attempts
        items["partition_deviation"] = raw.partition.deviation
        items["W_norms"] = raw.W_norms
        items["halving_fraction"] = raw.halving_fraction()
    write_kv(_out(a, "cert.txt"), items, _header(a))
    return EXIT_OK if report.passed else EXIT_FLAGGED


def _ensembles(a) -> list[str]:
    return ["gaussian", "fourier"] if a.ensemble == "both" else [a.ensemble]


def _run_phase(a, name: str, scale: str, ens: str, cfg: SolverConfig) -> None:
    grid = phase_preset(name, scale, ens, a.seed, a.trials, cfg)
    x, y = list(grid.sweep)
    stem = f"{name}_{ens}"

    def progress(c):
        log.info("%s N=%d M=%d K=%d J=%d rate=%.3f", stem, c.N, c.M, c.K, c.J, c.rate)

    cells = run_phase_transition(grid, a.workers, progress)
    write_csv(_out(a, f"{stem}.csv"), PHASE_HEADER, (c.row() for c in cells), grid.config())
    _out(a, f"{stem}.gp").write_text(phase_gnuplot(f"{stem}.csv", x, y), encoding="utf-8")


def _run_noise(a, scale: str, ens: str, cfg: SolverConfig) -> None:
    ncfg = noise_preset(scale, ens, a.seed, a.trials, cfg)
    if a.nsr_db:
        ncfg = type(ncfg)(**{**ncfg.__dict__, "nsr_db": tuple(a.nsr_db)})
    pts = run_noise_curve(ncfg, a.workers)
    for p in pts:
        log.info("noise_%s nsr=%g mean=%.2f dB", ens, p.nsr_db, p.mean_err_db)
    stem = f"noise_{ens}"
    write_csv(_out(a, f"{stem}.csv"), NOISE_HEADER, (p.row() for p in pts), ncfg.config())
    _out(a, f"{stem}.gp").write_text(noise_gnuplot(f"{stem}.csv"), encoding="utf-8")


def _run_doa(a, dcfg: DoaConfig) -> bool:
    res = run_doa_demo(dcfg)
    mean = np.mean([d.strengths for d in res.draws], axis=0)
    rows = ([format_value(g), format_value(s)] for g, s in zip(dcfg.grid_deg, mean))
    write_csv(_out(a, "doa.csv"), ["angle_deg", "strength"], rows, dcfg.config())
    _out(a, "doa.gp").write_text(doa_gnuplot("doa.csv"), encoding="utf-8")
    summary = {"true_angles": list(dcfg.angles), "all_exact": res.all_exact}
    for d in res.draws:
        summary[f"draw{d.draw}_angles"] = list(d.recovered)
        summary[f"draw{d.draw}_exact"] = d.exact
        if d.baseline_recovered is not None:
            summary[f"draw{d.draw}_baseline_angles"] = list(d.baseline_recovered)
    write_kv(_out(a, "doa_summary.txt"), summary,
             [f"config: {k} = {format_value(v)}" for k, v in dcfg.config().items()])
    log.info("doa all_exact=%s", res.all_exact)
    return res.all_exact


def cmd_experiment(a) -> int:
    cfg = _solver_config(a)
    if a.name == "paper-full":
        for ens in ("gaussian", "fourier"):
            for name in ("phase-kj", "phase-nj", "phase-nk"):
                _run_phase(a, name, "paper", ens, cfg)
            _run_noise(a, "paper", ens, cfg)
        _run_doa(a, DoaConfig(master_seed=a.seed, solver=cfg))
        return EXIT_OK
    if a.name == "doa":
        _run_doa(a, DoaConfig(master_seed=a.seed, solver=cfg))
        return EXIT_OK
    for ens in _ensembles(a):
        if a.name == "noise":
            _run_noise(a, a.preset, ens, cfg)
        else:
            _run_phase(a, a.name, a.preset, ens, cfg)
    return EXIT_OK


def cmd_doa(a) -> int:
    dcfg = DoaConfig(N=a.N, K=a.K, angles=tuple(a.angles), snr_db=a.snr_db, draws=a.draws,
                     master_seed=a.seed, baseline=a.baseline, solver=_solver_config(a))
    _run_doa(a, dcfg)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        a = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return a.func(a)
    except InputError as exc:
        print(f"blinddemod: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"blinddemod: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
