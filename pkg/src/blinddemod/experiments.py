"""Monte-Carlo studies: phase transitions, noisy error curves and a DOA demo.

Every trial draws its data from ``trial_seed(master_seed, key)`` where the key
is ``(ensemble code, N, M, K, J, trial)``, so a trial can be rerun on its own
and results do not depend on how trials are spread over workers.  Output
tables are plain CSV with ``# config:`` header lines; plotting is left to the
gnuplot scripts written next to them.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .certificates import gamma_bound, golfing_rounds, noisy_error_constants
from .ensembles import (
    ENSEMBLE_CODES,
    NoiseSpec,
    add_noise,
    dft_subspace,
    make_instance,
    trial_seed,
)
from .extraction import RecoveredModel, extract_parameters
from .operators import Dictionary, MeasurementOperator
from .solver import SolverConfig, solve_noiseless, solve_noisy
from .textio import format_value

log = logging.getLogger(__name__)

PARAMS = ("N", "M", "K", "J")


# -- single trials ------------------------------------------------------------

def success_test(X_hat, X0, threshold: float = 1e-5) -> tuple[bool, float]:
    """Relative Frobenius error and whether it is at most ``threshold``.

    For ``X0 = 0`` the absolute norm of ``X_hat`` is used instead.  The
    comparison allows a relative slack of ``1e-9`` on the threshold so that
    an error equal to the threshold up to rounding counts as a success.
    """
    X_hat, X0 = np.asarray(X_hat), np.asarray(X0)
    if X_hat.shape != X0.shape:
        raise ValueError(f"shape mismatch: {X_hat.shape} vs {X0.shape}")
    ref = np.linalg.norm(X0)
    err = float(np.linalg.norm(X_hat - X0) / ref) if ref > 0 else float(np.linalg.norm(X_hat))
    return err <= threshold * (1 + 1e-9), err


@dataclass(frozen=True)
class TrialRecord:
    ensemble: str
    N: int
    M: int
    K: int
    J: int
    trial: int
    master_seed: int
    rel_err: float
    success: bool
    iterations: int
    converged: bool
    wall_time: float

    @property
    def key(self) -> tuple[int, ...]:
        return (ENSEMBLE_CODES[self.ensemble], self.N, self.M, self.K, self.J, self.trial)


def cell_key(ensemble: str, N: int, M: int, K: int, J: int, trial: int) -> tuple[int, ...]:
    return (ENSEMBLE_CODES[ensemble], N, M, K, J, trial)


def run_trial(ensemble: str, N: int, M: int, K: int, J: int, trial: int, master_seed: int = 0,
              threshold: float = 1e-5, solver: SolverConfig | None = None) -> TrialRecord:
    """One noiseless recovery trial; solver failures count as non-success."""
    t0 = time.perf_counter()
    seed = trial_seed(master_seed, cell_key(ensemble, N, M, K, J, trial))
    inst = make_instance(ensemble, N, M, K, J, seed)
    try:
        res = solve_noiseless(inst.y, inst.op, solver)
        ok, err = success_test(res.X_hat, inst.truth.X0, threshold)
        its, conv = res.iterations, res.converged
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("trial %s failed: %s", (ensemble, N, M, K, J, trial), exc)
        ok, err, its, conv = False, math.inf, 0, False
    return TrialRecord(ensemble, N, M, K, J, trial, master_seed, err, ok, its, conv,
                       time.perf_counter() - t0)


def replay_trial(record: TrialRecord, threshold: float = 1e-5,
                 solver: SolverConfig | None = None) -> TrialRecord:
    """Rerun a recorded trial from its seed key."""
    return run_trial(record.ensemble, record.N, record.M, record.K, record.J, record.trial,
                     record.master_seed, threshold, solver)


# -- phase transitions --------------------------------------------------------

@dataclass(frozen=True)
class PhaseGrid:
    """Two swept parameters (``sweep``) and fixed values for the other two."""

    sweep: dict
    fixed: dict
    trials: int = 40
    threshold: float = 1e-5
    ensemble: str = "gaussian"
    master_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if len(self.sweep) != 2:
            raise ValueError("exactly two parameters must be swept")
        names = set(self.sweep) | set(self.fixed)
        if names != set(PARAMS) or set(self.sweep) & set(self.fixed):
            raise ValueError(f"sweep and fixed must partition {PARAMS}")
        for k, v in self.sweep.items():
            if len(v) == 0:
                raise ValueError(f"empty range for {k}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.ensemble not in ("gaussian", "fourier"):
            raise ValueError(f"unknown ensemble {self.ensemble!r}")
        object.__setattr__(self, "sweep", {k: tuple(int(x) for x in v) for k, v in self.sweep.items()})
        object.__setattr__(self, "fixed", {k: int(v) for k, v in self.fixed.items()})
        for cell in self.cells():
            _check_dims(**cell)

    def cells(self) -> list[dict]:
        (a, ra), (b, rb) = self.sweep.items()
        out = []
        for va, vb in itertools.product(ra, rb):
            d = dict(self.fixed)
            d[a], d[b] = va, vb
            out.append({k: d[k] for k in PARAMS})
        return out

    def config(self) -> dict:
        d = {"ensemble": self.ensemble, "master_seed": self.master_seed, "trials": self.trials,
             "threshold": self.threshold}
        for k, v in self.sweep.items():
            d[f"sweep_{k}"] = list(v)
        for k, v in self.fixed.items():
            d[k] = v
        d.update({f"solver_{k}": v for k, v in asdict(self.solver).items()})
        return d


def _check_dims(N, M, K, J):
    if not 0 < K < N < M:
        raise ValueError(f"need 0 < K < N < M, got N={N}, M={M}, K={K}")
    if not 0 <= J <= M:
        raise ValueError(f"need 0 <= J <= M, got J={J}")


@dataclass(frozen=True)
class CellSummary:
    ensemble: str
    N: int
    M: int
    K: int
    J: int
    trials: int
    successes: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    def row(self) -> list:
        return [self.ensemble, self.N, self.M, self.K, self.J, self.trials, self.successes,
                format_value(self.rate)]


PHASE_HEADER = ["ensemble", "N", "M", "K", "J", "trials", "successes", "rate"]


def _run_cell(args) -> tuple[CellSummary, list[TrialRecord]]:
    grid, cell = args
    recs = [run_trial(grid.ensemble, trial=t, master_seed=grid.master_seed,
                      threshold=grid.threshold, solver=grid.solver, **cell)
            for t in range(grid.trials)]
    summ = CellSummary(grid.ensemble, cell["N"], cell["M"], cell["K"], cell["J"],
                       grid.trials, sum(r.success for r in recs))
    return summ, recs


def iter_phase_transition(grid: PhaseGrid, workers: int = 1) -> Iterator[tuple[CellSummary, list[TrialRecord]]]:
    """Yield ``(summary, trials)`` per cell, in grid order, as cells finish."""
    jobs = [(grid, cell) for cell in grid.cells()]
    if workers <= 1:
        yield from map(_run_cell, jobs)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_cell, jobs)


def run_phase_transition(grid: PhaseGrid, workers: int = 1,
                         on_cell: Callable[[CellSummary], None] | None = None) -> list[CellSummary]:
    out = []
    for summ, _ in iter_phase_transition(grid, workers):
        if on_cell is not None:
            on_cell(summ)
        out.append(summ)
    return out


def rate_table(cells: Sequence[CellSummary], row: str, col: str) -> tuple[list[int], list[int], np.ndarray]:
    """Arrange cell rates as a 2-D array indexed by two parameters."""
    rv = sorted({getattr(c, row) for c in cells})
    cv = sorted({getattr(c, col) for c in cells})
    R = np.full((len(rv), len(cv)), np.nan)
    for c in cells:
        R[rv.index(getattr(c, row)), cv.index(getattr(c, col))] = c.rate
    return rv, cv, R


def kj_inversions(cells: Sequence[CellSummary], gap: int = 8, tol: float = 0.0) -> list[tuple]:
    """Pairs with ``K'J' >= KJ + gap`` whose rate exceeds that of ``(K, J)`` by more than ``tol``."""
    bad = []
    for a in cells:
        for b in cells:
            if b.K * b.J >= a.K * a.J + gap and b.rate > a.rate + tol:
                bad.append(((a.K, a.J, a.rate), (b.K, b.J, b.rate)))
    return bad


# -- noisy error curve --------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    ensemble: str = "gaussian"
    N: int = 100
    M: int = 200
    K: int = 5
    J: int = 5
    nsr_db: tuple = (-60.0, -50.0, -40.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0)
    trials: int = 40
    master_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        _check_dims(self.N, self.M, self.K, self.J)
        if self.J < 1:
            raise ValueError("the noise curve needs J >= 1")
        if not self.nsr_db:
            raise ValueError("empty NSR grid")
        object.__setattr__(self, "nsr_db", tuple(float(x) for x in self.nsr_db))

    def config(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "solver"}
        d["nsr_db"] = list(self.nsr_db)
        d.update({f"solver_{k}": v for k, v in asdict(self.solver).items()})
        return d


@dataclass(frozen=True)
class NoisePoint:
    nsr_db: float
    mean_err_db: float
    std_err_db: float
    theory_db: float
    errors: tuple = field(repr=False, default=())

    def row(self) -> list:
        return [format_value(x) for x in (self.nsr_db, self.mean_err_db, self.std_err_db, self.theory_db)]


NOISE_HEADER = ["nsr_db", "mean_err_db", "std_err_db", "theory_db"]


def theoretical_constant(ensemble: str, J: int, N: int = 100, M: int = 200, K: int = 5,
                         mode: str = "canonical", **overrides) -> float:
    """``C`` with ``||X_hat - X0||_F <= C eta``.

    ``mode="canonical"`` uses the closed-form bounds ``C1 = 5 sqrt 6``,
    ``C2 = 24`` (times ``sqrt P`` for Fourier dictionaries).  ``mode="exact"``
    evaluates the constants from ``delta = theta = 1/2``, ``beta = 1`` and the
    analytic ``gamma``, with ``tau = sqrt 2`` (Gaussian) or ``sqrt(2P)``
    (Fourier); any of these can be overridden by keyword.
    """
    gamma = overrides.get("gamma", gamma_bound(ensemble, N, M, K))
    P = overrides.get("P", golfing_rounds(J, gamma)) if ensemble == "fourier" else 1
    if mode == "canonical":
        C1 = overrides.get("C1", 5 * math.sqrt(6))
        C2 = overrides.get("C2", 24.0)
    elif mode == "exact":
        C1, C2 = noisy_error_constants(
            overrides.get("delta", 0.5), overrides.get("theta", 0.5), overrides.get("beta", 1.0),
            gamma, overrides.get("tau", math.sqrt(2 * P)))
        # tau already carries the sqrt(P) factor
        return C1 + C2 * math.sqrt(J)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return C1 + C2 * math.sqrt(P * J)


def theoretical_noise_bound(nsr_db: float, C: float) -> float:
    """Error bound in dB: ``nsr_db + 20 log10(C)``."""
    return float(nsr_db) + 20.0 * math.log10(C)


def _noise_trial(args) -> list[float]:
    cfg, trial = args
    key = cell_key(cfg.ensemble, cfg.N, cfg.M, cfg.K, cfg.J, trial)
    inst = make_instance(cfg.ensemble, cfg.N, cfg.M, cfg.K, cfg.J, trial_seed(cfg.master_seed, key))
    X0 = inst.truth.X0
    x0n = np.linalg.norm(X0)
    errs = []
    for i, nsr in enumerate(cfg.nsr_db):
        nseed = trial_seed(cfg.master_seed, key + (1 + i,))
        y, eta = add_noise(inst.y_clean, NoiseSpec(target_nsr_db=nsr), nseed, x0n)
        res = solve_noisy(y, inst.op, eta, cfg.solver)
        errs.append(float(np.linalg.norm(res.X_hat - X0) / x0n))
    return errs


def run_noise_curve(cfg: NoiseConfig, workers: int = 1, C: float | None = None) -> list[NoisePoint]:
    """Mean and spread of the relative error (both in dB) per NSR point.

    Each trial draws one instance and reuses it across the NSR grid with a
    fresh noise draw per point.  Mean and standard deviation are taken on the
    linear relative errors and then converted to dB.
    """
    jobs = [(cfg, t) for t in range(cfg.trials)]
    if workers <= 1:
        errs = list(map(_noise_trial, jobs))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            errs = list(pool.map(_noise_trial, jobs))
    E = np.array(errs)  # trials x points
    if C is None:
        C = theoretical_constant(cfg.ensemble, cfg.J, cfg.N, cfg.M, cfg.K)
    out = []
    for i, nsr in enumerate(cfg.nsr_db):
        col = E[:, i]
        out.append(NoisePoint(nsr, _db(col.mean()), _db(col.std()),
                              theoretical_noise_bound(nsr, C), tuple(col)))
    return out


def _db(x: float) -> float:
    return 20.0 * math.log10(x) if x > 0 else -math.inf


def fit_slope(points: Sequence[NoisePoint], below: float = 0.0) -> float:
    """Least-squares slope of mean error (dB) against NSR (dB) for NSR < ``below``."""
    xs = np.array([p.nsr_db for p in points if p.nsr_db < below])
    ys = np.array([p.mean_err_db for p in points if p.nsr_db < below])
    return float(np.polyfit(xs, ys, 1)[0])


# -- direction of arrival -----------------------------------------------------

def ula_manifold(N: int, angles_deg, spacing: float = 0.5) -> np.ndarray:
    """Steering vectors ``a(theta)[n] = exp(i 2 pi (d / lambda) n cos theta)``."""
    theta = np.deg2rad(np.asarray(angles_deg, dtype=float))
    n = np.arange(N)
    return np.exp(2j * np.pi * spacing * np.outer(n, np.cos(theta)))


@dataclass(frozen=True)
class DoaConfig:
    N: int = 50
    K: int = 5
    angles: tuple = (67, 75, 92, 127, 133)
    grid_deg: tuple = tuple(range(181))
    snr_db: float = 30.0
    draws: int = 10
    master_seed: int = 0
    threshold: float = 1e-3
    baseline: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "angles", tuple(int(a) for a in self.angles))
        object.__setattr__(self, "grid_deg", tuple(float(g) for g in self.grid_deg))
        if not 0 < self.K < self.N:
            raise ValueError(f"need 0 < K < N, got N={self.N}, K={self.K}")
        missing = [a for a in self.angles if float(a) not in self.grid_deg]
        if missing:
            raise ValueError(f"angles {missing} are not on the grid")
        if self.draws < 1:
            raise ValueError("draws must be >= 1")

    @property
    def M(self) -> int:
        return len(self.grid_deg)

    @property
    def J(self) -> int:
        return len(self.angles)

    def config(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("solver", "grid_deg")}
        d["angles"] = list(self.angles)
        d["grid_deg"] = f"{self.grid_deg[0]:g}..{self.grid_deg[-1]:g} ({self.M} points)"
        d.update({f"solver_{k}": v for k, v in asdict(self.solver).items()})
        return d


@dataclass(frozen=True)
class DoaDraw:
    draw: int
    strengths: np.ndarray  # column norms of X_hat, one per grid angle
    recovered: tuple  # angles of the J strongest columns
    model: RecoveredModel
    exact: bool
    baseline_recovered: tuple | None = None
    baseline_strengths: np.ndarray | None = None


@dataclass(frozen=True)
class DoaResult:
    config: DoaConfig
    truth_amplitudes: np.ndarray
    draws: list

    @property
    def all_exact(self) -> bool:
        return all(d.exact for d in self.draws)


def doa_instance(cfg: DoaConfig):
    """Operator and ground truth for the DOA scene (fixed by ``master_seed``)."""
    A = ula_manifold(cfg.N, cfg.grid_deg)
    op = MeasurementOperator(Dictionary(A), dft_subspace(cfg.N, cfg.K))
    rng = np.random.default_rng(trial_seed(cfg.master_seed, (99, cfg.N, cfg.M, cfg.K, cfg.J)))
    H = rng.standard_normal((cfg.K, cfg.J)) + 1j * rng.standard_normal((cfg.K, cfg.J))
    H /= np.linalg.norm(H, axis=0)
    c = rng.uniform(0.0, 1.0, cfg.J)
    idx = [cfg.grid_deg.index(float(a)) for a in cfg.angles]
    X0 = np.zeros((cfg.K, cfg.M), dtype=complex)
    X0[:, idx] = H * c
    return op, X0, c


def _top_angles(strengths, grid, J) -> tuple:
    top = np.sort(np.argsort(-strengths, kind="stable")[:J])
    return tuple(int(round(grid[i])) for i in top)


def run_doa_demo(cfg: DoaConfig) -> DoaResult:
    """Solve the noisy program for several noise draws on one fixed scene.

    SNR is ``20 log10(||L(X0)|| / ||n||)`` and ``eta = ||n||``.  The recovered
    angles are those of the ``J`` strongest columns.  With ``baseline`` on, the
    same data are also solved with an entrywise l1 penalty, which is the
    shared-calibration model ``X = h c^T``.
    """
    op, X0, c = doa_instance(cfg)
    y0 = op.forward(X0)
    target = np.linalg.norm(y0) * 10.0 ** (-cfg.snr_db / 20.0)
    truth = tuple(sorted(cfg.angles))
    draws = []
    for k in range(cfg.draws):
        nseed = trial_seed(cfg.master_seed, (99, cfg.N, cfg.M, cfg.K, cfg.J, k))
        y, eta = add_noise(y0, NoiseSpec(eta=target), nseed)
        res = solve_noisy(y, op, eta, cfg.solver)
        st = np.linalg.norm(res.X_hat, axis=0)
        rec = _top_angles(st, cfg.grid_deg, cfg.J)
        model = extract_parameters(res.X_hat, op.basis, cfg.threshold)
        b_rec = b_st = None
        if cfg.baseline:
            bres = solve_noisy(y, op, eta, cfg.solver, penalty="l1")
            b_st = np.linalg.norm(bres.X_hat, axis=0)
            b_rec = _top_angles(b_st, cfg.grid_deg, cfg.J)
        draws.append(DoaDraw(k, st, rec, model, rec == truth, b_rec, b_st))
    return DoaResult(cfg, c, draws)


# -- presets ------------------------------------------------------------------

def phase_preset(name: str, scale: str = "desk", ensemble: str = "gaussian",
                 master_seed: int = 0, trials: int | None = None,
                 solver: SolverConfig | None = None) -> PhaseGrid:
    """Grids for the K-J, N-J and N-K sweeps at desk or paper scale."""
    desk = scale == "desk"
    if scale not in ("desk", "paper"):
        raise ValueError(f"unknown scale {scale!r}")
    if name == "phase-kj":
        sweep = {"K": range(1, 9), "J": range(1, 9)} if desk else {"K": range(1, 21), "J": range(1, 21)}
        fixed = {"N": 40, "M": 60} if desk else {"N": 100, "M": 200}
    elif name == "phase-nj":
        sweep = ({"N": range(10, 55, 5), "J": range(1, 9)} if desk
                 else {"N": range(30, 101, 5), "J": range(1, 21)})
        fixed = {"M": 60, "K": 2} if desk else {"M": 200, "K": 5}
    elif name == "phase-nk":
        sweep = ({"N": range(10, 55, 5), "K": range(1, 9)} if desk
                 else {"N": range(30, 101, 5), "K": range(1, 21)})
        fixed = {"M": 60, "J": 2} if desk else {"M": 200, "J": 5}
    else:
        raise ValueError(f"unknown phase preset {name!r}")
    if trials is None:
        trials = 20 if desk else 40
    return PhaseGrid(sweep, fixed, trials, 1e-5, ensemble, master_seed, solver or SolverConfig())


def noise_preset(scale: str = "desk", ensemble: str = "gaussian", master_seed: int = 0,
                 trials: int | None = None, solver: SolverConfig | None = None) -> NoiseConfig:
    if scale == "desk":
        return NoiseConfig(ensemble, 40, 60, 3, 3, trials=trials or 20,
                           master_seed=master_seed, solver=solver or SolverConfig())
    if scale == "paper":
        return NoiseConfig(ensemble, 100, 200, 5, 5, trials=trials or 40,
                           master_seed=master_seed, solver=solver or SolverConfig())
    raise ValueError(f"unknown scale {scale!r}")


PRESETS = ("phase-kj", "phase-nj", "phase-nk", "noise", "doa", "paper-full")


# -- output -------------------------------------------------------------------

def config_header(config: dict) -> str:
    return "".join(f"# config: {k} = {format_value(v)}\n" for k, v in config.items())


def write_csv(path_or_file, header: Sequence[str], rows: Iterable[Sequence], config: dict) -> None:
    buf = io.StringIO()
    buf.write(config_header(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    if hasattr(path_or_file, "write"):
        path_or_file.write(buf.getvalue())
    else:
        with open(path_or_file, "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())


def phase_gnuplot(csv_name: str, x: str, y: str) -> str:
    cols = {name: i + 1 for i, name in enumerate(PHASE_HEADER)}
    return (
        "set datafile separator ','\n"
        f"set xlabel '{x}'\nset ylabel '{y}'\nset cblabel 'success rate'\n"
        "set cbrange [0:1]\nset palette gray\nset view map\n"
        f"plot '{csv_name}' using {cols[x]}:{cols[y]}:{cols['rate']} with image notitle\n"
    )


def noise_gnuplot(csv_name: str) -> str:
    return (
        "set datafile separator ','\n"
        "set xlabel 'noise-to-signal ratio (dB)'\nset ylabel 'relative error (dB)'\n"
        "set key left top\n"
        f"plot '{csv_name}' using 1:2 with points pt 1 title 'mean', \\\n"
        f"     '{csv_name}' using 1:4 with lines dt 2 title 'bound'\n"
    )


def doa_gnuplot(csv_name: str) -> str:
    return (
        "set datafile separator ','\n"
        "set xlabel 'angle (degrees)'\nset ylabel 'strength'\n"
        f"plot '{csv_name}' using 1:2 with impulses notitle\n"
    )


