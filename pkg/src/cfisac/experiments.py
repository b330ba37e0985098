"""
Monte Carlo sweeps of detection probability for the ISAC power allocations.

Every drop redraws UE and target positions (APs are fixed per seed), builds
the hardening-bound SINR statistics from an ensemble of channel
realizations, fixes the precoders and symbols of one detection window and
then evaluates thresholds and detection probabilities from H0/H1 trials.
All algorithms and processing variants at a grid point reuse the same
standardized draws (common random numbers), and every random quantity comes
from a counter-keyed substream, so results are reproducible per seed.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    clutter_correlations,
    comm_correlations,
    complex_normal,
    hermitian_sqrt,
    kronecker_covariance,
    rcs_covariance,
    sample_correlated_rayleigh,
)
from .comm_metrics import SinrCoefficients, estimate_coefficients
from .detector import MaprtDetector, SimpleDetector, binomial_halfwidth, calibrate_threshold
from .estimation import assign_pilots, estimate_channels
from .power_allocation import (
    InfeasibleError,
    PowerSolution,
    build_quadratics,
    ccp_solve,
    comm_centric_solve,
    initial_point,
    sensing_sinr,
)
from .precoding import build_precoders, ensemble_norm_stats, rzf_precoders, sensing_precoder, target_steering
from .scenario import (
    STREAM_DETECTION,
    STREAM_ENSEMBLE,
    STREAM_SHADOWING,
    STREAM_SYMBOLS,
    STREAM_TRIALS_H0,
    STREAM_TRIALS_H1,
    ConfigError,
    ScenarioConfig,
    direction_angles,
    drop_targets,
    place_network,
    substream,
)
from .sensing_chain import build_snapshot, draw_symbols, synthesize_received, target_link

log = logging.getLogger(__name__)

ALGORITHMS = ("comm_centric", "isac", "isac_s")
PROCESSING = ("ap", "sp")
SCENARIOS = ("realistic", "idealistic")
SWEEPS = {
    "rcs_variance": "rcs_variance_dbsm",
    "clutter_scale": "clutter_scale",
    "sensing_duration": "tau",
    "benchmark": "rcs_variance_dbsm",
}
CSV_HEADER = (
    "experiment", "sweep_var", "sweep_value", "algorithm", "processing", "scenario", "p_fa", "p_d",
    "ci_halfwidth", "sensing_sinr_db", "min_comm_sinr_db", "mc_trials", "seed",
)
IDEAL_CLUTTER_EPS = 1e-8
TRIAL_CHUNK = 1000
TRIALS_PER_INVERSE_PFA = 100


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: grid, compared variants and Monte Carlo sizes."""

    name: str
    sweep: str
    grid: tuple
    algorithms: tuple = ALGORITHMS
    processing: tuple = ("ap",)
    scenarios: tuple = ("realistic",)
    p_fa: tuple = (0.1,)
    drops: int = 20
    realizations: int = 200
    config: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        if self.sweep not in SWEEPS:
            raise ConfigError(f"unknown sweep {self.sweep!r}")
        if len(self.grid) == 0:
            raise ConfigError("sweep grid is empty")
        for group, allowed in ((self.algorithms, ALGORITHMS), (self.processing, PROCESSING),
                               (self.scenarios, SCENARIOS)):
            if not group or any(g not in allowed for g in group):
                raise ConfigError(f"invalid selection {group!r}; choose from {allowed}")
        if self.drops < 1 or self.realizations < 1:
            raise ConfigError("drops and realizations must be >= 1")
        if any(not 0.0 < p < 1.0 for p in self.p_fa) or not self.p_fa:
            raise ConfigError("p_fa values must lie in (0, 1)")
        if self.sweep == "sensing_duration":
            if any(int(t) != t or t < 1 for t in self.grid):
                raise ConfigError("sensing durations must be positive integers")
            if max(self.grid) > self.config.tau_c - self.config.tau_p:
                raise ConfigError("sensing duration exceeds the data part of the coherence block")
        if self.sweep == "clutter_scale" and any(not 0.0 < s <= 1.0 for s in self.grid):
            raise ConfigError("clutter scales must lie in (0, 1]")

    def replace(self, **changes) -> "ExperimentSpec":
        return dataclasses.replace(self, **changes)

    def trials(self, p_fa: float) -> int:
        """H0 and H1 trial count per drop for a false-alarm target."""
        return int(math.ceil(TRIALS_PER_INVERSE_PFA / p_fa))

    def points(self):
        """``(sweep_value, clutter_scale, tau, rcs_dbsm)`` per grid point."""
        cfg = self.config
        for v in self.grid:
            if self.sweep in ("rcs_variance", "benchmark"):
                yield v, cfg.clutter_scale, cfg.tau_sense, float(v)
            elif self.sweep == "clutter_scale":
                yield v, float(v), cfg.tau_sense, cfg.rcs_variance
            else:
                yield v, cfg.clutter_scale, int(v), cfg.rcs_variance


PRESETS = {
    "fig3": dict(sweep="rcs_variance", grid=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0), algorithms=ALGORITHMS,
                 p_fa=(0.1, 0.01), overrides={"clutter_scale": 0.3}),
    "fig4": dict(sweep="clutter_scale", grid=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
                 algorithms=("isac", "isac_s"), processing=("ap", "sp"), overrides={"rcs_variance": 5.0}),
    "fig5": dict(sweep="sensing_duration", grid=(10, 20, 30, 40, 50), algorithms=ALGORITHMS,
                 overrides={"clutter_scale": 0.01, "rcs_variance": -10.0}),
    "fig6": dict(sweep="benchmark", grid=(-10.0, -5.0, 0.0, 5.0, 10.0, 15.0), algorithms=("isac_s",),
                 processing=("ap", "sp"), scenarios=("realistic", "idealistic"),
                 overrides={"clutter_scale": 0.3}),
}


def preset(name: str, config: ScenarioConfig | None = None, **changes) -> ExperimentSpec:
    """Sweep definition for a named figure.

    The figure's own parameter values are applied on top of ``config``
    unless ``config`` was given explicitly, in which case it wins.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(PRESETS)}")
    params = dict(PRESETS[name])
    overrides = params.pop("overrides")
    if config is None:
        config = ScenarioConfig().replace(**overrides)
    return ExperimentSpec(name=name, config=config, **{**params, **changes})


@dataclass
class DropModel:
    """Everything a drop contributes that does not depend on the power allocation."""

    coeffs: SinrCoefficients
    F: np.ndarray
    precoders: object
    link: object
    symbols: np.ndarray
    r_tx: np.ndarray
    r_rx: np.ndarray
    sqrt_tx: np.ndarray
    sqrt_rx: np.ndarray
    drop: int
    tau_max: int


def prepare_drop(config: ScenarioConfig, drop: int, realizations: int, tau_max: int) -> DropModel:
    seed = config.seed
    geometry = place_network(config, seed, drop)
    m = config.m_antennas
    rng = substream(seed, STREAM_SHADOWING, drop)
    R = comm_correlations(geometry, config, rng)
    r_tx, r_rx = clutter_correlations(geometry, config, rng)
    pilots = assign_pilots(config.n_ue, config.tau_p)
    lam = config.regularization

    # ensemble for the hardening-bound coefficients, one hotspot location per realization
    rng = substream(seed, STREAM_ENSEMBLE, drop)
    targets = drop_targets(config, rng, realizations)
    h = sample_correlated_rayleigh(R, rng, realizations)
    est = estimate_channels(h, R, pilots, config.pilot_power, config.tau_p, 1.0, rng)
    h_hat, h_err = est.stacked()
    h_all = h.reshape(realizations, config.n_ue, -1)
    w_ue = rzf_precoders(h_hat, lam) if config.n_ue else np.zeros((realizations, h_hat.shape[-1], 0))
    az, el = direction_angles(geometry.tx_positions[None, :, :], targets[:, None, :])
    w0 = np.stack([sensing_precoder(h_hat[n], target_steering(az[n], el[n], m)) for n in range(realizations)])
    w = np.concatenate([w0[:, :, None], w_ue], axis=2)
    coeffs = estimate_coefficients(h_all, h_err, w, 1.0)
    _, F = ensemble_norm_stats(w, config.n_tx)

    # the detection window: one channel realization, beam toward the actual target
    rng = substream(seed, STREAM_DETECTION, drop)
    h_det = sample_correlated_rayleigh(R, rng)
    est_det = estimate_channels(h_det, R, pilots, config.pilot_power, config.tau_p, 1.0, rng)
    az_t, el_t = geometry.tx_target_angles
    precoders = build_precoders(est_det.stacked()[0], target_steering(az_t, el_t, m), lam, config.n_tx)
    link = target_link(geometry, m, config.carrier_freq, config.noise_variance)
    symbols = draw_symbols(config.n_ue, tau_max, substream(seed, STREAM_SYMBOLS, drop))
    return DropModel(coeffs, F, precoders, link, symbols, r_tx, r_rx, hermitian_sqrt(r_tx), hermitian_sqrt(r_rx),
                     drop, tau_max)


def allocate(algorithm: str, model: DropModel, config: ScenarioConfig, quad) -> PowerSolution:
    """Power coefficients for one algorithm; ``quad`` is the allocation's view of the sensing SINR."""
    gamma, p_tx = config.gamma_c_linear, config.p_tx_max
    if algorithm == "comm_centric":
        return comm_centric_solve(model.coeffs, model.F, gamma, p_tx, quad)
    return ccp_solve(quad, model.coeffs, model.F, gamma, p_tx, sensing_beam=(algorithm == "isac_s"))


def _clutter_batch(model: DropModel, std_draws, clutter_scale):
    return np.sqrt(clutter_scale) * (model.sqrt_rx @ std_draws @ np.swapaxes(model.sqrt_tx, -1, -2))


def _projections(detector, snapshot, model, config, hypothesis, n, tau, clutter_scale, realistic):
    """Detector projections ``L y`` of ``n`` trials for one hypothesis.

    Under H1 the target echo enters linearly, so it is returned separately
    with unit RCS variance and scaled by the caller for each RCS value:
    ``L (y_base + sigma G alpha) = L y_base + sigma L G alpha``.
    """
    n_rx, n_tx, m = config.n_rx, config.n_tx, config.m_antennas
    stream = STREAM_TRIALS_H1 if hypothesis else STREAM_TRIALS_H0
    base, echo = [], []
    for chunk in range(math.ceil(n / TRIAL_CHUNK)):
        size = min(TRIAL_CHUNK, n - chunk * TRIAL_CHUNK)
        rng = substream(config.seed, stream, model.drop, chunk)
        w = complex_normal(rng, (TRIAL_CHUNK, n_rx, n_tx, m, m))[:size]
        noise = complex_normal(rng, (TRIAL_CHUNK, model.tau_max, n_rx, m))[:size, :tau]
        clutter = _clutter_batch(model, w, clutter_scale) if realistic else None
        y = synthesize_received(snapshot, 0, clutter=clutter, noise=noise)
        base.append(detector.project(y))
        if hypothesis:
            alpha = complex_normal(rng, (TRIAL_CHUNK, n_rx * n_tx))[:size]
            echo.append(detector.project(snapshot.target_response(alpha)))
    return np.concatenate(base), (np.concatenate(echo) if hypothesis else None)


def _detector(processing, scenario, snapshot, model, clutter_scale):
    r_rcs = np.eye(model.link.n_pairs)
    if processing == "sp":
        return SimpleDetector(snapshot, r_rcs)
    m2 = model.r_tx.shape[-1] ** 2
    n_rx, n_tx = model.r_tx.shape[:2]
    if scenario == "idealistic":
        blocks = np.broadcast_to(IDEAL_CLUTTER_EPS * np.eye(m2), (n_rx, n_tx, m2, m2))
    else:
        blocks = np.empty((n_rx, n_tx, m2, m2), dtype=complex)
        for r in range(n_rx):
            for k in range(n_tx):
                blocks[r, k] = kronecker_covariance(model.r_tx[r, k], model.r_rx[r, k], clutter_scale)
    return MaprtDetector(snapshot, blocks, r_rcs)


@dataclass
class _Tally:
    hits: int = 0
    trials: int = 0
    sinr: list = field(default_factory=list)
    comm: list = field(default_factory=list)

    def merge(self, other: "_Tally") -> None:
        self.hits += other.hits
        self.trials += other.trials
        self.sinr.extend(other.sinr)
        self.comm.extend(other.comm)


def _variants(spec: ExperimentSpec):
    return [(a, p, sc) for a in spec.algorithms for p in spec.processing for sc in spec.scenarios]


def run_drop(spec: ExperimentSpec, drop: int) -> dict | None:
    """Tallies of one drop keyed by ``(value, algorithm, processing, scenario, p_fa)``.

    Returns ``None`` when the drop's communication constraints are infeasible.
    """
    config = spec.config
    points = list(spec.points())
    tau_max = max(p[2] for p in points)
    n_max = max(spec.trials(p) for p in spec.p_fa)
    groups = {}
    for value, s, tau, rcs in points:
        groups.setdefault((s, tau), []).append((value, rcs))

    model = prepare_drop(config, drop, spec.realizations, tau_max)
    try:
        initial_point(model.coeffs, model.F, config.gamma_c_linear, config.p_tx_max, sensing_beam=False)
    except InfeasibleError as exc:
        log.warning("drop %d excluded: %s (UEs %s)", drop, exc, list(exc.violated))
        return None

    tallies = {}
    for (s, tau), members in groups.items():
        symbols = model.symbols[:tau]
        quad_unit = build_quadratics(model.link, model.precoders, symbols, model.r_tx, model.r_rx, s,
                                     np.eye(model.link.n_pairs))
        allocations = {}
        for alg, proc, scen in _variants(spec):
            aware = proc == "ap" and scen == "realistic"
            key = (alg, aware)
            if key not in allocations:
                allocations[key] = allocate(alg, model, config, quad_unit.scaled(clutter=aware))
            sol = allocations[key]
            snapshot = build_snapshot(model.precoders, sol.rho, symbols, model.link)
            det = _detector(proc, scen, snapshot, model, s)
            realistic = scen == "realistic"
            u0, _ = _projections(det, snapshot, model, config, 0, n_max, tau, s, realistic)
            u1, echo = _projections(det, snapshot, model, config, 1, n_max, tau, s, realistic)
            min_comm = float(np.min(sol.comm_sinr)) if sol.comm_sinr.size else np.inf
            for value, rcs in members:
                var = 10.0 ** (rcs / 10.0)
                scored = det.with_rcs(rcs_covariance(rcs, model.link.n_pairs))
                t0 = scored.from_projection(u0)
                t1 = scored.from_projection(u1 + np.sqrt(var) * echo)
                sinr = float(sensing_sinr(sol.rho_sqrt, quad_unit.scaled(var, clutter=realistic)))
                for pf in spec.p_fa:
                    n = spec.trials(pf)
                    threshold = calibrate_threshold(t0[:n], pf)
                    hits = int(np.sum(t1[:n] >= threshold))
                    tallies[(value, alg, proc, scen, pf)] = _Tally(hits, n, [sinr], [min_comm])
    return tallies


def run_experiment(spec: ExperimentSpec, progress=None, workers: int = 1) -> list[dict]:
    """Evaluate every grid point x algorithm x processing x scenario x P_fa.

    Drops are independent and may run in ``workers`` processes; their
    tallies are merged in drop order, so the result does not depend on the
    worker count. Drops whose communication constraints are infeasible are
    excluded for all variants alike; a grid point where no drop is feasible
    yields ``p_d = nan`` and ``mc_trials = 0``.
    """
    config = spec.config
    points = list(spec.points())
    variants = _variants(spec)
    totals = {(v, a, p, sc, pf): _Tally() for v, *_ in points for a, p, sc in variants for pf in spec.p_fa}

    def absorb(drop, tallies):
        if tallies is not None:
            for key, tally in tallies.items():
                totals[key].merge(tally)
        if progress is not None:
            progress(drop)

    if workers > 1 and spec.drops > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for drop, tallies in enumerate(pool.map(run_drop, [spec] * spec.drops, range(spec.drops))):
                absorb(drop, tallies)
    else:
        for drop in range(spec.drops):
            absorb(drop, run_drop(spec, drop))

    rows = []
    for value, *_ in points:
        for alg, proc, scen in variants:
            for pf in spec.p_fa:
                tally = totals[(value, alg, proc, scen, pf)]
                if tally.trials:
                    p_d = tally.hits / tally.trials
                    ci = float(binomial_halfwidth(p_d, tally.trials))
                    sinr_db = float(10.0 * np.log10(np.mean(tally.sinr)))
                    comm_db = float(10.0 * np.log10(np.min(tally.comm)))
                else:
                    p_d = ci = sinr_db = comm_db = float("nan")
                rows.append({
                    "experiment": spec.name, "sweep_var": SWEEPS[spec.sweep], "sweep_value": value,
                    "algorithm": alg, "processing": proc, "scenario": scen, "p_fa": pf, "p_d": p_d,
                    "ci_halfwidth": ci, "sensing_sinr_db": sinr_db, "min_comm_sinr_db": comm_db,
                    "mc_trials": tally.trials, "seed": config.seed,
                })
    return rows


def _fmt(value):
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(round(value, 10))
    return str(value)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in CSV_HEADER])
    return buf.getvalue()


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(rows_to_csv(rows))
