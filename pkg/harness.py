"""
harness.py — Monte Carlo experiments, metrics and command line

Runs seeded trials of the full pipeline

    channel + phase process + training -> received block -> PBiGAMP
        -> NMSE (after optimal complex rescaling) and CFO squared error

over sweeps of SNR, CFO and any config key, writes one CSV row per trial
plus a JSON manifest (optionally per-trial solver traces and instance
bundles), and aggregates records into plot-ready CSVs.

Every trial derives its generators from SeedSequence([seed, trial]), so
sweep points share channel, phase, training and noise draws (common random
numbers) and results do not depend on the number of workers.

Usage:
    python harness.py run --config configs/desk.json --out results/desk
    python harness.py run --config configs/desk.json --sweep Np=128,256,512
    python harness.py run --config configs/desk.json --trials 2 --trace --save-instances
    python harness.py figures --records results/desk/records.csv --out results/desk/figures
    python harness.py selftest
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import math
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

import fixtures
import oracle
import pbigamp
from channel import (
    AngleDelayChannel,
    ChannelGenParams,
    calibrate_normalization,
    generate_channel,
    sample_sparse_angle_delay,
    to_angle_delay,
)
from errors import DegenerateInputError, EstimationError, EstimationFailedError, SolverDivergenceError
from estimators import cfo_estimate, wrap_angle
from measurement import Quantizer, forward_factored, observe, snr_to_sigma2
from phase import PhaseParams, gen_phase_errors, ppm_to_digital, to_spectrum
from training import TrainingKind, assemble_F, gen_training

logger = logging.getLogger(__name__)

CALIBRATION_STREAM = 2**31 - 1
CALIBRATION_REALIZATIONS = 500
RECORDS_FILE = "records.csv"
MANIFEST_FILE = "manifest.json"
TRACES_DIR = "traces"
INSTANCES_DIR = "instances"


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class ChannelSettings(BaseModel):
    clusters: int = Field(4, ge=1)
    rays_per_cluster: int = Field(5, ge=1)
    angle_spread_deg: float = Field(15.0, ge=0)
    delay_spread_max: float = Field(30e-9, ge=0)
    normalization: float | None = Field(None, gt=0)
    exact_sparsity: int | None = Field(None, ge=1)


class CfoSettings(BaseModel):
    """Exactly one of: a digital CFO, a CFO in DFT bins, or a ppm list."""
    epsilon: float | None = None
    cfo_bins: float | None = None
    ppm: list[float] | None = None

    @model_validator(mode="after")
    def _exactly_one(self) -> CfoSettings:
        given = [v is not None for v in (self.epsilon, self.cfo_bins, self.ppm)]
        if sum(given) != 1:
            raise ValueError("set exactly one of epsilon, cfo_bins, ppm")
        if self.ppm is not None and not self.ppm:
            raise ValueError("ppm list is empty")
        return self

    def points(self, Np: int, f1: float, T: float) -> list[tuple[float, float | None]]:
        """[(epsilon, ppm or None), ...]."""
        if self.epsilon is not None:
            return [(self.epsilon, None)]
        if self.cfo_bins is not None:
            return [(2.0 * math.pi * self.cfo_bins / Np, None)]
        return [(ppm_to_digital(p, f1, T), p) for p in self.ppm]


class SolverSettings(BaseModel):
    t_max: int = Field(200, ge=1)
    tau_stop: float = Field(1e-7, gt=0)
    damping: float = Field(0.3, gt=0, le=1)
    em_outer_iters: int = Field(10, ge=1)
    restarts: int = Field(3, ge=0)
    init_seed: int | None = None
    lambda_b: float = Field(0.99, ge=0, lt=1)
    lambda_c: float = Field(0.95, ge=0, lt=1)
    sigma_b2: float | None = Field(None, gt=0)
    sigma_c2: float | None = Field(None, gt=0)
    relative_noise_floor: float = Field(1e-4, ge=0, lt=1)
    blowup_factor: float = Field(1e6, gt=1)
    min_sign_agreement: float = Field(0.55, ge=0.5, lt=1)

    def gamp_config(self, init_seed: int) -> pbigamp.GampConfig:
        return pbigamp.GampConfig(
            t_max=self.t_max, tau_stop=self.tau_stop, damping=self.damping,
            em_outer_iters=self.em_outer_iters, restarts=self.restarts,
            init_seed=init_seed, relative_noise_floor=self.relative_noise_floor,
            blowup_factor=self.blowup_factor, min_sign_agreement=self.min_sign_agreement,
        )

    def hyperparams(self, Np: int, L: int, sigma2: float) -> pbigamp.Hyperparams:
        return pbigamp.Hyperparams.default_for(
            Np, L, sigma2, lambda_b=self.lambda_b, lambda_c=self.lambda_c,
            sigma_b2=self.sigma_b2, sigma_c2=self.sigma_c2,
        )


class ExperimentConfig(BaseModel):
    Nrx: int = Field(8, ge=1)
    Ntx: int = Field(8, ge=1)
    L: int = Field(4, ge=1)
    Np: int = Field(256, ge=1)
    f1: float = Field(38e9, gt=0)
    T: float = Field(10e-9, gt=0)
    channel: ChannelSettings = ChannelSettings()
    training: TrainingKind = TrainingKind.IID_QPSK
    zc_root: int = 1
    power: float = Field(1.0, gt=0)
    quantizer: Quantizer = Quantizer.ONE_BIT
    snr_db: list[float] = Field(default_factory=lambda: [0.0], min_length=1)
    cfo: CfoSettings = CfoSettings(cfo_bins=2.0)
    beta: float = Field(0.0, ge=0)
    trials: int = Field(10, ge=1)
    solver: SolverSettings = SolverSettings()
    seed: int = 0
    output: str = "results"
    trim_fraction: float = Field(1.0, gt=0, le=1)
    success_threshold: float = Field(0.1, gt=0)
    trace: bool = False
    save_instances: bool = False

    @field_validator("quantizer", mode="before")
    @classmethod
    def _parse_quantizer(cls, value: Any) -> Quantizer:
        return Quantizer.parse(value)

    @model_validator(mode="after")
    def _check_dimensions(self) -> ExperimentConfig:
        if self.training is TrainingKind.SHIFTED_ZC and self.Ntx > self.Np:
            raise ValueError("shifted ZC training needs Ntx <= Np")
        if self.L > self.Np:
            raise ValueError("L must not exceed Np")
        if self.channel.exact_sparsity is not None and \
                self.channel.exact_sparsity > self.Nrx * self.Ntx * self.L:
            raise ValueError("exact_sparsity exceeds the size of C")
        return self

    def channel_params(self) -> ChannelGenParams:
        return ChannelGenParams(
            n_clusters=self.channel.clusters,
            rays_per_cluster=self.channel.rays_per_cluster,
            angle_spread=math.radians(self.channel.angle_spread_deg),
            delay_spread_max=self.channel.delay_spread_max,
            Nrx=self.Nrx, Ntx=self.Ntx, L=self.L, T=self.T,
        )

    @classmethod
    def create_default(cls) -> ExperimentConfig:
        return cls()


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.model_validate(json.load(fh))


def _coerce(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_sweep(spec: str) -> tuple[str, list[Any]]:
    """'Np=128,256' -> ('Np', [128, 256])."""
    key, sep, values = spec.partition("=")
    if not sep or not key.strip() or not values.strip():
        raise ValueError(f"bad sweep {spec!r}, expected key=v1,v2,...")
    return key.strip(), [_coerce(v.strip()) for v in values.split(",")]


def apply_override(cfg: ExperimentConfig, key: str, value: Any) -> ExperimentConfig:
    """Set a dotted key (e.g. 'solver.damping') and re-validate."""
    data = cfg.model_dump(mode="json")
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ValueError(f"unknown config key {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ValueError(f"unknown config key {key!r}")
    node[parts[-1]] = value
    if parts[0] == "cfo":
        # switching CFO mode drops the previous one
        for other in ("epsilon", "cfo_bins", "ppm"):
            if other != parts[-1]:
                node[other] = None
    return ExperimentConfig.model_validate(data)


def expand_sweeps(cfg: ExperimentConfig, sweeps: Sequence[tuple[str, list[Any]]]
                  ) -> list[tuple[dict[str, Any], ExperimentConfig]]:
    if not sweeps:
        return [({}, cfg)]
    keys = [k for k, _ in sweeps]
    out = []
    for combo in itertools.product(*[v for _, v in sweeps]):
        point = cfg
        for key, value in zip(keys, combo):
            point = apply_override(point, key, value)
        out.append((dict(zip(keys, combo)), point))
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def nmse(C: AngleDelayChannel | np.ndarray, C_hat: AngleDelayChannel | np.ndarray
         ) -> tuple[float, complex]:
    """(||C - gamma C_hat||^2 / ||C||^2, gamma) with gamma = <C_hat, C> / ||C_hat||^2."""
    C = C.C if isinstance(C, AngleDelayChannel) else np.asarray(C)
    C_hat = C_hat.C if isinstance(C_hat, AngleDelayChannel) else np.asarray(C_hat)
    ref = float(np.sum(np.abs(C) ** 2))
    if ref <= 0.0:
        raise DegenerateInputError("reference channel is zero")
    est = float(np.sum(np.abs(C_hat) ** 2))
    if est <= 0.0:
        return 1.0, 0j
    gamma = complex(np.vdot(C_hat, C)) / est
    err = float(np.sum(np.abs(C - gamma * C_hat) ** 2)) / ref
    return err, gamma


def to_db(value: float) -> float:
    return 10.0 * math.log10(value) if value > 0 else -math.inf


def cfo_squared_error(eps_hat: float, eps: float) -> float:
    return wrap_angle(eps_hat - eps) ** 2


def trimmed_mean(values: Iterable[float], keep: float = 0.95) -> float:
    """Mean of the smallest ceil(keep * n) values."""
    ordered = sorted(v for v in values if not math.isnan(v))
    if not ordered:
        return math.nan
    count = max(1, math.ceil(keep * len(ordered)))
    return float(np.mean(ordered[:count]))


@dataclass
class MetricRecord:
    point: int
    trial: int
    sweep: str
    Nrx: int
    Ntx: int
    L: int
    Np: int
    training: str
    quantizer: str
    snr_db: float
    epsilon: float
    ppm: float
    beta: float
    nmse: float
    nmse_db: float
    cfo_sq_error: float
    iterations: int
    converged: bool
    diverged: bool
    restarts: int
    wall_time: float


def nse_cdf(records: Sequence[MetricRecord]) -> list[tuple[float, float]]:
    """Sorted per-trial NSE values with their cumulative fractions."""
    if not records:
        raise DegenerateInputError("no records")
    values = sorted(r.nmse for r in records)
    n = len(values)
    return [(v, (i + 1) / n) for i, v in enumerate(values)]


def recovery_probability(records: Sequence[MetricRecord], threshold: float = 0.1) -> float:
    if not records:
        raise DegenerateInputError("no records")
    return sum(r.nmse < threshold for r in records) / len(records)


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorkItem:
    point: int
    sweep: dict[str, Any]
    cfg: ExperimentConfig
    snr_db: float
    epsilon: float
    ppm: float | None
    trial: int
    normalization: float
    artifact_dir: str | None = None

    @property
    def stem(self) -> str:
        return f"point{self.point}_trial{self.trial}"


def simulate_trial(item: WorkItem) -> MetricRecord:
    cfg = item.cfg
    streams = np.random.SeedSequence([cfg.seed, item.trial]).spawn(5)
    rng_channel, rng_phase, rng_train, rng_noise = (np.random.default_rng(s) for s in streams[:4])
    init_seed = cfg.solver.init_seed
    if init_seed is None:
        init_seed = int(streams[4].generate_state(1)[0])

    if cfg.channel.exact_sparsity is not None:
        C = sample_sparse_angle_delay(cfg.Nrx, cfg.Ntx, cfg.L, cfg.channel.exact_sparsity, rng_channel)
    else:
        C = to_angle_delay(generate_channel(cfg.channel_params(), rng_channel, item.normalization))
    d = gen_phase_errors(PhaseParams(item.epsilon, cfg.beta, cfg.Np), rng_phase)
    T = gen_training(cfg.training, cfg.Ntx, cfg.Np, cfg.power, rng_train, root=cfg.zc_root)
    F = assemble_F(T, cfg.L)
    sigma2 = snr_to_sigma2(T, item.snr_db)
    received = observe(forward_factored(C, F, to_spectrum(d)), sigma2, cfg.quantizer, rng_noise)
    if cfg.save_instances and item.artifact_dir is not None:
        fixtures.save_bundle(Path(item.artifact_dir) / INSTANCES_DIR / f"{item.stem}.npz",
                             C, T, received, item.epsilon)

    hp = cfg.solver.hyperparams(cfg.Np, cfg.L, sigma2)
    start = time.perf_counter()
    diverged = False
    try:
        result = pbigamp.run(received, F, hp, cfg.solver.gamp_config(init_seed))
    except SolverDivergenceError as exc:
        logger.warning("point %d trial %d: %s", item.point, item.trial, exc)
        diverged = True
        err, sq_err, iterations, converged, restarts = 1.0, math.nan, 0, False, exc.attempts
    else:
        err, _ = nmse(C, result.C_hat)
        iterations, converged, restarts = result.iterations, result.converged, result.restarts
        if cfg.trace and item.artifact_dir is not None:
            pbigamp.write_trace_csv(result.trace,
                                    Path(item.artifact_dir) / TRACES_DIR / f"{item.stem}.csv")
        try:
            eps_hat = cfo_estimate(result.b_hat, cfg.beta, sigma2 / cfg.Np)
            sq_err = cfo_squared_error(eps_hat, item.epsilon)
        except EstimationFailedError as exc:
            logger.warning("point %d trial %d: %s", item.point, item.trial, exc)
            sq_err = math.nan
    wall = time.perf_counter() - start

    return MetricRecord(
        point=item.point, trial=item.trial, sweep=json.dumps(item.sweep, sort_keys=True),
        Nrx=cfg.Nrx, Ntx=cfg.Ntx, L=cfg.L, Np=cfg.Np,
        training=cfg.training.value, quantizer=cfg.quantizer.value,
        snr_db=item.snr_db, epsilon=item.epsilon,
        ppm=math.nan if item.ppm is None else item.ppm, beta=cfg.beta,
        nmse=err, nmse_db=to_db(err), cfo_sq_error=sq_err,
        iterations=iterations, converged=converged, diverged=diverged,
        restarts=restarts, wall_time=wall,
    )


def resolve_normalization(cfg: ExperimentConfig) -> float:
    if cfg.channel.normalization is not None:
        return cfg.channel.normalization
    if cfg.channel.exact_sparsity is not None:
        return 1.0
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, CALIBRATION_STREAM]))
    return calibrate_normalization(cfg.channel_params(), rng, CALIBRATION_REALIZATIONS)


def work_items(cfg: ExperimentConfig, sweeps: Sequence[tuple[str, list[Any]]] = ()
               ) -> tuple[list[WorkItem], list[dict[str, Any]]]:
    """All (sweep point x SNR x CFO x trial) items, plus a description of each point."""
    items: list[WorkItem] = []
    points: list[dict[str, Any]] = []
    cache: dict[str, float] = {}
    for label, point_cfg in expand_sweeps(cfg, sweeps):
        key = json.dumps([point_cfg.channel.model_dump(mode="json"),
                          point_cfg.Nrx, point_cfg.Ntx, point_cfg.L, point_cfg.T, point_cfg.seed])
        if key not in cache:
            cache[key] = resolve_normalization(point_cfg)
        norm = cache[key]
        for snr in point_cfg.snr_db:
            for eps, ppm in point_cfg.cfo.points(point_cfg.Np, point_cfg.f1, point_cfg.T):
                index = len(points)
                points.append({"point": index, "sweep": label, "snr_db": snr,
                               "epsilon": eps, "ppm": ppm, "normalization": norm})
                items.extend(
                    WorkItem(index, label, point_cfg, snr, eps, ppm, trial, norm)
                    for trial in range(point_cfg.trials)
                )
    return items, points


def _map_items(items: list[WorkItem], workers: int) -> Iterator[MetricRecord]:
    if workers <= 1:
        yield from map(simulate_trial, items)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(simulate_trial, items, chunksize=max(1, len(items) // (4 * workers)))


def _artifact_dirs(cfg: ExperimentConfig, sweeps: Sequence[tuple[str, list[Any]]],
                   out: Path) -> dict[str, str]:
    """Create the per-trial trace and instance directories any sweep point asks for."""
    configs = [point_cfg for _, point_cfg in expand_sweeps(cfg, sweeps)]
    wanted = {
        "traces": (TRACES_DIR, any(c.trace for c in configs)),
        "instances": (INSTANCES_DIR, any(c.save_instances for c in configs)),
    }
    dirs = {}
    for name, (sub, enabled) in wanted.items():
        if enabled:
            (out / sub).mkdir(exist_ok=True)
            dirs[name] = sub
    return dirs


def run_experiment(cfg: ExperimentConfig, sweeps: Sequence[tuple[str, list[Any]]] = (),
                   workers: int = 1, out_dir: str | Path | None = None) -> list[MetricRecord]:
    """Run every trial; records come back (and are written) in work-item order."""
    items, points = work_items(cfg, sweeps)
    logger.info("running %d trials over %d sweep points with %d worker(s)",
                len(items), len(points), workers)
    writer = None
    fh = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        artifacts = _artifact_dirs(cfg, sweeps, out)
        if artifacts:
            items = [dataclasses.replace(item, artifact_dir=str(out)) for item in items]
        write_manifest(out / MANIFEST_FILE, cfg, sweeps, points, artifacts)
        fh = open(out / RECORDS_FILE, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
    records: list[MetricRecord] = []
    try:
        for record in _map_items(items, workers):
            records.append(record)
            if writer is not None:
                writer.writerow(_record_row(record))
                fh.flush()
            if record.trial == 0:
                logger.info("point %d started (%s, snr %.1f dB)", record.point, record.sweep, record.snr_db)
    finally:
        if fh is not None:
            fh.close()
    return records


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

RECORD_FIELDS = [f.name for f in dataclasses.fields(MetricRecord)]


def _cell(value: Any) -> Any:
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return value


def _record_row(record: MetricRecord) -> list[Any]:
    return [_cell(v) for v in dataclasses.astuple(record)]


def write_records_csv(records: Iterable[MetricRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RECORD_FIELDS)
        for record in records:
            writer.writerow(_record_row(record))


def read_records_csv(path: str | Path) -> list[MetricRecord]:
    types = {f.name: f.type for f in dataclasses.fields(MetricRecord)}
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values = {}
            for name, raw in row.items():
                kind = types[name]
                if kind == "int":
                    values[name] = int(raw)
                elif kind == "float":
                    values[name] = float(raw)
                elif kind == "bool":
                    values[name] = raw == "True"
                else:
                    values[name] = raw
            records.append(MetricRecord(**values))
    return records


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, check=True, cwd=Path(__file__).resolve().parent)
    except (OSError, subprocess.CalledProcessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def write_manifest(path: str | Path, cfg: ExperimentConfig,
                   sweeps: Sequence[tuple[str, list[Any]]], points: list[dict[str, Any]],
                   artifacts: dict[str, str] | None = None) -> None:
    manifest = {
        "config": cfg.model_dump(mode="json"),
        "sweeps": [{"key": k, "values": v} for k, v in sweeps],
        "points": points,
        "code_version": git_describe(),
        "seed": cfg.seed,
    }
    if artifacts:
        manifest["artifacts"] = artifacts
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)


# ---------------------------------------------------------------------------
# Figure tables
# ---------------------------------------------------------------------------

def _group(records: Iterable[MetricRecord], keys: Sequence[str]) -> dict[tuple, list[MetricRecord]]:
    groups: dict[tuple, list[MetricRecord]] = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, k) for k in keys), []).append(r)
    return dict(sorted(groups.items(), key=lambda kv: kv[0]))


def _nmse_rows(records, keys, trim, threshold):
    rows = []
    for group_key, members in _group(records, keys).items():
        values = [r.nmse for r in members]
        rows.append({
            **dict(zip(keys, group_key)),
            "trials": len(members),
            "median_nmse_db": to_db(float(np.median(values))),
            "mean_nmse_db": to_db(trimmed_mean(values, trim)),
            "recovery_probability": recovery_probability(members, threshold),
        })
    return rows


def _cfo_rows(records, keys, trim):
    rows = []
    for group_key, members in _group(records, keys).items():
        errors = [r.cfo_sq_error for r in members if not math.isnan(r.cfo_sq_error)]
        mse = trimmed_mean(errors, trim)
        rows.append({
            **dict(zip(keys, group_key)),
            "trials": len(errors),
            "cfo_mse": mse,
            "cfo_mse_db": to_db(mse) if not math.isnan(mse) else math.nan,
        })
    return rows


# Operating-point keys shared by every table besides its own x axis.
CONDITION_KEYS = ("training", "quantizer", "beta", "epsilon")


def figure_tables(records: Sequence[MetricRecord], threshold: float = 0.1,
                  trim: float = 1.0) -> dict[str, list[dict[str, Any]]]:
    cond = CONDITION_KEYS
    tables = {
        "nmse_vs_pilots": _nmse_rows(records, (*cond, "snr_db", "Np"), trim, threshold),
        "nmse_vs_snr": _nmse_rows(records, (*cond, "Np", "snr_db"), trim, threshold),
        "cfo_mse_vs_snr": _cfo_rows(records, (*cond, "Np", "snr_db"), trim),
        "cfo_mse_vs_pilots": _cfo_rows(records, (*cond, "snr_db", "Np"), trim),
        "nmse_vs_ppm": _nmse_rows([r for r in records if not math.isnan(r.ppm)],
                                  ("training", "quantizer", "beta", "snr_db", "ppm", "epsilon"),
                                  trim, threshold),
    }
    cdf_keys = (*cond, "Np", "snr_db")
    cdf_rows = []
    for group_key, members in _group(records, cdf_keys).items():
        for value, fraction in nse_cdf(members):
            cdf_rows.append({**dict(zip(cdf_keys, group_key)), "nse": value, "cdf": fraction})
    tables["nse_cdf"] = cdf_rows
    return tables


def write_figures(records: Sequence[MetricRecord], out_dir: str | Path,
                  threshold: float = 0.1, trim: float = 1.0) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in figure_tables(records, threshold, trim).items():
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            if rows:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
        written.append(path)
        logger.info("wrote %s (%d rows)", path, len(rows))
    return written


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="INFO")
    parser = argparse.ArgumentParser(prog="harness", description=__doc__.split("\n")[1])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run a Monte Carlo experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--trials", type=int)
    run.add_argument("--sweep", action="append", default=[], metavar="KEY=V1,V2")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--trace", action="store_true", help="write per-trial solver traces")
    run.add_argument("--save-instances", action="store_true",
                     help="write per-trial problem instances as .npz bundles")

    figures = sub.add_parser("figures", parents=[common], help="aggregate records into per-figure CSVs")
    figures.add_argument("--records", required=True)
    figures.add_argument("--out", required=True)
    figures.add_argument("--threshold", type=float, default=0.1)
    figures.add_argument("--trim", type=float, default=1.0)

    selftest = sub.add_parser("selftest", parents=[common], help="run the oracle equivalence suite")
    selftest.add_argument("--instances", type=int, default=20)
    selftest.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = apply_override(cfg, "seed", args.seed)
    if args.trials is not None:
        cfg = apply_override(cfg, "trials", args.trials)
    if args.trace:
        cfg = apply_override(cfg, "trace", True)
    if args.save_instances:
        cfg = apply_override(cfg, "save_instances", True)
    sweeps = [parse_sweep(s) for s in args.sweep]
    out_dir = args.out or cfg.output
    records = run_experiment(cfg, sweeps, workers=args.workers, out_dir=out_dir)
    write_figures(records, Path(out_dir) / "figures", cfg.success_threshold, cfg.trim_fraction)
    diverged = sum(r.diverged for r in records)
    if diverged:
        logger.error("%d of %d trials diverged", diverged, len(records))
        return 1
    return 0


def _cmd_figures(args: argparse.Namespace) -> int:
    write_figures(read_records_csv(args.records), args.out, args.threshold, args.trim)
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    report = oracle.run_equivalence_suite(args.instances, args.seed)
    print(report.summary())
    return 0 if report.passed else 1


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    commands = {"run": _cmd_run, "figures": _cmd_figures, "selftest": _cmd_selftest}
    try:
        return commands[args.command](args)
    except (EstimationError, OSError, ValidationError, ValueError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
