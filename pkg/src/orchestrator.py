"""
End-to-end experiment pipeline.

    config -> task + schedule -> step size -> round loop -> metrics.csv,
    config.env, schedule.csv, summary.json (+ checkpoints) -> optional GCS archival
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from dotenv import load_dotenv

from src.codec import make_compressor
from src.exceptions import ConfigError, NumericBlowup
from src.harness.artifacts import RunArchiver
from src.harness.config import ExperimentConfig
from src.protocol import FederatedSimulation, ProtocolSettings
from src.scheduler import Population, two_tier_policy, uniform_policy
from src.tasks import (
    GradientOracle,
    estimate_constants,
    load_csv_dataset,
    logistic_from_dataset,
    make_counterexample,
    make_logistic,
    make_mlp,
    make_quadratic,
    probe_points_around,
    reference_optimum,
    tuned_eta,
)
from src.telemetry import convergence_summary, reduction_report, write_metrics_csv

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = 'DOCOFL_OUTPUT_DIR'


@dataclass
class RunResult:
    """Outcome of one run and where its artifacts were written"""
    status: str
    run_dir: str
    metrics_path: str
    summary: dict
    config_text: str
    fingerprint: str
    archive: dict = field(default_factory=dict)


# ============================================================================
# BUILDERS
# ============================================================================

def build_task(config: ExperimentConfig):
    """Federated task described by the config's task keys."""
    if config.task == 'counterexample':
        return make_counterexample(clients=config.clients)
    if config.task == 'quadratic':
        return make_quadratic(config.dimension, config.condition, config.seed, clients=config.clients,
                              heterogeneity=config.heterogeneity, noise=config.gradient_noise)
    if config.task == 'csv':
        features, labels = load_csv_dataset(config.dataset_path)
        return logistic_from_dataset(features, labels, config.clients, config.samples_per_client,
                                     config.skew, config.seed, reg=config.reg, shift=config.shift)
    logistic = make_logistic(config.clients, config.dimension, config.samples_per_client, config.skew,
                             config.seed, reg=config.reg, shift=config.shift, class_sep=config.class_sep)
    if config.task == 'mlp':
        return make_mlp((config.dimension, config.hidden), config.activation, logistic, config.seed, reg=config.reg)
    return logistic


def build_schedule(config: ExperimentConfig):
    population = Population(config.clients, config.per_round)
    if config.policy == 'two_tier':
        population = population.with_tiers(config.weak_fraction, config.seed)
        return two_tier_policy(population, config.strong_delay, config.weak_delay, config.rounds,
                               config.seed, sampling=config.sampling)
    return uniform_policy(population, config.rounds, config.seed, sampling=config.sampling)


def resolve_learning_rate(config: ExperimentConfig, task, oracle):
    """
    Configured eta, or the tuned step size from estimated constants.

    Returns:
        tuple: (eta, ConvergenceConstants or None)
    """
    if not config.is_tuned:
        return config.eta, None
    reference_optimum(task)
    probes = probe_points_around(task, count=config.probe_points, seed=config.seed)
    constants = estimate_constants(task, probes, oracle)
    if config.mode == 'baseline':
        omega = 0.0
    else:
        omega = make_compressor(config.correction_codec).contract(task.dimension).omega
        if omega is None:
            raise ConfigError("tuned learning rate needs a correction codec with an NMSE bound",
                              field='correction_codec')
    eta = tuned_eta(constants, config.rounds, config.per_round, omega, config.anchor_rate, config.queue_capacity)
    logger.info(f"Tuned learning rate: {eta:.6g}")
    return eta, constants


def protocol_settings(config: ExperimentConfig, eta: float, checkpoint_path: str = None) -> ProtocolSettings:
    return ProtocolSettings(
        mode=config.mode,
        learning_rate=eta,
        anchor_rate=config.anchor_rate,
        queue_capacity=config.queue_capacity,
        anchor_codec=config.anchor_codec,
        correction_codec=config.correction_codec,
        gradient_codec=config.gradient_codec,
        fetch_policy=config.fetch_policy,
        anchor_choice=config.anchor_choice,
        max_age=config.max_age,
        age_policy=config.age_policy,
        download_capacity=config.download_capacity,
        strict_anchor=config.strict_anchor,
        rho_enabled=config.rho_enabled,
        ignore_correction=config.ignore_correction,
        server_momentum=config.server_momentum,
        weight_decay=config.weight_decay,
        workers=config.workers,
        checkpoint_every=config.checkpoint_every,
        checkpoint_path=checkpoint_path,
        seed=config.seed,
        log_every=config.log_every,
    )


def resolve_run_dir(config: ExperimentConfig) -> str:
    load_dotenv()
    base = os.getenv(OUTPUT_DIR_ENV) or config.output_dir
    return os.path.join(base, f"{config.run_name}-{config.fingerprint()}")


# ============================================================================
# RUN
# ============================================================================

def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialise {type(value).__name__}")


def _write_summary(path, summary):
    with open(path, 'w') as f:
        json.dump(summary, f, indent=2, sort_keys=True, default=_json_default)


def _summarise(config, task, simulation, eta, constants, status, last_good_round=None):
    rows = simulation.rows
    final = simulation.server.weights
    distance = None
    if task.optimum is not None:
        distance = float(np.linalg.norm(final - task.optimum))

    summary = {
        'status': status,
        'run_name': config.run_name,
        'fingerprint': config.fingerprint(),
        'mode': config.mode,
        'learning_rate': eta,
        'dimension': task.dimension,
        'degenerate_clients': len(task.degenerate_clients),
    }
    if rows:
        warmup = simulation.schedule.warmup
        summary.update(convergence_summary(rows, warmup=warmup, final_distance=distance,
                                           threshold=config.convergence_threshold))
    if simulation.anchor_ages:
        summary['mean_anchor_age'] = float(np.mean(simulation.anchor_ages))
        summary['max_anchor_age'] = int(max(simulation.anchor_ages))
    if simulation.ledger.sessions:
        summary['reduction'] = reduction_report(simulation.ledger, config).as_dict()
    if constants is not None:
        summary['constants'] = constants.as_dict(config.per_round)
    if last_good_round is not None:
        summary['last_good_round'] = last_good_round
    return summary


def run(config: ExperimentConfig, archive: bool = True) -> RunResult:
    """
    Execute one configured experiment and write its artifacts.

    Args:
        config: validated experiment configuration
        archive: upload the run directory when GCS is configured

    Returns:
        RunResult

    Raises:
        ConfigError: the configuration cannot be realised (e.g. unreadable dataset)
        NumericBlowup: non-finite weights; metrics up to the last good round
            and a summary are written before it propagates
    """
    run_dir = resolve_run_dir(config)
    os.makedirs(run_dir, exist_ok=True)
    metrics_path = os.path.join(run_dir, 'metrics.csv')
    checkpoint_path = os.path.join(run_dir, 'checkpoints.bin') if config.checkpoint_every else None
    if checkpoint_path and os.path.exists(checkpoint_path):
        os.remove(checkpoint_path)

    print(f"\n{'=' * 70}")
    print(f"RUN {config.run_name} ({config.mode}, fingerprint {config.fingerprint()})")
    print(f"{'=' * 70}")

    try:
        task = build_task(config)
    except (OSError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"cannot build task: {e}", field='task') from e
    schedule = build_schedule(config)
    oracle = GradientOracle(task, batch_size=config.batch_size, seed=config.seed)
    eta, constants = resolve_learning_rate(config, task, oracle)

    with open(os.path.join(run_dir, 'config.env'), 'w') as f:
        f.write(config.to_text())
    schedule.to_csv(os.path.join(run_dir, 'schedule.csv'))

    simulation = FederatedSimulation(task, schedule, protocol_settings(config, eta, checkpoint_path), oracle)
    try:
        simulation.run()
    except NumericBlowup as e:
        logger.error(f"Run aborted: {e} (last good round {e.last_good_round})")
        write_metrics_csv(simulation.rows, metrics_path)
        _write_summary(os.path.join(run_dir, 'summary.json'),
                       _summarise(config, task, simulation, eta, constants, 'numeric_failure', e.last_good_round))
        raise

    write_metrics_csv(simulation.rows, metrics_path)
    summary = _summarise(config, task, simulation, eta, constants, 'success')
    _write_summary(os.path.join(run_dir, 'summary.json'), summary)

    print(f"✓ {len(simulation.rows)} rounds, final loss {summary['final_loss']:.6f}")
    reduction = summary.get('reduction', {})
    if reduction and math.isfinite(reduction.get('online', math.nan)):
        print(f"  Online downlink reduction: {reduction['online']:.2f}x, total: {reduction['total']:.2f}x")
    print(f"  Artifacts: {run_dir}")

    archive_result = RunArchiver().archive_run(run_dir) if archive else {'status': 'skipped', 'paths': []}
    return RunResult(status='success', run_dir=run_dir, metrics_path=metrics_path, summary=summary,
                     config_text=config.to_text(), fingerprint=config.fingerprint(), archive=archive_result)
