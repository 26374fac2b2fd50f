"""
Benchmark and validation commands behind the CLI.

Every command returns a result dict with a 'status' key and writes a CSV
when given an output path.
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from src.codec import make_compressor, nmse
from src.exceptions import ConfigError, NumericBlowup
from src.harness.config import ExperimentConfig
from src.orchestrator import run
from src.protocol import (
    asymptotic_bias,
    noisy_gradient_residual,
    run_docofl_counterexample,
    run_naive_weight_compression,
)
from src.scheduler import Population, RoundSchedule, audit_uniformity, two_tier_policy, uniform_policy

logger = logging.getLogger(__name__)

BENCH_SCHEMES = ('identity', 'ecuq:{b}', 'sq:{b}', 'hadamard_sq:{b}')
BENCH_DISTRIBUTIONS = ('lognormal', 'normal', 'normal_shifted', 'uniform')
BENCH_COLUMNS = ['scheme', 'distribution', 'bits', 'dimension', 'trials', 'mean_nmse', 'std_nmse',
                 'mean_encode_ms', 'payload_bits_per_coordinate']
COUNTEREXAMPLE_COLUMNS = ['omega', 'seeds', 'naive_bias', 'docofl_bias', 'residual_at_optimum',
                          'residual_at_average']
SWEEP_COLUMNS = ['anchor_rate', 'queue_capacity', 'staleness', 'final_loss', 'mean_corr_norm',
                 'avg_grad_sq_norm', 'fingerprint', 'status']


def _save(frame: pd.DataFrame, output):
    if output:
        frame.to_csv(output, index=False, na_rep='nan', float_format='%.10g')
        logger.info(f"Wrote {len(frame)} rows to {output}")


# ============================================================================
# CODEC BENCH
# ============================================================================

def sample_vector(distribution: str, d: int, rng) -> np.ndarray:
    """Benchmark input, rounded to float32 so 32-bit transport is exact."""
    if distribution == 'lognormal':
        x = rng.lognormal(0.0, 1.0, size=d)
    elif distribution == 'normal':
        x = rng.normal(0.0, 1.0, size=d)
    elif distribution == 'normal_shifted':
        x = rng.normal(1.0, 0.1, size=d)
    elif distribution == 'uniform':
        x = rng.uniform(0.0, 1.0, size=d)
    else:
        raise ValueError(f"unknown distribution '{distribution}' (known: {', '.join(BENCH_DISTRIBUTIONS)})")
    return x.astype(np.float32).astype(np.float64)


def codec_bench(schemes=BENCH_SCHEMES, distributions=('lognormal',), budgets=(2, 3, 4), dims=(2 ** 12,),
                trials: int = 10, seed: int = 0, output=None) -> dict:
    """
    Mean NMSE and encode time per (scheme, distribution, bits, dimension).

    Scheme templates may contain '{b}', replaced by each budget; templates
    without it are run once per budget all the same.
    """
    records = []
    for distribution in distributions:
        for d in dims:
            for b in budgets:
                for template in schemes:
                    compressor = make_compressor(template.format(b=b))
                    errors, times, payload = [], [], []
                    for trial in range(trials):
                        rng = np.random.default_rng([int(seed), int(d), int(b), trial])
                        x = sample_vector(distribution, int(d), rng)
                        start = time.perf_counter()
                        blob = compressor.encode(x, seed=trial)
                        times.append(1e3 * (time.perf_counter() - start))
                        errors.append(nmse(x, compressor.decode(blob)))
                        payload.append(blob.bit_length / d)
                    records.append({
                        'scheme': compressor.spec, 'distribution': distribution, 'bits': b, 'dimension': d,
                        'trials': trials, 'mean_nmse': float(np.mean(errors)), 'std_nmse': float(np.std(errors)),
                        'mean_encode_ms': float(np.mean(times)),
                        'payload_bits_per_coordinate': float(np.mean(payload)),
                    })
    frame = pd.DataFrame(records, columns=BENCH_COLUMNS)
    _save(frame, output)
    return {'status': 'success', 'table': frame, 'output': output}


# ============================================================================
# COUNTER-EXAMPLE
# ============================================================================

def counterexample_cmd(omegas=(0.0, 0.25, 0.5, 0.75), eta: float = 0.05, T: int = 20000, seed: int = 0,
                       seeds: int = 1, include_docofl: bool = True, output=None) -> dict:
    """
    Asymptotic bias of naive weight compression against DoCoFL with the same
    noise on the correction, averaged over `seeds` seeds.

    residual_at_optimum is E[f'(1 + eps)], positive for every omega > 0:
    the optimum is not a fixed point of the naive scheme.
    """
    records = []
    for omega in omegas:
        naive, docofl, averages = [], [], []
        for k in range(seeds):
            trajectory = run_naive_weight_compression(omega, eta, T, seed + k)
            naive.append(asymptotic_bias(trajectory))
            averages.append(float(np.mean(trajectory[len(trajectory) // 2:])))
            if include_docofl:
                docofl.append(asymptotic_bias(run_docofl_counterexample(omega, eta, T, seed + k)))
        w_bar = float(np.mean(averages))
        records.append({
            'omega': omega, 'seeds': seeds,
            'naive_bias': float(np.mean(naive)),
            'docofl_bias': float(np.mean(docofl)) if docofl else float('nan'),
            'residual_at_optimum': noisy_gradient_residual(1.0, omega),
            'residual_at_average': noisy_gradient_residual(w_bar, omega),
        })
        logger.info(f"omega={omega}: naive bias {records[-1]['naive_bias']:.3e}, "
                    f"DoCoFL bias {records[-1]['docofl_bias']:.3e}")
    frame = pd.DataFrame(records, columns=COUNTEREXAMPLE_COLUMNS)
    _save(frame, output)
    return {'status': 'success', 'table': frame, 'output': output}


# ============================================================================
# SCHEDULE AUDIT
# ============================================================================

def schedule_audit_cmd(clients: int = 50, per_round: int = 5, rounds: int = 20000, policy: str = 'two_tier',
                       strong_delay: int = 0, weak_delay: int = 5, weak_fraction: float = 0.5, seed: int = 0,
                       sampling: str = 'iid', schedule_csv=None, alpha: float = 0.001) -> dict:
    """
    Participation-frequency audit of a generated schedule, or of a schedule
    CSV written by a run.
    """
    if schedule_csv:
        schedule = RoundSchedule.from_csv(schedule_csv)
    else:
        population = Population(clients, per_round)
        if policy == 'two_tier':
            population = population.with_tiers(weak_fraction, seed)
            schedule = two_tier_policy(population, strong_delay, weak_delay, rounds, seed, sampling=sampling)
        elif policy == 'uniform':
            schedule = uniform_policy(population, rounds, seed, sampling=sampling)
        else:
            raise ConfigError(f"unknown policy '{policy}'", field='policy')
    warmup = schedule.warmup
    if schedule_csv:
        # imported schedules carry no warmup: skip the longest notice
        lead = int(np.max(np.arange(schedule.rounds)[:, None] - schedule.notify_rounds))
        warmup = min(lead, schedule.rounds - 1)
    report = audit_uniformity(schedule, warmup=warmup)
    result = report.as_dict()
    result.update({'status': 'success', 'policy': schedule.policy, 'warmup': warmup,
                   'within_3sigma': report.within_3sigma, 'passes': report.passes(alpha)})
    return result


# ============================================================================
# K x V SWEEP
# ============================================================================

def _sweep_cell(config: ExperimentConfig) -> dict:
    record = {'anchor_rate': config.anchor_rate, 'queue_capacity': config.queue_capacity,
              'staleness': config.anchor_rate * config.queue_capacity, 'fingerprint': config.fingerprint()}
    try:
        summary = run(config, archive=False).summary
        record.update({'final_loss': summary['final_loss'], 'mean_corr_norm': summary['mean_corr_norm'],
                       'avg_grad_sq_norm': summary['avg_grad_sq_norm'], 'status': 'success'})
    except NumericBlowup as e:
        logger.warning(f"K={config.anchor_rate}, V={config.queue_capacity}: {e}")
        record.update({'final_loss': float('nan'), 'mean_corr_norm': float('nan'),
                       'avg_grad_sq_norm': float('nan'), 'status': 'numeric_failure'})
    return record


def kv_sweep(template: ExperimentConfig, anchor_rates=(1, 5, 10, 20), capacities=(1, 3, 5), workers: int = 1,
             output=None) -> dict:
    """
    One run per (K, V) cell of the grid, reporting final loss and mean
    correction norm. Cells share nothing and may run in parallel processes.
    """
    cells = []
    for K in anchor_rates:
        for V in capacities:
            cells.append(template.with_updates(anchor_rate=int(K), queue_capacity=int(V),
                                               run_name=f"{template.run_name}-K{K}-V{V}"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_cell, cells))
    else:
        records = [_sweep_cell(cell) for cell in cells]
    frame = pd.DataFrame(records, columns=SWEEP_COLUMNS).sort_values(['staleness', 'anchor_rate'], kind='stable')
    frame = frame.reset_index(drop=True)
    _save(frame, output)
    failed = int((frame['status'] != 'success').sum())
    return {'status': 'success' if failed == 0 else 'numeric_failure', 'table': frame, 'output': output}
