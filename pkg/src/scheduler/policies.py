"""
Participation policies.

A policy turns (population, horizon, seed) into a RoundSchedule. Both
policies give every client the same probability S/N of taking part in any
round, which is the property anchor compression relies on.
"""

import logging

import numpy as np

from src.scheduler.population import STRONG, WEAK, Population, RoundSchedule

logger = logging.getLogger(__name__)

SAMPLING_MODES = ('iid', 'epoch')

_SCHEDULE_STREAM = 0x5C4ED


def _draw_round_sets(population: Population, rounds: int, seed: int, sampling: str) -> np.ndarray:
    """
    (T, S) table of uniformly drawn participant sets.

    'iid' draws every round independently. 'epoch' deals rounds out of
    shuffled passes over the whole population, topping up from the next pass
    at a boundary without repeating a client inside one round.
    """
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode '{sampling}' (expected one of {SAMPLING_MODES})")
    N, S = population.clients, population.per_round
    rng = np.random.default_rng([int(seed), _SCHEDULE_STREAM])
    sets = np.empty((rounds, S), dtype=np.int64)

    if sampling == 'iid':
        for t in range(rounds):
            sets[t] = np.sort(rng.choice(N, size=S, replace=False))
        return sets

    deck = []
    for t in range(rounds):
        if len(deck) >= S:
            chosen, deck = deck[:S], deck[S:]
        else:
            chosen = deck
            fresh = rng.permutation(N).tolist()
            taken = set(chosen)
            top_up = [c for c in fresh if c not in taken][:S - len(chosen)]
            used = set(top_up)
            deck = [c for c in fresh if c not in used]
            chosen = chosen + top_up
        sets[t] = np.sort(chosen)
    return sets


def uniform_policy(population: Population, rounds: int, seed: int, sampling: str = 'iid') -> RoundSchedule:
    """
    Uniform S-subsets, notified in the round they participate (zero window).

    Args:
        population: client population
        rounds: horizon T
        seed: schedule seed
        sampling: 'iid' (default) or 'epoch'

    Returns:
        RoundSchedule: notification round equals participation round
    """
    sets = _draw_round_sets(population, rounds, seed, sampling)
    notify = np.repeat(np.arange(rounds)[:, None], population.per_round, axis=1)
    return RoundSchedule(population, sets, notify, policy='uniform', warmup=0)


def two_tier_policy(population: Population, strong_delay: int, weak_delay: int, rounds: int, seed: int,
                    sampling: str = 'iid') -> RoundSchedule:
    """
    Strong clients are told strong_delay rounds ahead, weak ones weak_delay.

    The participant set of every round is drawn uniformly up front; each
    member is then notified its tier delay before that round. Rounds earlier
    than the largest delay in use fall back to the zero-window policy.

    Args:
        population: population carrying a strong/weak tier map
        strong_delay: T_s
        weak_delay: T_w, at least T_s
        rounds: horizon T
        seed: schedule seed
        sampling: 'iid' (default) or 'epoch'

    Returns:
        RoundSchedule: with `warmup` set to the zero-window prefix length
    """
    if strong_delay < 0 or weak_delay < strong_delay:
        raise ValueError(f"tier delays must satisfy 0 <= T_s <= T_w, got T_s={strong_delay}, T_w={weak_delay}")
    if population.tiers is None:
        raise ValueError("two-tier policy needs a population with tiers")

    sets = _draw_round_sets(population, rounds, seed, sampling)
    present = set(population.tiers.values())
    delay_of = {STRONG: strong_delay, WEAK: weak_delay}
    warmup = max(delay_of[tier] for tier in present)

    delays = np.vectorize(lambda cid: delay_of[population.tiers[cid]], otypes=[np.int64])(sets)
    t = np.arange(rounds)[:, None]
    notify = np.where(t >= warmup, t - delays, t)
    logger.debug(f"Two-tier schedule: T_s={strong_delay}, T_w={weak_delay}, warmup={warmup}")
    return RoundSchedule(population, sets, notify, policy='two_tier', warmup=min(warmup, rounds))
