"""
Client population and immutable round schedules.
"""

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

STRONG = 'strong'
WEAK = 'weak'
UNTIERED = 'uniform'

SCHEDULE_COLUMNS = ['round', 'client_id', 'notify_round', 'tier']


@dataclass(frozen=True)
class Population:
    """
    N clients of which S take part in every round.

    Attributes:
        clients: client count N
        per_round: participants per round S, 1 <= S <= N
        tiers: optional map client id -> 'strong' | 'weak'
    """
    clients: int
    per_round: int
    tiers: Optional[Mapping[int, str]] = None

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError(f"population needs at least one client, got {self.clients}")
        if not 1 <= self.per_round <= self.clients:
            raise ValueError(f"per-round participants must lie in [1, {self.clients}], got {self.per_round}")
        if self.tiers is not None:
            unknown = {t for t in self.tiers.values() if t not in (STRONG, WEAK)}
            if unknown:
                raise ValueError(f"unknown tiers {sorted(unknown)}")
            missing = set(range(self.clients)) - set(self.tiers)
            if missing:
                raise ValueError(f"{len(missing)} clients have no tier")

    @property
    def participation_rate(self) -> float:
        return self.per_round / self.clients

    def tier_of(self, client_id: int) -> str:
        if self.tiers is None:
            return UNTIERED
        return self.tiers[int(client_id)]

    def with_tiers(self, weak_fraction: float, seed: int) -> 'Population':
        """Copy with a seeded strong/weak split; round(weak_fraction * N) clients are weak."""
        if not 0.0 <= weak_fraction <= 1.0:
            raise ValueError(f"weak fraction must lie in [0, 1], got {weak_fraction}")
        rng = np.random.default_rng([int(seed), 0x7135])
        weak = set(rng.permutation(self.clients)[:int(round(weak_fraction * self.clients))].tolist())
        tiers = {cid: (WEAK if cid in weak else STRONG) for cid in range(self.clients)}
        return Population(self.clients, self.per_round, tiers)


@dataclass(frozen=True, eq=False)
class RoundSchedule:
    """
    Participant set and notification round of every participation.

    `participants[t]` holds the S distinct clients of round t (ascending),
    `notify_rounds[t]` the round at which each of them was told.
    """
    population: Population
    participants: np.ndarray
    notify_rounds: np.ndarray
    policy: str = 'uniform'
    warmup: int = 0
    _by_notify: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        sets = np.asarray(self.participants, dtype=np.int64)
        notify = np.asarray(self.notify_rounds, dtype=np.int64)
        S = self.population.per_round
        if sets.ndim != 2 or sets.shape[1] != S or notify.shape != sets.shape:
            raise ValueError(f"schedule must be a (T, {S}) table of participants and notification rounds")
        for t, row in enumerate(sets):
            if np.unique(row).size != S:
                raise ValueError(f"round {t} repeats a participant")
        if sets.size and (sets.min() < 0 or sets.max() >= self.population.clients):
            raise ValueError("participant id outside the population")
        rounds = np.arange(sets.shape[0])[:, None]
        if np.any(notify > rounds) or np.any(notify < 0):
            raise ValueError("every notification must precede (or coincide with) its round")
        object.__setattr__(self, 'participants', sets)
        object.__setattr__(self, 'notify_rounds', notify)

        by_notify = {}
        for t in range(sets.shape[0]):
            for cid, s in zip(sets[t].tolist(), notify[t].tolist()):
                by_notify.setdefault(s, []).append((cid, t))
        object.__setattr__(self, '_by_notify', by_notify)

    @property
    def rounds(self) -> int:
        return int(self.participants.shape[0])

    def participants_at(self, t: int) -> list:
        return self.participants[t].tolist()

    def assignments_at(self, t: int) -> list:
        """(client id, notification round) pairs of round t."""
        return list(zip(self.participants[t].tolist(), self.notify_rounds[t].tolist()))

    def notifications_at(self, s: int) -> list:
        """(client id, participation round) pairs notified at round s."""
        return list(self._by_notify.get(s, []))

    def participation_counts(self, start: int = 0) -> np.ndarray:
        return np.bincount(self.participants[start:].ravel(), minlength=self.population.clients)

    # ----- CSV -----

    def to_frame(self) -> pd.DataFrame:
        T, S = self.participants.shape
        clients = self.participants.ravel()
        return pd.DataFrame({
            'round': np.repeat(np.arange(T), S),
            'client_id': clients,
            'notify_round': self.notify_rounds.ravel(),
            'tier': [self.population.tier_of(c) for c in clients.tolist()],
        }, columns=SCHEDULE_COLUMNS)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Schedule with {self.rounds} rounds written to {path}")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, clients: int = None, policy: str = 'imported') -> 'RoundSchedule':
        missing = set(SCHEDULE_COLUMNS) - set(frame.columns)
        if missing:
            raise ValueError(f"schedule table lacks columns {sorted(missing)}")
        frame = frame.sort_values(['round', 'client_id'], kind='stable')
        sizes = frame.groupby('round').size()
        if sizes.nunique() != 1:
            raise ValueError("rounds of an imported schedule differ in size")
        T, S = int(sizes.size), int(sizes.iloc[0])
        if not np.array_equal(sizes.index.to_numpy(), np.arange(T)):
            raise ValueError("imported schedule must cover rounds 0..T-1")
        ids = frame['client_id'].to_numpy(dtype=np.int64)
        clients = int(clients if clients is not None else ids.max() + 1)

        tier_values = frame[['client_id', 'tier']].astype({'tier': str}).drop_duplicates()
        tiers = None
        if set(tier_values['tier']) <= {STRONG, WEAK}:
            tiers = dict(zip(tier_values['client_id'].tolist(), tier_values['tier'].tolist()))
            if len(tiers) < clients:
                tiers = None
        population = Population(clients, S, tiers)
        return cls(population, ids.reshape(T, S), frame['notify_round'].to_numpy(dtype=np.int64).reshape(T, S),
                   policy=policy)

    @classmethod
    def from_csv(cls, path, clients: int = None) -> 'RoundSchedule':
        return cls.from_frame(pd.read_csv(path), clients=clients)
