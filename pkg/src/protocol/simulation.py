"""
Round loop tying the server and client agents to a schedule.

Modes:
    docofl    anchors every K rounds through a bounded queue, corrections online
    meta      anchors of a raw age in [0, max_age] chosen by an age policy
    naive     clients receive C_w(w_t) directly, no anchors
    baseline  clients receive w_t over 32-bit transport, identity uplink
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.codec import write_blob_stream
from src.codec.blob import encode_raw
from src.exceptions import NumericBlowup, ProtocolViolation
from src.protocol.client_agent import ANCHOR_CHOICES, ClientAgent, ClientSession
from src.protocol.seeds import AGE_STREAM, WEIGHTS_STREAM, stream_rng
from src.protocol.server_agent import ParameterServerAgent
from src.scheduler import Population, RoundSchedule, uniform_policy
from src.tasks import FederatedTask, GradientOracle, counterexample_grad, make_counterexample
from src.telemetry import (
    ANCHOR_DOWNLINK,
    CORRECTION_DOWNLINK,
    UPLINK,
    BandwidthLedger,
    MetricsRow,
    rho_ratio,
    rho_terms,
)

logger = logging.getLogger(__name__)

MODES = ('docofl', 'meta', 'naive', 'baseline')
FETCH_POLICIES = ('notify', 'participate')
AGE_POLICIES = ('newest', 'oldest', 'uniform')


@dataclass
class ProtocolSettings:
    """Everything the round loop needs besides the task and the schedule"""
    mode: str = 'docofl'
    learning_rate: float = 0.1
    anchor_rate: int = 10
    queue_capacity: int = 3
    anchor_codec: str = 'identity'
    correction_codec: str = 'identity'
    gradient_codec: str = 'identity'
    fetch_policy: str = 'notify'
    anchor_choice: str = 'newest'
    max_age: int = 0
    age_policy: str = 'newest'
    download_capacity: int = 0
    strict_anchor: bool = True
    rho_enabled: bool = True
    ignore_correction: bool = False
    server_momentum: float = 0.0
    weight_decay: float = 0.0
    workers: int = 1
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        choices = {
            'mode': (self.mode, MODES),
            'fetch_policy': (self.fetch_policy, FETCH_POLICIES),
            'anchor_choice': (self.anchor_choice, ANCHOR_CHOICES),
            'age_policy': (self.age_policy, AGE_POLICIES),
        }
        for name, (value, allowed) in choices.items():
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got '{value}'")
        if self.anchor_rate < 1 or self.queue_capacity < 1:
            raise ValueError(f"K and V must be >= 1, got K={self.anchor_rate}, V={self.queue_capacity}")
        if self.max_age < 0:
            raise ValueError(f"max_age must be non-negative, got {self.max_age}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be non-negative, got {self.checkpoint_every}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def uses_anchors(self) -> bool:
        return self.mode in ('docofl', 'meta')


@dataclass(eq=False)
class SimulationResult:
    rows: list
    final_weights: np.ndarray
    ledger: BandwidthLedger
    anchor_ages: list = field(default_factory=list)
    trajectory: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def rounds(self) -> int:
        return len(self.rows)


@dataclass(eq=False)
class _SessionOutcome:
    session: ClientSession
    downlink: object
    gradient: object
    correction_norm: float
    estimate_error: float
    rho_errors: Optional[tuple] = None


class FederatedSimulation:
    """
    Coordinator of one run.

    Client sessions of a round may run on worker threads; the server is only
    read during a round and mutated at the barrier, and every random draw is
    keyed by (seed, client, round), so results do not depend on `workers`.
    """

    def __init__(self, task: FederatedTask, schedule: RoundSchedule, settings: ProtocolSettings,
                 oracle: GradientOracle = None, ledger: BandwidthLedger = None):
        if schedule.population.clients != task.clients:
            raise ValueError(f"schedule covers {schedule.population.clients} clients, task has {task.clients}")
        self.task = task
        self.schedule = schedule
        self.settings = settings
        self.oracle = oracle or GradientOracle(task, seed=settings.seed)
        self.ledger = ledger or BandwidthLedger()

        baseline = settings.mode == 'baseline'
        self.server = ParameterServerAgent(
            task.initial_weights,
            learning_rate=settings.learning_rate,
            anchor_rate=settings.anchor_rate,
            queue_capacity=settings.queue_capacity,
            anchor_codec=settings.anchor_codec,
            correction_codec=settings.correction_codec,
            gradient_codec='identity' if baseline else settings.gradient_codec,
            participants_per_round=schedule.population.per_round,
            seed=settings.seed,
            momentum=settings.server_momentum,
            weight_decay=settings.weight_decay,
            history=settings.max_age if settings.mode == 'meta' else None,
        )
        self.client = ClientAgent(
            self.oracle,
            gradient_codec='identity' if baseline else settings.gradient_codec,
            seed=settings.seed,
            download_capacity=settings.download_capacity,
            strict_anchor=settings.strict_anchor,
        )
        self.rows = []
        self.anchor_ages = []
        self._pending = {}

    # ============================================================================
    # ANCHOR ACQUISITION
    # ============================================================================

    def _fetch(self, session, t):
        s = self.settings
        self.client.obtain_anchor(session, self.server.queue, t, choice=s.anchor_choice)
        self.ledger.record(ANCHOR_DOWNLINK, session.anchor_blob, session.client_id)

    def _anchor_age(self, client_id, t):
        limit = min(self.settings.max_age, t)
        policy = self.settings.age_policy
        if policy == 'newest':
            return 0
        if policy == 'oldest':
            return limit
        return int(stream_rng(self.settings.seed, AGE_STREAM, client_id, t).integers(0, limit + 1))

    def _notify(self, t):
        for client_id, participate_round in self.schedule.notifications_at(t):
            session = self.client.open_session(client_id, t, participate_round)
            if self.settings.mode == 'docofl' and self.settings.fetch_policy == 'notify':
                self._fetch(session, t)
            self._pending[(client_id, participate_round)] = session

    def _sessions_at(self, t):
        sessions = []
        for client_id, notify_round in self.schedule.assignments_at(t):
            session = self._pending.pop((client_id, t), None)
            if session is None:
                raise ProtocolViolation(f"client {client_id} takes part in round {t} without a notification")
            if session.notify_round != notify_round:
                raise ProtocolViolation(f"client {client_id}: notification round mismatch for round {t}")
            mode = self.settings.mode
            if mode == 'docofl' and session.anchor is None:
                self._fetch(session, t)
            elif mode == 'meta':
                entry = self.server.anchor_at_age(self._anchor_age(client_id, t))
                self.client.adopt_anchor(session, entry, t, max_age=self.settings.max_age)
                self.ledger.record(ANCHOR_DOWNLINK, entry.blob, client_id)
            if session.anchor_age is not None:
                self.anchor_ages.append(session.anchor_age)
            sessions.append(session)
        return sessions

    # ============================================================================
    # CLIENT WORK
    # ============================================================================

    def _serve(self, session: ClientSession) -> _SessionOutcome:
        s = self.settings
        server, client = self.server, self.client
        target = server.transported_weights
        rho_errors = None
        correction_norm = math.nan

        if s.mode == 'baseline':
            downlink = server.serve_full_weights()
            estimate = client.receive_weights(session, downlink)
        elif s.mode == 'naive':
            downlink = server.serve_compressed_weights(session.client_id)
            estimate = client.receive_weights(session, downlink)
        else:
            correction_norm = float(np.linalg.norm(server.weights - session.anchor))
            if s.ignore_correction:
                downlink = None
                estimate = client.construct_estimate(session)
            else:
                packet = server.serve_correction(session)
                downlink = packet.blob
                estimate = client.construct_estimate(session, packet)
                if s.rho_enabled and session.anchor_age:
                    rho_errors = server.estimation_errors(session, packet)

        gradient = client.compute_gradient(session)
        estimate_error = float(np.sum((estimate - target) ** 2))
        return _SessionOutcome(session, downlink, gradient, correction_norm, estimate_error, rho_errors)

    def _run_sessions(self, sessions, executor):
        if executor is None:
            return [self._serve(session) for session in sessions]
        return list(executor.map(self._serve, sessions))

    # ============================================================================
    # ROUND LOOP
    # ============================================================================

    def _checkpoint(self):
        path = self.settings.checkpoint_path
        if path:
            write_blob_stream(path, [encode_raw(self.server.weights)])

    def _metrics_row(self, t, outcomes, w_t, loss):
        ledger = self.ledger
        rho = numerator = denominator = math.nan
        if self.settings.uses_anchors and self.settings.rho_enabled and not self.settings.ignore_correction:
            w = w_t.astype(np.float64)
            compressed, exact = rho_terms([o.rho_errors for o in outcomes],
                                          [o.session.anchor_age for o in outcomes], np.dot(w, w))
            if exact:
                rho = rho_ratio(compressed, exact)
                numerator, denominator = float(np.sum(compressed)), float(np.sum(exact))
        grad = self.task.gradient(w_t)
        return MetricsRow(
            round=t,
            train_loss=loss,
            grad_sq_norm=float(np.dot(grad, grad)),
            mean_corr_norm=float(np.mean([o.correction_norm for o in outcomes])),
            rho=rho,
            anchor_bits=ledger.round_bits[ANCHOR_DOWNLINK],
            corr_bits=ledger.round_bits[CORRECTION_DOWNLINK],
            uplink_bits=ledger.round_bits[UPLINK],
            cum_anchor_bits=ledger.payload_bits[ANCHOR_DOWNLINK],
            cum_corr_bits=ledger.payload_bits[CORRECTION_DOWNLINK],
            cum_uplink_bits=ledger.payload_bits[UPLINK],
            estimate_error=float(np.mean([o.estimate_error for o in outcomes])),
            rho_numerator=numerator,
            rho_denominator=denominator,
        )

    def step(self, executor=None) -> MetricsRow:
        """Play the server's current round."""
        server, s = self.server, self.settings
        t = server.round
        self.ledger.start_round()
        if s.checkpoint_every and t % s.checkpoint_every == 0:
            self._checkpoint()

        if s.mode == 'docofl' and server.is_anchor_round(t):
            server.deploy_anchor()
        elif s.mode == 'meta':
            server.record_history()

        self._notify(t)
        outcomes = self._run_sessions(self._sessions_at(t), executor)

        for outcome in outcomes:
            cid = outcome.session.client_id
            if outcome.downlink is not None:
                self.ledger.record(CORRECTION_DOWNLINK, outcome.downlink, cid)
            self.ledger.record(UPLINK, outcome.gradient, cid)
            self.ledger.record_session(self.task.dimension)

        w_t = server.weights.copy()
        loss = self.task.loss(w_t)
        if not math.isfinite(loss):
            raise NumericBlowup(f"non-finite training loss at round {t}", last_good_round=t - 1)
        row = self._metrics_row(t, outcomes, w_t, loss)
        self.rows.append(row)
        server.aggregate_and_step([o.gradient for o in outcomes])

        if s.log_every and (t + 1) % s.log_every == 0:
            logger.info(f"Round {t + 1}/{self.schedule.rounds}: loss={row.train_loss:.6f} "
                        f"grad_sq={row.grad_sq_norm:.3e} rho={row.rho:.4f}")
        return row

    def run(self, rounds: int = None, keep_trajectory: bool = False) -> SimulationResult:
        """
        Play `rounds` rounds (default: the whole schedule).

        Raises:
            NumericBlowup: carries the last round whose weights were finite;
                the rows played so far stay in `self.rows`
        """
        rounds = self.schedule.rounds if rounds is None else int(rounds)
        if rounds > self.schedule.rounds:
            raise ValueError(f"schedule covers {self.schedule.rounds} rounds, {rounds} requested")
        trajectory = [self.server.weights.copy()] if keep_trajectory else None

        executor = ThreadPoolExecutor(max_workers=self.settings.workers) if self.settings.workers > 1 else None
        try:
            while self.server.round < rounds:
                self.step(executor)
                if keep_trajectory:
                    trajectory.append(self.server.weights.copy())
        finally:
            if executor is not None:
                executor.shutdown()

        if self.settings.checkpoint_every:
            self._checkpoint()
        return SimulationResult(
            rows=self.rows,
            final_weights=self.server.weights.copy(),
            ledger=self.ledger,
            anchor_ages=self.anchor_ages,
            trajectory=np.array(trajectory) if keep_trajectory else None,
        )


# ============================================================================
# ENTRY POINTS
# ============================================================================

def run_protocol(task: FederatedTask, schedule: RoundSchedule, settings: ProtocolSettings,
                 oracle: GradientOracle = None, keep_trajectory: bool = False) -> SimulationResult:
    """DoCoFL (or a comparison mode) over a whole schedule."""
    return FederatedSimulation(task, schedule, settings, oracle).run(keep_trajectory=keep_trajectory)


def run_meta_algorithm(task: FederatedTask, schedule: RoundSchedule, settings: ProtocolSettings,
                       max_age: int, age_policy: str = 'newest', oracle: GradientOracle = None,
                       keep_trajectory: bool = False) -> SimulationResult:
    """
    Anchors taken from the weights of `age` rounds ago, age in [0, max_age].

    age_policy is 'newest' (age 0), 'oldest' (min(max_age, t)) or 'uniform'.
    """
    params = dict(settings.__dict__, mode='meta', max_age=int(max_age), age_policy=age_policy)
    return run_protocol(task, schedule, ProtocolSettings(**params), oracle, keep_trajectory)


def run_naive_weight_compression(omega: float, eta: float, T: int, seed: int, initial: float = 0.0) -> np.ndarray:
    """
    w_{t+1} = w_t - eta * f'(w_t + eps_t |w_t|) on the scalar counter-example,
    eps_t = +/- omega with equal probability.

    Returns:
        np.ndarray: the T + 1 iterates
    """
    if omega < 0:
        raise ValueError(f"omega must be non-negative, got {omega}")
    eps = stream_rng(seed, WEIGHTS_STREAM).choice([-omega, omega], size=int(T))
    w = np.empty(int(T) + 1)
    w[0] = initial
    for t in range(int(T)):
        w[t + 1] = w[t] - eta * counterexample_grad(w[t] + eps[t] * abs(w[t]))
    return w


def run_docofl_counterexample(omega: float, eta: float, T: int, seed: int, anchor_rate: int = 10,
                              queue_capacity: int = 1, initial: float = 0.0) -> np.ndarray:
    """
    DoCoFL on the scalar counter-example: identity anchors, the same +/- omega
    multiplicative noise applied to the correction.

    Returns:
        np.ndarray: the T + 1 iterates
    """
    task = make_counterexample(initial=initial)
    schedule = uniform_policy(Population(1, 1), int(T), seed)
    settings = ProtocolSettings(
        mode='docofl', learning_rate=eta, anchor_rate=anchor_rate, queue_capacity=queue_capacity,
        anchor_codec='identity', correction_codec=f'noise:{float(omega)!r}', gradient_codec='identity',
        rho_enabled=False, seed=seed, log_every=0,
    )
    return run_protocol(task, schedule, settings, keep_trajectory=True).trajectory[:, 0]


def asymptotic_bias(trajectory, optimum: float = 1.0) -> float:
    """|mean of the last half of the iterates - optimum|."""
    w = np.asarray(trajectory, dtype=np.float64)
    return float(abs(np.mean(w[len(w) // 2:]) - optimum))


def noisy_gradient_residual(w: float, omega: float) -> float:
    """E[f'(w + eps|w|)] under eps = +/- omega; positive at w = 1 for omega > 0."""
    return float(0.5 * (counterexample_grad(w + omega * abs(w)) + counterexample_grad(w - omega * abs(w))))
