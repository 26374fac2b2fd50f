"""
Parameter Server Agent
Owns the model weights, deploys compressed anchors every K rounds, serves
corrections against each client's decoded anchor and applies the
aggregated gradient step.
"""

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from src.codec import Compressor, EncodedBlob, decode_blob, make_compressor
from src.codec.blob import encode_raw
from src.exceptions import NumericBlowup, ProtocolViolation
from src.protocol.anchor_queue import AnchorEntry, AnchorQueue
from src.protocol.client_agent import ClientSession, CorrectionPacket, transportable
from src.protocol.seeds import ANCHOR_STREAM, CORRECTION_STREAM, WEIGHTS_STREAM, derive_seed

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ServerState:
    """
    Mutable server state.

    Attributes:
        weights: current model w_t (float32)
        round: current round t
        learning_rate: eta
        anchor_rate: K, an anchor is deployed iff t mod K == 0
        queue: compressed anchors
        anchor_codec / correction_codec / gradient_codec: C_w, C_c, C_g
    """
    weights: np.ndarray
    round: int
    learning_rate: float
    anchor_rate: int
    queue: AnchorQueue
    anchor_codec: Compressor
    correction_codec: Compressor
    gradient_codec: Compressor
    velocity: np.ndarray = field(default=None, repr=False)

    @property
    def dimension(self) -> int:
        return self.weights.size


class ParameterServerAgent:
    """
    Parameter Server Agent - anchor deployment, corrections and aggregation

    All server mutations happen at round barriers: `deploy_anchor` at the
    start of an anchor round and `aggregate_and_step` at its end.
    """

    def __init__(self, initial_weights, learning_rate: float, anchor_rate: int = 1, queue_capacity: int = 1,
                 anchor_codec='identity', correction_codec='identity', gradient_codec='identity',
                 participants_per_round: int = 1, seed: int = 0, momentum: float = 0.0,
                 weight_decay: float = 0.0, history: int = None):
        """
        Args:
            initial_weights: w_0
            learning_rate: eta >= 0
            anchor_rate: K
            queue_capacity: V
            anchor_codec, correction_codec, gradient_codec: compressors or spec strings
            participants_per_round: S, the exact number of gradients per step
            seed: run seed for every codec draw the server makes
            momentum: heavy-ball coefficient in [0, 1)
            weight_decay: decoupled weight decay
            history: keep per-round anchors of the last `history` rounds (raw-age anchors)
        """
        if learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {learning_rate}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be non-negative, got {weight_decay}")
        weights = np.array(initial_weights, dtype=np.float64).ravel()
        if not transportable(weights):
            raise NumericBlowup("initial weights are not finite", last_good_round=None)
        weights = weights.astype(np.float32)

        self.state = ServerState(
            weights=weights,
            round=0,
            learning_rate=float(learning_rate),
            anchor_rate=int(anchor_rate),
            queue=AnchorQueue(queue_capacity, anchor_rate),
            anchor_codec=make_compressor(anchor_codec),
            correction_codec=make_compressor(correction_codec),
            gradient_codec=make_compressor(gradient_codec),
            velocity=np.zeros(weights.size),
        )
        self.participants_per_round = int(participants_per_round)
        self.seed = int(seed)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.history_limit = history
        self._history = deque()

    # ============================================================================
    # ACCESSORS
    # ============================================================================

    @property
    def weights(self) -> np.ndarray:
        return self.state.weights

    @property
    def round(self) -> int:
        return self.state.round

    @property
    def queue(self) -> AnchorQueue:
        return self.state.queue

    @property
    def transported_weights(self) -> np.ndarray:
        """w_t as it arrives over uncompressed 32-bit transport."""
        return self.state.weights.astype(np.float64)

    def is_anchor_round(self, t: int = None) -> bool:
        t = self.state.round if t is None else t
        return t % self.state.anchor_rate == 0

    def _check_dimension(self, vector, what):
        if vector.size != self.state.dimension:
            raise ProtocolViolation(f"{what} has {vector.size} coordinates, the model has {self.state.dimension}")

    def _make_entry(self, stamp):
        w = self.state.weights
        blob = self.state.anchor_codec.encode(w, seed=derive_seed(self.seed, ANCHOR_STREAM, stamp))
        return AnchorEntry(stamp=stamp, blob=blob, decoded=decode_blob(blob).astype(np.float64),
                           reference=self.transported_weights)

    # ============================================================================
    # ANCHORS
    # ============================================================================

    def deploy_anchor(self) -> AnchorQueue:
        """Enqueue C_w(w_t); only legal when t mod K == 0."""
        t = self.state.round
        if not self.is_anchor_round(t):
            raise ProtocolViolation(f"anchor deployment at round {t} is off-schedule (K={self.state.anchor_rate})")
        evicted = self.state.queue.enqueue(self._make_entry(t))
        if evicted is not None:
            logger.debug(f"Round {t}: anchor {evicted.stamp} evicted")
        return self.state.queue

    def record_history(self) -> AnchorEntry:
        """Compress w_t as a raw-age anchor; keeps the last `history + 1` rounds."""
        if self.history_limit is None or self.history_limit < 0:
            raise ProtocolViolation("server was created without an anchor history")
        t = self.state.round
        if self._history and self._history[-1].stamp == t:
            return self._history[-1]
        entry = self._make_entry(t)
        self._history.append(entry)
        while len(self._history) > self.history_limit + 1:
            self._history.popleft()
        return entry

    def anchor_at_age(self, age: int) -> AnchorEntry:
        """Raw-age anchor of round t - age."""
        stamp = self.state.round - int(age)
        for entry in self._history:
            if entry.stamp == stamp:
                return entry
        raise ProtocolViolation(f"no anchor of round {stamp} in the server history")

    # ============================================================================
    # DOWNLINK
    # ============================================================================

    def correction_seed(self, client_id: int, t: int = None) -> int:
        t = self.state.round if t is None else t
        return derive_seed(self.seed, CORRECTION_STREAM, client_id, t)

    def _encode_correction(self, anchor, client_id):
        codec = self.state.correction_codec
        seed = self.correction_seed(client_id)
        if codec.lossless:
            # the exact difference costs as much as w_t itself
            return CorrectionPacket(codec.encode(self.state.weights, seed=seed), absolute=True)
        return CorrectionPacket(codec.encode(self.state.weights - anchor, seed=seed), absolute=False)

    def serve_correction(self, session: ClientSession) -> CorrectionPacket:
        """
        Compress w_t - y against the client's decoded anchor y.

        Lossless correction codecs ship w_t itself so the estimate is exact.
        """
        if session.anchor is None:
            raise ProtocolViolation(f"client {session.client_id} has no anchor to correct")
        anchor = np.asarray(session.anchor, dtype=np.float64).ravel()
        self._check_dimension(anchor, "client anchor")
        return self._encode_correction(anchor, session.client_id)

    def estimation_errors(self, session: ClientSession, packet: CorrectionPacket):
        """
        Squared estimate errors with the decoded anchor and with the same anchor
        over uncompressed transport, both corrected with the same seed.

        Returns:
            tuple: (compressed-anchor error, exact-anchor error)
        """
        target = self.transported_weights
        compressed = float(np.sum((reconstruct_estimate(session.anchor, packet) - target) ** 2))
        reference = session.anchor_reference
        if reference is None:
            return compressed, float('nan')
        exact_packet = self._encode_correction(np.asarray(reference, dtype=np.float64), session.client_id)
        exact = float(np.sum((reconstruct_estimate(reference, exact_packet) - target) ** 2))
        return compressed, exact

    def serve_compressed_weights(self, client_id: int) -> EncodedBlob:
        """C_w(w_t) for the weights-only scheme without anchors."""
        return self.state.anchor_codec.encode(self.state.weights,
                                              seed=derive_seed(self.seed, WEIGHTS_STREAM, client_id, self.state.round))

    def serve_full_weights(self) -> EncodedBlob:
        return encode_raw(self.state.weights)

    # ============================================================================
    # AGGREGATION
    # ============================================================================

    def aggregate_and_step(self, gradients) -> ServerState:
        """
        Average the S decoded gradients and take one SGD step.

        Raises:
            ProtocolViolation: wrong gradient count or dimension
            NumericBlowup: the step produced non-finite weights
        """
        gradients = list(gradients)
        if len(gradients) != self.participants_per_round:
            raise ProtocolViolation(
                f"round {self.state.round}: expected {self.participants_per_round} gradients, got {len(gradients)}"
            )
        decoded = []
        for blob in gradients:
            g = decode_blob(blob).astype(np.float64) if isinstance(blob, EncodedBlob) else np.asarray(blob, dtype=np.float64)
            self._check_dimension(g, "gradient")
            decoded.append(g)
        mean = np.mean(decoded, axis=0)

        state = self.state
        direction = mean
        if self.momentum > 0:
            velocity = self.momentum * state.velocity + mean
            direction = velocity
        else:
            velocity = state.velocity
        weights = state.weights.astype(np.float64)
        updated = weights - state.learning_rate * direction
        if self.weight_decay > 0:
            updated = updated - state.learning_rate * self.weight_decay * weights
        if not transportable(updated):
            raise NumericBlowup(f"weights left the 32-bit range after the step of round {state.round}",
                                last_good_round=state.round)
        state.weights = updated.astype(np.float32)
        state.velocity = velocity
        state.round += 1
        return state


def reconstruct_estimate(anchor, packet: CorrectionPacket) -> np.ndarray:
    """Client-side estimate y + C_c(w - y), or the shipped weights for absolute packets."""
    decoded = decode_blob(packet.blob).astype(np.float64)
    if packet.absolute:
        return decoded
    anchor = np.asarray(anchor, dtype=np.float64).ravel()
    if anchor.size != decoded.size:
        raise ProtocolViolation(f"anchor has {anchor.size} coordinates, correction {decoded.size}")
    return anchor + decoded
