"""
Client Agent
Downloads an anchor inside its notification window, rebuilds the current
model from the anchor plus the server's correction, and uploads one
compressed stochastic gradient.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.codec import Compressor, EncodedBlob, decode_blob, make_compressor
from src.exceptions import NumericBlowup, ProtocolViolation
from src.protocol.seeds import GRADIENT_STREAM, derive_seed

ANCHOR_CHOICES = ('newest', 'oldest')

# largest magnitude 32-bit transport can carry
TRANSPORT_LIMIT = float(np.finfo(np.float32).max)


def transportable(x) -> bool:
    return bool(np.all(np.isfinite(x)) and np.max(np.abs(x), initial=0.0) <= TRANSPORT_LIMIT)


@dataclass(eq=False)
class ClientSession:
    """
    One participation of one client.

    Clients keep nothing between sessions; a re-sampled client starts a new one.
    """
    client_id: int
    notify_round: int
    participate_round: int
    anchor: Optional[np.ndarray] = field(default=None, repr=False)
    anchor_reference: Optional[np.ndarray] = field(default=None, repr=False)
    anchor_stamp: Optional[int] = None
    anchor_blob: Optional[EncodedBlob] = field(default=None, repr=False)
    fetch_round: Optional[int] = None
    estimate: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not 0 <= self.notify_round <= self.participate_round:
            raise ProtocolViolation(
                f"client {self.client_id}: notification round {self.notify_round} "
                f"after participation round {self.participate_round}"
            )

    @property
    def anchor_age(self) -> Optional[int]:
        if self.anchor_stamp is None:
            return None
        return self.participate_round - self.anchor_stamp


@dataclass(frozen=True)
class CorrectionPacket:
    """
    Compressed correction for one session.

    `absolute` packets carry w_t itself rather than w_t - y.
    """
    blob: EncodedBlob
    absolute: bool = False

    @property
    def bits(self) -> int:
        return self.blob.bit_length


def download_rounds(blob: EncodedBlob, capacity: int) -> int:
    """Rounds a download of `blob` occupies at `capacity` bits per round (0 = instantaneous)."""
    if capacity <= 0:
        return 0
    return max(1, math.ceil(blob.total_bits / capacity))


class ClientAgent:
    """
    Client Agent - anchor download, model estimate and gradient upload

    One agent serves every client of a run; per-session state lives in
    ClientSession and every draw is keyed by (seed, client, round).
    """

    def __init__(self, oracle, gradient_codec='identity', seed: int = 0,
                 download_capacity: int = 0, strict_anchor: bool = True):
        """
        Args:
            oracle: GradientOracle of the task
            gradient_codec: C_g, compressor or spec string
            seed: run seed
            download_capacity: anchor bits a client can fetch per round, 0 for unlimited
            strict_anchor: fail when the chosen anchor cannot arrive in time
                instead of falling back to the freshest one that can
        """
        self.oracle = oracle
        self.gradient_codec: Compressor = make_compressor(gradient_codec)
        self.seed = int(seed)
        self.download_capacity = int(download_capacity)
        self.strict_anchor = bool(strict_anchor)

    def open_session(self, client_id: int, notify_round: int, participate_round: int) -> ClientSession:
        return ClientSession(int(client_id), int(notify_round), int(participate_round))

    # ============================================================================
    # ANCHOR
    # ============================================================================

    def _arrives_in_time(self, session, entry):
        start = max(session.notify_round, entry.stamp)
        finish = start + download_rounds(entry.blob, self.download_capacity) - 1
        return finish <= session.participate_round

    def obtain_anchor(self, session: ClientSession, queue, current_round: int,
                      choice: str = 'newest', max_age: int = None) -> ClientSession:
        """
        Take an anchor from the queue during the window [s, t].

        Args:
            session: open session
            queue: AnchorQueue as of `current_round`
            current_round: round of the download, within [s, t]
            choice: 'newest' (protocol) or 'oldest' (staleness stress test)
            max_age: upper bound on t - stamp, if any

        Returns:
            ClientSession: with the decoded anchor and its stamp
        """
        if not session.notify_round <= current_round <= session.participate_round:
            raise ProtocolViolation(
                f"client {session.client_id}: anchor fetched at round {current_round} outside "
                f"[{session.notify_round}, {session.participate_round}]"
            )
        if choice not in ANCHOR_CHOICES:
            raise ValueError(f"anchor choice must be one of {ANCHOR_CHOICES}, got '{choice}'")
        if len(queue) == 0:
            raise ProtocolViolation("anchor queue is empty; no anchor has been deployed yet")

        candidates = queue.newest_first() if choice == 'newest' else list(queue)
        entry = candidates[0]
        if not self._arrives_in_time(session, entry):
            if self.strict_anchor:
                raise ProtocolViolation(
                    f"client {session.client_id}: anchor {entry.stamp} cannot be downloaded by round "
                    f"{session.participate_round} at {self.download_capacity} bits/round"
                )
            completed = [e for e in queue.newest_first() if self._arrives_in_time(session, e)]
            if not completed:
                raise ProtocolViolation(f"client {session.client_id}: no anchor can be downloaded in time")
            entry = completed[0]
        return self.adopt_anchor(session, entry, current_round, max_age)

    def adopt_anchor(self, session: ClientSession, entry, current_round: int, max_age: int = None) -> ClientSession:
        """Store a given anchor entry (queue or raw-age history) in the session."""
        age = session.participate_round - entry.stamp
        if age < 0:
            raise ProtocolViolation(f"anchor {entry.stamp} is newer than round {session.participate_round}")
        if max_age is not None and age > max_age:
            raise ProtocolViolation(f"client {session.client_id}: anchor age {age} exceeds {max_age}")
        session.anchor = entry.decoded
        session.anchor_reference = entry.reference
        session.anchor_stamp = entry.stamp
        session.anchor_blob = entry.blob
        session.fetch_round = int(current_round)
        return session

    # ============================================================================
    # ESTIMATE AND GRADIENT
    # ============================================================================

    def construct_estimate(self, session: ClientSession, packet: CorrectionPacket = None) -> np.ndarray:
        """w_hat = y + decoded correction; without a packet the anchor itself is used."""
        if session.anchor is None and (packet is None or not packet.absolute):
            raise ProtocolViolation(f"client {session.client_id} has no anchor")
        if packet is None:
            estimate = np.array(session.anchor, dtype=np.float64)
        else:
            correction = decode_blob(packet.blob).astype(np.float64)
            if packet.absolute:
                estimate = correction
            else:
                if correction.size != session.anchor.size:
                    raise ProtocolViolation(
                        f"anchor has {session.anchor.size} coordinates, correction {correction.size}"
                    )
                estimate = session.anchor + correction
        session.estimate = estimate
        return estimate

    def receive_weights(self, session: ClientSession, blob: EncodedBlob) -> np.ndarray:
        """Estimate equal to directly downloaded (possibly compressed) weights."""
        session.estimate = decode_blob(blob).astype(np.float64)
        return session.estimate

    def compute_gradient(self, session: ClientSession) -> EncodedBlob:
        """C_g of a stochastic gradient at the session's estimate."""
        if session.estimate is None:
            raise ProtocolViolation(f"client {session.client_id} has no model estimate")
        g = self.oracle.gradient(session.client_id, session.estimate, round_index=session.participate_round)
        if not transportable(g):
            raise NumericBlowup(f"client {session.client_id} produced a non-finite gradient",
                                last_good_round=session.participate_round - 1)
        seed = derive_seed(self.seed, GRADIENT_STREAM, session.client_id, session.participate_round)
        return self.gradient_codec.encode(g, seed=seed)
