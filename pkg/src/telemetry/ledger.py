"""
Bit-exact bandwidth accounting.

Three channels are tracked: anchors (prefetchable downlink), corrections
(online downlink, due at the participation round) and gradients (uplink).
Payload and side-information bits are kept apart; reductions are computed
on payload bits unless asked otherwise.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field

from src.codec import EncodedBlob, make_compressor

logger = logging.getLogger(__name__)

ANCHOR_DOWNLINK = 'anchor_downlink'
CORRECTION_DOWNLINK = 'correction_downlink'
UPLINK = 'uplink'
CHANNELS = (ANCHOR_DOWNLINK, CORRECTION_DOWNLINK, UPLINK)

FULL_PRECISION_BITS = 32


def _zero_counts():
    return {channel: 0 for channel in CHANNELS}


@dataclass
class BandwidthLedger:
    """
    Cumulative and per-round bit counts by channel.

    A session is one participation of one client; the uncompressed baseline
    downloads the full 32-bit model once per session and uploads one 32-bit
    gradient.
    """
    payload_bits: dict = field(default_factory=_zero_counts)
    side_info_bits: dict = field(default_factory=_zero_counts)
    transfers: dict = field(default_factory=_zero_counts)
    round_bits: dict = field(default_factory=_zero_counts)
    client_online_bits: dict = field(default_factory=lambda: defaultdict(int))
    sessions: int = 0
    baseline_session_bits: int = 0

    def start_round(self):
        self.round_bits = _zero_counts()

    def record(self, channel: str, blob: EncodedBlob, client_id: int = None):
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel '{channel}' (expected one of {CHANNELS})")
        self.payload_bits[channel] += blob.bit_length
        self.side_info_bits[channel] += blob.side_info_bits
        self.round_bits[channel] += blob.bit_length
        self.transfers[channel] += 1
        if channel == CORRECTION_DOWNLINK and client_id is not None:
            self.client_online_bits[int(client_id)] += blob.bit_length
        return self

    def record_session(self, dimension: int):
        """Register one participation and its full-precision baseline."""
        self.sessions += 1
        self.baseline_session_bits += FULL_PRECISION_BITS * int(dimension)
        return self

    def total(self, channel: str, include_side_info: bool = False) -> int:
        bits = self.payload_bits[channel]
        if include_side_info:
            bits += self.side_info_bits[channel]
        return bits

    def as_dict(self) -> dict:
        return {
            'payload_bits': dict(self.payload_bits),
            'side_info_bits': dict(self.side_info_bits),
            'transfers': dict(self.transfers),
            'sessions': self.sessions,
            'baseline_session_bits': self.baseline_session_bits,
        }


def record_transfer(ledger: BandwidthLedger, channel: str, blob: EncodedBlob, client_id: int = None) -> BandwidthLedger:
    """Add one blob to a channel; payload bits and side information are tallied separately."""
    return ledger.record(channel, blob, client_id)


# ============================================================================
# REDUCTION REPORT
# ============================================================================

def _ratio(baseline, measured):
    if measured == 0:
        return math.inf if baseline > 0 else math.nan
    return baseline / measured


def _budget(config, attribute, key):
    if config is None:
        return None
    if isinstance(config, dict):
        value = config.get(key, config.get(attribute))
    else:
        value = getattr(config, attribute, None)
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return float(value)
    return make_compressor(value).bits_per_coordinate


@dataclass
class ReductionReport:
    """Downlink and uplink reduction factors against 32-bit transport"""
    online: float
    total: float
    uplink: float
    online_with_side_info: float
    total_with_side_info: float
    nominal_online: float = None
    nominal_total: float = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def reduction_report(ledger: BandwidthLedger, config=None) -> ReductionReport:
    """
    Measured (and, given budgets, nominal) bandwidth reductions.

    Online reduction compares the correction channel with one full model per
    session; total reduction adds the anchor each session downloads.

    Args:
        ledger: ledger with at least one recorded session
        config: object or dict naming the anchor/correction compressors
            (`anchor_codec`/`correction_codec` or `b_w`/`b_c`)

    Returns:
        ReductionReport
    """
    if ledger.sessions == 0:
        raise ValueError("reduction report needs at least one recorded session")
    baseline = ledger.baseline_session_bits
    corr = ledger.total(CORRECTION_DOWNLINK)
    anchor = ledger.total(ANCHOR_DOWNLINK)

    report = ReductionReport(
        online=_ratio(baseline, corr),
        total=_ratio(baseline, corr + anchor),
        uplink=_ratio(baseline, ledger.total(UPLINK)),
        online_with_side_info=_ratio(baseline, ledger.total(CORRECTION_DOWNLINK, True)),
        total_with_side_info=_ratio(baseline, ledger.total(CORRECTION_DOWNLINK, True)
                                    + ledger.total(ANCHOR_DOWNLINK, True)),
    )

    b_w = _budget(config, 'anchor_codec', 'b_w')
    b_c = _budget(config, 'correction_codec', 'b_c')
    if b_c is not None:
        report.nominal_online = _ratio(FULL_PRECISION_BITS, b_c)
        if b_w is not None:
            report.nominal_total = _ratio(FULL_PRECISION_BITS, b_w + b_c)
    return report
