"""Delivery assurance for management frames that the receiver's filter rejects.

The sender precedes each management frame with a burst of encrypted
"precursor" data frames so that the receiver's window holds a dense, smooth
picture of the current channel when the management frame arrives. A rejected
frame triggers a negative acknowledgement carried in an encrypted ICMP echo
whose payload is ``TYPE@SEQ``; the sender then retries with a longer burst.
Silence for the N-ACK wait window counts as success, since positive ACKs are
emitted by firmware regardless of the filter's verdict.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace

from .csi import Frame, FrameType
from .detector import Verdict
from .errors import InvalidConfig, InvalidToken, MalformedPayload, ProtocolViolation

log = logging.getLogger(__name__)

_MAX_SEQ = 2**64 - 1
_DECIMAL = re.compile(rb"0|[1-9][0-9]*")


@dataclass(frozen=True)
class CreConfig:
    l1: int = 4
    max_attempts: int = 6
    precursor_gap: float = 0.002
    l_w_peer: int = 45
    rtt: float = 0.005

    def __post_init__(self):
        if self.l1 < 0:
            raise InvalidConfig("l1 must be >= 0")
        if self.max_attempts < 1:
            raise InvalidConfig("max_attempts must be >= 1")
        if self.precursor_gap <= 0:
            raise InvalidConfig("precursor_gap must be positive")
        if self.l_w_peer < 1:
            raise InvalidConfig("l_w_peer must be positive")
        if self.rtt < 0:
            raise InvalidConfig("rtt must be >= 0")

    @property
    def nack_wait(self) -> float:
        """Time after sending M with no N-ACK before delivery is deemed successful."""
        return 2.0 * self.precursor_gap * self.l_w_peer + self.rtt

    def replace(self, **changes) -> "CreConfig":
        return replace(self, **changes)

    def max_frames_per_mf(self) -> int:
        return sum(precursor_length(j, self) + 1 for j in range(1, self.max_attempts + 1))


def precursor_length(j: int, cfg: CreConfig) -> int:
    """Precursor burst length for attempt ``j`` (1-based).

    The first attempt uses ``l1``; later ones double from ``4 * (l1 + 1)``
    and are capped at the receiver's window length.
    """
    if j < 1:
        raise ValueError(f"attempt index starts at 1, got {j}")
    if j == 1:
        return cfg.l1
    return min(2**j * (cfg.l1 + 1), cfg.l_w_peer)


# ---------------------------------------------------------------------------
# N-ACK payload


@dataclass(frozen=True)
class NackMessage:
    frame_type_name: str
    seq: int


def _check_token(token: str):
    if not isinstance(token, str) or not token:
        raise InvalidToken("token must be a non-empty string")
    if "@" in token:
        raise InvalidToken(f"token {token!r} contains '@'")
    if not token.isascii() or not token.isprintable():
        raise InvalidToken(f"token {token!r} is not printable ASCII")


def encode_nack(frame_type_name: str, seq: int) -> bytes:
    """``"PROBE_REQUEST", 42316`` -> ``b"PROBE_REQUEST@42316"``."""
    _check_token(frame_type_name)
    if not isinstance(seq, int) or isinstance(seq, bool) or not 0 <= seq <= _MAX_SEQ:
        raise InvalidToken(f"sequence number {seq!r} out of range")
    return f"{frame_type_name}@{seq}".encode("ascii")


def decode_nack(payload: bytes) -> NackMessage:
    if isinstance(payload, str):
        payload = payload.encode("ascii", errors="strict")
    if payload.count(b"@") != 1:
        raise MalformedPayload(f"expected exactly one '@' in {payload!r}")
    token, digits = payload.split(b"@")
    try:
        name = token.decode("ascii")
        _check_token(name)
    except (UnicodeDecodeError, InvalidToken) as e:
        raise MalformedPayload(f"bad frame type token in {payload!r}") from e
    if not _DECIMAL.fullmatch(digits):
        raise MalformedPayload(f"bad sequence number in {payload!r}")
    seq = int(digits)
    if seq > _MAX_SEQ:
        raise MalformedPayload(f"sequence number overflows 64 bits in {payload!r}")
    return NackMessage(name, seq)


# ---------------------------------------------------------------------------
# Sender state machine


class SenderPhase(enum.Enum):
    IDLE = "idle"
    # Bursts are emitted atomically by sender_step, so a state machine driven
    # only through sender_step never rests here; transmitters that pace the
    # burst themselves may use it while frames are still queued.
    SENDING_PRECURSORS = "sending_precursors"
    AWAITING_OUTCOME = "awaiting_outcome"
    EXHAUSTED = "exhausted"


class SenderEvent(enum.Enum):
    SUBMIT_MF = "submit_mf"
    NACK_RECEIVED = "nack_received"
    ACK_TIMEOUT_CLEAN = "ack_timeout_clean"
    GIVE_UP_TIMER = "give_up_timer"


@dataclass(frozen=True)
class SenderState:
    pending_mf: NackMessage | None = None
    attempt_j: int = 0
    phase: SenderPhase = SenderPhase.IDLE
    alarms: tuple = field(default=())
    delivered: tuple = field(default=())


def burst_schedule(n_precursors: int, gap: float) -> list[tuple[float, str]]:
    """``n`` encrypted DATA frames at ``gap`` spacing followed by the MF."""
    out = [(i * gap, "DATA") for i in range(n_precursors)]
    out.append((n_precursors * gap, "MF"))
    return out


def sender_step(state: SenderState, event: SenderEvent, cfg: CreConfig, message: NackMessage | None = None):
    """Advance the sender; returns ``(new_state, schedule)``.

    ``message`` is the management frame being submitted for SUBMIT_MF and the
    decoded N-ACK for NACK_RECEIVED. An N-ACK naming a frame this sender is
    not waiting on means somebody forged that frame in its name: an alarm is
    recorded and nothing is retransmitted.
    """
    event = SenderEvent(event)
    phase = state.phase

    if event is SenderEvent.SUBMIT_MF:
        if phase not in (SenderPhase.IDLE, SenderPhase.EXHAUSTED):
            raise ProtocolViolation(f"cannot submit a new MF while {phase.value}")
        if message is None:
            raise ProtocolViolation("SUBMIT_MF needs the frame being submitted")
        new = replace(state, pending_mf=message, attempt_j=1, phase=SenderPhase.AWAITING_OUTCOME)
        return new, burst_schedule(precursor_length(1, cfg), cfg.precursor_gap)

    if event is SenderEvent.NACK_RECEIVED:
        if message is None:
            raise ProtocolViolation("NACK_RECEIVED needs the decoded N-ACK")
        if phase is not SenderPhase.AWAITING_OUTCOME or message != state.pending_mf:
            log.warning("spoof alarm: N-ACK for %s@%d which this station did not send",
                        message.frame_type_name, message.seq)
            return replace(state, alarms=state.alarms + (message,)), []
        j = state.attempt_j + 1
        if j > cfg.max_attempts:
            return replace(state, attempt_j=cfg.max_attempts, phase=SenderPhase.EXHAUSTED), []
        new = replace(state, attempt_j=j)
        return new, burst_schedule(precursor_length(j, cfg), cfg.precursor_gap)

    if phase is not SenderPhase.AWAITING_OUTCOME:
        raise ProtocolViolation(f"{event.value} is meaningless while {phase.value}")
    if event is SenderEvent.ACK_TIMEOUT_CLEAN:
        done = state.delivered + ((state.pending_mf, state.attempt_j),)
        return SenderState(None, 0, SenderPhase.IDLE, state.alarms, done), []
    # GIVE_UP_TIMER
    return replace(state, phase=SenderPhase.EXHAUSTED), []


def receiver_on_verdict(frame: Frame, verdict: Verdict) -> NackMessage | None:
    """N-ACK to send back for a rejected management frame, else None."""
    if Verdict(verdict) is Verdict.TRUSTED:
        return None
    return NackMessage(FrameType(frame.frame_type).name, int(frame.seq))
