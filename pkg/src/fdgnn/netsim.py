"""Simulated network: contact schedules and the per-client byte ledger.

Every simulated transmission is a Message whose payload is a float32 count;
total wire size adds a fixed 8-byte header so zero-payload control traffic
still registers. Bytes are booked once per transmission into exactly one
channel (client-to-client or client-to-server) and into both endpoints'
sent/received perspectives. Reports choose an attribution (sender by
default) when collapsing the two perspectives into per-client columns.

MB in reports means 10^6 bytes; ``bits=True`` adds megabit figures.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rng import CONTACT, keyed_rng

SERVER = -1
HEADER_BYTES = 8
FLOAT_BYTES = 4

KINDS = (
    "model-share", "repr0", "repr1", "grad-factor",
    "server-model", "grad-up", "sync", "embedding", "val-report",
)

C2C, C2S = 0, 1
SENT, RECV = 0, 1


@dataclass(frozen=True)
class Message:
    src: int  # client id or SERVER
    dst: int
    kind: str
    float_count: int
    round: int = 0

    @property
    def payload_bytes(self) -> int:
        return self.float_count * FLOAT_BYTES

    @property
    def bytes(self) -> int:
        return self.payload_bytes + HEADER_BYTES

    @property
    def channel(self) -> int:
        return C2C if (self.src >= 0 and self.dst >= 0) else C2S


class CommLedger:
    """Cumulative byte counters per endpoint, channel and message kind."""

    def __init__(self, num_clients: int, log_events: bool = False):
        self.num_clients = num_clients
        # [endpoint, channel, perspective] ; endpoint num_clients == SERVER
        self.counts = np.zeros((num_clients + 1, 2, 2), dtype=np.int64)
        self.kind_count: dict[str, int] = {}
        self.kind_payload: dict[str, int] = {}
        self.kind_bytes: dict[str, int] = {}
        self.events: list[tuple] | None = [] if log_events else None

    def _slot(self, endpoint: int) -> int:
        return self.num_clients if endpoint == SERVER else endpoint

    def record(self, msg: Message) -> None:
        if msg.kind not in KINDS:
            raise ConfigError(f"unknown message kind '{msg.kind}'")
        if msg.src == msg.dst:
            raise ConfigError("message to self")
        ch = msg.channel
        b = msg.bytes
        self.counts[self._slot(msg.src), ch, SENT] += b
        self.counts[self._slot(msg.dst), ch, RECV] += b
        self.kind_count[msg.kind] = self.kind_count.get(msg.kind, 0) + 1
        self.kind_payload[msg.kind] = self.kind_payload.get(msg.kind, 0) + msg.payload_bytes
        self.kind_bytes[msg.kind] = self.kind_bytes.get(msg.kind, 0) + b
        if self.events is not None:
            self.events.append((msg.round, ch, msg.src, msg.dst, msg.kind, b))

    def record_many(self, kind: str, src: np.ndarray, dst: np.ndarray,
                    float_count: int, round_no: int) -> None:
        """Vectorized record of same-kind, same-size messages."""
        if kind not in KINDS:
            raise ConfigError(f"unknown message kind '{kind}'")
        src = np.asarray(src, np.int64)
        dst = np.asarray(dst, np.int64)
        if src.size == 0:
            return
        b = float_count * FLOAT_BYTES + HEADER_BYTES
        ch = C2C if (src.min() >= 0 and dst.min() >= 0) else C2S
        if (src >= 0).any() != (src >= 0).all() or (dst >= 0).any() != (dst >= 0).all():
            raise ConfigError("record_many requires a homogeneous channel")
        s = np.where(src == SERVER, self.num_clients, src)
        d = np.where(dst == SERVER, self.num_clients, dst)
        np.add.at(self.counts[:, ch, SENT], s, b)
        np.add.at(self.counts[:, ch, RECV], d, b)
        n = src.size
        self.kind_count[kind] = self.kind_count.get(kind, 0) + n
        self.kind_payload[kind] = self.kind_payload.get(kind, 0) + n * float_count * FLOAT_BYTES
        self.kind_bytes[kind] = self.kind_bytes.get(kind, 0) + n * b
        if self.events is not None:
            self.events.extend(
                (round_no, ch, int(a), int(c), kind, b) for a, c in zip(src, dst))

    # -- totals ------------------------------------------------------------

    def channel_total(self, channel: int) -> int:
        """Bytes transmitted on a channel (each message counted once)."""
        return int(self.counts[:, channel, SENT].sum())

    @property
    def c2c_bytes(self) -> int:
        return self.channel_total(C2C)

    @property
    def c2s_bytes(self) -> int:
        return self.channel_total(C2S)

    def client_bytes(self, attribution: str = "sender") -> np.ndarray:
        """(num_clients, 2) per-client [c2c, c2s] bytes under an attribution."""
        c = self.counts[: self.num_clients]
        if attribution == "sender":
            return c[:, :, SENT].copy()
        if attribution == "receiver":
            return c[:, :, RECV].copy()
        if attribution == "both":
            return c.sum(axis=2)
        raise ConfigError(f"unknown attribution '{attribution}'")

    def event_log_csv(self) -> str:
        if self.events is None:
            raise ConfigError("event logging was not enabled for this run")
        out = io.StringIO()
        out.write("round,channel,src,dst,kind,bytes\n")
        for r, ch, s, d, k, b in self.events:
            sn = "server" if s == SERVER else str(s)
            dn = "server" if d == SERVER else str(d)
            out.write(f"{r},{'c2c' if ch == C2C else 'c2s'},{sn},{dn},{k},{b}\n")
        return out.getvalue()


def replay_events(csv_text: str, num_clients: int) -> CommLedger:
    """Rebuild a ledger from an event-log CSV (determinism oracle)."""
    led = CommLedger(num_clients)
    lines = csv_text.strip().splitlines()[1:]
    for line in lines:
        r, ch, s, d, k, b = line.split(",")
        fc = (int(b) - HEADER_BYTES) // FLOAT_BYTES
        led.record(Message(
            src=SERVER if s == "server" else int(s),
            dst=SERVER if d == "server" else int(d),
            kind=k, float_count=fc, round=int(r)))
    return led


# ---------------------------------------------------------------------------
# Contact schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContactSchedule:
    """Availability model for client-to-client contact attempts.

    ``edge-drop`` keeps each (edge, round) with probability ``p``,
    symmetrically; ``probabilistic`` is an alias kept for sensitivity runs.
    ``attempts`` contact tries are made per round before timing out.
    """

    model: str = "always"  # "always" | "probabilistic" | "edge-drop"
    p: float = 1.0
    seed: int = 0
    attempts: int = 1

    def __post_init__(self):
        if self.model not in ("always", "probabilistic", "edge-drop"):
            raise ConfigError(f"unknown availability model '{self.model}'")
        if not (0 <= self.p <= 1) or self.attempts < 1:
            raise ConfigError("invalid contact schedule parameters")


def contact(schedule: ContactSchedule, u: int, v: int, round_no: int) -> bool:
    """Symmetric, deterministic availability of the (u, v) pair in a round."""
    if u == v:
        raise ConfigError("contact requires distinct endpoints")
    if schedule.model == "always" or schedule.p >= 1.0:
        return True
    a, b = (u, v) if u < v else (v, u)
    rng = keyed_rng(schedule.seed, CONTACT, round_no, a, b)
    draws = rng.random(schedule.attempts)
    return bool((draws < schedule.p).any())


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def report(ledger: CommLedger, fmt: str = "json", attribution: str = "sender",
           bits: bool = False, config_echo: dict | None = None,
           seed: int | None = None) -> str:
    """Render ledger totals.

    csv: per-client rows sorted by descending total plus an exact TOTAL row.
    json: per-kind totals, channel totals (bytes and MB), config echo, seed.
    """
    if fmt == "csv":
        per = ledger.client_bytes(attribution)
        order = np.lexsort((np.arange(len(per)), -per.sum(axis=1)))
        out = io.StringIO()
        out.write("client_id,c2c_bytes,c2s_bytes\n")
        for i in order:
            out.write(f"{i},{per[i, C2C]},{per[i, C2S]}\n")
        tot = per.sum(axis=0)
        out.write(f"TOTAL,{tot[C2C]},{tot[C2S]}\n")
        return out.getvalue()
    if fmt == "json":
        doc = summary_dict(ledger, attribution=attribution, bits=bits,
                           config_echo=config_echo, seed=seed)
        return json.dumps(doc, sort_keys=True, indent=2)
    raise ConfigError(f"unknown report format '{fmt}'")


def summary_dict(ledger: CommLedger, attribution: str = "sender",
                 bits: bool = False, config_echo: dict | None = None,
                 seed: int | None = None) -> dict:
    c2c, c2s = ledger.c2c_bytes, ledger.c2s_bytes
    doc = {
        "channels": {
            "c2c_bytes": c2c, "c2s_bytes": c2s,
            "c2c_mb": c2c / 1e6, "c2s_mb": c2s / 1e6,
        },
        "kinds": {
            k: {
                "count": ledger.kind_count[k],
                "payload_bytes": ledger.kind_payload[k],
                "bytes": ledger.kind_bytes[k],
            }
            for k in sorted(ledger.kind_count)
        },
        "attribution": attribution,
        "num_clients": ledger.num_clients,
    }
    if bits:
        doc["channels"]["c2c_megabits"] = c2c * 8 / 1e6
        doc["channels"]["c2s_megabits"] = c2s * 8 / 1e6
    if config_echo is not None:
        doc["config"] = config_echo
    if seed is not None:
        doc["seed"] = seed
    return doc
