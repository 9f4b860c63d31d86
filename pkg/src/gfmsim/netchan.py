"""Virtual-time emulation of the inter-controller overlay link.

Each directed link samples its sender at a fixed rate, drops packets with a
Bernoulli probability, adds a transport delay (plus optional uniform
jitter) and delivers in ``(t_deliver, sender, seq)`` order. Every directed
link owns an independent ``numpy`` PCG64 stream derived from the master
seed via ``SeedSequence(master_seed, spawn_key=(sender, receiver))``, so
changing one link never perturbs another. No sockets, no wall clock.
"""

import heapq
import math
from dataclasses import dataclass

import numpy as np

# tolerance for "on the period boundary" comparisons in virtual time
TIME_EPS = 1e-9


@dataclass
class ChannelParams:
    rate_hz: float = 5.0
    delay_s: float = 0.0
    jitter_s: float = 0.0
    loss_prob: float = 0.0
    seed: int = 0

    def validate(self):
        if not (self.rate_hz > 0.0 and math.isfinite(self.rate_hz)):
            raise ValueError(f"channel.rate_hz must be > 0, got {self.rate_hz!r}")
        if not (self.delay_s >= 0.0 and math.isfinite(self.delay_s)):
            raise ValueError(f"channel.delay_s must be >= 0, got {self.delay_s!r}")
        if not (self.jitter_s >= 0.0 and math.isfinite(self.jitter_s)):
            raise ValueError(f"channel.jitter_s must be >= 0, got {self.jitter_s!r}")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"channel.loss_prob must lie in [0, 1], got {self.loss_prob!r}")


@dataclass(frozen=True, order=True)
class QShareMessage:
    sender: int
    seq: int
    t_send: float
    Q_value: float


@dataclass(frozen=True, order=True)
class InFlight:
    t_deliver: float
    message: QShareMessage


def link_rng(seed, sender, receiver):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(sender, receiver))))


class Link:
    """One directed link ``sender -> receiver``."""

    def __init__(self, sender, receiver, params):
        params.validate()
        self.sender = sender
        self.receiver = receiver
        self.params = params
        self.rng = link_rng(params.seed, sender, receiver)
        self.queue = []
        self.next_index = 0
        self.seq = 0
        self.sent = 0
        self.dropped = 0
        self.delivered = 0
        self.max_age_at_delivery = 0.0

    @property
    def period(self):
        return 1.0 / self.params.rate_hz

    def next_send_time(self):
        return self.next_index / self.params.rate_hz

    def tick_send(self, t_now, q_local):
        """Emit at most one message if ``t_now`` has reached the next period boundary.

        Returns the enqueued :class:`InFlight` or ``None`` (not due, or dropped).
        """
        if t_now + TIME_EPS < self.next_send_time():
            return None
        t_send = self.next_send_time()
        self.next_index += 1
        msg = QShareMessage(self.sender, self.seq, t_send, float(q_local))
        self.seq += 1
        self.sent += 1
        # both draws happen for every send so the stream layout does not depend on jitter
        u_loss = self.rng.random()
        u_jit = self.rng.random()
        if u_loss < self.params.loss_prob:
            self.dropped += 1
            return None
        jitter = (2.0 * u_jit - 1.0) * self.params.jitter_s
        item = InFlight(t_send + self.params.delay_s + jitter, msg)
        enqueue(self.queue, item)
        return item

    def deliver_due(self, t_now):
        out = deliver_due(t_now, self.queue)
        for m in out:
            self.delivered += 1
            self.max_age_at_delivery = max(self.max_age_at_delivery, t_now - m.t_send)
        return out

    def next_delivery_time(self):
        return self.queue[0][0] if self.queue else math.inf

    def stats(self):
        return {
            "link": f"{self.sender + 1}->{self.receiver + 1}",
            "sent": self.sent,
            "dropped": self.dropped,
            "delivered": self.delivered,
            "in_flight": len(self.queue),
            "max_age_at_delivery_s": self.max_age_at_delivery,
        }


def enqueue(queue, item):
    heapq.heappush(queue, (item.t_deliver, item.message.sender, item.message.seq, item))


def deliver_due(t_now, queue):
    """Pop every message with ``t_deliver <= t_now`` in (t_deliver, sender, seq) order."""
    out = []
    while queue and queue[0][0] <= t_now + TIME_EPS:
        out.append(heapq.heappop(queue)[3].message)
    return out


def tick_send(t_now, link, q_local):
    return link.tick_send(t_now, q_local)
