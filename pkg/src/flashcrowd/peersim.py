"""Exact simulation of the flash-crowd file-sharing system.

N peers wake up after independent Exp(rho) delays and join a server; each
server serves its queue FIFO with unit-mean exponential service, and a peer
that finishes becomes a server itself.  Server identities are exchangeable,
so the state is compressed to a histogram ``hist[l]`` = number of servers
with ``l`` attached peers (the one in service included).  Arrivals occur at
rate ``rho * asleep`` and departures at rate ``busy`` (servers with
``l >= 1``), each busy server completing at rate 1 whatever its queue.

Conventions:

* ``S_0 = 0`` and interval ``n`` is ``(S_{n-1}, S_n]``; an event at time
  ``t`` belongs to the interval whose closing creation time is the first
  ``S_n >= t``.  During interval ``n`` there are exactly ``n`` servers, so
  the interval index of an event is the server count just before it.
* Server 0 is idle at ``t = 0``.
* One clock drives both event types.  Given an event at ``t``, the next
  uniform ``u`` decides: departure if ``u * total_rate < departure_rate``,
  else arrival.  Exact ties between event times cannot occur.

Each event consumes two uniforms (waiting time, event type) plus one more
when a class must be picked at random (every departure, and arrivals under
the Random policy).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba as nb
import numpy as np

from .rngcore import SeedSpec, Stream, _next_exp, _next_uniform, derive_stream

__all__ = [
    "Policy",
    "SimConfig",
    "MilestoneRecord",
    "IdleTrace",
    "EventLog",
    "run_sim",
    "milestone_arrays",
    "creation_times",
    "detect_nu1",
    "detect_nu2",
    "detect_nu3",
    "detect_nu4",
    "check_prop1",
]

ARRIVAL = 0
DEPARTURE = 1


class Policy(enum.Enum):
    MIN = "min"
    RANDOM = "random"

    @classmethod
    def parse(cls, value) -> "Policy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown policy {value!r}; expected 'min' or 'random'") from None


@dataclass(frozen=True)
class SimConfig:
    """One run.  Without ``run_to_completion`` the run stops once every
    milestone is final; a finite ``trace_horizon`` keeps it going until the
    idle-fraction trace reaches the horizon.
    """

    n_peers: int
    rho: float
    policy: Policy = Policy.MIN
    seed: SeedSpec = field(default_factory=lambda: SeedSpec(0, 0))
    trace_step: float = 0.0
    run_to_completion: bool = False
    trace_horizon: float = math.inf

    def __post_init__(self):
        if int(self.n_peers) != self.n_peers or self.n_peers < 1:
            raise ValueError(f"n_peers must be a positive integer, got {self.n_peers}")
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.trace_step >= 0:
            raise ValueError(f"trace_step must be non-negative, got {self.trace_step}")
        if not self.trace_horizon >= 0:
            raise ValueError(f"trace_horizon must be non-negative, got {self.trace_horizon}")
        object.__setattr__(self, "n_peers", int(self.n_peers))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "policy", Policy.parse(self.policy))


@dataclass(frozen=True)
class MilestoneRecord:
    """Regime-change times and the indices of the intervals holding them.

    ``None`` marks a milestone the run stopped before reaching.
    """

    t1: float | None
    t2: float | None
    t3: float | None
    t4: float | None
    nu1: int | None
    nu2: int | None
    nu3: int | None
    nu4: int | None
    completion_time: float | None
    prop1_violations: int
    n_events: int = 0

    def get(self, name: str):
        """Field by name; ``prop1`` is accepted for ``prop1_violations``."""
        return getattr(self, "prop1_violations" if name == "prop1" else name)


@dataclass(frozen=True)
class IdleTrace:
    t: np.ndarray
    idle_fraction: np.ndarray
    servers: np.ndarray
    asleep: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def to_csv(self, path) -> None:
        from ._io import write_trace_csv

        write_trace_csv(path, self)


@dataclass(frozen=True)
class EventLog:
    """Post-event states of a run, for offline milestone detection."""

    t: np.ndarray
    kind: np.ndarray  # ARRIVAL or DEPARTURE
    cls: np.ndarray  # queue length of the chosen server before the event
    empty: np.ndarray  # hist[0] after the event
    servers: np.ndarray  # after the event
    asleep: np.ndarray  # after the event

    def __len__(self) -> int:
        return len(self.t)


# ---------------------------------------------------------------------------
# Fenwick tree over queue-length classes (0-based class c lives at node c+1)

@nb.njit(inline="always")
def _fw_add(tree, size, c, delta):
    i = c + 1
    while i <= size:
        tree[i] += delta
        i += i & (-i)


@nb.njit(inline="always")
def _fw_find(tree, size, top, target):
    """Smallest class whose inclusive prefix count exceeds ``target``."""
    pos = 0
    step = top
    while step > 0:
        nxt = pos + step
        if nxt <= size and tree[nxt] <= target:
            pos = nxt
            target -= tree[nxt]
        step >>= 1
    return pos


@nb.njit(nogil=True, cache=True)
def _simulate(n_peers, rho, random_policy, state, trace_step, trace_horizon,
              to_completion, log_events, stop_servers=0):
    size = n_peers + 2
    top = 1
    while top * 2 <= size:
        top *= 2
    hist = np.zeros(size, dtype=np.int64)
    tree = np.zeros(size + 1, dtype=np.int64)

    # t1..t4, completion
    times = np.full(5, np.nan)
    # nu1..nu4, prop1, n_events
    ints = np.full(6, -1, dtype=np.int64)

    cap = 1024
    tr_t = np.empty(cap)
    tr_idle = np.empty(cap)
    tr_srv = np.empty(cap, dtype=np.int64)
    tr_asl = np.empty(cap, dtype=np.int64)
    n_tr = 0
    k_tr = 0
    tracing = trace_step > 0.0

    n_log = 2 * n_peers + 1 if log_events else 0
    # creation times when stopping early without a full log
    created = np.empty(stop_servers if stop_servers > 0 and not log_events else 0)
    lg_t = np.empty(n_log)
    lg_kind = np.empty(n_log, dtype=np.int64)
    lg_cls = np.empty(n_log, dtype=np.int64)
    lg_empty = np.empty(n_log, dtype=np.int64)
    lg_srv = np.empty(n_log, dtype=np.int64)
    lg_asl = np.empty(n_log, dtype=np.int64)

    t = 0.0
    asleep = n_peers
    servers = 1
    completed = 0
    busy = 0
    lo = 0  # smallest non-empty class, maintained for the Min policy
    hist[0] = 1
    _fw_add(tree, size, 0, 1)

    arrivals_in_interval = 0
    viol_in_interval = 0
    prop1 = 0
    have1 = False
    have3 = False
    have4 = False
    t2 = np.nan
    nu2 = -1
    n_events = 0

    if servers > rho * asleep:
        have3 = True
        times[2] = 0.0
        ints[2] = 1

    while completed < n_peers:
        if stop_servers > 0 and servers >= stop_servers:
            break
        if not to_completion and have1 and have3 and have4 and not (
                tracing and trace_horizon < np.inf):
            # t2 is final once no sequence of arrivals can empty hist[0] again
            if asleep == 0 or hist[0] > asleep:
                break
        rate_a = rho * asleep
        total = rate_a + busy
        t_new = t + _next_exp(state, total)
        if tracing:
            while k_tr * trace_step < t_new:
                if k_tr * trace_step > trace_horizon:
                    tracing = False
                    break
                if n_tr == cap:
                    cap *= 2
                    tr_t = np.concatenate((tr_t, np.empty(cap - n_tr)))
                    tr_idle = np.concatenate((tr_idle, np.empty(cap - n_tr)))
                    tr_srv = np.concatenate((tr_srv, np.empty(cap - n_tr, dtype=np.int64)))
                    tr_asl = np.concatenate((tr_asl, np.empty(cap - n_tr, dtype=np.int64)))
                tr_t[n_tr] = k_tr * trace_step
                tr_idle[n_tr] = hist[0] / servers
                tr_srv[n_tr] = servers
                tr_asl[n_tr] = asleep
                n_tr += 1
                k_tr += 1
        t = t_new
        interval = servers
        u = _next_uniform(state)
        if u * total < busy:
            # departure: a uniformly chosen busy server completes one download
            pick = int(_next_uniform(state) * busy)
            if pick >= busy:
                pick = busy - 1
            c = _fw_find(tree, size, top, hist[0] + pick)
            hist[c] -= 1
            hist[c - 1] += 1
            _fw_add(tree, size, c, -1)
            _fw_add(tree, size, c - 1, 1)
            if c == 1:
                busy -= 1
                if not have4:
                    have4 = True
                    times[3] = t
                    ints[3] = interval
            hist[0] += 1
            _fw_add(tree, size, 0, 1)
            servers += 1
            completed += 1
            if created.size >= completed:
                created[completed - 1] = t
            lo = 0
            if not have1:
                if arrivals_in_interval <= 1:
                    have1 = True
                    times[0] = t
                    ints[0] = interval
                else:
                    prop1 += viol_in_interval
            arrivals_in_interval = 0
            viol_in_interval = 1 if hist[0] > 2 else 0
            kind = DEPARTURE
        else:
            asleep -= 1
            arrivals_in_interval += 1
            if random_policy:
                pick = int(_next_uniform(state) * servers)
                if pick >= servers:
                    pick = servers - 1
                c = _fw_find(tree, size, top, pick)
            else:
                c = lo
            hist[c] -= 1
            hist[c + 1] += 1
            _fw_add(tree, size, c, -1)
            _fw_add(tree, size, c + 1, 1)
            if c == 0:
                busy += 1
                if hist[0] == 0:
                    t2 = t
                    nu2 = interval
            if not random_policy and hist[lo] == 0:
                lo += 1
            if hist[0] > 2:
                viol_in_interval += 1
            kind = ARRIVAL
        if not have3 and servers > rho * asleep:
            have3 = True
            times[2] = t
            ints[2] = interval
        if log_events:
            lg_t[n_events] = t
            lg_kind[n_events] = kind
            lg_cls[n_events] = c
            lg_empty[n_events] = hist[0]
            lg_srv[n_events] = servers
            lg_asl[n_events] = asleep
        n_events += 1

    if created.size:
        lg_t = created
        n_events_log = completed
    else:
        n_events_log = n_events
    if completed == n_peers:
        times[4] = t
    times[1] = t2
    ints[1] = nu2
    ints[4] = prop1
    ints[5] = n_events
    return (times, ints,
            tr_t[:n_tr], tr_idle[:n_tr], tr_srv[:n_tr], tr_asl[:n_tr],
            lg_t[:n_events_log], lg_kind[:n_events], lg_cls[:n_events],
            lg_empty[:n_events], lg_srv[:n_events], lg_asl[:n_events])


def _opt_float(x) -> float | None:
    return None if math.isnan(x) else float(x)


def _opt_int(x) -> int | None:
    return None if x < 0 else int(x)


def _record(times, ints) -> MilestoneRecord:
    return MilestoneRecord(
        t1=_opt_float(times[0]), t2=_opt_float(times[1]),
        t3=_opt_float(times[2]), t4=_opt_float(times[3]),
        nu1=_opt_int(ints[0]), nu2=_opt_int(ints[1]),
        nu3=_opt_int(ints[2]), nu4=_opt_int(ints[3]),
        completion_time=_opt_float(times[4]),
        prop1_violations=int(ints[4]),
        n_events=int(ints[5]),
    )


def run_sim(config: SimConfig, stream: Stream | None = None, *, log_events: bool = False):
    """Simulate one run; returns ``(MilestoneRecord, IdleTrace)``.

    With ``log_events=True`` an :class:`EventLog` is appended to the result
    (memory grows as ``2 * n_peers``; meant for small systems).  ``stream``
    overrides the stream derived from ``config.seed``.
    """
    if stream is None:
        stream = derive_stream(config.seed)
    out = _simulate(config.n_peers, config.rho, config.policy is Policy.RANDOM,
                    stream.state, float(config.trace_step), float(config.trace_horizon),
                    bool(config.run_to_completion), bool(log_events))
    times, ints = out[0], out[1]
    record = _record(times, ints)
    trace = IdleTrace(*out[2:6])
    if log_events:
        return record, trace, EventLog(*out[6:12])
    return record, trace


def milestone_arrays(n_peers: int, rho: float, policy: Policy, state: np.ndarray):
    """Fast path for campaigns: raw ``(times, ints)`` arrays of one truncated run."""
    times, ints = _simulate(n_peers, rho, policy is Policy.RANDOM, state,
                            0.0, 0.0, False, False)[:2]
    return times, ints


def creation_times(n_peers: int, rho: float, policy: Policy, n_servers: int,
                   stream: Stream) -> np.ndarray:
    """Creation times ``S_1..S_m`` of the first servers, ``m <= n_servers``.

    The run stops as soon as ``n_servers`` servers exist besides server 0
    (fewer if the system completes first).
    """
    if n_servers < 1:
        raise ValueError("n_servers must be at least 1")
    out = _simulate(int(n_peers), float(rho), policy is Policy.RANDOM, stream.state,
                    0.0, 0.0, True, False, int(n_servers) + 1)
    return out[6].copy()


# ---------------------------------------------------------------------------
# offline detectors, driven by creation times / event logs

def detect_nu1(arrival_counts: Sequence[int], creation_times: Sequence[float] | None = None):
    """First interval holding at most one arrival.

    ``arrival_counts[n-1]`` is the number of arrivals in interval ``n``.
    Returns ``(nu1, t1)``; ``(None, None)`` when no completed interval
    qualifies (a truncated run never reports 0).
    """
    for n, count in enumerate(arrival_counts, start=1):
        if count <= 1:
            t1 = None if creation_times is None else float(creation_times[n - 1])
            return n, t1
    return None, None


def detect_nu2(times: Sequence[float], empty_counts: Sequence[int],
               intervals: Sequence[int] | None = None):
    """Last instant at which the empty-server count drops to 0.

    ``empty_counts[i]`` is the count just after the event at ``times[i]``;
    the count before the first event is taken as 1 (server 0 starts idle).
    """
    last = None
    prev = 1
    for i, (t, e) in enumerate(zip(times, empty_counts)):
        if prev >= 1 and e == 0:
            last = i
        prev = e
    if last is None:
        return None, None
    nu = None if intervals is None else int(intervals[last])
    return nu, float(times[last])


def detect_nu3(times: Sequence[float], servers: Sequence[int], asleep: Sequence[int],
               rho: float, intervals: Sequence[int], n_peers: int):
    """First instant at which ``servers > rho * asleep`` (checked at t = 0 too)."""
    if 1 > rho * n_peers:
        return 1, 0.0
    for t, s, a, n in zip(times, servers, asleep, intervals):
        if s > rho * a:
            return int(n), float(t)
    return None, None


def detect_nu4(log: EventLog, intervals: Sequence[int] | None = None):
    """First departure that leaves its server empty."""
    if intervals is None:
        intervals = event_intervals(log)
    hit = np.flatnonzero((log.kind == DEPARTURE) & (log.cls == 1))
    if hit.size == 0:
        return None, None
    i = int(hit[0])
    return int(intervals[i]), float(log.t[i])


def event_intervals(log: EventLog) -> np.ndarray:
    """Interval index of each logged event (server count just before it)."""
    before = np.empty(len(log), dtype=np.int64)
    if len(log):
        before[0] = 1
        before[1:] = log.servers[:-1]
    return before


def interval_arrival_counts(log: EventLog):
    """Arrival counts per completed interval and the creation times closing them."""
    counts = []
    creations = []
    current = 0
    for kind, t in zip(log.kind, log.t):
        if kind == ARRIVAL:
            current += 1
        else:
            counts.append(current)
            creations.append(float(t))
            current = 0
    return counts, creations


def check_prop1(events: Iterable[tuple[int, int]], nu1: int | None) -> int:
    """Count states with more than two empty servers inside intervals ``n < nu1``.

    ``events`` yields ``(interval, empty_count)`` for every state that holds
    strictly inside an interval: the state right after each creation and the
    state after each arrival.  ``nu1=None`` means the first regime never ended,
    so every interval is checked.
    """
    return sum(1 for n, empty in events if (nu1 is None or n < nu1) and empty > 2)


def prop1_states(log: EventLog):
    """``(interval, empty_count)`` pairs for :func:`check_prop1` from an event log."""
    yield 1, 1
    for kind, empty, servers in zip(log.kind, log.empty, log.servers):
        # after a creation the state opens interval ``servers``; after an
        # arrival it stays in the current one, which equals ``servers``
        yield int(servers), int(empty)
