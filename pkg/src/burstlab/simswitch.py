"""Packet-level simulation of many workers bursting into one switch egress port
under PFC and DCQCN.

Model: every worker has its own 100G link into a shared-memory switch; all
traffic leaves through one egress port towards a single sink. The switch
marks packets with RED at egress enqueue, counts occupancy per ingress port
for PFC, and the sink echoes at most one CNP per flow per CNP interval.
Senders run the DCQCN reaction-point algorithm and pace frames at
``min(application rate, permitted rate)``.

Time is integer picoseconds internally; rates are bytes per second.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .csvio import DataError, write_rows
from .workload import GBPS, bundled_manifest

PS_PER_NS = 1000
PS_PER_S = 10 ** 12
KB = 1000


class SimulationError(RuntimeError):
    """Internal accounting invariant broken during a run."""


# -- parameters ------------------------------------------------------------------

@dataclass(frozen=True)
class PfcParams:
    """PFC thresholds in bytes per ingress port per Gbit/s of port speed."""

    xoff: float = 9.5 * KB
    xon: float = 9.25 * KB

    def __post_init__(self):
        if not 0 < self.xon < self.xoff:
            raise ValueError("pfc: need 0 < xon < xoff")


@dataclass(frozen=True)
class DcqcnParams:
    kmin: float = 7 * KB                  # bytes
    kmax: float = 488 * KB                # bytes
    pmax: float = 0.30
    g: float = 1 / 256
    cnp_interval_ns: int = 50_000
    alpha_timer_ns: int = 55_000          # K
    rate_timer_ns: int = 55_000           # T
    byte_counter: int = 10_000_000        # B, bytes
    r_ai: float = 5e6 / 8                 # bytes/s
    r_hi: float = 50e6 / 8                # bytes/s
    fast_recovery_stages: int = 5
    initial_alpha: float = 0.5
    min_rate: float = 100e6 / 8           # bytes/s

    def __post_init__(self):
        if not 0 <= self.kmin < self.kmax:
            raise ValueError("dcqcn: need kmin < kmax")
        if not 0 < self.pmax <= 1:
            raise ValueError("dcqcn: pmax must be in (0, 1]")
        if not 0 < self.g < 1:
            raise ValueError("dcqcn: g must be in (0, 1)")
        if not 0 <= self.initial_alpha <= 1:
            raise ValueError("dcqcn: initial_alpha must be in [0, 1]")
        for name in ("cnp_interval_ns", "alpha_timer_ns", "rate_timer_ns",
                     "byte_counter", "fast_recovery_stages"):
            if getattr(self, name) <= 0:
                raise ValueError(f"dcqcn: {name} must be positive")
        if self.min_rate <= 0 or self.r_ai < 0 or self.r_hi < 0:
            raise ValueError("dcqcn: rates must be positive")


@dataclass(frozen=True)
class SimConfig:
    n_workers: int = 30
    line_rate: float = 100 * GBPS
    prop_delay_ns: int = 1000
    mtu: int = 1500
    pfc: PfcParams = field(default_factory=PfcParams)
    dcqcn: DcqcnParams = field(default_factory=DcqcnParams)
    workload: str = "last_layer"          # last_layer | round
    burst_bytes: int | None = None        # last_layer mode; None = manifest's last layer
    app_rate_low: float = 20 * GBPS
    app_rate_high: float = 35 * GBPS
    gap_low_ns: int = 500_000             # round mode
    gap_high_ns: int = 1_500_000
    sim_duration_ns: int = 10_000_000
    sample_interval_ns: int = 10_000
    port_count: int = 32
    buffer_bytes: int = 32_000_000
    seed: int = 1
    counterfactual_delay_ns: int | None = None

    def __post_init__(self):
        if not 0 <= self.n_workers <= self.port_count - 1:
            raise ValueError(f"n_workers: must be between 0 and {self.port_count - 1} "
                             "(one port goes to the sink)")
        if self.line_rate <= 0:
            raise ValueError("line_rate: must be positive")
        if not 0 < self.app_rate_low <= self.app_rate_high <= self.line_rate:
            raise ValueError("app_rate: need 0 < low <= high <= line_rate")
        if self.prop_delay_ns < 0:
            raise ValueError("prop_delay: must be nonnegative")
        if self.mtu <= 0:
            raise ValueError("mtu: must be positive")
        if self.workload not in ("last_layer", "round"):
            raise ValueError(f"workload: unknown mode {self.workload!r}")
        if self.burst_bytes is not None and self.burst_bytes <= 0:
            raise ValueError("burst_bytes: must be positive")
        if not 0 <= self.gap_low_ns <= self.gap_high_ns:
            raise ValueError("gap: need 0 <= low <= high")
        if self.sim_duration_ns <= 0 or self.sample_interval_ns <= 0:
            raise ValueError("sim_duration/sample_interval: must be positive")
        if self.buffer_bytes <= 0:
            raise ValueError("buffer_bytes: must be positive")
        if self.counterfactual_delay_ns is not None and self.counterfactual_delay_ns < 0:
            raise ValueError("counterfactual_delay: must be nonnegative")

    @property
    def port_gbps(self) -> float:
        return self.line_rate * 8 / 1e9

    # -- JSON ------------------------------------------------------------------

    _BPS_KEYS = {"line_rate": "line_rate_bps", "app_rate_low": "app_rate_low_bps",
                 "app_rate_high": "app_rate_high_bps", "r_ai": "r_ai_bps",
                 "r_hi": "r_hi_bps", "min_rate": "min_rate_bps"}

    def to_dict(self) -> dict:
        keys = self._BPS_KEYS

        def conv(d):
            return {keys.get(k, k): conv(v) if isinstance(v, dict)
                    else (v * 8 if k in keys else v) for k, v in d.items()}
        return conv(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        inv = {v: k for k, v in cls._BPS_KEYS.items()}

        def build(klass, data, prefix):
            if not isinstance(data, dict):
                raise ValueError(f"{prefix.rstrip('.') or 'config'}: expected an object")
            names = {f.name: f for f in fields(klass)}
            kwargs = {}
            for key, val in data.items():
                name = inv.get(key, key)
                scale = 1 / 8 if key in inv else 1
                if name not in names:
                    raise ValueError(f"{prefix}{key}: unknown field")
                if name == "pfc":
                    kwargs[name] = build(PfcParams, val, "pfc.")
                elif name == "dcqcn":
                    kwargs[name] = build(DcqcnParams, val, "dcqcn.")
                elif name == "workload":
                    kwargs[name] = str(val)
                else:
                    if val is None:
                        kwargs[name] = None
                        continue
                    if isinstance(val, bool) or not isinstance(val, (int, float)):
                        raise ValueError(f"{prefix}{key}: expected a number, got {val!r}")
                    if name.endswith("_ns") or name in ("n_workers", "mtu", "port_count",
                                                        "buffer_bytes", "seed", "burst_bytes",
                                                        "byte_counter", "fast_recovery_stages"):
                        if int(val) != val:
                            raise ValueError(f"{prefix}{key}: expected an integer")
                        kwargs[name] = int(val)
                    else:
                        kwargs[name] = float(val) * scale
            try:
                return klass(**kwargs)
            except ValueError as exc:
                msg = str(exc)
                raise ValueError(prefix + msg if prefix and not msg.startswith(prefix) else msg) from None

        return build(cls, d, "")

    @classmethod
    def from_json(cls, path) -> "SimConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)


# -- switch-side helpers ----------------------------------------------------------

def red_mark_probability(queue_bytes: float, p: DcqcnParams) -> float:
    """RED/ECN marking probability at egress enqueue."""
    if queue_bytes < 0:
        raise ValueError("queue must be nonnegative")
    if queue_bytes <= p.kmin:
        return 0.0
    if queue_bytes > p.kmax:
        return 1.0
    return p.pmax * (queue_bytes - p.kmin) / (p.kmax - p.kmin)


def pfc_thresholds(cfg: SimConfig, port_speed_gbps: float) -> tuple[float, float]:
    """``(xoff, xon)`` in bytes for an ingress port of the given speed."""
    if port_speed_gbps <= 0:
        raise ValueError("port speed must be positive")
    return cfg.pfc.xoff * port_speed_gbps, cfg.pfc.xon * port_speed_gbps


# -- DCQCN reaction point ----------------------------------------------------------

@dataclass(frozen=True)
class RpState:
    """Sender-side DCQCN state (rates in bytes/s)."""

    rc: float                 # current (permitted) rate
    rt: float                 # target rate
    alpha: float
    timer_stage: int = 0
    byte_stage: int = 0


def initial_rp_state(line_rate: float, p: DcqcnParams) -> RpState:
    return RpState(line_rate, line_rate, p.initial_alpha)


def dcqcn_on_cnp(s: RpState, p: DcqcnParams) -> RpState:
    """Multiplicative decrease on a congestion notification."""
    return RpState(rc=max(p.min_rate, s.rc * (1 - s.alpha / 2)),
                   rt=s.rc,
                   alpha=(1 - p.g) * s.alpha + p.g,
                   timer_stage=0, byte_stage=0)


def dcqcn_alpha_decay(s: RpState, p: DcqcnParams) -> RpState:
    """Alpha update when a full alpha-timer period passed without a CNP."""
    return replace(s, alpha=(1 - p.g) * s.alpha)


def dcqcn_increase_tick(s: RpState, p: DcqcnParams, line_rate: float,
                        source: str = "timer") -> RpState:
    """One rate-increase event from the rate timer or the byte counter.

    Fast recovery while both stage counters are below
    ``fast_recovery_stages``; hyper increase once both have passed it;
    additive increase otherwise.
    """
    if source not in ("timer", "bytes"):
        raise ValueError("source must be 'timer' or 'bytes'")
    t, b = s.timer_stage, s.byte_stage
    f = p.fast_recovery_stages
    rt = s.rt
    if max(t, b) < f:
        pass
    elif min(t, b) > f:
        rt = rt + p.r_hi
    else:
        rt = rt + p.r_ai
    rt = min(rt, line_rate)
    rc = min((rt + s.rc) / 2, line_rate)
    if source == "timer":
        t += 1
    else:
        b += 1
    return RpState(rc=rc, rt=rt, alpha=s.alpha, timer_stage=t, byte_stage=b)


# -- results -----------------------------------------------------------------------

@dataclass
class SimResult:
    config: SimConfig
    times_s: np.ndarray
    agg_rate_bps: np.ndarray
    backlog_bytes: np.ndarray
    worker_rate_bps: np.ndarray      # samples x workers, permitted rate R_C
    worker_alpha: np.ndarray         # samples x workers
    counts: dict
    peak_backlog: int
    first_mark_s: float | None
    first_effective_reduction_s: float | None
    max_ingress_bytes: int

    @property
    def n_samples(self) -> int:
        return len(self.times_s)

    def initial_rate_bps(self, window: int = 5) -> float:
        """Plateau of the aggregate arrival rate right after the burst starts:
        median over the first ``window`` samples following the first sample
        with traffic."""
        nz = np.nonzero(self.agg_rate_bps)[0]
        if len(nz) == 0:
            return 0.0
        first = nz[0] + 1
        seg = self.agg_rate_bps[first:first + window]
        if len(seg) == 0:
            seg = self.agg_rate_bps[nz[0]:nz[0] + 1]
        return float(np.median(seg))

    def first_reduction_index(self, drop: float = 0.05) -> int | None:
        """First sample whose aggregate rate is ``drop`` below the plateau."""
        level = self.initial_rate_bps()
        if level <= 0:
            return None
        nz = np.nonzero(self.agg_rate_bps)[0]
        start = nz[0] + 1
        below = np.nonzero(self.agg_rate_bps[start:] < (1 - drop) * level)[0]
        return int(start + below[0]) if len(below) else None

    def first_reduction_time_s(self, drop: float = 0.05) -> float | None:
        i = self.first_reduction_index(drop)
        return None if i is None else float(self.times_s[i])

    def backlog_at_first_reduction(self, drop: float = 0.05) -> float | None:
        i = self.first_reduction_index(drop)
        return None if i is None else float(self.backlog_bytes[i])

    def summary(self) -> dict:
        return {
            "counts": dict(self.counts),
            "peak_backlog_bytes": int(self.peak_backlog),
            "max_ingress_bytes": int(self.max_ingress_bytes),
            "initial_agg_rate_bps": self.initial_rate_bps(),
            "first_reduction_s": self.first_reduction_time_s(),
            "backlog_at_first_reduction_bytes": self.backlog_at_first_reduction(),
            "first_mark_s": self.first_mark_s,
            "first_effective_reduction_s": self.first_effective_reduction_s,
        }

    def write(self, out_dir) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        series = out_dir / "series.csv"
        write_rows(series, ["time_s", "agg_rate_bps", "backlog_bytes"],
                   ((f"{t:.9f}", float(r), int(b)) for t, r, b in
                    zip(self.times_s, self.agg_rate_bps, self.backlog_bytes)))
        rates = out_dir / "worker_rates.csv"
        n = self.worker_rate_bps.shape[1] if self.worker_rate_bps.ndim == 2 else 0
        write_rows(rates, ["time_s"] + [f"w{i + 1}_rate_bps" for i in range(n)],
                   ([f"{t:.9f}"] + [float(x) for x in row]
                    for t, row in zip(self.times_s, self.worker_rate_bps)))
        alphas = out_dir / "worker_alpha.csv"
        write_rows(alphas, ["time_s"] + [f"w{i + 1}_alpha" for i in range(n)],
                   ([f"{t:.9f}"] + [float(x) for x in row]
                    for t, row in zip(self.times_s, self.worker_alpha)))
        summary = out_dir / "summary.json"
        summary.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return [series, rates, alphas, summary]


# -- simulation ----------------------------------------------------------------------

# event kinds, ordered so that simultaneous events resolve deterministically
_EV_SAMPLE, _EV_ARRIVE, _EV_TX_DONE, _EV_DELIVER, _EV_CNP, _EV_PAUSE, \
    _EV_RESUME, _EV_SEND, _EV_RATE_TIMER, _EV_ALPHA_TIMER, _EV_CLAMP, \
    _EV_BURST = range(12)


def _ser_ps(nbytes: int, rate: float) -> int:
    return max(1, int(round(nbytes * PS_PER_S / rate)))


def _burst_plan(cfg: SimConfig, rng: random.Random) -> list[list[tuple[int, float]]]:
    """Per worker: list of ``(bytes, app_rate)`` in sending order."""
    manifest = bundled_manifest()
    plans = []
    for _ in range(cfg.n_workers):
        if cfg.workload == "last_layer":
            nbytes = cfg.burst_bytes or manifest.layer_bytes(len(manifest) - 1)
            plans.append([(nbytes, rng.uniform(cfg.app_rate_low, cfg.app_rate_high))])
        else:
            plans.append([(manifest.layer_bytes(i),
                           rng.uniform(cfg.app_rate_low, cfg.app_rate_high))
                          for i in reversed(range(len(manifest)))])
    return plans


class _Sim:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.p = cfg.dcqcn
        n = cfg.n_workers
        self.rng = random.Random(cfg.seed)
        self.plans = _burst_plan(cfg, self.rng)
        self.gap_rng = random.Random(cfg.seed + 1)
        self.heap: list = []
        self.seq = 0
        self.prop = cfg.prop_delay_ns * PS_PER_NS
        self.xoff, self.xon = pfc_thresholds(cfg, cfg.port_gbps)

        # senders
        self.rp = [initial_rp_state(cfg.line_rate, self.p) for _ in range(n)]
        self.burst_idx = [0] * n
        self.remaining = [0] * n
        self.app_rate = [0.0] * n
        self.active = [False] * n
        self.paused = [False] * n
        self.waiting = [False] * n      # send due while paused
        self.send_token = [0] * n
        self.last_send = [0] * n
        self.last_size = [0] * n
        self.bytes_since = [0] * n
        self.rate_token = [0] * n
        self.alpha_token = [0] * n
        self.cnp_seen = [False] * n

        # switch
        self.queue: list = []           # (worker, size, marked)
        self.q_head = 0
        self.egress_bytes = 0
        self.buffer_used = 0
        self.ingress = [0] * n
        self.pause_sent = [False] * n
        self.tx_busy = False

        # sink
        self.last_cnp = [None] * n

        self.counts = dict(packets_injected=0, packets_arrived=0, packets_delivered=0,
                           packets_dropped=0, marks=0, cnps=0, pauses=0, resumes=0,
                           rate_cuts=0, rate_increases=0)
        self.peak_backlog = 0
        self.max_ingress = 0
        self.first_mark = None
        self.first_eff = None
        self.clamped = False

        # no senders, nothing to observe
        k = -(-cfg.sim_duration_ns // cfg.sample_interval_ns) if n else 0
        self.n_samples = k
        self.sample_ps = cfg.sample_interval_ns * PS_PER_NS
        self.arr_bins = np.zeros(k, dtype=np.int64)
        self.s_backlog = np.zeros(k, dtype=np.int64)
        self.s_rate = np.zeros((k, n))
        self.s_alpha = np.zeros((k, n))
        self.sample_k = 0

    # -- event plumbing
    def push(self, t, kind, *args):
        self.seq += 1
        heapq.heappush(self.heap, (t, kind, self.seq, args))

    def run(self) -> SimResult:
        cfg = self.cfg
        end = cfg.sim_duration_ns * PS_PER_NS
        for w in range(cfg.n_workers):
            self.push(0, _EV_BURST, w)
        if self.n_samples:
            self.push(0, _EV_SAMPLE)
        handlers = {
            _EV_SAMPLE: self.on_sample, _EV_ARRIVE: self.on_arrive,
            _EV_TX_DONE: self.on_tx_done, _EV_DELIVER: self.on_deliver,
            _EV_CNP: self.on_cnp, _EV_PAUSE: self.on_pause,
            _EV_RESUME: self.on_resume, _EV_SEND: self.on_send,
            _EV_RATE_TIMER: self.on_rate_timer, _EV_ALPHA_TIMER: self.on_alpha_timer,
            _EV_CLAMP: self.on_clamp, _EV_BURST: self.on_burst,
        }
        heap = self.heap
        while heap:
            t, kind, _, args = heapq.heappop(heap)
            if t >= end:
                break
            handlers[kind](t, *args)
        self.check_conservation()
        times = np.arange(self.n_samples) * cfg.sample_interval_ns / 1e9
        rate = self.arr_bins * 8 / (cfg.sample_interval_ns / 1e9)
        return SimResult(
            config=cfg, times_s=times, agg_rate_bps=rate.astype(float),
            backlog_bytes=self.s_backlog, worker_rate_bps=self.s_rate,
            worker_alpha=self.s_alpha, counts=self.counts,
            peak_backlog=self.peak_backlog,
            first_mark_s=None if self.first_mark is None else self.first_mark / PS_PER_S,
            first_effective_reduction_s=None if self.first_eff is None
            else self.first_eff / PS_PER_S,
            max_ingress_bytes=self.max_ingress)

    def check_conservation(self):
        c = self.counts
        in_buffer = len(self.queue) - self.q_head
        if self.buffer_used != self.egress_bytes or self.buffer_used < 0:
            raise SimulationError("buffer accounting mismatch")
        if sum(self.ingress) != self.buffer_used:
            raise SimulationError("ingress counters disagree with buffer occupancy")
        self.counts["packets_in_buffer"] = in_buffer
        c["packets_in_flight"] = (c["packets_injected"] - c["packets_arrived"]) + \
            (c["packets_arrived"] - c["packets_dropped"] - in_buffer - c["packets_delivered"])
        if c["packets_in_flight"] < 0:
            raise SimulationError("packet conservation violated")

    # -- sampling
    def on_sample(self, t):
        k = self.sample_k
        if k >= self.n_samples:
            return
        self.s_backlog[k] = self.egress_bytes
        for w, s in enumerate(self.rp):
            self.s_rate[k, w] = s.rc * 8
            self.s_alpha[k, w] = s.alpha
        self.sample_k += 1
        self.push(t + self.sample_ps, _EV_SAMPLE)

    # -- senders
    def send_rate(self, w) -> float:
        return min(self.app_rate[w], self.rp[w].rc)

    def on_burst(self, t, w):
        plan = self.plans[w]
        i = self.burst_idx[w]
        if i >= len(plan):
            self.active[w] = False
            return
        self.remaining[w], self.app_rate[w] = plan[i]
        self.burst_idx[w] = i + 1
        self.active[w] = True
        self.note_rate(t, w)
        self.schedule_send(t, w, t)

    def schedule_send(self, now, w, at):
        self.send_token[w] += 1
        self.push(max(now, at), _EV_SEND, w, self.send_token[w])

    def on_send(self, t, w, token):
        if token != self.send_token[w] or not self.active[w]:
            return
        if self.paused[w]:
            self.waiting[w] = True
            return
        cfg = self.cfg
        size = min(cfg.mtu, self.remaining[w])
        self.remaining[w] -= size
        self.counts["packets_injected"] += 1
        self.push(t + _ser_ps(size, cfg.line_rate) + self.prop, _EV_ARRIVE, w, size)
        self.last_send[w] = t
        self.last_size[w] = size
        nxt = t + _ser_ps(size, self.send_rate(w))
        self.bytes_since[w] += size
        while self.bytes_since[w] >= self.p.byte_counter:
            self.bytes_since[w] -= self.p.byte_counter
            self.increase(t, w, "bytes")
        if self.remaining[w] == 0:
            self.active[w] = False
            gap = 0
            if self.burst_idx[w] < len(self.plans[w]):
                gap = self.gap_rng.randint(cfg.gap_low_ns, cfg.gap_high_ns) * PS_PER_NS
            self.push(nxt + gap, _EV_BURST, w)
        else:
            self.schedule_send(t, w, nxt)

    def reschedule(self, t, w):
        """Re-pace the pending frame after a rate change."""
        if self.active[w] and not self.waiting[w] and self.last_size[w]:
            self.schedule_send(t, w, self.last_send[w] +
                               _ser_ps(self.last_size[w], self.send_rate(w)))

    def note_rate(self, t, w):
        if self.first_eff is None and self.active[w] and \
                self.rp[w].rc < self.app_rate[w]:
            self.first_eff = t

    def set_state(self, t, w, state):
        self.rp[w] = state
        self.note_rate(t, w)
        self.reschedule(t, w)

    def on_cnp(self, t, w):
        self.counts["rate_cuts"] += 1
        self.set_state(t, w, dcqcn_on_cnp(self.rp[w], self.p))
        self.bytes_since[w] = 0
        self.cnp_seen[w] = True
        self.rate_token[w] += 1
        self.push(t + self.p.rate_timer_ns * PS_PER_NS, _EV_RATE_TIMER, w, self.rate_token[w])
        self.alpha_token[w] += 1
        self.push(t + self.p.alpha_timer_ns * PS_PER_NS, _EV_ALPHA_TIMER, w, self.alpha_token[w])

    def increase(self, t, w, source):
        if not self.cnp_seen[w]:
            return
        self.counts["rate_increases"] += 1
        self.set_state(t, w, dcqcn_increase_tick(self.rp[w], self.p, self.cfg.line_rate, source))

    def on_rate_timer(self, t, w, token):
        if token != self.rate_token[w]:
            return
        self.increase(t, w, "timer")
        self.push(t + self.p.rate_timer_ns * PS_PER_NS, _EV_RATE_TIMER, w, token)

    def on_alpha_timer(self, t, w, token):
        if token != self.alpha_token[w]:
            return
        self.rp[w] = dcqcn_alpha_decay(self.rp[w], self.p)
        self.push(t + self.p.alpha_timer_ns * PS_PER_NS, _EV_ALPHA_TIMER, w, token)

    def on_pause(self, t, w):
        self.paused[w] = True

    def on_resume(self, t, w):
        self.paused[w] = False
        if self.waiting[w]:
            self.waiting[w] = False
            self.schedule_send(t, w, t)

    def on_clamp(self, t):
        cap = self.cfg.line_rate / max(1, self.cfg.n_workers)
        for w in range(self.cfg.n_workers):
            s = self.rp[w]
            self.set_state(t, w, replace(s, rc=min(s.rc, cap), rt=min(s.rt, cap)))

    # -- switch
    def on_arrive(self, t, w, size):
        cfg = self.cfg
        c = self.counts
        c["packets_arrived"] += 1
        k = t // self.sample_ps
        if k < self.n_samples:
            self.arr_bins[k] += size
        if self.buffer_used + size > cfg.buffer_bytes:
            c["packets_dropped"] += 1
            return
        marked = self.rng.random() < red_mark_probability(self.egress_bytes, self.p)
        if marked:
            c["marks"] += 1
            if self.first_mark is None:
                self.first_mark = t
                if cfg.counterfactual_delay_ns is not None:
                    self.push(t + cfg.counterfactual_delay_ns * PS_PER_NS, _EV_CLAMP)
        self.queue.append((w, size, marked))
        self.egress_bytes += size
        self.buffer_used += size
        self.ingress[w] += size
        if self.egress_bytes > self.peak_backlog:
            self.peak_backlog = self.egress_bytes
        if self.ingress[w] > self.max_ingress:
            self.max_ingress = self.ingress[w]
        if self.buffer_used > cfg.buffer_bytes:
            raise SimulationError("shared buffer overflow")
        if not self.pause_sent[w] and self.ingress[w] >= self.xoff:
            self.pause_sent[w] = True
            c["pauses"] += 1
            self.push(t + self.prop, _EV_PAUSE, w)
        if not self.tx_busy:
            self.start_tx(t)

    def start_tx(self, t):
        if self.q_head >= len(self.queue):
            self.tx_busy = False
            return
        self.tx_busy = True
        w, size, marked = self.queue[self.q_head]
        self.push(t + _ser_ps(size, self.cfg.line_rate), _EV_TX_DONE)

    def on_tx_done(self, t):
        w, size, marked = self.queue[self.q_head]
        self.queue[self.q_head] = None
        self.q_head += 1
        if self.q_head > 4096 and self.q_head * 2 > len(self.queue):
            del self.queue[:self.q_head]
            self.q_head = 0
        self.egress_bytes -= size
        self.buffer_used -= size
        self.ingress[w] -= size
        if self.pause_sent[w] and self.ingress[w] <= self.xon:
            self.pause_sent[w] = False
            self.counts["resumes"] += 1
            self.push(t + self.prop, _EV_RESUME, w)
        self.push(t + self.prop, _EV_DELIVER, w, marked)
        self.start_tx(t)

    # -- sink
    def on_deliver(self, t, w, marked):
        self.counts["packets_delivered"] += 1
        if not marked:
            return
        last = self.last_cnp[w]
        if last is None or t - last >= self.p.cnp_interval_ns * PS_PER_NS:
            self.last_cnp[w] = t
            self.counts["cnps"] += 1
            # sink -> switch -> sender; the reverse path is uncongested
            self.push(t + 2 * self.prop, _EV_CNP, w)


def run_fanin(cfg: SimConfig) -> SimResult:
    """Simulate all workers starting their burst at time zero."""
    return _Sim(cfg).run()


def run_counterfactual_fast_reaction(cfg: SimConfig, delay_ns: int = 10_000) -> SimResult:
    """Same scenario, but every sender clamps to its fair share of the egress
    ``delay_ns`` after the first ECN mark."""
    return _Sim(replace(cfg, counterfactual_delay_ns=delay_ns)).run()
