"""Synthetic distributed-training traffic (Linear- and Ring-Allreduce) and a
reference Ring Allreduce kernel."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .csvio import DataError
from .trace import ArrivalFunction, ingest_arrays, write_trace_csv

GBPS = 1e9 / 8          # bytes/s per Gbit/s
NS = 1_000_000_000
MS = 1_000_000          # ns
BUNDLED_MANIFEST = "resnet50_layers.csv"


# -- layer manifest ------------------------------------------------------------

@dataclass(frozen=True)
class LayerManifest:
    """Per-layer parameter counts in forward order."""

    layers: tuple[int, ...]
    bytes_per_param: int = 4

    def __post_init__(self):
        if not self.layers:
            raise ValueError("manifest has no layers")
        if any(int(c) <= 0 for c in self.layers):
            raise ValueError("parameter counts must be positive")
        if self.bytes_per_param <= 0:
            raise ValueError("bytes_per_param must be positive")
        object.__setattr__(self, "layers", tuple(int(c) for c in self.layers))

    def __len__(self):
        return len(self.layers)

    @property
    def total_params(self) -> int:
        return sum(self.layers)

    @property
    def gradient_bytes(self) -> int:
        return self.total_params * self.bytes_per_param

    def layer_bytes(self, i: int) -> int:
        return self.layers[i] * self.bytes_per_param


def load_manifest(path, bytes_per_param: int = 4) -> LayerManifest:
    """Read a ``layer_index,param_count`` CSV."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return _parse_manifest(text, str(path), bytes_per_param)


def bundled_manifest() -> LayerManifest:
    """ResNet-50 gradient tensors grouped into 54 layers (conv + its batch
    norm, and the classifier)."""
    text = resources.files("burstlab.data").joinpath(BUNDLED_MANIFEST).read_text()
    return _parse_manifest(text, BUNDLED_MANIFEST, 4)


def _parse_manifest(text: str, name: str, bytes_per_param: int) -> LayerManifest:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and not parts[0].isdigit():
            continue
        try:
            if len(parts) != 2:
                raise ValueError("expected 2 fields")
            idx, count = int(parts[0]), int(parts[1])
            if count <= 0:
                raise ValueError("parameter count must be positive")
        except ValueError as exc:
            raise DataError(f"{name}:{lineno}: bad manifest row {line!r} ({exc})") from None
        rows.append((idx, count))
    if not rows:
        raise DataError(f"{name}: empty manifest")
    rows.sort()
    return LayerManifest(tuple(c for _, c in rows), bytes_per_param)


# -- workload spec -------------------------------------------------------------

@dataclass(frozen=True)
class WorkloadSpec:
    """Traffic description of one training application.

    Times are integer nanoseconds and rates bytes per second. The default
    gaps put a 3-worker Linear-Allreduce round at about 2.5 s.
    """

    manifest: LayerManifest = field(default_factory=bundled_manifest)
    n_workers: int = 3
    rounds: int = 10
    forward_gap_ns: int = 2_250 * MS
    gap_low_ns: int = MS // 2
    gap_high_ns: int = 3 * MS // 2
    burst_rate_low: float = 25 * GBPS
    burst_rate_high: float = 35 * GBPS
    line_rate: float = 100 * GBPS
    mode: str = "linear"
    seed: int = 0
    mtu: int = 1500
    return_traffic: bool = False

    def __post_init__(self):
        if self.mode not in ("linear", "ring"):
            raise ValueError(f"mode: unknown mode {self.mode!r}")
        min_workers = 2 if self.mode == "ring" else 1
        if self.n_workers < min_workers:
            raise ValueError(f"n_workers: need at least {min_workers} workers "
                             f"for {self.mode} mode")
        if self.rounds < 1:
            raise ValueError("rounds: must be at least 1")
        if self.forward_gap_ns < 0:
            raise ValueError("forward_gap: must be nonnegative")
        if not 0 <= self.gap_low_ns <= self.gap_high_ns:
            raise ValueError("gap: need 0 <= low <= high")
        if not 0 < self.burst_rate_low <= self.burst_rate_high <= self.line_rate:
            raise ValueError("burst_rate: need 0 < low <= high <= line_rate")
        if self.mtu <= 0:
            raise ValueError("mtu: must be positive")

    # JSON keys use seconds and bits per second.
    _JSON_FIELDS = {
        "mode": ("mode", str, 1),
        "n_workers": ("n_workers", int, 1),
        "rounds": ("rounds", int, 1),
        "forward_gap_s": ("forward_gap_ns", float, NS),
        "gap_low_s": ("gap_low_ns", float, NS),
        "gap_high_s": ("gap_high_ns", float, NS),
        "burst_rate_low_bps": ("burst_rate_low", float, 1 / 8),
        "burst_rate_high_bps": ("burst_rate_high", float, 1 / 8),
        "line_rate_bps": ("line_rate", float, 1 / 8),
        "seed": ("seed", int, 1),
        "mtu": ("mtu", int, 1),
        "return_traffic": ("return_traffic", bool, 1),
    }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "WorkloadSpec":
        kwargs = {}
        known = set(cls._JSON_FIELDS) | {"manifest", "bytes_per_param"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"{sorted(unknown)[0]}: unknown field")
        for key, (attr, typ, scale) in cls._JSON_FIELDS.items():
            if key not in d:
                continue
            val = d[key]
            try:
                if typ is bool:
                    if not isinstance(val, bool):
                        raise TypeError
                    kwargs[attr] = val
                elif typ is str:
                    kwargs[attr] = str(val)
                elif attr.endswith("_ns"):
                    kwargs[attr] = int(round(float(val) * scale))
                elif typ is int:
                    if isinstance(val, bool) or int(val) != val:
                        raise TypeError
                    kwargs[attr] = int(val)
                else:
                    kwargs[attr] = float(val) * scale
            except (TypeError, ValueError):
                raise ValueError(f"{key}: invalid value {val!r}") from None
        bpp = d.get("bytes_per_param", 4)
        if "manifest" in d and d["manifest"] is not None:
            path = Path(d["manifest"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            kwargs["manifest"] = load_manifest(path, bpp)
        elif bpp != 4:
            kwargs["manifest"] = replace(bundled_manifest(), bytes_per_param=int(bpp))
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "WorkloadSpec":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read spec {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ValueError("spec must be a JSON object")
        return cls.from_dict(d, base_dir=Path(path).parent)


# -- generated traffic -----------------------------------------------------------

@dataclass(frozen=True)
class Burst:
    worker: int          # sender; -1 is the server
    dest: int            # receiver; -1 is the server
    layer: int
    phase: str           # reduce | reduce_scatter | allgather | return
    step: int
    start_ns: int
    end_ns: int
    bytes: int
    rate: float          # bytes/s


def _duration_ns(nbytes: int, rate: float) -> int:
    return max(1, math.ceil(nbytes * NS / rate))


def packetize(b: Burst, mtu: int) -> tuple[np.ndarray, np.ndarray]:
    """Split a constant-rate burst into MTU frames stamped at their send start."""
    full, rest = divmod(b.bytes, mtu)
    sizes = np.full(full + (1 if rest else 0), mtu, dtype=np.int64)
    if rest:
        sizes[-1] = rest
    offsets = np.concatenate([[0], np.cumsum(sizes[:-1])])
    ts = b.start_ns + np.floor(offsets * (NS / b.rate)).astype(np.int64)
    return ts, sizes


@dataclass(frozen=True)
class GeneratedWorkload:
    spec: WorkloadSpec
    bursts: tuple[Burst, ...]

    def sent_by(self, worker: int) -> list[Burst]:
        return [b for b in self.bursts if b.worker == worker]

    def bytes_sent(self, worker: int) -> int:
        return sum(b.bytes for b in self.sent_by(worker))

    def packets(self, worker: int, direction: str = "out") -> tuple[np.ndarray, np.ndarray]:
        """Frames sent by ``worker`` (``out``) or, with return traffic,
        frames the server sends to it (``in``)."""
        if direction == "out":
            sel = self.sent_by(worker)
        elif direction == "in":
            sel = [b for b in self.bursts if b.worker == -1 and b.dest == worker]
        else:
            raise ValueError(f"direction must be 'out' or 'in', not {direction!r}")
        if not sel:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        parts = [packetize(b, self.spec.mtu) for b in sel]
        ts = np.concatenate([p[0] for p in parts])
        sz = np.concatenate([p[1] for p in parts])
        order = np.argsort(ts, kind="stable")
        return ts[order], sz[order]

    @property
    def end_ns(self) -> int:
        return max(b.end_ns for b in self.bursts)

    def traces(self, bin_width_ns=10_000, direction: str = "out") -> list[ArrivalFunction]:
        """Per-worker arrival functions on one common grid."""
        pk = [self.packets(w, direction) for w in range(self.spec.n_workers)]
        last = max(int(ts[-1]) for ts, _ in pk if len(ts))
        bw = Fraction(bin_width_ns)
        bin_count = int(last * bw.denominator // bw.numerator) + 1
        return [ingest_arrays(ts, sz, bw, bin_count) if len(ts)
                else ArrivalFunction.from_bins(np.zeros(bin_count, dtype=np.int64), bw)
                for ts, sz in pk]

    def write_event_log(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("worker,layer,phase,start_ns,bytes\n")
            for b in self.bursts:
                fh.write(f"{b.worker},{b.layer},{b.phase},{b.start_ns},{b.bytes}\n")

    def write_traces(self, out_dir, prefix: str = "worker") -> list[Path]:
        out_dir = Path(out_dir)
        paths = []
        for w in range(self.spec.n_workers):
            p = out_dir / f"{prefix}{w + 1}.csv"
            write_trace_csv(p, *self.packets(w))
            paths.append(p)
        return paths


def gen_linear(spec: WorkloadSpec) -> GeneratedWorkload:
    """Linear-Allreduce: per layer, in reverse order, workers send their full
    gradient to the server one after the other in a fixed sequence."""
    if spec.mode != "linear":
        raise ValueError("gen_linear needs mode='linear'")
    rng = np.random.default_rng(spec.seed)
    m = spec.manifest
    bursts = []
    t = 0
    for _ in range(spec.rounds):
        t += spec.forward_gap_ns
        for layer in reversed(range(len(m))):
            nbytes = m.layer_bytes(layer)
            senders = list(range(spec.n_workers))
            for w in senders:
                rate = rng.uniform(spec.burst_rate_low, spec.burst_rate_high)
                end = t + _duration_ns(nbytes, rate)
                bursts.append(Burst(w, -1, layer, "reduce", 0, t, end, nbytes, rate))
                t = end + int(rng.integers(spec.gap_low_ns, spec.gap_high_ns + 1))
            if spec.return_traffic:
                for w in senders:
                    rate = rng.uniform(spec.burst_rate_low, spec.burst_rate_high)
                    end = t + _duration_ns(nbytes, rate)
                    bursts.append(Burst(-1, w, layer, "return", 0, t, end, nbytes, rate))
                    t = end
    return GeneratedWorkload(spec, tuple(bursts))


def ring_chunk_bytes(params: int, n_workers: int, bytes_per_param: int = 4) -> int:
    """Bytes per ring step for one layer; layers with fewer parameters than
    workers go as a single chunk."""
    if params < n_workers:
        return params * bytes_per_param
    return -(-params * bytes_per_param // n_workers)


def gen_ring(spec: WorkloadSpec) -> GeneratedWorkload:
    """Ring-Allreduce: per layer, 2(N-1) chunk transmissions per worker to its
    ring successor; a worker's step ``s`` starts only after it has received
    step ``s-1`` from its predecessor and finished its own previous send."""
    if spec.mode != "ring":
        raise ValueError("gen_ring needs mode='ring'")
    rng = np.random.default_rng(spec.seed)
    m = spec.manifest
    n = spec.n_workers
    steps = 2 * (n - 1)
    bursts = []
    round_end = 0
    for _ in range(spec.rounds):
        start = round_end + spec.forward_gap_ns
        ready = [start] * n        # earliest time each worker may begin a layer
        for layer in reversed(range(len(m))):
            chunk = ring_chunk_bytes(m.layers[layer], n, m.bytes_per_param)
            free = list(ready)
            prev_end = None        # prev_end[w]: end of w's send in the previous step
            for s in range(steps):
                ends = [0] * n
                for w in range(n):
                    dep = ready[w] if prev_end is None else prev_end[(w - 1) % n]
                    t0 = max(free[w], dep) + int(rng.integers(spec.gap_low_ns,
                                                              spec.gap_high_ns + 1))
                    rate = rng.uniform(spec.burst_rate_low, spec.burst_rate_high)
                    t1 = t0 + _duration_ns(chunk, rate)
                    phase, k = (("reduce_scatter", s) if s < n - 1
                                else ("allgather", s - (n - 1)))
                    bursts.append(Burst(w, (w + 1) % n, layer, phase, k, t0, t1, chunk, rate))
                    free[w] = t1
                    ends[w] = t1
                prev_end = ends
            ready = [max(free[w], prev_end[(w - 1) % n]) for w in range(n)]
        round_end = max(ready)
    bursts.sort(key=lambda b: (b.start_ns, b.worker))
    return GeneratedWorkload(spec, tuple(bursts))


def generate(spec: WorkloadSpec) -> GeneratedWorkload:
    return gen_linear(spec) if spec.mode == "linear" else gen_ring(spec)


def expected_bytes_per_round(spec: WorkloadSpec) -> int:
    """Closed-form bytes one worker sends per round."""
    m = spec.manifest
    if spec.mode == "linear":
        return m.gradient_bytes
    steps = 2 * (spec.n_workers - 1)
    return sum(steps * ring_chunk_bytes(p, spec.n_workers, m.bytes_per_param)
               for p in m.layers)


# -- ring allreduce kernel ---------------------------------------------------------

@dataclass(frozen=True)
class Transfer:
    phase: str
    step: int
    src: int
    dst: int
    chunk: int


def chunk_bounds(length: int, n: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, length, n + 1).round().astype(int)
    return list(zip(edges[:-1].tolist(), edges[1:].tolist()))


def ring_allreduce_kernel(vectors: Sequence, bounds=None, corrupt_transfer: int | None = None):
    """Sum ``vectors`` elementwise with Reduce-Scatter followed by Allgather.

    Returns ``(outputs, transfers)``. ``bounds`` overrides the chunk
    partition (``N`` half-open ranges covering the vector). ``corrupt_transfer``
    adds 1 to the first element of that transfer's payload; it is a fault
    hook for testing the verifier.
    """
    bufs = [np.array(v, copy=True) for v in vectors]
    n = len(bufs)
    if n == 0:
        return [], []
    length = len(bufs[0])
    if any(b.ndim != 1 or len(b) != length for b in bufs):
        raise ValueError("all vectors must be one-dimensional and of equal length")
    if n == 1:
        return bufs, []
    if bounds is None:
        bounds = chunk_bounds(length, n)
    if len(bounds) != n or bounds[0][0] != 0 or bounds[-1][1] != length or \
            any(a[1] != b[0] for a, b in zip(bounds, bounds[1:])):
        raise ValueError("bounds must partition the vector into N ranges")
    transfers: list[Transfer] = []

    def exchange(phase, step, chunk_of, combine):
        payloads = []
        for i in range(n):
            c = chunk_of(i)
            lo, hi = bounds[c]
            data = bufs[i][lo:hi].copy()
            if corrupt_transfer == len(transfers) and len(data):
                data[0] += 1
            transfers.append(Transfer(phase, step, i, (i + 1) % n, c))
            payloads.append((c, data))
        for i, (c, data) in enumerate(payloads):
            lo, hi = bounds[c]
            dst = bufs[(i + 1) % n]
            dst[lo:hi] = combine(dst[lo:hi], data)

    for s in range(n - 1):
        exchange("reduce_scatter", s, lambda i, s=s: (i - s) % n, lambda old, new: old + new)
    for s in range(n - 1):
        exchange("allgather", s, lambda i, s=s: (i + 1 - s) % n, lambda old, new: new)
    return bufs, transfers


def spec_to_dict(spec: WorkloadSpec) -> dict:
    d = asdict(spec)
    d["manifest"] = {"layers": len(spec.manifest), "params": spec.manifest.total_params}
    return d
