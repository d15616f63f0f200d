import json
import math

import numpy as np
import pytest

from burstlab.csvio import DataError
from burstlab.workload import (LayerManifest, WorkloadSpec, bundled_manifest, chunk_bounds,
                               expected_bytes_per_round, generate, load_manifest,
                               packetize, Burst, ring_allreduce_kernel, ring_chunk_bytes)

SMALL = LayerManifest((1000, 20, 3, 50_000))


def test_bundled_manifest_matches_resnet50():
    m = bundled_manifest()
    assert len(m) == 54
    assert m.total_params == 25_557_032
    assert m.gradient_bytes == 102_228_128
    assert m.layers[-1] == 2_049_000 and m.layers[0] == 9536


def test_bundled_manifest_against_torchvision():
    models = pytest.importorskip("torchvision.models")
    net = models.resnet50()
    assert sum(p.numel() for p in net.parameters()) == bundled_manifest().total_params


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("layer_index,param_count\n0,10\n1,abc\n")
    with pytest.raises(DataError, match=":3:"):
        load_manifest(p)
    p.write_text("layer_index,param_count\n")
    with pytest.raises(DataError, match="empty"):
        load_manifest(p)


def test_linear_volume_and_order():
    spec = WorkloadSpec(manifest=SMALL, n_workers=3, rounds=2, forward_gap_ns=10_000)
    gen = generate(spec)
    for w in range(3):
        assert gen.bytes_sent(w) == 2 * SMALL.gradient_bytes
        ts, sz = gen.packets(w)
        assert sz.sum() == 2 * SMALL.gradient_bytes and sz.max() <= 1500
        assert np.all(np.diff(ts) >= 0)
    first_round = [b for b in gen.bursts[:3 * len(SMALL)]]
    assert [b.layer for b in first_round[::3]] == [3, 2, 1, 0]     # backward order
    assert [b.worker for b in first_round[:3]] == [0, 1, 2]
    spans = sorted((b.start_ns, b.end_ns) for b in gen.bursts)
    assert all(e <= s for (_, e), (s, _) in zip(spans, spans[1:]))


def test_linear_return_traffic():
    spec = WorkloadSpec(manifest=SMALL, n_workers=2, rounds=1, return_traffic=True)
    gen = generate(spec)
    for w in range(2):
        assert gen.packets(w, "in")[1].sum() == SMALL.gradient_bytes


def test_ring_bursts_and_dependencies():
    spec = WorkloadSpec(manifest=LayerManifest((1_000_000,)), n_workers=4, rounds=1,
                        mode="ring", forward_gap_ns=0)
    gen = generate(spec)
    assert len(gen.bursts) == 24
    for w in range(4):
        mine = gen.sent_by(w)
        assert len(mine) == 6 and all(b.dest == (w + 1) % 4 for b in mine)
        assert all(b.bytes == 1_000_000 for b in mine)
    by = {(b.worker, b.phase, b.step): b for b in gen.bursts}
    order = [("reduce_scatter", s) for s in range(3)] + [("allgather", s) for s in range(3)]
    for w in range(4):
        for prev, cur in zip(order, order[1:]):
            # a step needs the predecessor's previous step to have arrived
            assert by[(w, *cur)].start_ns >= by[((w - 1) % 4, *prev)].end_ns
            assert by[(w, *cur)].start_ns >= by[(w, *prev)].end_ns


def test_ring_chunk_rounding():
    assert ring_chunk_bytes(10, 4) == 10      # 40 bytes / 4 workers
    assert ring_chunk_bytes(11, 4) == 11      # ceil(44 / 4)
    assert ring_chunk_bytes(3, 4) == 12       # fewer params than workers: whole layer
    spec = WorkloadSpec(n_workers=4, mode="ring")
    exact = 6 * bundled_manifest().gradient_bytes / 4
    assert exact <= expected_bytes_per_round(spec) <= exact + 6 * 54


def test_packetize_exact_sizes():
    b = Burst(0, -1, 0, "reduce", 0, 100, 0, 4000, 1e9)
    ts, sz = packetize(b, 1500)
    assert sz.tolist() == [1500, 1500, 1000]
    assert ts.tolist() == [100, 1600, 3100]


def test_generation_deterministic():
    spec = WorkloadSpec(manifest=SMALL, rounds=2, seed=7)
    assert generate(spec).bursts == generate(spec).bursts
    other = WorkloadSpec(manifest=SMALL, rounds=2, seed=8)
    assert generate(spec).bursts != generate(other).bursts


def test_spec_from_json(tmp_path):
    (tmp_path / "m.csv").write_text("0,100\n1,200\n")
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"mode": "ring", "n_workers": 4, "rounds": 2,
                             "gap_low_s": 1e-4, "gap_high_s": 2e-4,
                             "burst_rate_low_bps": 8e9, "manifest": "m.csv"}))
    s = WorkloadSpec.from_json(p)
    assert (s.mode, s.n_workers, s.rounds, s.gap_low_ns) == ("ring", 4, 2, 100_000)
    assert s.burst_rate_low == 1e9 and s.manifest.layers == (100, 200)


@pytest.mark.parametrize("body,field", [
    ({"n_workers": "three"}, "n_workers"),
    ({"n_workers": 1, "mode": "ring"}, "n_workers"),
    ({"mode": "tree"}, "mode"),
    ({"rounds": 0}, "rounds"),
    ({"colour": 1}, "colour"),
    ({"gap_low_s": 2, "gap_high_s": 1}, "gap"),
])
def test_spec_field_errors(tmp_path, body, field):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(body))
    with pytest.raises(ValueError, match=f"^{field}"):
        WorkloadSpec.from_json(p)


@pytest.mark.parametrize("n,length", [(2, 2), (3, 10), (4, 1000), (5, 3), (8, 4096)])
def test_ring_kernel_sums(n, length):
    rng = np.random.default_rng(n * length)
    vecs = [rng.integers(-10**6, 10**6, length) for _ in range(n)]
    outs, transfers = ring_allreduce_kernel(vecs)
    expected = np.sum(vecs, axis=0)
    assert all(np.array_equal(o, expected) for o in outs)
    assert len(transfers) == 2 * n * (n - 1)


def test_ring_kernel_edge_cases():
    outs, transfers = ring_allreduce_kernel([np.arange(5)])
    assert transfers == [] and outs[0].tolist() == [0, 1, 2, 3, 4]
    # length shorter than worker count leaves some chunks empty
    outs, _ = ring_allreduce_kernel([np.array([1, 2]), np.array([3, 4]), np.array([5, 6])])
    assert all(o.tolist() == [9, 12] for o in outs)
    with pytest.raises(ValueError):
        ring_allreduce_kernel([np.zeros(3), np.zeros(4)])


def test_ring_kernel_fault_hook_is_detected():
    vecs = [np.ones(12, dtype=np.int64) for _ in range(3)]
    outs, _ = ring_allreduce_kernel(vecs, corrupt_transfer=0)
    assert any(not np.array_equal(o, np.full(12, 3)) for o in outs)


def test_chunk_bounds_partition():
    for n in range(1, 9):
        for length in (0, 1, n, 4097):
            b = chunk_bounds(length, n)
            assert b[0][0] == 0 and b[-1][1] == length
            assert all(x[1] == y[0] for x, y in zip(b, b[1:]))
            assert max(hi - lo for lo, hi in b) <= math.ceil(length / n)
