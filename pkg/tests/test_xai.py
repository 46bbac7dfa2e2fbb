import itertools
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vdrisk.errors import InvalidInputError, ScorerError
from vdrisk.xai import (
    CallableScorer,
    LinearScorer,
    Mask,
    MaskSpec,
    SubprocessScorer,
    apply_mask,
    dataset_mean,
    occlude,
    occlusion_masks,
    read_vten,
    select_representative,
    summarize,
    write_vten,
)
from vdrisk.xai.vten import _HEADER

# --------------------------------------------------------------------------
# VTEN files


def test_vten_round_trip(tmp_path):
    v = np.random.default_rng(0).random((3, 5, 7)).astype(np.float32)
    write_vten(tmp_path / "v.vten", v)
    assert np.array_equal(read_vten(tmp_path / "v.vten"), v)
    raw = (tmp_path / "v.vten").read_bytes()
    assert raw[:4] == b"VTEN" and len(raw) == _HEADER.size + v.size * 4


def test_vten_rejects_corruption(tmp_path):
    write_vten(tmp_path / "v.vten", np.zeros((1, 2, 2)))
    raw = (tmp_path / "v.vten").read_bytes()
    (tmp_path / "magic.vten").write_bytes(b"XTEN" + raw[4:])
    (tmp_path / "short.vten").write_bytes(raw[:-4])
    (tmp_path / "head.vten").write_bytes(raw[:6])
    for name in ("magic", "short", "head"):
        with pytest.raises(InvalidInputError):
            read_vten(tmp_path / f"{name}.vten")
    with pytest.raises(InvalidInputError):
        write_vten(tmp_path / "nan.vten", np.full((1, 2, 2), np.nan))


# --------------------------------------------------------------------------
# masks


def test_mask_grid_covers_edges():
    masks = occlusion_masks((2, 20, 20), MaskSpec(patch=(8, 8), stride=(8, 8)))
    rows = sorted({m.r0 for m in masks})
    assert rows == [0, 8, 12]
    cover = np.zeros((20, 20), int)
    for m in masks:
        assert (m.t0, m.t1) == (0, 2)
        cover[m.r0:m.r1, m.c0:m.c1] += 1
    assert cover.min() >= 1


def test_spatiotemporal_windows():
    masks = occlusion_masks((5, 4, 4), MaskSpec("spatiotemporal", (4, 4), (4, 4), window=2))
    assert [(m.t0, m.t1) for m in masks] == [(0, 2), (2, 4), (3, 5)]


@pytest.mark.parametrize("spec", [
    MaskSpec(patch=(40, 4)), MaskSpec(stride=(0, 4)), MaskSpec("bogus"),
    MaskSpec("spatiotemporal", window=9), MaskSpec("spatiotemporal", window=2, temporal_stride=0)])
def test_mask_spec_validation(spec):
    with pytest.raises(InvalidInputError):
        occlusion_masks((4, 16, 16), spec)


def test_apply_mask_bounds():
    v = np.ones((2, 3, 3), np.float32)
    out = apply_mask(v, Mask(0, 1, 0, 2, 1, 3, fill=0.25))
    assert out[0, :2, 1:].tolist() == [[0.25, 0.25], [0.25, 0.25]] and out.sum() == pytest.approx(18 - 3)
    assert v.sum() == 18
    with pytest.raises(InvalidInputError):
        apply_mask(v, Mask(0, 3, 0, 1, 0, 1))


# --------------------------------------------------------------------------
# attribution maps


def _linear_oracle(v, w, spec):
    """Average of mask-wise score drops over every mask covering each cell,
    computed mask by mask from the linear formula."""
    masks = occlusion_masks(v.shape, spec)
    shape = v.shape if spec.variant == "spatiotemporal" else v.shape[1:]
    acc, cnt = np.zeros(shape), np.zeros(shape)
    for m in masks:
        sl = np.s_[m.t0:m.t1, m.r0:m.r1, m.c0:m.c1]
        drop = float(np.sum(w[sl] * (v[sl] - m.fill)))
        cell = sl if spec.variant == "spatiotemporal" else np.s_[m.r0:m.r1, m.c0:m.c1]
        acc[cell] += drop
        cnt[cell] += 1
    return acc / cnt


@pytest.mark.parametrize("spec", [
    MaskSpec(patch=(6, 5), stride=(3, 4)),
    MaskSpec(patch=(4, 4), stride=(4, 4), baseline=0.5),
    MaskSpec("spatiotemporal", (5, 5), (5, 5), window=2, temporal_stride=1),
])
def test_linear_scorer_closed_form(spec):
    rng = np.random.default_rng(1)
    v = rng.random((6, 13, 11)).astype(np.float32).astype(np.float64)
    w = rng.standard_normal(v.shape) * 1e-3
    amap = occlude(v, spec, LinearScorer(w, 0.5))
    assert np.allclose(amap, _linear_oracle(v, w, spec), atol=1e-9)


def test_constant_and_unrelated_regions():
    v = np.random.default_rng(2).random((3, 16, 16))
    assert not np.any(occlude(v, MaskSpec(patch=(4, 4), stride=(4, 4)), CallableScorer(lambda x: 0.4)))
    # scorer reads only the top-left quadrant; disjoint patches get exactly zero
    w = np.zeros(v.shape)
    w[:, :8, :8] = 1e-3
    amap = occlude(v, MaskSpec(patch=(8, 8), stride=(8, 8)), LinearScorer(w))
    assert not np.any(amap[8:, :]) and not np.any(amap[:, 8:])
    assert np.all(amap[:8, :8] > 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000))
def test_spatiotemporal_sums_to_masked_map(n_windows, seed):
    # per-frame linear scorer, disjoint windows tiling the clip
    window = 2
    rng = np.random.default_rng(seed)
    v = rng.random((window * n_windows, 8, 8))
    w = rng.standard_normal(v.shape) * 1e-3
    scorer = LinearScorer(w)
    st_map = occlude(v, MaskSpec("spatiotemporal", (4, 4), (4, 4), window=window), scorer)
    masked = occlude(v, MaskSpec("masked_sequence", (4, 4), (4, 4)), scorer)
    assert np.allclose(st_map.sum(axis=0) / window, masked, atol=1e-9)


def test_dataset_mean():
    assert dataset_mean([np.zeros((1, 2, 2)), np.ones((3, 2, 2))]) == 0.75


# --------------------------------------------------------------------------
# representative selection


def test_identical_videos_keep_input_order():
    v = np.ones((2, 4, 4))
    assert select_representative([v] * 6, 3) == [0, 1, 2]


def test_outlier_excluded():
    rng = np.random.default_rng(0)
    videos = [0.5 + 0.01 * rng.standard_normal((2, 4, 4)) for _ in range(9)]
    videos.insert(4, np.full((2, 4, 4), 9.0))
    chosen = select_representative(videos, 9)
    assert 4 not in chosen and len(chosen) == 9


def test_selection_matches_brute_force():
    rng = np.random.default_rng(4)
    videos = [rng.random((3, 4, 5)) for _ in range(10)]
    frames = [v.mean(axis=0) for v in videos]
    center = np.mean(frames, axis=0)
    best = min(itertools.combinations(range(10), 4),
               key=lambda c: sum(np.linalg.norm(frames[i] - center) for i in c))
    assert sorted(select_representative(videos, 4)) == sorted(best)


def test_selection_errors():
    with pytest.raises(InvalidInputError):
        select_representative([np.zeros((2, 4, 4)), np.zeros((2, 4, 5))], 1)
    with pytest.raises(InvalidInputError):
        select_representative([np.zeros((2, 4, 4))], 2)
    with pytest.raises(InvalidInputError):
        select_representative([], 0)


# --------------------------------------------------------------------------
# summaries


def test_single_map_summary():
    m = np.arange(12.0).reshape(3, 4) - 5
    s = summarize([m], top_frac=0.25)
    assert np.array_equal(s.mean, m) and np.array_equal(s.median, m)
    assert s.top_positive.sum() == 3 and s.top_positive.reshape(-1)[-3:].tolist() == [1, 1, 1]
    assert s.top_negative.sum() == 3 and s.top_negative.reshape(-1)[:3].tolist() == [1, 1, 1]


def test_top_fraction_count():
    m = np.random.default_rng(1).random((20, 20)) + 0.1
    s = summarize([m])
    assert s.top_positive.sum() == 20
    assert s.top_negative.sum() == 0
    assert m[s.top_positive == 1].min() >= m[s.top_positive == 0].max()


def test_opposite_maps_cancel():
    a = np.random.default_rng(2).standard_normal((6, 6))
    s = summarize([a, -a])
    assert not np.any(s.mean) and not np.any(s.top_positive) and not np.any(s.top_negative)


def test_mean_is_linear():
    rng = np.random.default_rng(3)
    a = [rng.standard_normal((4, 5)) for _ in range(4)]
    b = [rng.standard_normal((4, 5)) for _ in range(4)]
    combo = summarize([2 * x - 3 * y for x, y in zip(a, b)]).mean
    assert np.allclose(combo, 2 * summarize(a).mean - 3 * summarize(b).mean, atol=1e-12)
    with pytest.raises(InvalidInputError):
        summarize([a[0], np.zeros((2, 2))])


# --------------------------------------------------------------------------
# subprocess protocol


def _fake_scorer(tmp_path, body):
    """Write a child that reads requests and answers via ``respond(req)``."""
    script = tmp_path / "fake.py"
    script.write_text(textwrap.dedent("""
        import json, sys, time
        for line in sys.stdin:
            req = json.loads(line)
        {body}
            sys.stdout.write(json.dumps(resp) + "\\n")
            sys.stdout.flush()
    """).format(body=textwrap.indent(textwrap.dedent(body).strip(), "    ")))
    return [sys.executable, str(script)]


@pytest.mark.parametrize("body,match", [
    ('resp = {"id": req["id"], "confidence": 1.5}', "outside"),
    ('resp = {"id": 999, "confidence": 0.5}', "unknown id"),
    ('resp = {"id": req["id"], "error": "boom"}', "boom"),
    ('resp = {"id": req["id"]}', "outside"),
])
def test_protocol_violations(tmp_path, body, match):
    with SubprocessScorer(_fake_scorer(tmp_path, body), timeout=10) as scorer:
        with pytest.raises(ScorerError, match=match) as err:
            scorer.score(np.zeros((1, 2, 2)), [None])
    assert err.value.request_id == 0


def test_scorer_timeout(tmp_path):
    cmd = _fake_scorer(tmp_path, 'time.sleep(30)\nresp = {}')
    scorer = SubprocessScorer(cmd, timeout=0.3)
    try:
        with pytest.raises(ScorerError, match="timed out") as err:
            scorer.score(np.zeros((1, 2, 2)), [None])
        assert err.value.request_id == 0
    finally:
        scorer.proc.kill()
        scorer.close()


def test_scorer_missing_executable():
    with pytest.raises(ScorerError):
        SubprocessScorer(["/nonexistent/scorer-binary"])


def test_out_of_order_responses(tmp_path):
    # child buffers a whole batch of four and answers it in reverse order
    script = tmp_path / "rev.py"
    script.write_text(textwrap.dedent("""
        import json, sys
        import numpy as np
        from vdrisk.xai import Mask, apply_mask, read_vten
        pending = []
        for line in sys.stdin:
            pending.append(json.loads(line))
            if len(pending) == 4:
                for req in reversed(pending):
                    v = read_vten(req["video"])
                    m = None if req["mask"] is None else Mask.from_dict(req["mask"])
                    conf = 0.5 + 1e-3 * float(np.sum(apply_mask(v, m), dtype=np.float64))
                    sys.stdout.write(json.dumps({"id": req["id"], "confidence": conf}) + "\\n")
                sys.stdout.flush()
                pending = []
    """))
    v = np.random.default_rng(5).random((2, 7, 8)).astype(np.float32)
    # seven one-row masks plus the unmasked request fill two batches of four
    spec = MaskSpec(patch=(1, 8), stride=(1, 8))
    reference = occlude(v, spec, CallableScorer(lambda x: 0.5 + 1e-3 * float(np.sum(x, dtype=np.float64))))
    with SubprocessScorer([sys.executable, str(script)], timeout=10, batch=4) as scorer:
        amap = occlude(v, spec, scorer)
    assert np.allclose(amap, reference, atol=1e-9)
