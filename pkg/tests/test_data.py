import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topopain.data import (CANVAS_ANCHOR, INTER_OCULAR, Frame, Landmarks, ManifestError, Region,
                           RoiSpec, Sequence, extract_rois, load_manifest, normalize_face,
                           prkachin_solomon, save_manifest, warp_similarity)
from topopain.hot import describe_face
from topopain.synth import MOUTH, synth_dataset


def _points(rng, n=22):
    pts = rng.uniform(20, 100, (n, 2))
    pts[6], pts[9] = (40, 50), (90, 50)
    return pts


def _frame(rng, index=0, **kw):
    img = rng.integers(0, 256, (60, 80)).astype(float)
    return Frame(img, Landmarks(_points(rng), 6, 9), "s", "q", index, **kw)


# ------------------------------------------------------------------ PSPI

def test_pspi_examples():
    assert prkachin_solomon({4: 0, 6: 0, 7: 0, 9: 0, 10: 0, 43: 0}) == 0
    assert prkachin_solomon({4: 3, 6: 2, 7: 4, 9: 0, 10: 1, 43: 1}) == 9
    # the formula reaches 16 even though the scale is usually quoted as 0..15
    assert prkachin_solomon({4: 5, 6: 5, 7: 0, 9: 5, 10: 0, 43: 1}) == 16


def test_pspi_missing_and_negative():
    with pytest.raises(ValueError, match="43"):
        prkachin_solomon({4: 1, 6: 1, 7: 1, 9: 1, 10: 1})
    with pytest.raises(ValueError):
        prkachin_solomon({4: -1, 6: 0, 7: 0, 9: 0, 10: 0, 43: 0})


aus = st.fixed_dictionaries({k: st.integers(0, 5) for k in (4, 6, 7, 9, 10)}
                            | {43: st.integers(0, 1)})


@given(aus, st.sampled_from([4, 6, 7, 9, 10, 43]))
def test_pspi_monotone(au, k):
    bumped = dict(au)
    bumped[k] += 1
    assert prkachin_solomon(bumped) >= prkachin_solomon(au)


# ----------------------------------------------------------- data model

def test_landmark_invariants(rng):
    with pytest.raises(ValueError, match="22"):
        Landmarks(rng.normal(size=(21, 2)), 6, 9)
    with pytest.raises(ValueError):
        Landmarks(rng.normal(size=(22, 2)), 6, 6)
    with pytest.raises(ValueError):
        Landmarks(rng.normal(size=(22, 2)), 6, 22)
    bad = rng.normal(size=(22, 2))
    bad[3, 0] = np.nan
    with pytest.raises(ValueError):
        Landmarks(bad, 6, 9)


def test_frame_pain_must_match_aus(rng):
    au = {4: 1, 6: 2, 7: 0, 9: 0, 10: 0, 43: 0}
    assert _frame(rng, pain=3.0, au=au).pain == 3.0
    with pytest.raises(ValueError, match="disagrees"):
        _frame(rng, pain=2.0, au=au)


def test_frame_image_is_read_only(rng):
    f = _frame(rng)
    with pytest.raises(ValueError):
        f.image[0, 0] = 1


def test_sequence_requires_strict_order(rng):
    a, b = _frame(rng, 3), _frame(rng, 3)
    with pytest.raises(ValueError, match="strictly"):
        Sequence((a, b))
    with pytest.raises(ValueError):
        Sequence(())


# -------------------------------------------------------------- manifests

def _write_manifest(tmp_path, rng, n_frames=3, n_points=22, missing=None, indices=None):
    from PIL import Image
    (tmp_path / "img").mkdir(exist_ok=True)
    frames = []
    for k in range(n_frames):
        name = f"img/f{k}.png"
        if k != missing:
            Image.fromarray(rng.integers(0, 256, (40, 50), dtype=np.uint8)).save(tmp_path / name)
        pts = _points(rng, n_points).tolist()
        frames.append({"image": name, "landmarks": pts, "pain": None, "au": None,
                       "index": k if indices is None else indices[k]})
    doc = {"sequences": [{"subject": "a", "sequence": "1", "frames": frames}]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    return path


def test_load_manifest_basic(tmp_path, rng):
    seqs = load_manifest(_write_manifest(tmp_path, rng))
    assert len(seqs) == 1 and len(seqs[0]) == 3
    assert seqs[0].frames[0].pain is None and seqs[0].frames[0].au is None


def test_load_manifest_missing_image(tmp_path, rng):
    with pytest.raises(ManifestError, match="f1.png"):
        load_manifest(_write_manifest(tmp_path, rng, missing=1))


def test_load_manifest_landmark_count(tmp_path, rng):
    with pytest.raises(ManifestError, match=r"frames\[0\].*22"):
        load_manifest(_write_manifest(tmp_path, rng, n_points=21))


def test_load_manifest_non_monotone(tmp_path, rng):
    with pytest.raises(ManifestError, match=r"sequences\[0\]"):
        load_manifest(_write_manifest(tmp_path, rng, indices=[0, 2, 1]))


def test_load_manifest_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ManifestError, match="bad.json"):
        load_manifest(p)
    p.write_text(json.dumps({"frames": []}))
    with pytest.raises(ManifestError, match="sequences"):
        load_manifest(p)


def test_landmark_text_files(tmp_path, rng):
    path = _write_manifest(tmp_path, rng, n_frames=1)
    doc = json.loads(path.read_text())
    pts = np.array(doc["sequences"][0]["frames"][0]["landmarks"])
    (tmp_path / "lm.txt").write_text("\n".join(f"{float(x)!r} {float(y)!r}" for x, y in pts))
    doc["sequences"][0]["frames"][0]["landmarks"] = "lm.txt"
    path.write_text(json.dumps(doc))
    seq = load_manifest(path)[0]
    np.testing.assert_array_equal(seq.frames[0].landmarks.points, pts)


def test_manifest_round_trip(tmp_path, small_synth):
    seqs, _ = small_synth
    seqs = [Sequence(s.frames[:5]) for s in seqs]
    back = load_manifest(save_manifest(seqs, tmp_path / "m.json"))
    assert len(back) == len(seqs)
    for a, b in zip(seqs, back):
        for fa, fb in zip(a, b):
            assert fa.key == fb.key and fa.pain == fb.pain and fa.au == fb.au
            np.testing.assert_array_equal(fa.image, fb.image)
            np.testing.assert_array_equal(fa.landmarks.points, fb.landmarks.points)
            assert fa.landmarks.eyes[0].tolist() == fb.landmarks.eyes[0].tolist()


# ---------------------------------------------------------- normalization

def _eye_check(f):
    l, r = f.landmarks.eyes
    assert abs(l[1] - r[1]) < 1e-6
    assert abs(np.hypot(*(r - l)) - INTER_OCULAR) < 1e-6


def test_normalize_forces_eye_geometry(rng):
    pts = _points(rng)
    pts[6], pts[9] = (10, 20), (30, 40)
    f = Frame(rng.uniform(0, 255, (64, 64)), Landmarks(pts, 6, 9), "s", "q", 0)
    g = normalize_face(f)
    _eye_check(g)
    np.testing.assert_allclose(g.landmarks.eyes[0] + g.landmarks.eyes[1],
                               2 * np.array(CANVAS_ANCHOR), atol=1e-9)
    assert g.normalized and g.image.shape == (128, 128)


def test_normalize_identity_and_idempotence(small_synth):
    f = small_synth[0][0].frames[10]
    g = normalize_face(f)
    h = normalize_face(g)
    assert np.max(np.abs(h.landmarks.points - g.landmarks.points)) < 1e-6
    assert np.max(np.abs(h.image - g.image)) < 1e-6
    _eye_check(h)


def test_normalize_coincident_eyes(rng):
    pts = _points(rng)
    pts[9] = pts[6]
    f = Frame(np.zeros((8, 8)), Landmarks(pts, 6, 9), "s", "q", 0)
    with pytest.raises(ValueError, match="coincide"):
        normalize_face(f)


def test_normalize_after_rotation(small_synth):
    # rotate a synthetic face by 10 degrees about its centre with the same resampler
    f = small_synth[0][0].frames[20]
    h, w = f.image.shape
    c = complex(w / 2, h / 2)
    a = np.exp(1j * np.deg2rad(10))
    t = c - a * c
    rot_img = warp_similarity(f.image, a, t, f.image.shape)
    z = a * (f.landmarks.points[:, 0] + 1j * f.landmarks.points[:, 1]) + t
    rot = Frame(rot_img, f.landmarks.with_points(np.column_stack([z.real, z.imag])),
                "s", "q", 0)
    g0, g1 = normalize_face(f), normalize_face(rot)
    x0, y0 = np.floor(g0.landmarks.points.min(axis=0)).astype(int)
    x1, y1 = np.ceil(g0.landmarks.points.max(axis=0)).astype(int)
    diff = np.abs(g0.image - g1.image)[y0:y1 + 1, x0:x1 + 1]
    assert diff.mean() < 2.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-170, 170), st.floats(0.5, 3.0), st.floats(-30, 30), st.floats(-30, 30))
def test_normalize_any_similarity(angle, scale, dx, dy):
    rng = np.random.default_rng(0)
    pts = _points(rng)
    a = scale * np.exp(1j * np.deg2rad(angle))
    z = a * (pts[:, 0] + 1j * pts[:, 1]) + complex(dx, dy)
    f = Frame(np.zeros((32, 32)), Landmarks(np.column_stack([z.real, z.imag]), 6, 9),
              "s", "q", 0)
    _eye_check(normalize_face(f))


# ------------------------------------------------------------------- ROIs

def test_default_rois(small_synth):
    g = normalize_face(small_synth[0][0].frames[0])
    patches = extract_rois(g)
    assert [p.name for p in patches] == [r.name for r in RoiSpec().regions]
    assert len(patches) == 5 and all(p.patch.size > 0 for p in patches)


def test_mouth_roi_centred_on_landmarks(small_synth):
    for seq in small_synth[0]:
        g = normalize_face(seq.frames[30])
        mouth = [p for p in extract_rois(g) if p.name == "mouth"][0]
        centroid = g.landmarks.points[list(MOUTH)].mean(axis=0)
        assert np.all(np.abs(np.array(mouth.center) - centroid) <= 2.0)


def test_zero_area_region():
    with pytest.raises(ValueError, match="area"):
        Region("mouth", (16,), 0.0, 0.0)


def test_region_outside_image(small_synth):
    g = normalize_face(small_synth[0][0].frames[0])
    regions = list(RoiSpec().regions)
    regions[0] = Region("far", (6,), 0.5, 0.5, dx=10.0)
    with pytest.raises(ValueError, match="outside"):
        extract_rois(g, RoiSpec(tuple(regions)))


def test_rois_need_normalized_frame(small_synth):
    with pytest.raises(ValueError, match="normalized"):
        extract_rois(small_synth[0][0].frames[0])


def test_roi_spec_round_trip():
    spec = RoiSpec()
    assert RoiSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        RoiSpec(spec.regions[:4])


# -------------------------------------------------------------- generator

def test_synth_deterministic():
    a, ta = synth_dataset(1, 2, 10)
    b, tb = synth_dataset(1, 2, 10)
    for sa, sb in zip(a, b):
        for fa, fb in zip(sa, sb):
            np.testing.assert_array_equal(fa.image, fb.image)
            np.testing.assert_array_equal(fa.landmarks.points, fb.landmarks.points)
            assert fa.pain == fb.pain and fa.au == fb.au
    c, _ = synth_dataset(2, 2, 10)
    assert not np.array_equal(a[0].frames[0].image, c[0].frames[0].image)


def test_synth_pain_matches_aus(small_synth):
    seqs, traces = small_synth
    for seq, tr in zip(seqs, traces):
        for f in seq:
            assert f.pain == prkachin_solomon(f.au)
        assert np.all((tr.pain >= 0) & (tr.pain <= 15))
        assert tr.blink.sum() == 8


def test_synth_invalid_sizes():
    with pytest.raises(ValueError):
        synth_dataset(0, 1, 10)
    with pytest.raises(ValueError):
        synth_dataset(0, 2, 2)


def test_synth_pain_changes_descriptor(small_synth):
    seqs, traces = small_synth
    for seq, tr in zip(seqs, traces):
        ok = ~tr.blink
        zeros = np.flatnonzero((tr.latent == 0) & ok)
        top = int(np.argmax(np.where(ok, tr.latent, -1)))
        d = {k: describe_face(normalize_face(seq.frames[k])).full for k in (*zeros[:2], top)}
        base = np.abs(d[zeros[0]] - d[zeros[1]]).sum()
        pain = np.abs(d[zeros[0]] - d[top]).sum()
        assert pain > base
