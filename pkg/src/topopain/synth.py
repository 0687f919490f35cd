"""Deterministic synthetic face sequences with known pain ground truth.

Faces are drawn analytically in the canonical (normalized) frame and then
mapped into the raw image through a per-subject, per-frame similarity, so the
normalization step has real work to do.  Expression raises the amplitude of
curvature structures: brow lowering and glabellar furrows (AU4), lid
narrowing and crow's feet (AU6/AU7), nose wrinkles and nasolabial folds
(AU9/AU10), closed eyes (AU43).  Blinks close the eyes for 8 frames without
entering the ground truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DEFAULT_EYE_INDICES, Frame, Landmarks, Sequence, prkachin_solomon

# canonical 22-point layout (x, y) on the 128x128, IOD-50 canvas
LAYOUT = np.array([
    [27, 37], [39, 34], [51, 37],             # 0-2   left brow: outer, mid, inner
    [77, 37], [89, 34], [101, 37],            # 3-5   right brow: inner, mid, outer
    [39, 48], [29, 48], [49, 48],             # 6-8   left eye: centre, outer, inner
    [89, 48], [79, 48], [99, 48],             # 9-11  right eye: centre, inner, outer
    [64, 50], [64, 76], [56, 79], [72, 79],   # 12-15 nose: root, tip, left/right alar
    [51, 96], [64, 93], [77, 96], [64, 101], [64, 97],   # 16-20 mouth: l, upper, r, lower, centre
    [64, 120],                                # 21    chin
], dtype=float)

MOUTH = (16, 17, 18, 19, 20)
BLINK_FRAMES = 8
RAW_SHAPE = (160, 160)


@dataclass(frozen=True)
class SubjectStyle:
    layout: np.ndarray
    skin: float
    contrast: float
    brow_dark: float
    wrinkle_gain: float
    au_gain: dict
    scale: float
    rotation: float
    shift: tuple[float, float]


@dataclass
class SynthTrace:
    subject_id: str
    sequence_id: str
    latent: np.ndarray                 # latent pain in [0, 1]
    blink: np.ndarray                  # bool mask of blink frames
    au: dict = field(default_factory=dict)   # coded AU intensities per frame
    pain: np.ndarray | None = None     # Prkachin-Solomon score per frame


def _subject_style(rng: np.random.Generator) -> SubjectStyle:
    jitter = rng.normal(0, 1.0, LAYOUT.shape)
    jitter[[6, 9]] = 0.0            # IOD fixed in the canonical frame
    jitter[12:] *= 1.3
    return SubjectStyle(
        layout=LAYOUT + jitter,
        skin=rng.uniform(140, 185),
        contrast=rng.uniform(0.85, 1.15),
        brow_dark=rng.uniform(35, 55),
        wrinkle_gain=rng.uniform(0.8, 1.2),
        au_gain={k: rng.uniform(0.75, 1.0) for k in (4, 6, 7, 9, 10)},
        scale=rng.uniform(0.9, 1.2),
        rotation=rng.uniform(-12, 12),
        shift=(rng.uniform(-5, 5), rng.uniform(-5, 5)),
    )


def _seg_dist(x, y, p, q):
    px, py = p
    dx, dy = q[0] - px, q[1] - py
    t = np.clip(((x - px) * dx + (y - py) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    return np.hypot(x - px - t * dx, y - py - t * dy)


def _polyline(x, y, pts, s):
    d = np.full(x.shape, np.inf)
    for p, q in zip(pts[:-1], pts[1:]):
        d = np.minimum(d, _seg_dist(x, y, p, q))
    return np.exp(-d ** 2 / (2 * s * s))


def _blob(x, y, c, sx, sy):
    return np.exp(-((x - c[0]) ** 2 / (2 * sx * sx) + (y - c[1]) ** 2 / (2 * sy * sy)))


def deform_layout(style: SubjectStyle, au: dict, extra: dict | None = None) -> np.ndarray:
    """Canonical landmarks after expression."""
    extra = extra or {}
    L = style.layout.copy()
    a4, a10 = au.get(4, 0.0), au.get(10, 0.0)
    raise_ = extra.get(1, 0.0)
    L[0:6, 1] += 0.8 * a4 - 1.2 * raise_
    L[2, 0] += 0.5 * a4
    L[3, 0] -= 0.5 * a4
    L[17, 1] -= 0.7 * a10
    L[[16, 18], 1] -= 0.35 * a10 + 0.9 * extra.get(12, 0.0)
    L[19, 1] += 1.5 * extra.get(26, 0.0)
    return L


def render_canonical(x, y, style: SubjectStyle, au: dict, eye_open: float,
                     extra: dict | None = None) -> np.ndarray:
    """Intensity of the expressive face at canonical coordinates ``(x, y)``."""
    extra = extra or {}
    L = deform_layout(style, au, extra)
    wg = style.wrinkle_gain
    a4, a6, a7 = au.get(4, 0.0), au.get(6, 0.0), au.get(7, 0.0)
    a9, a10 = au.get(9, 0.0), au.get(10, 0.0)

    face = _blob(x, y, (64, 72), 50, 64)
    img = 70.0 + (style.skin - 70.0) * np.clip(1.6 * face - 0.3, 0, 1)
    img = img - 0.08 * (x - 64)                          # side lighting

    # brows
    for idx in ((0, 1, 2), (3, 4, 5)):
        img -= style.brow_dark * _polyline(x, y, L[list(idx)], 1.8)
    # glabellar furrows (AU4)
    for sx in (-3.5, 3.5):
        top, bot = (64 + sx, L[2, 1] - 6), (64 + 0.6 * sx, L[2, 1] + 8)
        img -= 6.0 * wg * a4 * _polyline(x, y, np.array([top, bot]), 1.2)
    # eyes: aperture shrinks with AU6/AU7, closes for AU43 and blinks
    for c_i, o_i, side in ((6, 7, -1), (9, 11, 1)):
        c = L[c_i]
        img -= 80.0 * eye_open * _blob(x, y, c, 6.0, 0.8 + 3.2 * eye_open)
        lid = np.array([[c[0] - 8, c[1] + 0.5], [c[0], c[1] + 1.5], [c[0] + 8, c[1] + 0.5]])
        img -= 45.0 * (1.0 - eye_open) * _polyline(x, y, lid, 1.1)
        # crow's feet (AU6) and lower-lid fold (AU7)
        o = L[o_i]
        for dy in (-3.0, 0.0, 3.0):
            seg = np.array([[o[0] + side * 3, o[1] + dy * 0.6], [o[0] + side * 10, o[1] + dy * 1.6]])
            img -= 5.0 * wg * a6 * _polyline(x, y, seg, 0.9)
        fold = np.array([[c[0] - 7, c[1] + 6], [c[0], c[1] + 7.5], [c[0] + 7, c[1] + 6]])
        img -= 5.0 * wg * a7 * _polyline(x, y, fold, 1.0)
    # forehead lines (AU1/2, not pain related)
    for fy in (20.0, 24.5, 29.0):
        seg = np.array([[44, fy], [84, fy]])
        img -= 5.0 * extra.get(1, 0.0) * _polyline(x, y, seg, 1.0)
    # nose: nostrils, bridge shading, wrinkles (AU9)
    for k in (14, 15):
        img -= 40.0 * _blob(x, y, L[k], 2.2, 1.6)
    img += 12.0 * _polyline(x, y, L[[12, 13]], 3.0)
    for ny in (56.0, 59.5, 63.0):
        seg = np.array([[58, ny], [70, ny]])
        img -= 6.0 * wg * a9 * _polyline(x, y, seg, 0.9)
    # nasolabial folds deepen with AU9/AU10
    fold_amp = 8.0 + 5.0 * wg * max(a9, a10)
    for alar, corner, side in ((14, 16, -1), (15, 18, 1)):
        p0 = L[alar] + np.array([side * 2.0, 0.0])
        mid = 0.5 * (p0 + L[corner]) + np.array([side * 3.0, 0.0])
        img -= fold_amp * _polyline(x, y, np.array([p0, mid, L[corner] + [side * 2.0, 1.0]]), 1.4)
    # mouth
    lips = L[[16, 17, 18]]
    img -= 55.0 * _polyline(x, y, lips, 1.2)
    gap = 0.4 * a10 + 2.0 * extra.get(26, 0.0)
    if gap > 0:
        img -= 30.0 * min(gap, 2.0) * _blob(x, y, 0.5 * (L[17] + L[19]), 8.0, 0.8 + gap)
    img -= 18.0 * _polyline(x, y, L[[16, 19, 18]], 1.5)

    return style.skin + style.contrast * (img - style.skin)


def _pose(style: SubjectStyle, rng: np.random.Generator) -> tuple[complex, complex]:
    """Canonical -> raw similarity ``p -> a p + t`` with per-frame head motion."""
    rot = np.radians(style.rotation + rng.normal(0, 1.0))
    a = style.scale * (1 + rng.normal(0, 0.01)) * np.exp(1j * rot)
    centre_raw = complex(RAW_SHAPE[1] / 2 + style.shift[0] + rng.normal(0, 0.7),
                         RAW_SHAPE[0] / 2 + style.shift[1] + rng.normal(0, 0.7))
    return a, centre_raw - a * complex(64, 72)


def render_frame(style: SubjectStyle, au: dict, eye_open: float, rng: np.random.Generator,
                 extra: dict | None = None, noise: float = 2.5):
    """Raw 8-bit image and raw landmarks for one expression state."""
    a, t = _pose(style, rng)
    rows, cols = np.mgrid[0:RAW_SHAPE[0], 0:RAW_SHAPE[1]].astype(float)
    c = ((cols + 1j * rows) - t) / a
    img = render_canonical(c.real, c.imag, style, au, eye_open, extra)
    img = img + rng.normal(0, noise, img.shape)
    img = np.clip(np.round(img), 0, 255)
    L = deform_layout(style, au, extra)
    z = a * (L[:, 0] + 1j * L[:, 1]) + t
    pts = np.column_stack([z.real, z.imag]) + rng.normal(0, 0.2, L.shape)
    return img, pts


# ------------------------------------------------------------ pain traces

def _ramp(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, n + 2)[1:-1])


def pain_trace(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Latent onset-apex-offset pain profile in [0, 1] and a blink mask."""
    p = np.zeros(n)
    n_ep = 1 if n < 90 else int(rng.integers(1, 3))
    slots = np.array_split(np.arange(n), n_ep)
    for slot in slots:
        m = len(slot)
        on, apex, off = (max(1, int(round(rng.uniform(lo, hi) * m)))
                         for lo, hi in ((0.12, 0.22), (0.15, 0.3), (0.12, 0.22)))
        total = on + apex + off
        if total > m:
            on, apex, off = max(1, m // 4), max(1, m // 4), max(1, m // 4)
            total = on + apex + off
        start = slot[0] + int(rng.integers(0, m - total + 1))
        amp = rng.uniform(0.4, 1.0)
        prof = np.concatenate([_ramp(on), np.ones(apex), _ramp(off)[::-1]]) * amp
        seg = slice(start, start + total)
        p[seg] = np.maximum(p[seg], prof)
    blink = np.zeros(n, dtype=bool)
    n_blink = n // 60
    for _ in range(n_blink):
        for _try in range(20):
            s = int(rng.integers(0, n - BLINK_FRAMES + 1))
            lo, hi = max(0, s - 4), min(n, s + BLINK_FRAMES + 4)
            if not blink[lo:hi].any():
                blink[s:s + BLINK_FRAMES] = True
                break
    return p, blink


def code_aus(p: float, style: SubjectStyle) -> tuple[dict, dict]:
    """Latent (continuous) and FACS-coded (integer) action units for pain ``p``."""
    latent = {k: float(np.clip(5.0 * p * g, 0, 5)) for k, g in style.au_gain.items()}
    coded = {k: float(np.round(v)) for k, v in latent.items()}
    coded[43] = 1.0 if p > 0.85 else 0.0
    return latent, coded


def _check(n_subjects, frames_per_seq):
    if n_subjects < 2:
        raise ValueError("n_subjects must be >= 2")
    if frames_per_seq < 3:
        raise ValueError("frames_per_seq must be >= 3")


def synth_traces(seed: int, n_subjects: int, frames_per_seq: int, sequences_per_subject: int = 1):
    """Ground-truth traces only (no images); identical to those of :func:`synth_dataset`."""
    return synth_dataset(seed, n_subjects, frames_per_seq, sequences_per_subject,
                         render=False)[1]


def synth_dataset(seed: int, n_subjects: int, frames_per_seq: int,
                  sequences_per_subject: int = 1, render: bool = True):
    """Target (pain) data set: ``(sequences, traces)``.

    Bit-identical for a given seed.  Subject ``k`` is named ``s{k:02d}``.
    """
    _check(n_subjects, frames_per_seq)
    root = np.random.SeedSequence(seed)
    sequences, traces = [], []
    for si, sub_ss in enumerate(root.spawn(n_subjects)):
        style_ss, *seq_ss = sub_ss.spawn(1 + sequences_per_subject)
        style = _subject_style(np.random.default_rng(style_ss))
        sid = f"s{si:02d}"
        for qi, q_ss in enumerate(seq_ss):
            trace_rng, img_rng = (np.random.default_rng(s) for s in q_ss.spawn(2))
            p, blink = pain_trace(trace_rng, frames_per_seq)
            qid = f"q{qi}"
            trace = SynthTrace(sid, qid, p, blink)
            coded_all, pains, frames = [], [], []
            for t in range(frames_per_seq):
                latent, coded = code_aus(p[t], style)
                pain = prkachin_solomon(coded)
                coded_all.append(coded)
                pains.append(pain)
                if render:
                    eye_open = float(np.clip(1 - 0.09 * max(latent[6], latent[7]), 0.3, 1))
                    if coded[43] or blink[t]:
                        eye_open = 0.08
                    img, pts = render_frame(style, latent, eye_open, img_rng)
                    frames.append(Frame(img, Landmarks(pts, *DEFAULT_EYE_INDICES), sid, qid, t,
                                        pain=pain, au=coded))
            trace.au = {k: np.array([c[k] for c in coded_all]) for k in coded_all[0]}
            trace.pain = np.array(pains)
            traces.append(trace)
            if render:
                sequences.append(Sequence(tuple(frames)))
    return sequences, traces


# facial expressions of the unlabeled source set: latent AU recipes
EXPRESSIONS = {
    "pain": {4: 1.0, 6: 0.9, 7: 0.9, 9: 0.8, 10: 0.8},
    "disgust": {9: 1.0, 10: 0.9, 4: 0.4},
    "anger": {4: 1.0, 7: 0.8},
    "happy": {6: 0.7, "12": 1.0},
    "surprise": {"1": 1.0, "26": 1.0},
    "sad": {"1": 0.5, 4: 0.6},
    "neutral": {},
}


def synth_source(seed: int, n_subjects: int, expressions_per_subject: int = 4):
    """Unlabeled source set of neutral -> apex posed expressions.

    Each sequence has three frames (neutral, onset, apex).  Frames carry coded
    pain-related AUs and the derived score, which only serve to flag frames
    for the graph weighting; the set has no pain-estimation labels.
    """
    if n_subjects < 1 or expressions_per_subject < 1:
        raise ValueError("invalid source set size")
    root = np.random.SeedSequence([seed, 7919])
    names = sorted(EXPRESSIONS)
    sequences = []
    for si, sub_ss in enumerate(root.spawn(n_subjects)):
        style_ss, pick_ss, img_ss = sub_ss.spawn(3)
        style = _subject_style(np.random.default_rng(style_ss))
        pick = np.random.default_rng(pick_ss)
        img_rng = np.random.default_rng(img_ss)
        sid = f"src{si:03d}"
        for qi in range(expressions_per_subject):
            recipe = EXPRESSIONS[names[int(pick.integers(len(names)))]]
            peak = pick.uniform(0.5, 1.0)
            frames = []
            for t, level in enumerate((0.0, 0.5, 1.0)):
                lat = {k: float(np.clip(5 * level * peak * g, 0, 5))
                       for k, g in recipe.items() if isinstance(k, int)}
                extra = {int(k): level * peak * g for k, g in recipe.items() if isinstance(k, str)}
                full = {k: lat.get(k, 0.0) for k in (4, 6, 7, 9, 10)}
                coded = {k: float(np.round(v)) for k, v in full.items()}
                coded[43] = 0.0
                eye_open = float(np.clip(1 - 0.09 * max(full[6], full[7]), 0.3, 1))
                img, pts = render_frame(style, full, eye_open, img_rng, extra)
                frames.append(Frame(img, Landmarks(pts, *DEFAULT_EYE_INDICES), sid, f"e{qi}", t,
                                    pain=prkachin_solomon(coded), au=coded))
            sequences.append(Sequence(tuple(frames)))
    return sequences


def simulate_estimates(trace: SynthTrace, rng: np.random.Generator, noise: float = 0.3,
                       spike: float = 3.0) -> np.ndarray:
    """Per-frame estimates a frame-wise regressor might produce for ``trace``.

    Ground truth plus Gaussian noise, with a plateau of height ``spike`` on
    blink frames (closed eyes resemble AU43 but are not coded as pain).
    """
    z = np.asarray(trace.pain, float) + rng.normal(0.0, noise, len(trace.pain))
    return z + spike * trace.blink
