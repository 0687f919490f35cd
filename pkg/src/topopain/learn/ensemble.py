"""Two-level SVR ensemble mapping HoT projections and landmarks to pain.

Level 1: per feature family (``hess``, ``grad``, ``pts``) three SVRs, each
trained on all pain frames plus an equally sized random draw of no-pain
frames; the family output is their mean.  Level 2: an AdaBoost.R2 ensemble
of four SVRs over the three family outputs.  The level-2 inputs come from
level-1 models that never saw the frame (two-fold cross-fitting over
training persons).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..embed import ProjectionBasis, project
from .svr import SvrModel, SvrParams, svr_from_dict, svr_to_dict, svr_train

FAMILIES = ("hess", "grad", "pts")
MODEL_FORMAT = 1


class LayoutError(ValueError):
    pass


def _seed_seq(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def balanced_indices(y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """All positive-pain rows plus as many zero-pain rows drawn without replacement."""
    y = np.asarray(y, float)
    pos = np.flatnonzero(y > 0)
    neg = np.flatnonzero(y <= 0)
    if len(pos) == 0:
        raise ValueError("no positive-pain frames to balance against")
    take = min(len(pos), len(neg))
    draw = np.sort(rng.choice(neg, size=take, replace=False)) if take else neg[:0]
    return np.concatenate([pos, draw])


@dataclass
class Triplet:
    models: list[SvrModel]
    rows: list[np.ndarray]        # indices of the training rows per replica

    def predict(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.models], axis=0)


def train_family_triplet(X, y, params: SvrParams = SvrParams(), seed=0,
                         n_replicas: int = 3) -> Triplet:
    X, y = np.asarray(X, float), np.asarray(y, float)
    models, rows = [], []
    for ss in _seed_seq(seed).spawn(n_replicas):
        idx = balanced_indices(y, np.random.default_rng(ss))
        models.append(svr_train(X[idx], y[idx], params))
        rows.append(idx)
    return Triplet(models, rows)


@dataclass
class Fusion:
    models: list[SvrModel]
    weights: np.ndarray
    rows: np.ndarray
    stop_reason: str = "completed"
    train_mse: list[float] = field(default_factory=list)

    def predict(self, F) -> np.ndarray:
        P = np.array([m.predict(F) for m in self.models])
        return self.weights @ P / self.weights.sum()


def train_fusion(F, y, seed=0, params: SvrParams = SvrParams(), n_rounds: int = 4,
                 balance: bool = True) -> Fusion:
    """AdaBoost.R2 (linear loss) over level-1 outputs.

    Sample weights enter the SVR as per-point box bounds ``C * n * w_i``.
    A round that would raise the ensemble's training MSE ends boosting.
    """
    F, y = np.atleast_2d(np.asarray(F, float)), np.asarray(y, float)
    rows = balanced_indices(y, np.random.default_rng(_seed_seq(seed))) if balance else np.arange(len(y))
    Fb, yb = F[rows], y[rows]
    n = len(yb)
    w = np.full(n, 1.0 / n)
    models, alphas, preds, mses = [], [], [], []
    reason = "completed"
    for _ in range(n_rounds):
        m = svr_train(Fb, yb, params, sample_weight=w * n)
        pred = m.predict(Fb)
        err = np.abs(pred - yb)
        emax = err.max()
        if emax == 0:
            models.append(m), alphas.append(1.0), preds.append(pred)
            reason = "perfect fit"
            break
        loss = err / emax
        lbar = float(w @ loss)
        if lbar >= 0.5 and models:
            reason = "weak learner error >= 0.5"
            break
        beta = min(max(lbar / (1 - lbar), 1e-10), 1 - 1e-10) if lbar < 1 else 1 - 1e-10
        cand_alpha = alphas + [np.log(1 / beta)]
        cand_pred = np.average(np.array(preds + [pred]), axis=0, weights=cand_alpha)
        mse = float(np.mean((cand_pred - yb) ** 2))
        if mses and mse > mses[-1]:
            reason = "round would increase training error"
            break
        models.append(m), alphas.append(cand_alpha[-1]), preds.append(pred), mses.append(mse)
        w = w * beta ** (1 - loss)
        w = w / w.sum()
        if lbar >= 0.5:
            reason = "weak learner error >= 0.5"
            break
    return Fusion(models, np.array(alphas), rows, reason, mses)


# --------------------------------------------------------------- pain model

@dataclass
class Scaler:
    """Per-dimension affine map of the training range onto [-1, 1].

    The default RBF width assumes inputs on this scale; constant dimensions
    map to zero.
    """
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, float)
        lo, hi = X.min(axis=0), X.max(axis=0)
        half = (hi - lo) / 2
        return cls((hi + lo) / 2, np.where(half > 1e-12, half, 1.0))

    def __call__(self, X):
        return (np.asarray(X, float) - self.mean) / self.scale


@dataclass
class PainModel:
    bases: dict[str, ProjectionBasis]
    scalers: dict[str, Scaler]
    families: dict[str, Triplet]
    fusion: Fusion
    seed: int
    config: dict = field(default_factory=dict)
    family_order: tuple[str, ...] = FAMILIES
    training_keys: list = field(default_factory=list)
    # cross-fitted level-1 outputs of the training rows (not persisted)
    crossfit_level1: np.ndarray | None = field(default=None, repr=False, compare=False)

    def family_inputs(self, hess, grad, pts) -> dict[str, np.ndarray]:
        raw = {"hess": project(self.bases["hess"], np.atleast_2d(hess)),
               "grad": project(self.bases["grad"], np.atleast_2d(grad)),
               "pts": np.atleast_2d(np.asarray(pts, float))}
        for name, sc in self.scalers.items():
            if raw[name].shape[1] != len(sc.mean):
                raise LayoutError(f"{name} input has {raw[name].shape[1]} dims, "
                                  f"model expects {len(sc.mean)}")
        return {k: self.scalers[k](v) for k, v in raw.items()}

    def level1(self, hess, grad, pts) -> np.ndarray:
        inp = self.family_inputs(hess, grad, pts)
        return np.column_stack([self.families[f].predict(inp[f]) for f in self.family_order])

    def predict(self, hess, grad, pts) -> np.ndarray:
        return self.fusion.predict(self.level1(hess, grad, pts))

    # ---- persistence
    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "seed": self.seed if isinstance(self.seed, int) else None,
            "config": self.config,
            "family_order": list(self.family_order),
            "bases": {k: b.to_dict() for k, b in self.bases.items()},
            "scalers": {k: {"mean": s.mean.tolist(), "scale": s.scale.tolist()}
                        for k, s in self.scalers.items()},
            "families": {k: {"models": [svr_to_dict(m) for m in t.models],
                             "rows": [r.tolist() for r in t.rows]}
                         for k, t in self.families.items()},
            "fusion": {"models": [svr_to_dict(m) for m in self.fusion.models],
                       "weights": self.fusion.weights.tolist(),
                       "rows": self.fusion.rows.tolist(),
                       "stop_reason": self.fusion.stop_reason,
                       "train_mse": self.fusion.train_mse},
            "training_keys": [list(k) for k in self.training_keys],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PainModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        fam = {k: Triplet([svr_from_dict(m) for m in t["models"]],
                          [np.array(r, int) for r in t["rows"]])
               for k, t in d["families"].items()}
        fu = d["fusion"]
        return cls(
            bases={k: ProjectionBasis.from_dict(b) for k, b in d["bases"].items()},
            scalers={k: Scaler(np.array(s["mean"]), np.array(s["scale"]))
                     for k, s in d["scalers"].items()},
            families=fam,
            fusion=Fusion([svr_from_dict(m) for m in fu["models"]], np.array(fu["weights"]),
                          np.array(fu["rows"], int), fu["stop_reason"], fu["train_mse"]),
            seed=d["seed"], config=d.get("config", {}),
            family_order=tuple(d["family_order"]),
            training_keys=[tuple(k) for k in d.get("training_keys", [])],
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "PainModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def crossfit_groups(subjects, sequences=None, frames=None, pain=None) -> np.ndarray:
    """Two-way split of training rows, by person when there are two or more.

    With a single training person, or when a person split would leave one
    side without pain frames, each sequence is cut in time instead, at the
    point that divides its pain frames evenly (the middle when it has fewer
    than two).
    """
    subjects = np.asarray(subjects)
    n = len(subjects)
    pos = np.zeros(n, bool) if pain is None else np.asarray(pain, float) > 0
    uniq = sorted(set(subjects.tolist()))
    if len(uniq) >= 2:
        rank = {s: k % 2 for k, s in enumerate(uniq)}
        groups = np.array([rank[s] for s in subjects.tolist()])
        if pain is None or (pos[groups == 0].any() and pos[groups == 1].any()):
            return groups
    groups = np.zeros(n, int)
    seqs = np.asarray(sequences) if sequences is not None else np.zeros(n)
    keys = [(a, b) for a, b in zip(subjects.tolist(), seqs.tolist())]
    for key in sorted(set(keys)):
        idx = np.array([i for i, k in enumerate(keys) if k == key])
        if frames is not None:
            idx = idx[np.argsort(np.asarray(frames)[idx], kind="stable")]
        hits = np.flatnonzero(pos[idx])
        cut = hits[len(hits) // 2] if len(hits) >= 2 else len(idx) // 2
        groups[idx[cut:]] = 1
    return groups


def _family_matrix(table, bases):
    return {"hess": project(bases["hess"], table.hess),
            "grad": project(bases["grad"], table.grad),
            "pts": np.asarray(table.pts, float)}


def train_pain_model(table, bases: dict[str, ProjectionBasis], params: SvrParams = SvrParams(),
                     seed: int = 0, config: dict | None = None) -> PainModel:
    """Fit the complete two-level model on an annotated :class:`FeatureTable`."""
    y = np.asarray(table.pain, float)
    if np.any(np.isnan(y)):
        raise ValueError("every training frame needs a pain score")
    if table.pts.shape[1] == 0:
        raise LayoutError("feature table carries no landmark coordinates")
    raw = _family_matrix(table, bases)
    scalers = {k: Scaler.fit(v) for k, v in raw.items()}
    inp = {k: scalers[k](v) for k, v in raw.items()}
    fam_ss, cross_ss, fusion_ss = _seed_seq(seed).spawn(3)
    fam_seeds = fam_ss.spawn(len(FAMILIES))

    groups = crossfit_groups(table.subject, table.sequence, table.frame, y)
    L1 = np.zeros((len(y), len(FAMILIES)))
    for g, g_ss in zip((0, 1), cross_ss.spawn(2)):
        test, train = groups == g, groups != g
        if not test.any():
            continue
        if not np.any(y[train] > 0):
            raise ValueError("cross-fitting split left a half without pain frames")
        for c, (f, f_ss) in enumerate(zip(FAMILIES, g_ss.spawn(len(FAMILIES)))):
            trip = train_family_triplet(inp[f][train], y[train], params, f_ss)
            L1[test, c] = trip.predict(inp[f][test])
    fusion = train_fusion(L1, y, fusion_ss, params)
    families = {f: train_family_triplet(inp[f], y, params, s) for f, s in zip(FAMILIES, fam_seeds)}
    return PainModel(dict(bases), scalers, families, fusion, seed, dict(config or {}),
                     FAMILIES, list(table.keys), L1)


def predict_pain(model: PainModel, hess, grad, pts, family_order=FAMILIES,
                 clamp: bool = False) -> np.ndarray:
    """Fused pain estimates; ``clamp`` limits the reported value to [0, 15]."""
    if tuple(family_order) != tuple(model.family_order):
        raise LayoutError(f"family order {tuple(family_order)} does not match the model's "
                          f"{model.family_order}")
    z = model.predict(hess, grad, pts)
    return np.clip(z, 0.0, 15.0) if clamp else z
