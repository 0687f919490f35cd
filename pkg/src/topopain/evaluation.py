"""Metrics and the leave-one-person-out (LOPO) experiment harness."""
from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .data import prkachin_solomon
from .embed import learn_basis
from .hot import FeatureTable
from .learn.ensemble import PainModel, predict_pain, train_pain_model
from .temporal import apply_filter, train_filter

__all__ = ["prkachin_solomon", "mse", "pearson", "auc", "MetricUndefined", "FoldResult",
           "LopoResult", "AuditError", "fold_seed", "learn_bases", "run_lopo"]


class MetricUndefined(ValueError):
    pass


class AuditError(AssertionError):
    pass


def _pair(truth, est):
    t, e = np.asarray(truth, float).ravel(), np.asarray(est, float).ravel()
    if len(t) != len(e):
        raise ValueError(f"length mismatch: {len(t)} truths vs {len(e)} estimates")
    if len(t) == 0:
        raise ValueError("empty input")
    return t, e


def mse(truth, est) -> float:
    t, e = _pair(truth, est)
    return float(np.mean((t - e) ** 2))


def pearson(truth, est) -> float:
    t, e = _pair(truth, est)
    dt, de = t - t.mean(), e - e.mean()
    st, se = np.sqrt(dt @ dt), np.sqrt(de @ de)
    if st == 0 or se == 0:
        raise MetricUndefined("Pearson correlation undefined for a constant input")
    return float(np.clip((dt / st) @ (de / se), -1.0, 1.0))


def auc(labels, scores) -> float:
    """Mann-Whitney estimate of ROC area; tied pos/neg pairs count one half."""
    lab = np.asarray(labels).astype(bool).ravel()
    s = np.asarray(scores, float).ravel()
    if len(lab) != len(s):
        raise ValueError("labels and scores differ in length")
    pos, neg = s[lab], np.sort(s[~lab])
    if len(pos) == 0 or len(neg) == 0:
        raise MetricUndefined("AUC needs both positive and negative frames")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (len(pos) * len(neg)))


def _safe(fn, *args):
    try:
        return fn(*args)
    except MetricUndefined:
        return None


@dataclass
class FoldResult:
    subject: str
    keys: list                      # (subject, sequence, frame) per test row
    truth: np.ndarray
    estimate: np.ndarray            # reported estimate (filtered when a filter is set)
    unfiltered: np.ndarray
    seed: int
    audit: dict = field(default_factory=dict)

    @property
    def mse(self) -> float:
        return mse(self.truth, self.estimate)

    @property
    def pearson(self) -> float | None:
        return _safe(pearson, self.truth, self.estimate)

    @property
    def auc(self) -> float | None:
        return _safe(auc, self.truth > 0, self.estimate)

    def to_dict(self) -> dict:
        return {"subject": self.subject, "seed": self.seed, "n": len(self.truth),
                "mse": self.mse, "pearson": self.pearson, "auc": self.auc,
                "mse_unfiltered": mse(self.truth, self.unfiltered),
                "audit": self.audit,
                "frames": [[q, int(f), float(t), float(e), float(u)]
                           for (_, q, f), t, e, u in zip(self.keys, self.truth, self.estimate,
                                                         self.unfiltered)]}


@dataclass
class LopoResult:
    folds: list[FoldResult]
    config: dict
    seed: int

    def aggregate(self) -> dict:
        t = np.concatenate([f.truth for f in self.folds])
        e = np.concatenate([f.estimate for f in self.folds])
        fold_r = [f.pearson for f in self.folds]
        fold_a = [f.auc for f in self.folds]
        train_mean_mse = float(np.mean(np.concatenate([
            (f.truth - np.mean(np.concatenate([g.truth for g in self.folds if g is not f]))) ** 2
            for f in self.folds])))
        return {
            "pooled": {"n": len(t), "mse": mse(t, e), "pearson": _safe(pearson, t, e),
                       "auc": _safe(auc, t > 0, e)},
            "fold_mean": {
                "mse": float(np.mean([f.mse for f in self.folds])),
                "pearson": _mean([r for r in fold_r if r is not None]),
                "pearson_excluded": sum(r is None for r in fold_r),
                "auc": _mean([a for a in fold_a if a is not None]),
                "auc_excluded": sum(a is None for a in fold_a),
            },
            "baseline": {"constant_pooled_mean_mse": float(np.var(t)),
                         "constant_train_mean_mse": train_mean_mse},
        }

    @property
    def audit_passed(self) -> bool:
        return all(f.audit.get("passed") for f in self.folds)

    def to_dict(self) -> dict:
        return {"format": 1, "seed": self.seed, "config": self.config,
                "aggregate": self.aggregate(), "audit_passed": self.audit_passed,
                "folds": [f.to_dict() for f in self.folds]}


def _mean(xs):
    return float(np.mean(xs)) if xs else None


def fold_seed(seed: int, subject: str) -> int:
    """Per-fold seed from the master seed and the held-out subject id."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(subject.encode())])
    return int(ss.generate_state(1)[0])


def learn_bases(source: FeatureTable, config: PipelineConfig, flags=None) -> dict:
    """Hessian and gradient bases from the unlabeled source descriptors only."""
    if flags is None:
        flags = np.nan_to_num(source.pain, nan=0.0) > 0
    params = config.embed()
    prov = {"source_subjects": sorted(set(source.subject)), "seed": config.seed}
    return {"hess": learn_basis(source.hess, config.T_hess, params, flags,
                                {**prov, "family": "hess"}),
            "grad": learn_basis(source.grad, config.T_grad, params, flags,
                                {**prov, "family": "grad"})}


def _sequences(table: FeatureTable, rows: np.ndarray) -> list[np.ndarray]:
    """Row indices grouped per (subject, sequence), each sorted by frame index."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((table.subject[r], table.sequence[r]), []).append(r)
    out = []
    for k in sorted(groups):
        idx = np.array(groups[k])
        out.append(idx[np.argsort(table.frame[idx], kind="stable")])
    return out


def _run_fold(target: FeatureTable, subject: str, bases: dict, config_dict: dict, seed: int,
              source_keys: frozenset) -> FoldResult:
    config = PipelineConfig(config_dict)
    subj = np.array(target.subject)
    annotated = ~np.isnan(target.pain)
    test_rows = np.flatnonzero((subj == subject) & annotated)
    train_rows = np.flatnonzero((subj != subject) & annotated)
    rng_model, rng_filter = np.random.SeedSequence(seed).generate_state(2)
    train = target.subset(train_rows)
    model = train_pain_model(train, bases, config.svr(), int(rng_model), config.values)
    test = target.subset(test_rows)
    raw = predict_pain(model, test.hess, test.grad, test.pts)

    est = raw.copy()
    filt_cfg = config.filter()
    filter_keys: set = set()
    if filt_cfg is not None:
        learned = None
        if filt_cfg.learned:
            oof = model.fusion.predict(model.crossfit_level1)
            pairs = []
            for idx in _sequences(train, np.arange(len(train))):
                pairs.append((oof[idx], train.pain[idx]))
                filter_keys.update(train.keys[i] for i in idx)
            learned = train_filter(pairs, filt_cfg, int(rng_filter) % (2 ** 31))
        for idx in _sequences(test, np.arange(len(test))):
            est[idx] = apply_filter(raw[idx], filt_cfg, learned)

    test_keys = set(test.keys)
    artefacts = {
        "model_training": set(model.training_keys),
        "filter_training": filter_keys,
        "basis_source": set(source_keys),
    }
    overlaps = {k: len(test_keys & v) for k, v in artefacts.items()}
    subject_leak = any(k[0] == subject for v in artefacts.values() for k in v)
    audit = {"overlaps": overlaps, "subject_in_training": subject_leak,
             "passed": not subject_leak and not any(overlaps.values())}
    return FoldResult(subject, test.keys, test.pain.copy(), est, raw, seed, audit)


def run_lopo(target: FeatureTable, source: FeatureTable, config: PipelineConfig | None = None,
             threads: int = 1, source_flags=None, bases: dict | None = None,
             strict_audit: bool = True) -> LopoResult:
    """Hold out each target subject in turn: train on the rest, predict the held-out one.

    The embedding is learned on ``source`` only.  Results do not depend on
    ``threads``: every fold draws its randomness from :func:`fold_seed`.
    """
    config = config or PipelineConfig()
    subjects = sorted(set(target.subject))
    if len(subjects) < 2:
        raise ValueError(f"leave-one-person-out needs at least 2 subjects, got {len(subjects)}")
    subj = np.array(target.subject)
    annotated = ~np.isnan(target.pain)
    for s in subjects:
        if not annotated[subj == s].any():
            raise ValueError(f"subject {s!r} has no annotated frames")
    if bases is None:
        bases = learn_bases(source, config, source_flags)
    source_keys = frozenset(source.keys)
    jobs = [(target, s, bases, config.to_dict(), fold_seed(config.seed, s), source_keys)
            for s in subjects]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as ex:
            folds = list(ex.map(_run_fold, *zip(*jobs)))
    else:
        folds = [_run_fold(*j) for j in jobs]
    res = LopoResult(folds, config.to_dict(), config.seed)
    if strict_audit and not res.audit_passed:
        bad = [f.subject for f in folds if not f.audit["passed"]]
        raise AuditError(f"LOPO audit failed for held-out subjects {bad}")
    return res
