"""Leave-one-person-out evaluation on a small synthetic cohort.

Trains the full pipeline (SR-M embedding, SVR triplets, boosted fusion)
once per held-out person, compares pooled error with the predict-the-mean
baseline, then smooths the held-out estimates with median-lr.

    python3 demos/lopo_walkthrough.py      # about 20 s on one core
"""
import numpy as np

from topopain.config import PipelineConfig
from topopain.evaluation import mse, pearson, run_lopo
from topopain.hot import extract_features
from topopain.synth import synth_dataset, synth_source
from topopain.temporal import filter_median_lr

# %% target cohort and a disjoint source set for the embedding
seqs, traces = synth_dataset(seed=0, n_subjects=4, frames_per_seq=90)
target = extract_features([f for s in seqs for f in s.frames])
source = extract_features([f for s in synth_source(0, 12) for f in s.frames])
print(f"{len(target)} target frames, {len(source)} source frames")

# %% one fold per person
res = run_lopo(target, source, PipelineConfig())
agg = res.aggregate()
for f in res.folds:
    print(f"  held out {f.subject}: mse {mse(f.truth, f.estimate):6.2f}")
print(f"pooled r {agg['pooled']['pearson']:.3f}, mse {agg['pooled']['mse']:.2f}, "
      f"constant-mean baseline {agg['baseline']['constant_pooled_mean_mse']:.2f}")

# %% temporal smoothing of each held-out sequence
truth = np.concatenate([f.truth for f in res.folds])
raw = np.concatenate([f.estimate for f in res.folds])
smooth = np.concatenate([filter_median_lr(f.estimate) for f in res.folds])
print(f"median-lr: r {pearson(truth, raw):.3f} -> {pearson(truth, smooth):.3f}, "
      f"mse {mse(truth, raw):.2f} -> {mse(truth, smooth):.2f}")
