"""Tour of the descriptor stage on one synthetic face.

Renders a neutral and a pain frame of the same person, shows which facial
regions change most in their topographic histograms, then rotates a ridge
pattern to show the orientation bins moving two places.

    python3 demos/descriptor_tour.py
"""
import numpy as np

from topopain.data import extract_rois, normalize_face
from topopain.hot import HESS_HISTS, describe_face, region_histograms
from topopain.scalespace import scale_derivatives
from topopain.synth import synth_dataset

np.set_printoptions(precision=3, suppress=True)

# %% one subject, one sequence; pick the quietest and the most painful frame
seqs, traces = synth_dataset(seed=3, n_subjects=2, frames_per_seq=80)
frames, pain = seqs[0].frames, traces[0].pain
calm, peak = int(np.argmin(pain)), int(np.argmax(pain))
print(f"frame {calm}: pain {pain[calm]:.0f}    frame {peak}: pain {pain[peak]:.0f}")

# %% the descriptor: 5 regions x (4 Hessian + 2 gradient) histograms of 8 bins
a, b = (normalize_face(frames[k]) for k in (calm, peak))
da, db = describe_face(a), describe_face(b)
print("descriptor lengths:", da.hess.size, da.grad.size)
names = [p.name for p in extract_rois(a)]
for r, name in enumerate(names):
    change = sum(np.abs(da.histogram(r, h) - db.histogram(r, h)).sum() for h in HESS_HISTS)
    print(f"  {name:<16s} Hessian-histogram L1 change {change:.3f}")

# %% a quarter turn moves the curvature axis two bins along
n, s = 40, 2.5
i, j = np.mgrid[0:n, 0:n].astype(float)
ridge = 60.0 * np.exp(-((i + j - (n - 1)) / np.sqrt(2)) ** 2 / (2 * s * s))
h = region_histograms(scale_derivatives(ridge))["h1h"]
r = region_histograms(scale_derivatives(np.rot90(ridge, -1)))["h1h"]
print("ridge  h1h:", h[:4])
print("turned h1h:", r[:4])
