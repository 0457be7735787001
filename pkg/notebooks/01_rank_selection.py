
# coding: utf-8

# # Choosing the number of latent signatures
#
# A nonnegative matrix X (features by samples) is factorized as X ≈ WH. The
# columns of W are the latent signatures. How many columns to use is decided
# by a stability test: X is perturbed several times, each copy is factorized,
# and the signatures found in the different copies are matched up. A rank is
# trusted when the matched signatures agree (high silhouette) and the fit is
# close to the best one seen.
#
# Run with `python notebooks/01_rank_selection.py`. It takes about a minute.

# In[1]:

import numpy as np

from sigarchive.data import draw_separated_signatures
from sigarchive.linalg import nmf_factorize
from sigarchive.rank import EnsembleConfig, perturb_matrix, select_rank


# # A matrix with a known rank
#
# Four sparse signatures with pairwise cosine at most 0.5, mixed by gamma
# distributed activations, with 1% multiplicative noise on top.

# In[2]:

rng = np.random.default_rng(0)
w_true = np.stack(draw_separated_signatures(50, 4, rng, max_cosine=0.5, sparsity=0.5), axis=1)
h_true = rng.gamma(0.5, size=(4, 200))
x = perturb_matrix(w_true @ h_true, 0.01, seed=1)
print(x.shape, "planted rank", w_true.shape[1])


# # Fit error alone does not find the rank
#
# The relative error keeps shrinking as k grows, because extra columns start
# fitting the noise. There is no sharp elbow to read off.

# In[3]:

for k in range(1, 8):
    fact = nmf_factorize(x, k, seed=0, max_iters=500)
    print(f"k={k}  relative error {fact.relative_error:.4f}")


# # Stability does
#
# `select_rank` runs the perturbed ensemble for every candidate k and keeps
# the largest k whose worst cluster silhouette clears 0.75 and whose error
# is within 5% of the error at the largest k tried.

# In[4]:

report = select_rank(x, EnsembleConfig(k_min=1, k_max=7, n_perturbations=8))
for rec in report.per_k:
    print(f"k={rec.k}  min silhouette {rec.min_silhouette:+.3f}  relative error {rec.relative_error:.4f}")
print("chosen k:", report.chosen_k)


# Past the planted rank the silhouette collapses: the ensemble splits real
# signatures in different ways from one perturbed copy to the next, so the
# clusters no longer agree.
