
# coding: utf-8

# # Classifying with a reject option
#
# A test sample is projected onto the archive by nonnegative least squares.
# Each signature then gets a score: the cosine between the signature and
# the sample's reconstruction. Three ways to turn the scores into a
# confidence are compared here, and a risk-coverage curve shows what each
# buys when the least confident predictions are withheld.
#
# Run with `python notebooks/03_selective_classification.py`. It takes about
# a minute.

# In[1]:

import numpy as np

from sigarchive.archive import BuildConfig, LabeledDataset, build_archive
from sigarchive.data import RareFamily, TrialConfig, generate_synthetic, sample_trial
from sigarchive.evaluation import apply_threshold, classification_metrics, risk_coverage_curve
from sigarchive.inference import METRICS, predict_batch
from sigarchive.rank import EnsembleConfig


# # Data
#
# Four known families and one novel family E that is never seen during
# training. E reuses most of family A's first signature, so it looks
# familiar. Family C is kept at 10% of its size and D at 5%, so both are rare.

# In[2]:

families = [{"label": lab, "n_signatures": 1 if lab in "CD" else 2, "n_samples": 400} for lab in "ABCD"]
families.append({"label": "E", "n_signatures": 1, "n_samples": 100})
syn = generate_synthetic(100, families, novel="E", seed=2, concentration=1.0, sparsity=0.15, novel_overlap=0.85)
trial = TrialConfig(
    families=list("ABCDE"),
    novel_family="E",
    rare_families=[RareFamily("C", 0.1), RareFamily("D", 0.05)],
    seed=2,
)
split = sample_trial(syn.table, trial, 0)
print("train", len(split.train), "test", len(split.test))


# In[3]:

train = LabeledDataset(split.train.values.T, split.train.sample_ids, split.train.labels)
archive, _ = build_archive(train, BuildConfig(rank_config=EnsembleConfig(k_max=7, n_perturbations=5)))
print("archive signatures:", archive.signature_labels)


# # Confidence by metric
#
# Projection similarity uses the best score. Novel samples built from a known
# signature reconstruct almost perfectly from it, so this score stays close
# to 1 for them. Ensemble voting instead asks what share of the high scoring
# signatures belong to the winning class. A novel sample that lights up
# signatures of several classes gets a split vote, while a known sample
# votes for its own class. Data augmentation averages the projection score
# over slightly perturbed copies of the sample; with perturbations this
# small it follows projection similarity closely.

# In[4]:

x_test = split.test.values.T
truth = split.truth
is_novel = np.array([t == "NOVEL" for t in truth.true_labels])
curves = {}
for metric in METRICS:
    labels, conf = predict_batch(archive, x_test, metric)
    conf = np.asarray(conf)
    curves[metric] = (labels, conf, risk_coverage_curve(conf, labels, truth))
    print(f"{metric:24s} mean confidence known {conf[~is_novel].mean():.3f}  novel {conf[is_novel].mean():.3f}")


# # Risk against coverage
#
# Lower area under the risk-coverage curve means confidence ranks mistakes
# and novel samples below correct predictions.

# In[5]:

for metric, (_, _, curve) in curves.items():
    print(f"{metric:24s} AURC {curve.aurc:.4f}")


# # One operating point
#
# At a threshold of 0.5 on the ensemble vote, print the per-class scores and
# the two rejection rates. Every novel sample is withheld, and so are known
# samples whose vote is split between their class's own signatures and
# another class's. The curve above shows the cost of lower thresholds.

# In[6]:

labels, conf, _ = curves["ensemble_voting"]
outcomes = apply_threshold(labels, conf, 0.5)
report = classification_metrics(list(zip(truth.sample_ids, outcomes)), truth)
for cls, stats in sorted(report.per_class.items()):
    print(f"{cls}: precision {stats.precision:.3f} recall {stats.recall:.3f} f1 {stats.f1:.3f}")
print(f"macro F1 {report.macro_f1:.3f}  rejection seen {report.rejection_seen:.3f}  rejection novel {report.rejection_novel:.3f}")
