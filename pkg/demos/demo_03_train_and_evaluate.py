"""
Two-step training on a small synthetic corpus
=============================================

Train the compact model on a handful of synthetic Holter recordings, then
score the test recordings on the 5-s grid. Takes a few minutes on one CPU.
"""

import time

from afnet import evaluation as ev
from afnet import synthetic as syn
from afnet.rawecgnet import TINY_SPEC, ModelSpec, RawECGNet, TrainConfig, fit, predict_recording
from afnet.windowing import align_to_grid, label_cells, segment

SEED = 0
profile = syn.MixProfile(af_prevalence=0.2, duration_s=600.0)
configs = syn.corpus_configs(40, profile, SEED, {"train": 30, "val": 5, "test": 5})

corpus = {"train": [], "val": [], "test": []}
for split, cfg in configs:
    corpus[split].append((syn.generate(cfg), syn.truth_burden(cfg.rhythm_segments)))


def windows_of(items):
    return [w for rec, _ in items for lead in rec.lead_names for w in segment(rec, lead)]


train, val = windows_of(corpus["train"]), windows_of(corpus["val"])
print(f"{len(train)} training windows, {sum(w.target for w in train)} positive")

# %%
# Step 1 fits the window encoder, step 2 the BiGRU over neighbouring
# window embeddings; the threshold maximises validation F1.

model = RawECGNet.build(ModelSpec(**TINY_SPEC), seed=SEED)
print(f"{model.n_params():,} parameters")
t0 = time.perf_counter()
history = fit(model, train, val, TrainConfig(max_epochs=12, seed=SEED))
print(f"trained in {time.perf_counter() - t0:.0f} s; step-1 epochs {len(history['step1']['train_loss'])}, "
      f"threshold {model.threshold:.3f}")

# %%
# Evaluation
# ----------
# Window predictions are mapped onto 5-s cells, pooled over recordings and
# bootstrapped over recordings.

recordings = []
for rec, burden in corpus["test"]:
    for lead in rec.lead_names:
        preds = predict_recording(rec, lead, model)
        cells = label_cells(align_to_grid(preds, rec.duration_s), rec.annotations, rec.duration_s)
        recordings.append(ev.RecordingCells(rec.recording_id, cells, burden, lead))

report = ev.evaluate(recordings, n_boot=100, seed=SEED, dataset="synthetic", lead="all", model="tiny")
print()
print(ev.format_table([report]))
for group, stats in report.eaf_by_group.items():
    print(f"  {group:9s} n={stats['n']:2d}  |E_AF| median {stats['median_q1_q3'][0]:.2f}%")
