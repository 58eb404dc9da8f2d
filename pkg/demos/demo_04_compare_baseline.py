"""
Comparing against an RR-interval baseline
=========================================

Any detector that writes the prediction CSV can be scored by the same
harness. This script builds a simple RR-irregularity rule, writes its
predictions alongside a stricter variant, and compares the two with the
bootstrap plus Mann-Whitney test.
"""

import tempfile
from pathlib import Path

import numpy as np

from afnet import cli
from afnet import evaluation as ev
from afnet import synthetic as syn

work = Path(tempfile.mkdtemp(prefix="afnet_demo_"))
syn.generate_corpus(work / "data", 12, syn.MixProfile(duration_s=300.0), seed=5,
                    split_counts={"train": 0, "val": 0, "test": 12})


def rr_rule(rec, lead, cv_threshold):
    """AF when the coefficient of variation of annotated RR intervals is high."""
    t = np.array([a.time_s for a in rec.annotations])
    rows = []
    for k in range(int(rec.duration_s // 30)):
        beats = t[(t >= 30 * k) & (t < 30 * (k + 1))]
        rr = np.diff(beats)
        cv = rr.std() / rr.mean() if len(rr) > 2 else 0.0
        score = float(np.clip(cv / (2 * cv_threshold), 0, 1))
        rows.append((rec.recording_id, lead, 30.0 * k, 30.0 * (k + 1), score, int(cv > cv_threshold)))
    return rows


from afnet.signal_io import list_recordings, read_recording  # noqa: E402

sharp, blunt = [], []
for path in list_recordings(work / "data"):
    rec = read_recording(path)
    sharp += rr_rule(rec, "CM5", 0.12)
    blunt += rr_rule(rec, "CM5", 0.22)
cli.write_predictions(sharp, work / "sharp.csv")
cli.write_predictions(blunt, work / "blunt.csv")

# %%
# Scoring each rule
# -----------------

for name in ("sharp", "blunt"):
    groups = cli.cells_by_lead(cli.read_predictions(work / f"{name}.csv"), work / "data",
                               work / "data" / "manifest.csv")
    report = ev.evaluate(groups["CM5"], dataset="synthetic", lead="CM5", model=f"rr-{name}")
    print(ev.format_table([report]))

# %%
# The comparison subcommand resamples both sets with the same recording
# draws and tests the two F1 distributions.

cli.main(["compare", "--pred-a", str(work / "sharp.csv"), "--pred-b", str(work / "blunt.csv"),
          "--data", str(work / "data")])
