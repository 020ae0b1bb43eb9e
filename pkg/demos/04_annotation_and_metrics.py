"""
Annotation with mock describers, then scoring
=============================================

Every sample gets a peak frame from its AU table, three describer clues and
a consolidated description.  Failures stay per sample.
"""

import tempfile
from pathlib import Path

import numpy as np

from emollama import annotate as an
from emollama import metrics
from emollama.synthgen import SynthConfig, generate

work = Path(tempfile.mkdtemp(prefix="emollama-annot-"))
records = generate(SynthConfig(per_class=2), work)[:8]

# %% peak frames
for r in records[:3]:
    frames = an.read_au_file(r.au_path)
    sums = [round(sum(f.au_intensities), 2) for f in frames]
    print(r.id, "peak", an.select_peak_frame(frames), "of", sums)

# %% a flaky consolidator is retried with backoff; audio tone works normally
table = {role: an.DescriberEndpoint(role, backoff_ms=5) for role in an.ROLES}
table["consolidator"] = an.DescriberEndpoint("consolidator", "mock:flaky", backoff_ms=5)
client = an.DescriberClient(table)
result = an.run_pipeline(records, client, parallelism=4, out_path=work / "records.jsonl")
print(f"{len(result.records)} records, {len(result.failures)} failures, {client.retries_used} retries")
print(result.records[0].c_md)

# break one AU file and rerun
records[5].au_path.write_text("oops\n")
result = an.run_pipeline(records, an.DescriberClient({r: an.DescriberEndpoint(r) for r in an.ROLES}), 4)
print("failures:", result.failures)

# %% metrics
truth = ["happy", "happy", "sad"]
pred = ["happy", "sad", "sad"]
print("hit rate", metrics.hit_rate(zip(pred, truth)))
print("WAF", metrics.weighted_f1(zip(pred, truth), ["happy", "sad"]))
print("AP", metrics.average_precision([0.9, 0.8, 0.1], [1, 0, 1]))
scores = np.random.default_rng(0).random((6, 3))
print("mAP", round(metrics.mean_ap(scores, np.eye(3)[[0, 1, 2, 0, 1, 2]]), 4))

# %% judging description overlap through the mock judge
pairs = [(r.c_md, r.c_ved) for r in result.records[:3]]
for score, reason in metrics.judge_overlap(pairs, an.DescriberClient({"judge": an.DescriberEndpoint("judge")})):
    print(score, reason)

# %% aggregation
report = metrics.aggregate({"ds_a": {"hit_rate": 0.5}, "ds_b": {"hit_rate": 0.7}}, {"avg": ["ds_a", "ds_b"]})
print(report.table())
