"""
Why look words up at all?
=========================

A toy task where the visual feature is pure noise and every word occurs equally
often in every class.  The surface form of a scene-text token carries no label
information, but its knowledge-base entity does.
"""

import collections

import numpy as np

from sceneknow.experiments import KNOWLEDGE_TASK, run_variant
from sceneknow.synth import generate, mutual_information, nearest_center_accuracy, token_label_counts

# build the task: 4 classes, 50 training and 25 eval samples per class
data = generate(KNOWLEDGE_TASK)
print(len(data.train), "train samples,", len(data.eval), "eval samples")

# one sample: a noise vector plus three spotted words
sample = data.train[0]
print("label", sample.label, "texts", [t.text for t in sample.texts])

# each word is a homonym.  The top-prior entity sits in the sample's class,
# the runner-up belongs to some other class
for t in sample.texts:
    pairs = data.table.get(t.text)
    print(f"  {t.text:12s}", [(e, p, data.entity_class[e]) for e, p in pairs])

# word pieces are spread evenly over classes, so their mutual information with
# the label is essentially zero
counts = token_label_counts(data.train, data.vocab, KNOWLEDGE_TASK.M)
print("piece/label MI (nats): %.4f" % mutual_information(counts))
used = counts[counts.sum(axis=1) > 0]
print("per-piece spread between classes:", collections.Counter(np.ptp(used, axis=1).tolist()))

# eval mentions never appear in training.  A model that memorizes words cannot
# transfer, while one that reads entity embeddings can
train_words = {t.text for s in data.train for t in s.texts}
print("eval words seen in training:", sum(t.text in train_words for s in data.eval for t in s.texts))

# the nearest entity-cluster center already solves it, which is the ceiling
print("nearest-center accuracy:", nearest_center_accuracy(data, data.eval))

# the comparison itself (about twenty seconds on a laptop CPU)
for variant in ("literal", "full"):
    r = run_variant(KNOWLEDGE_TASK, variant, seed=0, data=data)
    print(f"{variant:8s} accuracy {r.accuracy:.2f}  mAP {r.map:.3f}")

# the literal embedding table stays near chance
print("chance:", 1 / KNOWLEDGE_TASK.M)
