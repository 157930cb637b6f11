"""
Residual BLSTM, attentive pooling and the margin loss
=====================================================

After fusion, the segment sequence is smoothed by a bidirectional LSTM with a
residual connection, pooled into one vector per utterance and projected to
an embedding that is trained with an additive angular margin softmax.
"""

import math

import numpy as np

from avjca.autodiff import Graph
from avjca.blstm import blstm_residual, init_blstm
from avjca.head import aam_softmax_loss, attention_weights, attentive_stats_pool, cosine_score, embed, init_asp
from avjca.rng import SplitMix64

rng = np.random.default_rng(4)
d, L, B = 6, 5, 3
g = Graph()
# A batch is B utterances side by side: columns [0, L) belong to the first one.
x = g.constant(rng.normal(size=(d, B * L)))

blstm = {k: g.constant(v) for k, v in init_blstm(d, SplitMix64(1)).items()}
smoothed = blstm_residual(x, blstm, L)
print("BLSTM keeps the shape:", smoothed.shape)

asp = {k: g.constant(v) for k, v in init_asp(d, 8, SplitMix64(2)).items()}
alpha = attention_weights(smoothed, asp, L).value.reshape(B, L)
print("attention weights per utterance:\n", np.round(alpha, 3), "\nrow sums:", alpha.sum(axis=1))

pooled = attentive_stats_pool(smoothed, asp, L)
print("pooled (weighted mean; weighted std):", pooled.shape)

projection = g.constant(rng.normal(size=(4, 2 * d)))
emb = embed(pooled, projection)
classes = g.constant(rng.normal(size=(3, 4)))
for s, m in ((1.0, 0.0), (30.0, 0.0), (30.0, 0.2)):
    loss = aam_softmax_loss(emb, [0, 1, 2], classes, s=s, m=m).value[0, 0]
    print(f"AAM loss s={s:<4} m={m}: {loss:.4f}")

# The margin only ever makes the target logit smaller, so the loss grows with m.
# Rescaling an embedding does not change anything: only directions matter.
scaled = embed(pooled, g.constant(7.0 * projection.value))
same = math.isclose(
    aam_softmax_loss(scaled, [0, 1, 2], classes).value[0, 0], aam_softmax_loss(emb, [0, 1, 2], classes).value[0, 0]
)
print("scale invariant:", same)

e = emb.value
print("cosine scores:", [round(cosine_score(e[:, i], e[:, j]), 3) for i, j in ((0, 1), (0, 2), (1, 2))])
