"""
Joint cross-attention between audio and visual segments
=======================================================

Each modality attends to the concatenation of both modalities. The steps are
exposed separately so the intermediate matrices can be inspected.
"""

import numpy as np

from avjca.autodiff import Graph
from avjca.fusion import (
    attended_features,
    attention_maps,
    init_jca,
    jca_forward,
    jca_shapes,
    joint_correlation,
    joint_representation,
    spatial_reduce_visual,
)
from avjca.rng import SplitMix64

rng = np.random.default_rng(3)
d_a, d_v, L = 4, 6, 5
g = Graph()
x_a = g.constant(rng.normal(size=(d_a, L)))
x_v = g.constant(rng.normal(size=(d_v, L)))
params = {k: g.constant(v) for k, v in init_jca(d_a, d_v, SplitMix64(0)).items()}
print("weight shapes:", jca_shapes(d_a, d_v))

# Joint representation: audio rows on top of visual rows.
joint = joint_representation(x_a, x_v)
print("joint:", joint.shape)

# Segment-to-segment correlation of audio against the joint features, squashed by tanh.
c_a = joint_correlation(x_a, joint, params["W_ja"])
print("audio correlation matrix (L x L):\n", np.round(c_a.value, 3))

# Attention maps are nonnegative; the attended features add them back onto the input.
h_a = attention_maps(x_a, c_a, params["W_ca"])
att_a = attended_features(x_a, h_a, params["W_ha"])
print("attention maps >= 0:", bool((h_a.value >= 0).all()), "; attended audio:", att_a.shape)

# The full block returns visual rows first, then audio rows.
fused = jca_forward(x_a, x_v, params)
print("fused:", fused.shape)

# With every weight at zero the block is a pure residual: it just reorders rows.
zeros = {k: g.constant(np.zeros(s)) for k, s in jca_shapes(d_a, d_v).items()}
identity = jca_forward(x_a, x_v, zeros).value
print("zero weights give [X_v; X_a]:", np.array_equal(identity, np.vstack([x_v.value, x_a.value])))

# Audio-guided pooling of a 7x7 visual map (49 positions) into one vector.
fmap = rng.normal(size=(d_v, 49))
pooled = spatial_reduce_visual(fmap, rng.normal(size=d_a), rng.normal(size=(d_a, d_v)))
inside = np.all((pooled >= fmap.min(axis=1)) & (pooled <= fmap.max(axis=1)))
print("spatially reduced visual vector:", np.round(pooled, 3), "inside channel ranges:", bool(inside))
