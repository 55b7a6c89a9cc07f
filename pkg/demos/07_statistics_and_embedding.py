"""The statistics stack: paired McNemar tests with Holm adjustment, the
perplexity-calibrated 2-D embedding, and the cluster-then-discard workflow.
"""

import numpy as np

from ganlab import clustering as CL
from ganlab import metrics as M
from ganlab.embedding import EmbeddingConfig, tsne

# McNemar on paired outcomes: chi-square without continuity correction.
pairs = [M.PairedOutcomes(both_correct=40, only_a=10, only_b=2, both_wrong=5),
         M.PairedOutcomes(both_correct=44, only_a=6, only_b=4, both_wrong=3)]
rows = M.mcnemar_holm(pairs)
for i, row in enumerate(rows):
    print(f"comparison {i}: chi2={row['statistic']:.3f} p={row['p']:.4f} "
          f"adjusted={row['p_adjusted']:.4f}")

# The Holm step-down adjustment alone.
print("holm [0.01, 0.04] ->", M.holm_bonferroni([0.01, 0.04]))

# t-SNE with per-point bandwidth calibration: every row's conditional
# distribution hits the target perplexity before any descent happens.
rng = np.random.default_rng(0)
points = np.concatenate([rng.normal(0, 0.05, (60, 16)), rng.normal(1, 0.05, (60, 16))])
cfg = EmbeddingConfig(perplexity=20, iterations=300)
result = tsne(points, cfg, seed=0)
worst = np.max(np.abs(result.row_entropy_bits - np.log2(cfg.perplexity)))
print(f"\nperplexity calibration error: {worst:.2e} bits")
print(f"KL divergence: {result.initial_kl:.3f} -> {result.final_kl:.3f}")

# Cluster-then-discard: group images by frozen-encoder features, let a rule
# (standing in for a human reviewer) drop whole clusters.
bright = np.full((12, 1, 16, 16), 0.8, dtype=np.float32)
dark = np.full((12, 1, 16, 16), -0.8, dtype=np.float32)
images = np.concatenate([bright, dark]) + rng.normal(0, 0.02, (24, 1, 16, 16)).astype(np.float32)
encoder = CL.build_feature_encoder(seed=1)
partition, discard = CL.cluster_discard(
    images, encoder, k=2, seed=0,
    discard_rule=lambda c, members: images[members].mean() < 0)
print(f"\nclusters of sizes {[len(partition.members(c)) for c in range(2)]}, "
      f"discarded {len(discard)} images")

# The session scorer that the rating service delegates to.
responses = ([{"true_label": "real", "answered_label": "real"}] * 73
             + [{"true_label": "real", "answered_label": "synthetic"}] * 27
             + [{"true_label": "synthetic", "answered_label": "real"}] * 14
             + [{"true_label": "synthetic", "answered_label": "synthetic"}] * 86)
report = M.vtt_score(responses)
print(f"\nblinded-study accuracy: {report.accuracy}%  cells: {report.cells}")
