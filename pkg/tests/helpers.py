"""Shared builders for network-level tests.

Gradient checks must run away from the assembled start point: zero biases
plus narrow relu layers can park pre-activations exactly on the kink, where
central differences straddle two one-sided slopes and disagree with the
analytic rule. ``randomize_params`` moves every parameter (biases included)
to a generic interior point first.
"""

import numpy as np

from survfuse.genegraph import GeneGraph, build_adjacency
from survfuse.netmodel import NetworkConfig, assemble
from survfuse.numcore import RngStream

VARIANT_HEAD_COMBOS = [
    (variant, heads)
    for variant in ("fused", "gene-only", "image-only")
    for heads in ("survival", "grade", "both")
]


def random_mask(p, seed, edges=None):
    """Symmetric self-looped adjacency over p placeholder genes."""
    gen = np.random.default_rng(seed)
    genes = tuple(f"g{i:03d}" for i in range(p))
    pair_set = set()
    for _ in range(edges if edges is not None else 2 * p):
        i, j = (int(v) for v in gen.integers(0, p, size=2))
        if i != j:
            a, b = genes[i], genes[j]
            pair_set.add((a, b) if a <= b else (b, a))
    graph = GeneGraph(genes=genes, edges=frozenset(pair_set))
    return build_adjacency(graph)


def micro_config(variant, heads, p=12, image_dim=7, k=3, dropout_p=0.25):
    """Widths small enough that finite differences over every parameter
    stay cheap."""
    if variant == "fused":
        return NetworkConfig(variant=variant, heads=heads, gene_dim=p,
                             image_dim=image_dim, grade_classes=k,
                             gene_branch_dim=5, trunk_dims=(8, 5, 4),
                             head_hidden_dim=3, dropout_p=dropout_p)
    if variant == "gene-only":
        return NetworkConfig(variant=variant, heads=heads, gene_dim=p,
                             grade_classes=k, trunk_dims=(9, 6, 4),
                             head_hidden_dim=3, dropout_p=dropout_p)
    return NetworkConfig(variant=variant, heads=heads,
                         image_dim=image_dim, grade_classes=k,
                         trunk_dims=(8, 5, 4), head_hidden_dim=3,
                         dropout_p=dropout_p)


def micro_network(variant, heads, p=12, image_dim=7, k=3, seed=0,
                  dropout_p=0.25, mask_seed=5):
    config = micro_config(variant, heads, p=p, image_dim=image_dim, k=k,
                          dropout_p=dropout_p)
    mask = random_mask(p, mask_seed) if variant in ("fused", "gene-only") else None
    return assemble(config, mask, RngStream(seed, 31))


def randomize_params(net, seed, scale=0.4):
    """Refill every parameter, biases included, from N(0, scale^2) so no
    pre-activation sits exactly on an activation kink."""
    gen = np.random.default_rng(seed)
    params = {name: gen.standard_normal(v.shape) * scale
              for name, v in net.params().items()}
    net.set_params(params)
    return net
