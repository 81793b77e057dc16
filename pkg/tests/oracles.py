"""Independent slow re-implementations used as test oracles."""

import math


def dist(a, b):
    s = 0.0
    for x, y in zip(a, b):
        s += (float(x) - float(y)) * (float(x) - float(y))
    return math.sqrt(s)


def brute_filter(features, label_sets, i, alpha):
    """Keep-mask for image i, straight from the set definitions (no max_files cap)."""
    own = label_sets[i]
    kp = [j for j, s in enumerate(label_sets) if j != i and own <= s]
    kn = [j for j, s in enumerate(label_sets) if j != i and not (own & s)]
    kp_feats = [f for j in kp for f in features[j]]
    kn_feats = [f for j in kn for f in features[j]]
    if not kn_feats or not kp_feats:
        return [True] * len(features[i])
    keep = []
    for f in features[i]:
        delta = alpha * min(dist(f, g) for g in kn_feats)
        keep.append(any(dist(f, g) <= delta for g in kp_feats))
    return keep


def random_micro_instance(rng, max_images=10, max_feats=20, max_h=4, k=3):
    """Random labeled instance; half of them use small integers to provoke exact ties."""
    n1 = int(rng.integers(2, max_images + 1))
    h = int(rng.integers(1, max_h + 1))
    integer = rng.random() < 0.5
    features, label_sets = [], []
    for _ in range(n1):
        l = int(rng.integers(0, max_feats + 1))
        f = rng.integers(-3, 4, size=(l, h)).astype(float) if integer else rng.normal(size=(l, h))
        features.append(f)
        labels = set(int(t) for t in rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False))
        label_sets.append(labels)
    return features, label_sets, k
