import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from contrastive_sne.numkit import RngState

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return RngState(1234)


def naive_forward(params, X):
    """Loop-based forward pass written independently of numkit.mlp_forward."""
    out = []
    for x in X:
        a = list(x)
        for layer in params.layers:
            z = [sum(a[i] * layer.W[i, j] for i in range(len(a))) + layer.b[j] for j in range(layer.W.shape[1])]
            if layer.activation == "relu":
                a = [max(v, 0.0) for v in z]
            elif layer.activation == "tanh":
                a = [float(np.tanh(v)) for v in z]
            else:
                a = z
        out.append(a)
    return np.array(out)
