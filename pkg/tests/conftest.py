import numpy as np
import pytest

from distillchain import ArchSpec, ClassCatalog, DataTable, backward, forward, init_params, soft_cross_entropy
from distillchain.learner import ModelParams


@pytest.fixture
def two_class_catalog():
    return ClassCatalog(("neg", "pos"))


def table_from(catalog, features, labels=None, ids=None, hidden=False):
    """Small-table builder for tests."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    ids = np.arange(n) if ids is None else np.asarray(ids)
    labels = None if labels is None else np.asarray(labels, dtype=np.int64)
    if hidden:
        return DataTable(
            catalog=catalog, ids=ids, features=features, labels=None, _hidden_labels=labels
        )
    return DataTable(catalog=catalog, ids=ids, features=features, labels=labels)


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle, shared between the unit tests and the
# acceptance gate.

FD_STEP = 1e-5


def gradcheck_case(seed):
    """Randomized (params, inputs, soft targets) for a gradient check.

    Cases whose hidden pre-activations sit within 50 * h of the rectifier
    kink are redrawn: a central difference straddling the kink measures a
    subgradient mixture rather than the analytic derivative.
    """
    rng = np.random.default_rng(seed)
    for _ in range(200):
        depth = int(rng.integers(0, 3))
        hidden = tuple(int(rng.integers(3, 13)) for _ in range(depth))
        arch = ArchSpec(
            input_dim=int(rng.integers(2, 9)),
            hidden=hidden,
            output_dim=int(rng.integers(2, 7)),
        )
        params = init_params(arch, int(rng.integers(0, 2**31)))
        batch = int(rng.integers(2, 7))
        x = rng.normal(size=(batch, arch.input_dim))
        raw = rng.exponential(1.0, (batch, arch.output_dim))
        targets = raw / raw.sum(axis=1, keepdims=True)
        if _min_preactivation(params, x) > 50.0 * FD_STEP:
            return params, x, targets
    raise AssertionError("could not draw a kink-free gradcheck case")


def _min_preactivation(params, x):
    h = x
    smallest = np.inf
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        if i < len(params.weights) - 1:
            smallest = min(smallest, np.abs(z).min())
            h = np.maximum(z, 0.0)
    return smallest


def numeric_gradients(params, x, targets):
    """Central finite differences of the batch loss for every parameter."""

    def loss_with(weights, biases):
        shadow = ModelParams(arch=params.arch, weights=tuple(weights), biases=tuple(biases))
        return soft_cross_entropy(forward(shadow, x), targets)

    num_w, num_b = [], []
    for li in range(len(params.weights)):
        for store, source, num in ((0, params.weights, num_w), (1, params.biases, num_b)):
            grad = np.zeros_like(source[li])
            flat = grad.ravel()
            base = source[li].ravel()
            for j in range(base.size):
                for sign in (1.0, -1.0):
                    bumped = base.copy()
                    bumped[j] += sign * FD_STEP
                    arrays = list(source)
                    arrays[li] = bumped.reshape(source[li].shape)
                    if store == 0:
                        value = loss_with(arrays, params.biases)
                    else:
                        value = loss_with(params.weights, arrays)
                    flat[j] += sign * value / (2.0 * FD_STEP)
            num.append(grad)
    return tuple(num_w), tuple(num_b)


def max_relative_error(params, x, targets):
    analytic = backward(params, x, targets)
    numeric = numeric_gradients(params, x, targets)
    worst = 0.0
    for a_group, n_group in zip(analytic, numeric):
        for a, n in zip(a_group, n_group):
            denominator = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
            worst = max(worst, float((np.abs(a - n) / denominator).max()))
    return worst
