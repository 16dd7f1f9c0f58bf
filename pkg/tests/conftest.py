import numpy as np
import pytest

from voxseg.nn import backward, constant
from voxseg.tensor import Tensor4


def fd_gradient_error(build_loss, leaf_tensors, eps=1e-5):
    """Worst relative error between backprop and central finite differences.

    ``build_loss`` maps a list of leaf Nodes to a scalar Node; every leaf is
    perturbed coordinate by coordinate. The relative error for a leaf is
    max|ga - gn| / (max|ga| + max|gn|).
    """
    leaves = [constant(t) for t in leaf_tensors]
    backward(build_loss(leaves))
    analytic = [leaf.grad.copy() for leaf in leaves]
    worst = 0.0
    for li, tensor in enumerate(leaf_tensors):
        ga = analytic[li]
        base = tensor.flat.copy()
        gn = np.zeros(base.size)
        for i in range(base.size):
            probes = []
            for sign in (+1.0, -1.0):
                buf = base.copy()
                buf[i] += sign * eps
                mod = [
                    constant(t) if j != li
                    else constant(Tensor4.from_flat(t.shape, buf))
                    for j, t in enumerate(leaf_tensors)
                ]
                probes.append(build_loss(mod).value.at(0, 0, 0, 0))
            gn[i] = (probes[0] - probes[1]) / (2.0 * eps)
        denom = np.abs(ga).max() + np.abs(gn).max() + 1e-300
        worst = max(worst, float(np.abs(ga - gn.reshape(ga.shape)).max() / denom))
    return worst


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one pass/fail line per acceptance criterion; printed at the end."""
    lines = []
    yield lines
    print()
    for line in lines:
        print(line)
