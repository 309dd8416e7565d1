import numpy as np
import pytest

from lldd import autodiff as ad


def rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = np.linalg.norm(want.ravel())
    return float(np.linalg.norm((got - want).ravel()) / (scale if scale > 0 else 1.0))


def fd_gradient(f, node: ad.DiffNode, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar-valued graph builder ``f``.

    ``f`` must rebuild its graph from ``node.value`` on every call; the value
    array is perturbed in place and restored.
    """
    flat = node.value.ravel()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(f().value)
        flat[i] = orig - step
        down = float(f().value)
        flat[i] = orig
        out[i] = (up - down) / (2.0 * step)
    return out.reshape(node.value.shape)


def check_grad(f, nodes, tol: float = 1e-5, step: float = 1e-4):
    """Assert analytic gradients of f() match central differences."""
    gs = ad.grad(f(), nodes)
    for node, g in zip(nodes, gs):
        fd = fd_gradient(f, node, step=step)
        err = rel_err(g.value, fd)
        assert err <= tol, f"gradient mismatch: rel err {err:.3e} > {tol}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
