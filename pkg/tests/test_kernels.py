"""Backend agreement: compiled kernels must match the numpy fallback."""

import numpy as np
import pytest

import pulseid
from pulseid._kernels import _convnp

try:
    from pulseid._kernels import _convcy
except ImportError:
    _convcy = None

needs_ext = pytest.mark.skipif(_convcy is None, reason="cython extension not built")


def test_backend_selected():
    assert pulseid.KERNEL_BACKEND in ("numpy", "cython")


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_conv1d_parity(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4, 31))
    k = rng.normal(size=(5, 4, 7))
    g = rng.normal(size=(3, 5, 31))
    assert np.allclose(_convcy.conv1d_fwd(x, k), _convnp.conv1d_fwd(x, k), atol=1e-12)
    assert np.allclose(
        _convcy.conv1d_grad_k(x, g, k.shape), _convnp.conv1d_grad_k(x, g, k.shape), atol=1e-12
    )


@needs_ext
@pytest.mark.parametrize("seed", range(5))
def test_conv2d_parity(seed):
    rng = np.random.default_rng(seed + 50)
    x = rng.normal(size=(2, 3, 9, 14))
    k = rng.normal(size=(4, 3, 3, 5))
    g = rng.normal(size=(2, 4, 9, 14))
    assert np.allclose(_convcy.conv2d_fwd(x, k), _convnp.conv2d_fwd(x, k), atol=1e-12)
    assert np.allclose(
        _convcy.conv2d_grad_k(x, g, k.shape), _convnp.conv2d_grad_k(x, g, k.shape), atol=1e-12
    )
