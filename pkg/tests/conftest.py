import numpy as np
import pytest

from hyperkkl.dynamics import SystemSpec
from hyperkkl.kkl import (
    KklMaps,
    ObserverMatrices,
    decoder_layout,
    encoder_layout,
    verify_observer,
)
from hyperkkl.nets import MlpSpec
from hyperkkl.params import Layout, ParamStore


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_test_system():
    """x' = -x, y = x on [-1, 1]; admits a closed-form immersion."""
    return SystemSpec(
        name="linear1d", n_x=1, n_y=1, m=0,
        f=lambda x, u: -x, h=lambda x: x,
        domain=np.array([[-1.0, 1.0]]),
    )


def analytic_linear_observer():
    """Shifted-diagonal pair avoiding the resonance of -1 with the drift."""
    a = np.diag([-2.0, -3.0, -4.0])
    b = np.ones((3, 1))
    obs = ObserverMatrices(A=a, B=b, n_z=3)
    verify_observer(obs)
    c = np.array([1.0 / (-1.0 - a[i, i]) for i in range(3)])
    return obs, c


def analytic_linear_maps(c):
    """Identity-activation MLPs realizing T(x) = c x and its left inverse."""
    maps = KklMaps(
        enc=MlpSpec(widths=(1, 1, 3), activation="identity"),
        dec=MlpSpec(widths=(3, 1, 1), activation="identity"),
    )
    theta = ParamStore(encoder_layout(maps))
    theta.set("enc.W0", [[1.0]])
    theta.set("enc.W1", c[:, None])
    phi = ParamStore(decoder_layout(maps))
    phi.set("dec.W0", (c / (c @ c))[None, :])
    phi.set("dec.W1", [[1.0]])
    return maps, theta, phi


def make_store(named_arrays):
    """Build a ParamStore from an ordered list of (name, array)."""
    layout = Layout([(n, np.asarray(a).shape) for n, a in named_arrays])
    store = ParamStore(layout)
    for n, a in named_arrays:
        store.set(n, a)
    return store


def central_diff(fn, x, eps=1e-6):
    """Finite-difference gradient of scalar fn at ndarray x (independent oracle)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(x)
        flat[i] = orig - eps
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g
