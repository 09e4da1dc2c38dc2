"""Shared synthetic fixtures for the test modules."""
import numpy as np

from shdpvar.model import SHDPVARModel, StickyHDPState, VAREmission, sample_trajectory
from shdpvar.stats import rng_stream


def rot(theta, scale):
    c, s = np.cos(theta), np.sin(theta)
    return scale * np.array([[c, -s], [s, c]])


def three_mode_model():
    """Three VAR(1) modes in d=2 with clearly different dynamics and
    sticky switching (expected dwell time about 70 frames)."""
    ems = [
        VAREmission([rot(0.0, 0.9)], 0.1 * np.eye(2)),
        VAREmission([rot(np.pi / 2, 0.95)], 0.1 * np.eye(2)),
        VAREmission([-0.8 * np.eye(2)], 0.1 * np.eye(2)),
    ]
    pi = np.full((3, 3), 0.005) + 0.985 * np.eye(3)
    return SHDPVARModel(StickyHDPState(np.ones(3) / 3, pi, 1.0, 1.0, 10.0), tuple(ems))


def three_mode_dataset(seed=1, T=2000):
    """(true states, observations) for :func:`three_mode_model`."""
    return sample_trajectory(three_mode_model(), T, rng_stream(seed))


def two_skill_models():
    """Two single-mode VAR(1) skills with opposite rotation."""
    def single(e):
        return SHDPVARModel(StickyHDPState([1.0], [[1.0]], 1.0, 1.0, 0.0), (e,))

    return {
        "a": single(VAREmission([rot(0.3, 0.9)], 0.1 * np.eye(2))),
        "b": single(VAREmission([rot(-1.2, 0.9)], 0.1 * np.eye(2))),
    }
