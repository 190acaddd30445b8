"""Shared model fixtures."""

import json

import numpy as np
import pytest

from epinet.models.network import NetworkModel, ScalingConfig


@pytest.fixture
def fmd_model():
    """Single holding with FMD infection rates and no demography."""
    return NetworkModel(B=[0.0], b=[0.0], d=[0.0], theta=[[0.0]], beta=[0.67], gamma=[1 / 5.5])


@pytest.fixture
def fmd_open_model():
    """FMD rates with slow turnover, so that z* = 1."""
    return NetworkModel(B=[1e-3], b=[0.0], d=[1e-3], theta=[[0.0]], beta=[0.67], gamma=[1 / 5.5])


@pytest.fixture
def symmetric_model():
    """Two exchanging nodes: R0 = 2, q = (0.5, 0.5), z* = (2, 2)."""
    return NetworkModel(
        B=[1.0, 1.0], b=[0.0, 0.0], d=[0.5, 0.5],
        theta=[[0.0, 1.0], [1.0, 0.0]],
        beta=[2.0, 2.0], gamma=[0.5, 0.5],
    )


@pytest.fixture
def three_node_model():
    """Three-node population model."""
    return NetworkModel(
        B=[1.0, 0.5, 0.5], b=[0.1, 0.05, 0.02], d=[0.1, 0.2, 0.1],
        theta=[[0.0, 0.2, 0.2], [0.1, 0.0, 0.5], [0.1, 0.0, 0.0]],
        beta=[0.0, 0.0, 0.0], gamma=[0.0, 0.0, 0.0],
    )


@pytest.fixture
def three_node_x0():
    return np.array([5.0, 2.0, 20.0])


@pytest.fixture
def endemic_model():
    """One node with endemic equilibrium (5, 2.5, 2.5) and z* = 10."""
    return NetworkModel(B=[5.0], b=[0.5], d=[1.0], theta=[[0.0]], beta=[4.0], gamma=[1.0])


@pytest.fixture
def write_config(tmp_path):
    """Write a model config document and return its path."""
    def write(model, name='model.json', **extra):
        doc = model.to_dict()
        doc.update(extra)
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2), encoding='utf-8')
        return path
    return write


@pytest.fixture
def small_scaling():
    return ScalingConfig(N=50, x0=np.array([2.0, 2.0]), I0=np.array([1, 0]))
