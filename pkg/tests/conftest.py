"""Shared fixtures: meshes and configs reused across the test modules."""

import numpy as np
import pytest

from degenlab.domain import GeometrySpec, build_disk_mesh
from degenlab.experiments import ExperimentConfig


@pytest.fixture(scope="session")
def geometry():
    return GeometrySpec(R=1.0, L=9.0)


@pytest.fixture(scope="session")
def coarse_mesh(geometry):
    """Disk mesh at the coarsest study resolution; shared, do not mutate."""
    return build_disk_mesh(geometry, 0.3)


@pytest.fixture(scope="session")
def default_config():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def unit_square_mesh():
    """Two-triangle unit square with hand-checked connectivity."""
    from degenlab.domain import Mesh

    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    cells = np.array([[0, 1, 2], [0, 2, 3]])
    edges = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    markers = np.zeros(len(edges), dtype=int)
    return Mesh(vertices, cells, edges, markers, h=1.0)
