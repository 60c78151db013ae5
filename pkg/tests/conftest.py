import json

import numpy as np
import pytest

from liesteer import builtin_family


@pytest.fixture(scope="session")
def box():
    return builtin_family("box_tridiagonal", c=1.0)


@pytest.fixture(scope="session")
def zero_coupling():
    return builtin_family("custom_gaps", eigenvalues=[1.0, 4.0, 9.0, 16.0, 25.0], couplings=[], tail=1)


@pytest.fixture(scope="session")
def equal_gap_3():
    """Three equally spaced levels with nearest-neighbour coupling: resonant."""
    return builtin_family(
        "custom_gaps",
        eigenvalues=[0.0, 1.0, 2.0],
        couplings=[[1, 2, 1.0, 0.0], [2, 3, 1.0, 0.0]],
        tail=1,
    )


@pytest.fixture(scope="session")
def gaps_124():
    return builtin_family(
        "custom_gaps",
        eigenvalues=[1.0, 2.0, 4.0],
        couplings=[[1, 2, 1.0, 0.0], [2, 3, 1.0, 0.0]],
        tail=1,
    )


@pytest.fixture()
def box_document():
    return {
        "eigenvalues": {"rule": "k^2"},
        "coupling": [[k, k + 1, 1.0, 0.0] for k in range(1, 64)],
        "tail": {"monotone_from": 1},
    }


@pytest.fixture()
def box_file(tmp_path, box_document):
    path = tmp_path / "box.json"
    path.write_text(json.dumps(box_document))
    return path


def random_unit(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)
