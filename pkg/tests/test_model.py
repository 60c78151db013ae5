import json

import numpy as np
import pytest

from liesteer import bilinear_reduction, builtin_family, load_system, system_from_document, truncate
from liesteer.errors import SystemValidationError, TailUndecidableError


def test_rule_file_roundtrip(tmp_path):
    doc = {
        "eigenvalues": {"rule": "lambda_k = k^2"},
        "coupling": [[k, k + 1, 1.0, 0.0] for k in range(1, 10)],
        "tail": {"monotone_from": 1},
    }
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(doc))
    system = load_system(path)
    assert np.allclose(system.eigenvalues(4), [1.0, 4.0, 9.0, 16.0])
    assert system.coupling.value(1, 2) == 1.0
    assert system.coupling.value(2, 1) == 1.0


def test_non_hermitian_contradiction_rejected():
    doc = {"eigenvalues": [0.0, 1.0], "coupling": [[1, 2, 0.0, 1.0], [2, 1, 0.0, 1.0]]}
    with pytest.raises(SystemValidationError):
        system_from_document(doc)


def test_one_sided_declaration_mirrored():
    doc = {"eigenvalues": [0.0, 1.0], "coupling": [[1, 2, 0.0, 1.0]]}
    system = system_from_document(doc)
    assert system.coupling.value(2, 1) == -1.0j


def test_polarizability_sum_rule():
    doc = {
        "eigenvalues": [1.0, 4.0, 9.0],
        "coupling": [],
        "polarizability": {
            "w1": [[1, 2, 1.0, 0.0], [2, 3, 1.0, 0.0]],
            "w2": [[1, 1, 0.1, 0.0], [2, 2, 0.1, 0.0], [3, 3, 0.1, 0.0]],
        },
    }
    system = system_from_document(doc)
    assert system.coupling.value(1, 1) == pytest.approx(0.1)
    assert system.coupling.value(1, 2) == pytest.approx(1.0)
    assert system.polarizability is not None


def test_polarizability_contradicting_coupling_rejected():
    doc = {
        "eigenvalues": [1.0, 4.0],
        "coupling": [[1, 2, 5.0, 0.0]],
        "polarizability": {"w1": [[1, 2, 1.0, 0.0]], "w2": []},
    }
    with pytest.raises(SystemValidationError):
        system_from_document(doc)


def test_truncate_box(box):
    pair = truncate(box, 2)
    assert np.allclose(pair.h0, np.diag([1.0, 4.0]))
    assert np.allclose(pair.h1, np.array([[1.0, 1.0], [1.0, 4.0]]))
    assert np.allclose(pair.a, -1j * pair.h0)
    assert np.allclose(pair.b, -1j * (pair.h1 - pair.h0))


def test_truncate_scalar_includes_diagonal_coupling():
    system = builtin_family("custom_gaps", eigenvalues=[2.0], couplings=[[1, 1, 0.5, 0.0]])
    pair = truncate(system, 1)
    assert pair.h1[0, 0] == pytest.approx(2.5)


def test_truncate_skew_forms(box):
    pair = truncate(box, 3)
    assert np.max(np.abs(pair.a + pair.a.conj().T)) < 1e-12
    assert np.max(np.abs(pair.b + pair.b.conj().T)) < 1e-12


def test_truncate_nesting(box):
    small = truncate(box, 3)
    large = truncate(box, 7)
    assert np.allclose(large.h1[:3, :3], small.h1)
    assert np.allclose(large.b[:3, :3], small.b)


def test_truncate_past_list_without_rule_errors():
    system = builtin_family("custom_gaps", eigenvalues=[1.0, 2.0], couplings=[[1, 2, 1.0, 0.0]])
    with pytest.raises(TailUndecidableError):
        truncate(system, 5)


def test_bilinear_reduction_matches_truncations(box):
    drift, coupling = bilinear_reduction(box)
    for n in (1, 3, 5):
        pair = truncate(box, n)
        assert np.allclose(drift.matrix(n), pair.a)
        assert np.allclose(coupling.matrix(n), pair.b)
    assert coupling.norm_bound == pytest.approx(2.0)


def test_bilinear_reduction_zero_coupling(zero_coupling):
    _, coupling = bilinear_reduction(zero_coupling)
    assert np.allclose(coupling.matrix(4), 0.0)


def test_bilinear_reduction_polarizability_sums():
    system = builtin_family("polarizability_toy", c1=1.0, c2=0.1)
    _, coupling = bilinear_reduction(system)
    b = coupling.matrix(3)
    assert b[0, 0] == pytest.approx(-0.1j)
    assert b[0, 1] == pytest.approx(-1.0j)


def test_builtin_families():
    box = builtin_family("box_tridiagonal", c=1.0)
    assert np.allclose(box.eigenvalues(4), [1, 4, 9, 16])
    toy = builtin_family("polarizability_toy", c1=1.0, c2=0.1)
    assert toy.coupling.value(2, 2) == pytest.approx(0.1)
    assert toy.coupling.value(2, 3) == pytest.approx(1.0)
    custom = builtin_family(
        "custom_gaps", eigenvalues=[1.0, 2.0, 4.0], couplings=[[1, 2, 1.0, 0.0], [2, 3, 1.0, 0.0]]
    )
    assert custom.eigenvalue(3) == 4.0
    with pytest.raises(SystemValidationError):
        builtin_family("unknown_family")
    with pytest.raises(SystemValidationError):
        builtin_family("box_tridiagonal", strength=2.0)


def test_nondecreasing_enforced():
    with pytest.raises(SystemValidationError):
        system_from_document({"eigenvalues": [2.0, 1.0], "coupling": []})
