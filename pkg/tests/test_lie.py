import numpy as np
import pytest

from liesteer import (
    bracket,
    build_mn,
    build_vn,
    build_wn,
    builtin_family,
    chain_check,
    contains_su,
    generated_algebra,
    lie_galerkin_search,
    vn_equivalence_check,
)
from liesteer.errors import ChainError


def brute_force_closure_dim(generators, tol=1e-9, rounds=20):
    """Independent oracle: rank of the bracket-closed span via repeated SVD."""
    n = generators[0].shape[0]

    def vecs(mats):
        return np.array([np.concatenate([m.real.ravel(), m.imag.ravel()]) for m in mats])

    def rank_basis(mats):
        A = vecs(mats)
        u, s, vt = np.linalg.svd(A, full_matrices=False)
        keep = s > tol * s[0]
        rows = vt[keep]
        half = n * n
        return [rows[i, :half].reshape(n, n) + 1j * rows[i, half:].reshape(n, n) for i in range(keep.sum())]

    basis = rank_basis(list(generators))
    for _ in range(rounds):
        extended = list(basis)
        for X in basis:
            for Y in basis:
                extended.append(X @ Y - Y @ X)
        new_basis = rank_basis(extended)
        if len(new_basis) == len(basis):
            return len(basis)
        basis = new_basis
    return len(basis)


def test_bracket_antisymmetry():
    X = np.array([[1j, 2.0], [-2.0, -1j]])
    assert not bracket(X, X).any()


def test_bracket_pauli_pair():
    X = np.array([[1j, 0], [0, -1j]])
    Y = np.array([[0, 1.0], [-1.0, 0]])
    out = bracket(X, Y)
    assert np.allclose(out, np.array([[0, 2j], [2j, 0]]))
    assert np.allclose(out, -out.conj().T)


def test_bracket_diagonals_commute():
    assert not bracket(np.diag([1j, 2j]), np.diag([3j, 4j])).any()


def test_bracket_shape_mismatch():
    with pytest.raises(ValueError):
        bracket(np.eye(2), np.eye(3))


def test_generated_algebra_su2():
    gens = [np.array([[1j, 0], [0, -1j]]), np.array([[0, 1.0], [-1.0, 0]])]
    alg = generated_algebra(gens)
    assert alg.dim == 3
    assert alg.closed
    assert alg.dim == brute_force_closure_dim(gens)


def test_generated_algebra_single_generator():
    alg = generated_algebra([np.array([[1j, 0], [0, -1j]])])
    assert alg.dim == 1
    assert alg.abelian


def test_generated_algebra_commuting_diagonals():
    gens = [np.diag([1j, 0j, 0j]), np.diag([0j, 1j, 0j]), np.diag([1j, 1j, 0j])]
    alg = generated_algebra(gens)
    assert alg.dim == 2
    assert alg.abelian


def test_closure_is_bracket_closed(box):
    gens = build_mn(box, 3)
    alg = generated_algebra(gens.matrices, tag=gens.tag)
    basis = np.array([np.concatenate([b.real.ravel(), b.imag.ravel()]) for b in alg.basis])
    for i, X in enumerate(alg.basis):
        for Y in alg.basis[:i]:
            c = bracket(X, Y)
            v = np.concatenate([c.real.ravel(), c.imag.ravel()])
            residual = v - basis.T @ (basis @ v)
            assert np.linalg.norm(residual) < 10 * alg.rank_tol


def test_dim_invariant_under_scaling_and_conjugation(box):
    gens = build_mn(box, 3).matrices
    base = generated_algebra(gens).dim
    rng = np.random.default_rng(5)
    scaled = [float(rng.uniform(0.1, 3.0)) * g for g in gens]
    assert generated_algebra(scaled).dim == base
    H = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    Q = np.linalg.qr(H)[0]
    conjugated = [Q @ g @ Q.conj().T for g in gens]
    assert generated_algebra(conjugated).dim == base


def test_contains_su_full_unitary_algebra():
    # orthonormal-ish basis of all skew-Hermitian 2x2 matrices
    gens = [
        np.array([[1j, 0], [0, 1j]]),
        np.array([[1j, 0], [0, -1j]]),
        np.array([[0, 1.0], [-1.0, 0]]),
        np.array([[0, 1j], [1j, 0]]),
    ]
    alg = generated_algebra(gens)
    assert alg.dim == 4
    assert contains_su(alg)


def test_contains_su_dimension_count_failure():
    gens = [np.array([[1j, 0], [0, 1j]]), np.array([[1j, 0], [0, -1j]])]
    alg = generated_algebra(gens)
    assert not contains_su(alg)


def test_contains_su_box_n4(box):
    gens = build_mn(box, 4)
    alg = generated_algebra(gens.matrices, tag=gens.tag)
    assert contains_su(alg)
    assert brute_force_closure_dim(list(gens.matrices)) >= 4 * 4 - 1


def test_contains_su_monotone_under_extra_generators(box):
    gens = list(build_mn(box, 3).matrices)
    alg = generated_algebra(gens)
    assert contains_su(alg)
    rng = np.random.default_rng(11)
    E = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    gens.append(E - E.conj().T)
    assert contains_su(generated_algebra(gens))


def test_build_mn_box_n2(box):
    gens = build_mn(box, 2)
    assert gens.labels[0] == "drift"
    assert np.allclose(gens.matrices[0], 1j * np.diag([1.0, 4.0]))
    by_label = dict(zip(gens.labels, gens.matrices))
    assert "sel:0" in by_label and "sel:3" in by_label
    assert np.allclose(by_label["sel:3"], 1j * np.array([[0, 1.0], [1.0, 0]]))


def test_build_mn_zero_coupling(zero_coupling):
    gens = build_mn(zero_coupling, 3)
    assert np.allclose(gens.matrices[0], 1j * np.diag([1.0, 4.0, 9.0]))
    for label, m in zip(gens.labels[1:], gens.matrices[1:]):
        if label == "sel:0":
            assert np.allclose(m, 1j * np.diag([1.0, 4.0, 9.0]))
        else:
            assert not m.any()


def test_build_mn_n1(box):
    gens = build_mn(box, 1)
    assert gens.matrices[0].shape == (1, 1)


def test_build_wn(box):
    gens = build_wn(box, 3, nus=(0.25,))
    labels = list(gens.labels)
    assert labels[0] == "drift"
    assert labels[1] == "sel:0"
    # one mixed factor per nonzero decoupled gap
    assert len([l for l in labels if "nu=" in l]) == len([s for s in gens.xi.xi if s > 0])
    with pytest.raises(ValueError):
        build_wn(box, 3, nus=(0.5,))
    only_dc = build_wn(box, 3, nus=())
    assert list(only_dc.labels) == ["drift", "sel:0"]


def test_lie_galerkin_search_box(box):
    result = lie_galerkin_search(box, 2, 8)
    assert result.certified
    assert result.n == 3
    assert result.dim >= 3 * 3 - 1


def test_lie_galerkin_search_zero_coupling(zero_coupling):
    result = lie_galerkin_search(zero_coupling, 1, 4)
    assert not result.certified
    assert result.reasons
    assert all(reason == "abelian" for _n, reason in result.reasons)


def test_lie_galerkin_search_with_pruned_xi():
    # a crossing resonance removes one gap from the decoupled set at n=3,
    # but the chain survives and certification still succeeds at some n
    system = builtin_family(
        "custom_gaps",
        eigenvalues=[0.0, 1.0, 3.0, 2.0 + 3.0, 9.0],
        couplings=[[1, 2, 1.0, 0.0], [2, 3, 1.0, 0.0], [3, 4, 1.0, 0.0], [2, 4, 0.3, 0.0]],
        tail=1,
    )
    cert = lie_galerkin_search(system, 2, 5)
    assert cert.certified


def test_chain_box(box):
    chain = chain_check(box, 5)
    assert chain.pairs == ((1, 2), (2, 3), (3, 4), (4, 5))
    assert chain.nonresonant
    assert chain.degeneracy_ok


def test_chain_disconnected():
    system = builtin_family(
        "custom_gaps",
        eigenvalues=[0.0, 1.0, 2.0, 3.0],
        couplings=[[1, 2, 1.0, 0.0], [3, 4, 1.0, 0.0]],
        tail=1,
    )
    with pytest.raises(ChainError):
        chain_check(system, 4)


def test_chain_resonant_witness(equal_gap_3):
    chain = chain_check(equal_gap_3, 3)
    assert not chain.nonresonant
    witness_pairs = {(e, p) for e, p in chain.resonance_witnesses}
    assert ((1, 2), (2, 3)) in witness_pairs


def test_chain_degeneracy_hypothesis():
    system = builtin_family(
        "custom_gaps",
        eigenvalues=[0.0, 1.0, 1.0],
        couplings=[[1, 2, 1.0, 0.0], [2, 3, 1.0, 0.0]],
        tail=3,
    )
    chain = chain_check(system, 3)
    assert not chain.degeneracy_ok
    assert (2, 3) in chain.degeneracy_witnesses


def test_chain_nonresonant_implies_certifiable(box):
    # pipeline property: a non-resonant chain over the first levels comes with
    # a certificate at some larger cutoff
    chain = chain_check(box, 4)
    assert chain.nonresonant and chain.degeneracy_ok
    cert = lie_galerkin_search(box, 4, 8)
    assert cert.certified and 4 < cert.n <= 8


def test_vn_equivalence_box(box):
    for n in (2, 3):
        assert vn_equivalence_check(box, n)


def test_vn_equivalence_zero_coupling(zero_coupling):
    assert vn_equivalence_check(zero_coupling, 3)


def test_vn_generators_shapes(box):
    gens = build_vn(box, 3)
    assert all(m.shape == (3, 3) for m in gens.matrices)
    drift = gens.matrices[0]
    assert np.allclose(drift, -1j * np.diag([1.0, 4.0, 9.0]))
