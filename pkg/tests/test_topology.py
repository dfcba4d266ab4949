import numpy as np
import pytest
from hypothesis import given, strategies as st

from treeflow import topology
from treeflow.errors import ValidationError
from treeflow.topology import BranchIndex


def test_branch_index_validates():
    with pytest.raises(ValidationError):
        BranchIndex(0, 1)
    with pytest.raises(ValidationError):
        BranchIndex(2, 5)
    assert str(BranchIndex(3, 6)) == "3,6"


def test_parent_and_children():
    b = BranchIndex(3, 6)
    assert b.parent() == (2, 3)
    assert BranchIndex(1, 2).parent() is None
    assert BranchIndex(2, 3).children() == ((3, 5), (3, 6))


def test_path_to_worked_example():
    assert topology.path_to((3, 6)) == ((1, 2), (2, 3), (3, 6))
    assert topology.path_to((1, 1)) == ((1, 1),)


def test_subpath_is_prefix():
    path = topology.path_to((4, 11))
    assert topology.subpath(path, 0) == ()
    assert topology.subpath(path, 2) == path[:2]
    with pytest.raises(ValidationError):
        topology.subpath(path, 5)


def test_nu_examples():
    assert topology.nu(1, 2) == 2
    assert topology.nu(5, 7) == 2
    assert topology.nu(3, 3) == 0
    with pytest.raises(ValidationError):
        topology.nu(-1, 0)


def test_flat_index_is_canonical_bijection():
    for levels in (1, 2, 5):
        branches = topology.branch_set(levels)
        assert len(branches) == topology.n_branches(levels) == 2 ** (levels + 1) - 2
        assert [topology.flat_index(b) for b in branches] == list(range(len(branches)))


def test_size_inversions():
    assert topology.levels_for_size(14) == 3
    assert topology.levels_for_outlets(16) == 4
    for bad in (3, 5, 0):
        with pytest.raises(ValidationError):
            topology.levels_for_size(bad)
    with pytest.raises(ValidationError):
        topology.levels_for_outlets(6)


def test_level_cap():
    with pytest.raises(ValidationError):
        topology.n_branches(topology.MAX_TOPOLOGY_LEVELS + 1)
    with pytest.raises(ValidationError):
        topology.n_branches(0)


@given(st.integers(1, 7), st.data())
def test_nu_counts_shared_branches(levels, data):
    # oracle: walk both root paths and count the common prefix
    i = data.draw(st.integers(1, 2**levels))
    j = data.draw(st.integers(1, 2**levels))
    a, b = topology.path_to((levels, i)), topology.path_to((levels, j))
    shared = sum(1 for u, v in zip(a, b) if u == v)
    assert levels - topology.nu(i - 1, j - 1) == shared
    assert topology.nu_matrix(levels)[i - 1, j - 1] == topology.nu(i - 1, j - 1)


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_ratio_round_trip(levels, seed):
    x = np.random.default_rng(seed).uniform(0.05, 1.5, topology.n_branches(levels))
    xi = topology.xi_from_x(x)
    np.testing.assert_allclose(topology.x_from_xi(xi), x, rtol=1e-13)
    # each xi is the product along its path
    branch = topology.branch_set(levels)[-1]
    prod = np.prod([x[topology.flat_index(b)] for b in topology.path_to(branch)])
    assert xi[-1] == pytest.approx(prod, rel=1e-14)


def test_ratios_must_be_positive():
    with pytest.raises(ValidationError, match=r"x\[1\]"):
        topology.xi_from_x([1.0, 0.0])


def test_path_mask():
    mask = topology.path_mask(3, outlet=6)
    chosen = [b for b, m in zip(topology.branch_set(3), mask) if m]
    assert tuple(chosen) == topology.path_to((3, 6))
