import numpy as np
import pytest
from hypothesis import given, strategies as st

from thor_sim.errors import PatternError
from thor_sim.patterns import (FULL, WIDTH, TilePattern, aligned_count, as_pattern, effective_sparsity,
                               hamming_distance)

bits64 = st.integers(min_value=0, max_value=FULL)


def test_bools_roundtrip():
    mask = [i % 3 == 0 for i in range(WIDTH)]
    p = TilePattern.from_bools(mask)
    assert list(p) == mask
    assert p.nonzeros == sum(mask)


@pytest.mark.parametrize("n", [0, 63, 65])
def test_wrong_length_rejected(n):
    with pytest.raises(PatternError):
        TilePattern.from_bools([True] * n)


def test_out_of_range_bits_rejected():
    with pytest.raises(PatternError):
        TilePattern(FULL + 1)
    with pytest.raises(PatternError):
        TilePattern(-1)
    with pytest.raises(PatternError):
        TilePattern.from_indices([64])


def test_ones_and_zeros():
    assert TilePattern.ones().sparsity == 0.0
    assert TilePattern.zeros().sparsity == 1.0
    assert effective_sparsity(TilePattern.ones(), TilePattern.zeros()) == 1.0


def test_from_indices_and_getitem():
    p = TilePattern.from_indices([0, 5, 63])
    assert p[0] and p[5] and p[63] and p[-1]
    assert not p[1]
    assert p.nonzeros == 3


def test_as_pattern_accepts_int_and_numpy():
    assert as_pattern(np.uint64(5)) == TilePattern(5)
    assert as_pattern([True] + [False] * 63) == TilePattern(1)


def test_random_is_uniform_per_bit():
    rng = np.random.default_rng(0)
    counts = np.zeros(WIDTH)
    n = 4000
    for _ in range(n):
        counts += TilePattern.random(rng).to_array()
    # each bit a fair coin: 5 sigma band
    assert np.all(np.abs(counts / n - 0.5) < 5 * 0.5 / np.sqrt(n))


@given(bits64)
def test_complement_is_involution(b):
    p = TilePattern(b)
    assert ~~p == p
    assert (p & ~p) == TilePattern.zeros()
    assert p.nonzeros + (~p).nonzeros == WIDTH


@given(bits64, bits64)
def test_alignment_matches_elementwise(a, b):
    pa, pb = TilePattern(a), TilePattern(b)
    expected = int(np.sum(pa.to_array() & pb.to_array()))
    assert aligned_count(pa, pb) == expected
    assert effective_sparsity(pa, pb) == pytest.approx(1 - expected / WIDTH)
    assert hamming_distance(pa, pb) == int(np.sum(pa.to_array() != pb.to_array()))


def test_str_is_index_order():
    assert str(TilePattern(1)) == "1" + "0" * 63
