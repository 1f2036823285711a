import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crowdmask.core import (
    DensityMap,
    RasterMask,
    RleRecord,
    Rng,
    Scene,
    derive_seed,
    fnv1a64,
    rle_decode,
    rle_encode,
)
from crowdmask.errors import LengthMismatch, OutOfBounds, SizeMismatch

from .conftest import mask_from_rows


def splitmix64_reference(seed, n):
    """Independent SplitMix64 on numpy uint64 (wrapping arithmetic)."""
    out = []
    state = np.uint64(seed)
    with np.errstate(over="ignore"):
        for _ in range(n):
            state = state + np.uint64(0x9E3779B97F4A7C15)
            z = state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            out.append(int(z))
    return out


class TestRle:
    def test_all_zero(self):
        assert rle_encode(mask_from_rows([[0, 0], [0, 0]])).counts == (4,)

    def test_all_one(self):
        assert rle_encode(mask_from_rows([[1, 1], [1, 1]])).counts == (0, 4)

    def test_mixed(self):
        rec = rle_encode(mask_from_rows([[0, 1], [1, 0]]))
        assert rec.counts == (1, 2, 1)
        assert rec.size == (2, 2)

    @pytest.mark.parametrize(
        "counts, rows",
        [((4,), [[0, 0], [0, 0]]), ((0, 4), [[1, 1], [1, 1]]), ((1, 2, 1), [[0, 1], [1, 0]])],
    )
    def test_decode_examples(self, counts, rows):
        assert rle_decode(RleRecord((2, 2), counts)) == mask_from_rows(rows)

    def test_row_major_layout(self):
        # 2 rows x 3 cols, only pixel (col=2, row=0) set -> flat index 2
        m = mask_from_rows([[0, 0, 1], [0, 0, 0]])
        assert rle_encode(m).counts == (2, 1, 3)
        assert rle_encode(m).size == (2, 3)

    def test_decode_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            rle_decode(RleRecord((2, 2), (1, 2)))

    def test_dict_roundtrip(self):
        rec = RleRecord((3, 4), (5, 2, 5))
        assert RleRecord.from_dict(rec.to_dict()) == rec
        assert rec.to_dict() == {"size": [3, 4], "counts": [5, 2, 5]}

    @settings(max_examples=200, deadline=None)
    @given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
    def test_roundtrip_property(self, bits):
        m = RasterMask(bits)
        rec = rle_encode(m)
        assert sum(rec.counts) == bits.size
        assert rle_decode(rec) == m
        assert rle_encode(rle_decode(rec)) == rec


class TestRasterMask:
    def test_population_cached_matches_bits(self):
        m = mask_from_rows([[1, 0, 1], [0, 1, 0]])
        assert m.population == 3 == int(m.bits.sum())

    def test_immutable(self):
        m = mask_from_rows([[1, 0]])
        with pytest.raises(ValueError):
            m.bits[0, 0] = False

    def test_contains_uses_floor(self):
        m = mask_from_rows([[0, 0], [0, 1]])
        assert m.contains((1.99, 1.0))
        assert not m.contains((0.99, 1.5))
        assert not m.contains((5.0, 5.0))

    def test_set_ops_size_check(self):
        with pytest.raises(SizeMismatch):
            mask_from_rows([[1]]) & mask_from_rows([[1, 0]])


class TestRng:
    def test_seed_zero_reference(self):
        # Published first SplitMix64 output for seed 0.
        assert Rng(0).next_u64() == 0xE220A8397B1DCDAF

    @pytest.mark.parametrize("seed", [0, 1, 7, 2**63 + 5, 2**64 - 1])
    def test_matches_independent_reference(self, seed):
        rng = Rng(seed)
        assert [rng.next_u64() for _ in range(50)] == splitmix64_reference(seed, 50)

    def test_first_uniform_seed_zero(self):
        assert Rng(0).uniform() == (0xE220A8397B1DCDAF >> 11) / 2**53

    def test_determinism_and_range(self):
        a, b = Rng(123), Rng(123)
        xs = [a.uniform() for _ in range(1000)]
        assert xs == [b.uniform() for _ in range(1000)]
        assert all(0.0 <= x < 1.0 for x in xs)

    def test_gaussian_degenerate(self):
        assert Rng(3).gaussian(7.0, 0.0) == 7.0

    def test_gaussian_cosine_then_sine(self):
        rng, ref = Rng(9), Rng(9)
        u1, u2 = ref.uniform(), ref.uniform()
        r = math.sqrt(-2.0 * math.log(1.0 - u1))
        assert rng.gaussian() == r * math.cos(2 * math.pi * u2)
        assert rng.gaussian() == r * math.sin(2 * math.pi * u2)

    def test_gaussian_moments(self):
        rng = Rng(1)
        xs = np.array([rng.gaussian(0.0, 1.0) for _ in range(100_000)])
        assert abs(xs.mean()) < 0.02
        assert abs(xs.std() - 1.0) < 0.02

    def test_gaussian_streams_identical(self):
        a, b = Rng(42), Rng(42)
        assert [a.gaussian(1, 2) for _ in range(101)] == [b.gaussian(1, 2) for _ in range(101)]

    def test_randint_bounds(self):
        rng = Rng(5)
        vals = {rng.randint(-2, 2) for _ in range(500)}
        assert vals == {-2, -1, 0, 1, 2}

    def test_fnv_vectors(self):
        assert fnv1a64("") == 0xCBF29CE484222325
        assert fnv1a64("a") == 0xAF63DC4C8601EC8C
        assert fnv1a64("foobar") == 0x85944171F73967E8

    def test_derive_seed(self):
        assert derive_seed(7, "x") == 7 ^ fnv1a64("x")
        assert Rng.for_entity(7, "a").next_u64() != Rng.for_entity(7, "b").next_u64()


class TestScene:
    def test_out_of_bounds(self):
        with pytest.raises(OutOfBounds):
            Scene(10, 10, [[10.0, 1.0]]).validate()

    def test_mask_count(self):
        with pytest.raises(LengthMismatch):
            Scene(2, 2, [[0.5, 0.5]], []).validate()

    def test_overlapping_masks_rejected(self):
        m = mask_from_rows([[1, 0], [0, 0]])
        with pytest.raises(ValueError):
            Scene(2, 2, [[0.5, 0.5], [0.6, 0.6]], [m, m]).validate()

    def test_generated_scene_masks_disjoint(self, dense_scene):
        dense_scene.validate()
        ms = dense_scene.gt_masks
        for i in range(len(ms)):
            for j in range(i + 1, len(ms)):
                assert ms[i].intersection_count(ms[j]) == 0


def test_density_map_rejects_negative():
    with pytest.raises(ValueError):
        DensityMap(2, 1, np.array([[0.0, -1.0]]))
    with pytest.raises(SizeMismatch):
        DensityMap(2, 2, np.zeros((1, 2)))
