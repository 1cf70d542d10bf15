import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dpac import paillier as pl


def test_keygen_16_bits_has_two_distinct_8_bit_primes():
    k = pl.keygen(16, random.Random(1))
    assert k.p != k.q
    assert k.p.bit_length() == 8 and k.q.bit_length() == 8
    assert k.n == k.p * k.q and k.n.bit_length() == 16


def test_keygen_is_deterministic_for_a_seed():
    assert pl.keygen(128, random.Random(3)).n == pl.keygen(128, random.Random(3)).n


@pytest.mark.parametrize("bits", [0, 15, 17, -2])
def test_keygen_rejects_bad_sizes(bits):
    with pytest.raises(ValueError):
        pl.keygen(bits, random.Random(0))


def test_roundtrip_512_bits():
    k = pl.keygen(512, random.Random(7))
    c = pl.encrypt(k.public, 42, random.Random(1))
    assert pl.decrypt(k, c) == 42


def test_decryption_constants_match_textbook_definition(small_key):
    # mu = (L(g^lambda mod N^2))^-1 mod N with L(u) = (u-1)/N
    n = small_key.n
    u = pow(n + 1, small_key.lam, n * n)
    assert pow((u - 1) // n, -1, n) == small_key.mu


def test_encrypt_rejects_out_of_range(small_key):
    with pytest.raises(ValueError):
        pl.encrypt(small_key.public, small_key.n, random.Random(0))
    with pytest.raises(ValueError):
        pl.encrypt(small_key.public, -1, random.Random(0))


def test_ciphertext_stream_is_deterministic(small_key):
    a = [pl.encrypt(small_key.public, 5, random.Random(9)).value for _ in range(2)]
    assert a[0] == a[1]


def test_decrypt_flags_non_coprime_ciphertext(small_key):
    with pytest.raises(pl.IntegrityError):
        pl.decrypt(small_key, pl.Ciphertext(small_key.p, small_key.n))


def test_decrypt_rejects_foreign_key(small_key):
    other = pl.keygen(256, random.Random(12))
    c = pl.encrypt(other.public, 1, random.Random(0))
    with pytest.raises(ValueError):
        pl.decrypt(small_key, c)


def test_scale_needs_positive_integer(small_key):
    c = pl.encrypt(small_key.public, 1, random.Random(0))
    with pytest.raises(ValueError):
        pl.c_scale(small_key.public, c, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0), st.integers(min_value=0), st.integers(min_value=1, max_value=2**64),
       st.integers(min_value=0, max_value=2**32))
def test_homomorphism(small_key, m1, m2, k, seed):
    n = small_key.n
    m1, m2 = m1 % n, m2 % n
    rng = random.Random(seed)
    pub = small_key.public
    c1, c2 = pl.encrypt(pub, m1, rng), pl.encrypt(pub, m2, rng)
    assert pl.decrypt(small_key, pl.c_add(pub, c1, c2)) == (m1 + m2) % n
    assert pl.decrypt(small_key, pl.c_scale(pub, c1, k)) == (k * m1) % n


def test_key_record_roundtrip(small_key):
    assert pl.PaillierKeypair.from_record(small_key.to_record()) == small_key
    bad = dict(small_key.to_record(), q=hex(small_key.p))
    with pytest.raises(ValueError):
        pl.PaillierKeypair.from_record(bad)


@pytest.mark.parametrize("x, expected", [(0.5, 1), (-0.5, -1), (1.5, 2), (2.5, 3), (-2.5, -3),
                                         (0.49999999999999994, 0), (Fraction(-3, 2), -2), (7, 7)])
def test_round_half_away(x, expected):
    assert pl.round_half_away(x) == expected


def test_round_half_away_rejects_nan():
    with pytest.raises(pl.CodecRangeError):
        pl.round_half_away(math.nan)


def test_codec_decode_of_reference_mean_within_half_ulp_of_scale():
    codec = pl.FixedPointCodec(pl.keygen(128, random.Random(0)).n)
    assert abs(codec.decode(codec.encode(13.1336)) - 13.1336) <= 2.0**-41


def test_codec_negative_values_use_upper_half():
    codec = pl.FixedPointCodec(1009 * 1013, scale=4)
    m = codec.encode(-1.25)
    assert m == codec.n - 5 and m > codec.max_int
    assert codec.decode(m) == -1.25


def test_codec_range_is_enforced():
    codec = pl.FixedPointCodec(1009 * 1013, scale=1)
    assert codec.encode(codec.max_int) == codec.max_int
    with pytest.raises(pl.CodecRangeError):
        codec.encode(codec.max_int + 1)
    with pytest.raises(pl.CodecRangeError):
        codec.encode(-(codec.max_int + 1))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e15, max_value=1e15, allow_nan=False))
def test_codec_roundtrip_error_is_half_a_step(x):
    codec = pl.FixedPointCodec(2**255 - 19, scale=2**40)
    assert abs(codec.decode_exact(codec.encode(x)) - Fraction(x)) <= Fraction(1, 2**41)


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False, min_value=-1e300, max_value=1e300))
def test_scaled_int_is_exact(x):
    assert pl.scaled_int(x, 2**40) == pl.round_half_away(Fraction(x) * 2**40)
    assert pl.scaled_int(x, 1000) == pl.round_half_away(Fraction(x) * 1000)


def test_signed_homomorphic_difference(small_key):
    codec = pl.FixedPointCodec(small_key.n)
    rng = random.Random(4)
    a, b = pl.scaled_int(3.25, codec.scale), pl.scaled_int(-7.5, codec.scale)
    c = pl.c_add(small_key.public, pl.encrypt(small_key.public, codec.wrap(a), rng),
                 pl.encrypt(small_key.public, codec.wrap(-b), rng))
    assert codec.unwrap(pl.decrypt(small_key, c)) == a - b
