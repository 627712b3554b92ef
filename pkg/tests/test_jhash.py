import pytest
from hypothesis import given
from hypothesis import strategies as st

from aqmsim.packet import FlowKey
from aqmsim.qdisc import classify_flow, hashlittle

# Values produced by an independent byte-at-a-time C implementation of lookup3.
PUBLISHED = [
    (b"", 0, 0xDEADBEEF),
    (b"", 0xDEADBEEF, 0xBD5B7DDE),
    (b"Four score and seven years ago", 0, 0x17770551),
    (b"Four score and seven years ago", 1, 0xCD628161),
]
ALPHABET = b"abcdefghijklmnopqrstuvwxyz0123456789"
PREFIXES_INIT7 = [0xDEADBEF6, 0x88C19094, 0x49ADC349, 0x99F1E968,
                  0x2CF83B56, 0x613F276C, 0x18966B8A, 0xCEAB5FD6]


@pytest.mark.parametrize("data,init,expected", PUBLISHED)
def test_reference_vectors(data, init, expected):
    assert hashlittle(data, init) == expected


def test_all_tail_lengths():
    got = [hashlittle(ALPHABET[:n], 7) for n in range(0, 36, 5)]
    assert got == PREFIXES_INIT7


@pytest.mark.parametrize("key,salt,hval,bucket", [
    (("10.0.0.1", "10.0.1.1", 5000, 80, 6), 0, 0x95D09B4B, 843),
    (("10.0.0.1", "10.0.1.1", 5001, 80, 6), 0, 0xDBC39BF2, 1010),
    (("10.0.0.2", "10.0.1.1", 5000, 80, 17), 0, 0xFB2B3D99, 409),
    (("10.0.0.1", "10.0.1.1", 5000, 80, 6), 12345, 0x6322316A, 362),
])
def test_flow_key_classification(key, salt, hval, bucket):
    k = FlowKey.parse(*key)
    assert hashlittle(k.to_bytes(), salt) == hval
    assert classify_flow(k, salt, 1024) == bucket


def test_single_bucket_and_power_of_two():
    k = FlowKey.parse("1.2.3.4", "5.6.7.8", 1, 2, 6)
    assert classify_flow(k, 0, 1) == 0
    with pytest.raises(ValueError):
        classify_flow(k, 0, 1000)


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 65535),
       st.integers(0, 65535), st.sampled_from([6, 17]), st.integers(0, 2**32 - 1))
def test_classification_is_pure(src, dst, sp, dp, proto, salt):
    k = FlowKey(src, dst, sp, dp, proto)
    a = classify_flow(k, salt, 1024)
    assert a == classify_flow(FlowKey(src, dst, sp, dp, proto), salt, 1024)
    assert 0 <= a < 1024
