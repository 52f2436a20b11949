import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from didfabric.crypto import (
    PROTECTED_HEADER,
    DetachedSignature,
    b64url_decode,
    b64url_encode,
    canonicalize,
    ed25519_sign,
    ed25519_verify,
    generate_keypair,
    sign_detached,
    signing_input,
    verify_detached,
)
from didfabric.errors import EmptyPayload, NonCanonicalizable, SeedLength
from oracles import canonical_ref, ed25519_ref

# RFC 8032 section 7.1, TEST 1-3: (secret key, public key, message, signature)
RFC8032 = [
    (
        "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        "",
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    ),
    (
        "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        "72",
        "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    ),
    (
        "c5aa8df43f9f837bedb7442f31dcb7b166d38535076f094b85ce3a2e0b4458f7",
        "fc51cd8e6218a1a38da47ed00230f0580816ed13ba3303ac5deb911548908025",
        "af82",
        "6291d657deec24024827e69c3abe01a30ce548a284743a445e3680d7db5ac3ac18ff9b538d16f290ae67f760984dc6594a7c15e9716ed28dc027beceea1ec40a",
    ),
]

# public key for the all-zero seed, computed once with the pure-Python RFC 8032 oracle
ZERO_SEED_PK = "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29"

NESTED_FIXTURE = {
    "types": ["VerifiableCredential", "RichAgentCredential"],
    "z": 'ünïcode "q"\n',
    "credential_subject": {
        "id": "did:agentsim:abc",
        "claims": {"role": "travel-booking", "limits": {"max": 500, "currency": "EUR"}, "capabilities": ["quote", "book"]},
    },
    "@context": ["https://www.w3.org/2018/credentials/v1"],
}
# produced by the hand-written canonical writer in tests/oracles
NESTED_PINNED = (
    '{"@context":["https://www.w3.org/2018/credentials/v1"],"credential_subject":{"claims":'
    '{"capabilities":["quote","book"],"limits":{"currency":"EUR","max":500},"role":"travel-booking"},'
    '"id":"did:agentsim:abc"},"types":["VerifiableCredential","RichAgentCredential"],"z":"ünïcode \\"q\\"\\n"}'
).encode()


@pytest.mark.parametrize("sk,pk,msg,sig", RFC8032)
def test_rfc8032_vectors(sk, pk, msg, sig):
    sk, pk, msg, sig = map(bytes.fromhex, (sk, pk, msg, sig))
    assert generate_keypair(sk).public_key == pk
    assert ed25519_sign(sk, msg) == sig
    assert ed25519_verify(pk, msg, sig)


@pytest.mark.parametrize("sk,pk,msg,sig", RFC8032)
def test_oracle_agrees_with_rfc8032(sk, pk, msg, sig):
    sk, pk, msg, sig = map(bytes.fromhex, (sk, pk, msg, sig))
    assert ed25519_ref.public_key(sk) == pk
    assert ed25519_ref.sign(sk, msg) == sig


def test_zero_seed_public_key():
    assert generate_keypair(bytes(32)).public_key.hex() == ZERO_SEED_PK
    assert ed25519_ref.public_key(bytes(32)).hex() == ZERO_SEED_PK


def test_short_seed():
    with pytest.raises(SeedLength):
        generate_keypair(bytes(31))


def test_canonical_examples():
    assert canonicalize({"b": 1, "a": 2}) == b'{"a":2,"b":1}'
    assert canonicalize({}) == b"{}"
    assert canonicalize(NESTED_FIXTURE) == NESTED_PINNED
    assert canonical_ref.canonical_bytes(NESTED_FIXTURE) == NESTED_PINNED


@pytest.mark.parametrize("bad", [float("nan"), float("inf"), {1: "x"}, {"a": {1, 2}}, b"raw"])
def test_non_canonicalizable(bad):
    with pytest.raises(NonCanonicalizable):
        canonicalize(bad)


def test_jws_with_rfc_test2_key():
    sk, pk, msg, _ = (bytes.fromhex(x) for x in RFC8032[1])
    key = generate_keypair(sk)
    sig = sign_detached(msg, key)
    header_b64 = b64url_encode(canonical_ref.canonical_bytes({"alg": "EdDSA", "b64": True, "crit": ["b64"]}))
    expected = ed25519_ref.sign(sk, f"{header_b64}.{b64url_encode(msg)}".encode())
    assert sig.signature == expected
    assert sig.compact_form == f"{header_b64}..{b64url_encode(expected)}"
    assert sig.protected_header == PROTECTED_HEADER


def test_empty_payload():
    with pytest.raises(EmptyPayload):
        sign_detached(b"", generate_keypair(bytes(32)))


def test_verify_examples():
    key = generate_keypair(bytes(range(32)))
    payload = canonicalize({"hello": "world"})
    sig = sign_detached(payload, key)
    assert verify_detached(payload, sig, key.public_key)
    flipped = bytes([payload[0] ^ 1]) + payload[1:]
    assert verify_detached(flipped, sig, key.public_key).reason == "bad-signature"
    none_header = b64url_encode(json.dumps({"alg": "none"}).encode())
    forged = f"{none_header}..{b64url_encode(sig.signature)}"
    assert verify_detached(payload, forged, key.public_key).reason == "bad-header"


def test_verify_rejects_garbage():
    key = generate_keypair(bytes(32))
    for junk in ["", "abc", "a.b.c", "e30..", "..", "e30.x.AAAA"]:
        assert verify_detached(b"x", junk, key.public_key).reason == "malformed"
    header = b64url_encode(canonicalize({"alg": "EdDSA", "crit": ["exp"]}))
    assert verify_detached(b"x", f"{header}..{'A' * 86}", key.public_key).reason == "bad-header"


def test_compact_round_trip():
    sig = sign_detached(b"payload", generate_keypair(bytes(32)))
    assert DetachedSignature.from_compact(sig.compact_form) == sig


def test_b64url_is_strict():
    assert b64url_decode(b64url_encode(b"\xff\xfe")) == b"\xff\xfe"
    for bad in ["AB==", "A", "AB+/", "AC"]:  # "AC" has non-zero pad bits
        with pytest.raises(ValueError):
            b64url_decode(bad)


def test_signing_input_shape():
    assert signing_input("aGVhZA", b"{}") == b"aGVhZA.e30"


seeds = st.binary(min_size=32, max_size=32)
payloads = st.binary(min_size=1, max_size=256)


@settings(max_examples=60, deadline=None)
@given(seeds, payloads)
def test_sign_verify_inverse(seed, payload):
    key = generate_keypair(seed)
    assert verify_detached(payload, sign_detached(payload, key), key.public_key)


@settings(max_examples=60, deadline=None)
@given(seeds, payloads, st.data())
def test_single_bit_flip_rejected(seed, payload, data):
    key = generate_keypair(seed)
    sig = sign_detached(payload, key)
    bit = data.draw(st.integers(0, len(payload) * 8 - 1))
    mutated = bytearray(payload)
    mutated[bit // 8] ^= 1 << (bit % 8)
    assert not verify_detached(bytes(mutated), sig, key.public_key)


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**53), 2**53) | st.text(max_size=12),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=20,
)


def _shuffled(value, rng):
    if isinstance(value, dict):
        items = list(value.items())
        rng.shuffle(items)
        return {k: _shuffled(v, rng) for k, v in items}
    if isinstance(value, list):
        return [_shuffled(v, rng) for v in value]
    return value


@settings(max_examples=200, deadline=None)
@given(json_values, st.integers(0, 2**32))
def test_canonical_properties(doc, salt):
    once = canonicalize(doc)
    assert canonicalize(json.loads(once)) == once
    assert canonicalize(_shuffled(doc, random.Random(salt))) == once
    assert once == canonical_ref.canonical_bytes(doc)
