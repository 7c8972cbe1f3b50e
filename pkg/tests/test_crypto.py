"""Key derivation, committing encryption, and signature contracts."""
from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import stat

import pytest
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from hypothesis import given, settings, strategies as st

from openroll.crypto import (
    Corrupt,
    EmptyBaseId,
    FieldCiphertext,
    KeyMismatch,
    MasterKeys,
    PlaintextTooLong,
    ciphertext_len,
    decrypt_field,
    derive_field_key,
    derive_voter_id,
    encrypt_field,
    sign_bytes,
    verify_signature,
)


@pytest.fixture(scope="module")
def master():
    return MasterKeys.generate()


def test_voter_id_matches_hmac_oracle(master):
    vid = derive_voter_id(master, "state-roll-00042")
    oracle = hmac_mod.new(master.k_id, b"state-roll-00042",
                          hashlib.sha256).digest()
    assert vid == oracle
    assert len(vid) == 32
    assert derive_voter_id(master, "state-roll-00042") == vid


def test_voter_id_collision_scan(master):
    ids = {derive_voter_id(master, f"base-{i}") for i in range(2000)}
    assert len(ids) == 2000


def test_voter_id_depends_on_master_key():
    a, b = MasterKeys.generate(), MasterKeys.generate()
    assert derive_voter_id(a, "same") != derive_voter_id(b, "same")


def test_empty_base_id_rejected(master):
    with pytest.raises(EmptyBaseId):
        derive_voter_id(master, "")


def test_field_key_matches_hmac_oracle(master):
    vid = derive_voter_id(master, "v1")
    key = derive_field_key(master, vid, "name", 3)
    context = (len(vid).to_bytes(4, "big") + vid +
               len(b"name").to_bytes(4, "big") + b"name" +
               (3).to_bytes(8, "big"))
    oracle = hmac_mod.new(master.k_kdf, context, hashlib.sha256).digest()
    assert key == oracle


def test_field_key_grid_collision_scan(master):
    keys = set()
    voters = [derive_voter_id(master, f"v{i}") for i in range(8)]
    for vid in voters:
        for column in ("name", "dob", "address", "status"):
            for epoch in range(10):
                keys.add(derive_field_key(master, vid, column, epoch))
    assert len(keys) == 8 * 4 * 10


def test_field_key_context_boundary_canary(master):
    # concatenation must not be ambiguous across the voter/column boundary
    vid = derive_voter_id(master, "canary")
    k1 = derive_field_key(master, vid + b"A", "B", 0)
    k2 = derive_field_key(master, vid, "AB", 0)
    assert k1 != k2
    k3 = derive_field_key(master, vid, "AB", 0)
    k4 = derive_field_key(master, vid, "A", 0)
    assert k3 != k4


def test_field_key_epoch_is_fixed_width(master):
    # a column label ending in digits must not absorb the epoch
    vid = derive_voter_id(master, "w")
    assert (derive_field_key(master, vid, "col1", 2) !=
            derive_field_key(master, vid, "col12", 0))
    assert (derive_field_key(master, vid, "col", 1) !=
            derive_field_key(master, vid, "col", 256))


def test_encrypt_round_trip_every_length(master):
    key = derive_field_key(master, derive_voter_id(master, "rt"), "name", 0)
    pad_len = 24
    for n in range(pad_len + 1):
        plaintext = bytes(range(256))[:n]
        box = encrypt_field(key, plaintext, pad_len)
        assert decrypt_field(key, box) == plaintext
        assert len(box.ciphertext) == ciphertext_len(pad_len)


def test_ciphertext_length_function_of_pad_only(master):
    key = os.urandom(32)
    lengths = {len(encrypt_field(key, b"x" * n, 32).ciphertext)
               for n in range(33)}
    assert lengths == {ciphertext_len(32)}


def test_plaintext_too_long(master):
    key = os.urandom(32)
    encrypt_field(key, b"a" * 16, 16)
    with pytest.raises(PlaintextTooLong):
        encrypt_field(key, b"a" * 17, 16)


def test_fresh_randomness_per_call():
    key = os.urandom(32)
    boxes = [encrypt_field(key, b"same plaintext", 32) for _ in range(50)]
    assert len({b.nonce for b in boxes}) == 50
    assert len({b.ciphertext for b in boxes}) == 50


def test_wrong_key_scan_never_decrypts():
    key = os.urandom(32)
    box = encrypt_field(key, b"secret", 32)
    for _ in range(300):
        with pytest.raises(KeyMismatch):
            decrypt_field(os.urandom(32), box)


def test_wrong_epoch_key_is_key_mismatch(master):
    vid = derive_voter_id(master, "epoch-swap")
    right = derive_field_key(master, vid, "name", 4)
    wrong = derive_field_key(master, vid, "name", 5)
    box = encrypt_field(right, b"J SMITH", 32)
    with pytest.raises(KeyMismatch):
        decrypt_field(wrong, box)


def test_tampered_ciphertext_is_corrupt():
    key = os.urandom(32)
    box = encrypt_field(key, b"payload", 16)
    for i in range(len(box.ciphertext)):
        mangled = bytearray(box.ciphertext)
        mangled[i] ^= 0x01
        bad = FieldCiphertext(box.nonce, bytes(mangled), box.commit)
        with pytest.raises(Corrupt):
            decrypt_field(key, bad)


def test_tampered_nonce_or_commit_is_key_mismatch():
    key = os.urandom(32)
    box = encrypt_field(key, b"payload", 16)
    bad_nonce = FieldCiphertext(bytes(12), box.ciphertext, box.commit)
    with pytest.raises(KeyMismatch):
        decrypt_field(key, bad_nonce)
    bad_commit = FieldCiphertext(box.nonce, box.ciphertext, bytes(32))
    with pytest.raises(KeyMismatch):
        decrypt_field(key, bad_commit)


def test_malformed_padding_is_corrupt():
    # authentic AES-GCM payload whose padding lacks the 0x80 marker
    key = os.urandom(32)
    nonce = os.urandom(12)
    forged = AESGCM(key).encrypt(nonce, b"\x00" * 17, None)
    commit = hashlib.sha256(b"\x02" + key + nonce).digest()
    with pytest.raises(Corrupt):
        decrypt_field(key, FieldCiphertext(nonce, forged, commit))


def test_ciphertext_serialization_round_trip():
    key = os.urandom(32)
    box = encrypt_field(key, b"wire", 8)
    assert FieldCiphertext.from_bytes(box.to_bytes()) == box
    assert FieldCiphertext.from_json(box.to_json()) == box


@settings(max_examples=40, deadline=None)
@given(st.binary(min_size=0, max_size=48),
       st.integers(min_value=0, max_value=64))
def test_round_trip_property(plaintext, extra):
    key = b"\x11" * 32
    pad_len = len(plaintext) + extra
    box = encrypt_field(key, plaintext, pad_len)
    assert decrypt_field(key, box) == plaintext


def test_sign_and_verify(master):
    sig = sign_bytes(master, b"commitment bytes")
    assert verify_signature(master.public_key, b"commitment bytes", sig)
    assert not verify_signature(master.public_key, b"other bytes", sig)
    assert not verify_signature(MasterKeys.generate().public_key,
                                b"commitment bytes", sig)
    assert not verify_signature(master.public_key, b"commitment bytes",
                                bytes(64))


def test_keystore_round_trip(tmp_path):
    path = tmp_path / "keys.json"
    master = MasterKeys.generate()
    master.save(str(path))
    mode = stat.S_IMODE(os.stat(path).st_mode)
    assert mode == 0o600
    loaded = MasterKeys.load(str(path))
    assert loaded.k_id == master.k_id
    assert loaded.k_kdf == master.k_kdf
    assert loaded.public_key == master.public_key
    assert derive_voter_id(loaded, "same") == derive_voter_id(master, "same")
