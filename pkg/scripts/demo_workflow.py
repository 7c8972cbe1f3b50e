#!/usr/bin/env python3
"""End-to-end tour: register, commit, look up, verify, audit, deduplicate.

Runs every role against throwaway directories and prints what each side
sees.  Nothing here touches the network; it is the library analogue of
the CLI round trip.
"""

import os
import shutil
import sys
import tempfile

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from openroll.crypto import MasterKeys
from openroll.pprl import (EncodingParams, encode_registry, make_encoder,
                           match_registries)
from openroll.registry import Registry, verify_lookup
from openroll import workflows as wf


def main() -> int:
    work = tempfile.mkdtemp(prefix="openroll-demo-")
    master = MasterKeys.generate()
    public = master.public_key
    params = EncodingParams(seed=b"demo-linkage")
    encoder = make_encoder(params)

    reg = Registry(os.path.join(work, "county-a"), master, create=True,
                   encoder=encoder, encoding_params=params.to_json())

    print("== official: two registration epochs ==")
    people = [
        ("drv-1001", {"name": "Maren Holt", "dob": "1979-03-12",
                      "address": "14 Birch Row", "status": "active"}),
        ("drv-1002", {"name": "Tobias Venn", "dob": "1984-11-02",
                      "address": "220 Mill Lane", "status": "active"}),
        ("drv-1003", {"name": "Ines Kadar", "dob": "1991-06-27",
                      "address": "7 Harbor Walk", "status": "active"}),
    ]
    ids = {}
    for base_id, values in people:
        ids[base_id] = wf.register_voter(reg, base_id, values)
    entry = reg.push_epoch()
    print(f"epoch {entry.commitment.epoch}: {entry.commitment.log_size} "
          "records committed")

    moved = dict(people[0][1], address="5 Quarry Street")
    wf.update_registration(reg, ids["drv-1001"], moved)
    entry = reg.push_epoch()
    print(f"epoch {entry.commitment.epoch}: {entry.commitment.log_size} "
          "records committed")

    print("\n== anyone: lookup with proof ==")
    looked = reg.lookup(ids["drv-1001"])
    ok, why = verify_lookup(ids["drv-1001"], looked, public)
    print(f"lookup proof verifies: {ok}" + (f" ({why})" if why else ""))

    print("\n== voter: full history, decrypted and checked ==")
    package = wf.query_prepare(reg, ids["drv-1001"], 1, reg.epoch)
    history = wf.query_verify(package, reg.entries, public, reg.schema)
    for epoch in sorted(history):
        print(f"epoch {epoch}: {history[epoch]}")

    print("\n== auditor: every adjacent epoch pair ==")
    verdicts = wf.audit_chain(reg.entries, public)
    for v in verdicts:
        print(f"epochs {v.epoch_pair[0]}->{v.epoch_pair[1]}: "
              + ("ok" if v.ok else f"FAIL {v.check}"))

    print("\n== dedup: neighboring county shares one person ==")
    other = Registry(os.path.join(work, "county-b"),
                     MasterKeys.generate(), create=True,
                     encoder=encoder, encoding_params=params.to_json())
    wf.register_voter(other, "st-77", {
        "name": "Tobias Ven", "dob": "1984-11-02",   # clerk's typo
        "address": "220 Mill Ln", "status": "active"})
    wf.register_voter(other, "st-78", {
        "name": "Greta Oduya", "dob": "1966-01-30",
        "address": "31 Fern Court", "status": "active"})
    other.push_epoch()

    matches = match_registries(encode_registry(reg, params),
                               encode_registry(other, params), params)
    for m in matches:
        print(f"candidate pair score {m.score:.3f}: "
              f"{m.left_id[:12]}... / {m.right_id[:12]}...")
    print(f"{len(matches)} candidate duplicate(s) found")

    reg.close()
    other.close()
    shutil.rmtree(work)
    return 0


if __name__ == "__main__":
    sys.exit(main())
