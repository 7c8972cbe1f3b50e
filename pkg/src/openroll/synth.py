"""Seeded synthetic voters for tests and benchmarks.

No real voter data anywhere: names are syllable collages, addresses are
grid streets, birthdates are uniform over a fixed window.  Everything is
deterministic in the seed so workloads replay exactly.
"""
from __future__ import annotations

import random
import string
from dataclasses import dataclass

GIVEN_START = ["Ad", "Bel", "Cor", "Dar", "El", "Fen", "Gal", "Hil", "Is",
               "Jor", "Kel", "Lor", "Mar", "Ned", "Or", "Pel", "Quin", "Ros",
               "Sel", "Tam", "Ul", "Ver", "Wil", "Yol"]
GIVEN_MID = ["a", "e", "i", "o", "u", "an", "en", "in", "on", "ar", "er",
             "or", "al", "el", "il"]
GIVEN_END = ["da", "do", "la", "lo", "mar", "na", "ne", "ra", "rin", "ron",
             "sa", "ta", "thy", "vin", "wen"]
SURNAME_START = ["Ash", "Birch", "Cald", "Dun", "East", "Fair", "Gold",
                 "Hart", "Iron", "Kirk", "Lang", "Marsh", "North", "Oak",
                 "Pritch", "Quar", "Red", "Stan", "Thorn", "Under", "Wald",
                 "West", "Whit", "York"]
SURNAME_END = ["berry", "bourne", "bridge", "brook", "bury", "combe",
               "field", "ford", "gate", "ham", "hill", "land", "ley",
               "more", "shaw", "stead", "ton", "wall", "well", "wood"]
STREET_NAME = ["Alder", "Beacon", "Cedar", "Dockside", "Elm", "Foundry",
               "Granite", "Harbor", "Juniper", "Kestrel", "Larch", "Meridian",
               "Nettle", "Orchard", "Paladin", "Quarry", "Rowan", "Spindle",
               "Tanner", "Vantage", "Willow", "Zephyr"]
STREET_KIND = ["Avenue", "Court", "Crescent", "Drive", "Lane", "Road",
               "Street", "Terrace", "Walk", "Way"]
TOWN = ["Arbortown", "Brackwell", "Covefield", "Dunmoor", "Eastgate",
        "Ferrow", "Greyhaven", "Holloway", "Kingsmere", "Larkspur",
        "Millbrook", "Northolt", "Quillport", "Riverbend", "Stonewick",
        "Thistledown"]


@dataclass(frozen=True)
class SyntheticVoter:
    base_id: str
    values: dict  # label -> string, matching the default schema


def _given_name(rng: random.Random) -> str:
    name = rng.choice(GIVEN_START)
    if rng.random() < 0.6:
        name += rng.choice(GIVEN_MID)
    return name + rng.choice(GIVEN_END)


def _surname(rng: random.Random) -> str:
    return rng.choice(SURNAME_START) + rng.choice(SURNAME_END)


def _dob(rng: random.Random) -> str:
    year = rng.randint(1930, 2004)
    month = rng.randint(1, 12)
    day = rng.randint(1, 28)
    return f"{year:04d}-{month:02d}-{day:02d}"


def _address(rng: random.Random) -> str:
    return (f"{rng.randint(1, 9999)} {rng.choice(STREET_NAME)} "
            f"{rng.choice(STREET_KIND)}, {rng.choice(TOWN)}")


def make_voters(n: int, seed: int, prefix: str = "base",
                start: int = 0) -> list[SyntheticVoter]:
    """n distinct synthetic voters; (name, dob) pairs never repeat."""
    rng = random.Random(seed)
    seen: set[tuple[str, str]] = set()
    voters = []
    index = start
    while len(voters) < n:
        name = f"{_given_name(rng)} {_surname(rng)}"
        dob = _dob(rng)
        if (name, dob) in seen:
            continue
        seen.add((name, dob))
        voters.append(SyntheticVoter(
            base_id=f"{prefix}-{index:07d}",
            values={"name": name, "dob": dob, "address": _address(rng),
                    "status": "active"}))
        index += 1
    return voters


def typo(rng: random.Random, value: str) -> str:
    """One keyboard-scale error: substitute, insert, delete, or swap."""
    if not value:
        return value
    pos = rng.randrange(len(value))
    char = value[pos]
    pool = string.digits if char.isdigit() else string.ascii_lowercase
    op = rng.choice(["substitute", "insert", "delete", "transpose"])
    if op == "transpose" and pos + 1 < len(value):
        return value[:pos] + value[pos + 1] + value[pos] + value[pos + 2:]
    if op == "delete" and len(value) > 1:
        return value[:pos] + value[pos + 1:]
    if op == "insert":
        return value[:pos] + rng.choice(pool) + value[pos:]
    replacement = rng.choice([c for c in pool if c != char.lower()])
    return value[:pos] + replacement + value[pos + 1:]


def corrupt_voter(rng: random.Random, voter: SyntheticVoter, new_id: str,
                  fields: tuple = ("name", "dob", "address"),
                  field_rate: float = 0.667) -> SyntheticVoter:
    """Copy with at most one typo per linkage field, at least one total."""
    while True:
        values = dict(voter.values)
        touched = False
        for label in fields:
            if rng.random() < field_rate:
                values[label] = typo(rng, values[label])
                touched = values[label] != voter.values[label] or touched
        if touched:
            return SyntheticVoter(base_id=new_id, values=values)


def linkage_benchmark(n_left: int, n_right: int, n_dupes: int, seed: int
                      ) -> tuple[list[SyntheticVoter], list[SyntheticVoter],
                                 set[tuple[str, str]]]:
    """Two registries with planted near-duplicates and their ground truth.

    The right side holds n_right - n_dupes fresh voters plus n_dupes
    corrupted copies of left voters.  Returns (left, right, truth) where
    truth is the set of (left base_id, right base_id) planted pairs.
    """
    if n_dupes > min(n_left, n_right):
        raise ValueError("more planted duplicates than records")
    left = make_voters(n_left, seed, prefix="L")
    right = make_voters(n_right - n_dupes, seed + 1, prefix="R")
    rng = random.Random(seed + 2)
    originals = rng.sample(left, n_dupes)
    truth = set()
    for i, source in enumerate(originals):
        dupe_id = f"R-{n_right - n_dupes + i:07d}"
        right.append(corrupt_voter(rng, source, dupe_id))
        truth.add((source.base_id, dupe_id))
    rng.shuffle(right)
    return left, right, truth
