"""openroll: a verifiable, privacy-preserving voter-registration registry.

Registrations live as encrypted records in an append-only Merkle log
paired with a sparse Merkle map, with per-epoch signed commitments on a
public bulletin.  Voters, third parties, and auditors can all check the
registry's behavior without trusting the official who operates it.
"""

__version__ = "0.1.0"
