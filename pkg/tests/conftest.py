# Makes the tests directory importable (shared oracles live in test modules).
