//! Intentionally empty: this package exists for its `tests/acceptance.rs`
//! target, which exercises the whole system end to end and prints one
//! pass/fail line per criterion.
