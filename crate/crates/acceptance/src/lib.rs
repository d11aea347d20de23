//! Acceptance criteria for `speechsel` live in `tests/acceptance.rs`.
