//! Acceptance criteria for the workspace live in `tests/acceptance.rs`; corpora and scripts
//! live under `corpus/` and `fixtures/`.
