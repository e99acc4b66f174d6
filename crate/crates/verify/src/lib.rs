//! Holds no code. The acceptance run lives in `tests/acceptance.rs`:
//!
//! ```text
//! cargo test -p hml-verify --test acceptance
//! ```
