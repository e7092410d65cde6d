//! Fixtures and checks shared by the integration tests and the acceptance
//! target.

#![allow(dead_code)]

pub mod chrf_oracle;
pub mod locator;
pub mod props;
pub mod tables;

use std::path::{Path, PathBuf};

/// `crates/core/tests`, whichever crate includes this module.
pub fn tests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

pub fn fixture(name: &str) -> PathBuf {
    tests_dir().join("fixtures").join(name)
}
