//! Provenance headers and file helpers shared by every stage.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;

/// Short hex digest of a configuration text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// One comment line carrying the configuration hash and seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_text: &str, seed: u64) -> Self {
        Provenance { config_hash: config_hash(config_text), seed }
    }

    pub fn header(&self) -> String {
        format!("# grace config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

/// Writes `header` followed by `body`, creating parent directories.
pub fn write_with_header(path: impl AsRef<Path>, prov: &Provenance, body: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut text = prov.header();
    text.push_str(body);
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("a = 1\n"), config_hash("a = 1\n"));
        assert_ne!(config_hash("a = 1\n"), config_hash("a = 2\n"));
        assert_eq!(config_hash("").len(), 16);
        assert!(Provenance::new("x", 7).header().starts_with("# grace config_hash="));
    }
}
