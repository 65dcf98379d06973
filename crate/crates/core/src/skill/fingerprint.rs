use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SkillPackage;

/// SHA-256 over the canonical serialization of a bundle's files.
///
/// Files are sorted bytewise by path; each contributes
/// `path || 0x00 || len(bytes) as u64 big-endian || bytes`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContentFingerprint {
    pub digest: String,
    pub algorithm: String,
}

impl ContentFingerprint {
    pub const ALGORITHM: &'static str = "sha256";

    pub fn from_digest(digest: [u8; 32]) -> ContentFingerprint {
        ContentFingerprint {
            digest: hex::encode(digest),
            algorithm: Self::ALGORITHM.to_string(),
        }
    }

    pub fn short(&self) -> &str {
        &self.digest[..self.digest.len().min(12)]
    }
}

impl fmt::Display for ContentFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.digest)
    }
}

pub fn fingerprint_files<'a, I>(files: I) -> ContentFingerprint
where
    I: IntoIterator<Item = (&'a str, &'a [u8])>,
{
    let mut files: Vec<(&str, &[u8])> = files.into_iter().collect();
    files.sort_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
    let mut hasher = Sha256::new();
    for (path, bytes) in files {
        hasher.update(path.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_be_bytes());
        hasher.update(bytes);
    }
    ContentFingerprint::from_digest(hasher.finalize().into())
}

pub fn compute_fingerprint(package: &SkillPackage) -> ContentFingerprint {
    fingerprint_files(package.files())
}
