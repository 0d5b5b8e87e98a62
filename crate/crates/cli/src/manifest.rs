use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: &str = "hhsim-manifest/1";

/// Config text with CRLF and lone CR line endings turned into LF, so that the
/// same config hashes identically on every platform.
pub fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n").replace('\r', "\n")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub label: String,
    pub file: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run, written next to its traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config_path: String,
    /// SHA-256 of the config text after newline normalization.
    pub config_sha256: String,
    pub seed: u64,
    pub n_realizations: usize,
    /// `None` when the default thread pool was used.
    pub workers: Option<usize>,
    pub started_utc: String,
    pub finished_utc: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputFile>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn line_endings_do_not_change_the_hash() {
        let lf = "{\n  \"a\": 1\n}\n";
        assert_eq!(normalize_newlines("{\r\n  \"a\": 1\r\n}\r\n"), lf);
        assert_eq!(normalize_newlines("{\r  \"a\": 1\r}\r"), lf);
        assert_eq!(sha256_hex(normalize_newlines(lf).as_bytes()), sha256_hex(lf.as_bytes()));
    }
}
