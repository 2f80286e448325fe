//! Content hashes and the metadata block embedded in every output file.

use serde_json::json;
use sha2::{Digest, Sha256};

/// SHA-256 over `name NUL "blob" len NUL bytes` for every input, in order.
pub fn content_hash(inputs: &[(&str, &[u8])]) -> String {
    let mut hasher = Sha256::new();
    for (name, bytes) in inputs {
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update(format!("blob {}", bytes.len()).as_bytes());
        hasher.update([0]);
        hasher.update(bytes);
    }
    format!("sha256:{}", hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    /// Resolved settings as TOML.
    pub settings: String,
    pub input_hash: String,
}

impl Provenance {
    /// Hash the settings together with any input files.
    pub fn new(command: &str, settings: String, files: &[(&str, &[u8])]) -> Self {
        let mut inputs: Vec<(&str, &[u8])> = vec![("settings", settings.as_bytes())];
        inputs.extend_from_slice(files);
        let input_hash = content_hash(&inputs);
        Self {
            command: command.into(),
            settings,
            input_hash,
        }
    }

    /// `#`-prefixed lines for the top of a CSV file.
    pub fn preamble(&self) -> String {
        let mut out = format!(
            "# kmpc {}\n# input-hash: {}\n# settings:\n",
            self.command, self.input_hash
        );
        for line in self.settings.lines() {
            out.push_str("#   ");
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "command": self.command,
            "input_hash": self.input_hash,
            "settings": self.settings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_names_and_content() {
        let a = content_hash(&[("x", b"abc")]);
        assert_eq!(a, content_hash(&[("x", b"abc")]));
        assert_ne!(a, content_hash(&[("y", b"abc")]));
        assert_ne!(a, content_hash(&[("x", b"abd")]));
        assert_ne!(
            content_hash(&[("x", b"ab"), ("y", b"c")]),
            content_hash(&[("x", b"a"), ("y", b"bc")])
        );
        assert!(a.starts_with("sha256:") && a.len() == 7 + 64);
    }

    #[test]
    fn preamble_lines_are_comments() {
        let p = Provenance::new("train", "a = 1\nb = 2\n".into(), &[]);
        assert!(p.preamble().lines().all(|l| l.starts_with('#')));
        assert!(p.preamble().contains("#   b = 2"));
    }
}
