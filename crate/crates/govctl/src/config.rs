use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const DEFAULT_SERVER: &str = "http://127.0.0.1:8740";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    #[default]
    Human,
    /// The signed response, byte for byte.
    CanonicalJson,
}

/// Client settings. Flags override the file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub server: Option<String>,
    /// Private key, `<key_id>.key.pem` next to its `<key_id>.json` record.
    #[serde(default)]
    pub identity: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<OutputMode>,
    /// Directory of public key records used to check server signatures.
    #[serde(default)]
    pub keys: Option<PathBuf>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut c: CliConfig = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [c.identity.as_mut(), c.keys.as_mut()].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn server(&self) -> &str {
        self.server.as_deref().unwrap_or(DEFAULT_SERVER)
    }

    pub fn output(&self) -> OutputMode {
        self.output.unwrap_or_default()
    }
}
