//! `--config` files: flat `key = value` pairs (TOML) naming analyze options.
//! Command-line flags win over file values.

use std::path::{Path, PathBuf};

use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub interval: Option<f64>,
    pub max_frames: Option<usize>,
    pub batch_size: Option<usize>,
    pub geometry_policy: Option<String>,
    pub parallel_batches: Option<usize>,
    pub attributes: Option<String>,
    pub template: Option<PathBuf>,
    pub still_format: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub endpoint_url: Option<String>,
    pub model: Option<String>,
    pub timeout: Option<f64>,
    pub max_retries: Option<u32>,
    pub mock_script: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.template, &mut cfg.out_dir, &mut cfg.mock_script].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "interval = 2.5\nbatch_size = 2\ngeometry_policy = \"clamp\"\nmock_script = \"s.json\"\n",
        )
        .unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.interval, Some(2.5));
        assert_eq!(cfg.batch_size, Some(2));
        assert_eq!(cfg.mock_script, Some(dir.path().join("s.json")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "intervall = 2\n").unwrap();
        assert!(FileConfig::load(&path).unwrap_err().contains("intervall"));
    }
}
