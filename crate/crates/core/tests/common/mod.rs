#![allow(dead_code)]

use std::path::{Path, PathBuf};

use affground::config::PipelineConfig;

pub fn tiny_config_file() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiny.toml")
}

/// A scratch data root and work directory driven through the CLI.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub overrides: Vec<String>,
}

impl Workspace {
    pub fn new(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut overrides = vec![
            format!("data_root={}", dir.path().join("data").display()),
            format!("work_dir={}", dir.path().join("work").display()),
        ];
        overrides.extend(extra.iter().map(|s| s.to_string()));
        Self { dir, overrides }
    }

    pub fn config(&self) -> PipelineConfig {
        PipelineConfig::load(Some(&tiny_config_file()), &self.overrides).expect("config loads")
    }

    /// Runs one subcommand with the shared config and returns its exit code.
    pub fn cli(&self, args: &[&str]) -> i32 {
        let mut argv: Vec<String> = vec!["affground".into(), "--config".into(), tiny_config_file().display().to_string()];
        for o in &self.overrides {
            argv.push("--set".into());
            argv.push(o.clone());
        }
        argv.extend(args.iter().map(|s| s.to_string()));
        affground::cli::run_command(argv)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}
