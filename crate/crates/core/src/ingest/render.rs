//! Chart rendering through an external `helm`-compatible binary.

use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

/// Value override that switches a chart's network policies on, for charts
/// following the common `networkPolicy.enabled` convention.
pub const DEFAULT_NETPOL_ENABLE_KEY: &str = "networkPolicy.enabled";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("chart renderer `{binary}` was not found on PATH; install Helm 3 or pass the renderer binary explicitly")]
    RendererMissing { binary: String },
    #[error("chart path `{}` does not exist", .0.display())]
    ChartNotFound(PathBuf),
    #[error("`{binary} template` exited with {status}: {stderr}")]
    Failed {
        binary: String,
        status: String,
        stderr: String,
    },
    #[error("renderer output is not UTF-8")]
    NotUtf8,
    #[error("failed to run renderer: {0}")]
    Io(#[from] io::Error),
    #[error("invalid value override `{0}`, expected key=value")]
    BadOverride(String),
}

/// Splits a `--set key=value` argument.
pub fn parse_override(raw: &str) -> Result<(String, String), RenderError> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(RenderError::BadOverride(raw.to_string())),
    }
}

#[derive(Debug, Clone)]
pub struct ChartRenderer {
    pub binary: String,
    pub release_name: String,
}

impl Default for ChartRenderer {
    fn default() -> Self {
        ChartRenderer {
            binary: "helm".to_string(),
            release_name: "netmisconf".to_string(),
        }
    }
}

impl ChartRenderer {
    /// Runs `<binary> template <release> <chart> [--set k=v ...]` and returns
    /// its standard output verbatim.
    pub fn render(&self, chart: &Path, overrides: &[(String, String)]) -> Result<String, RenderError> {
        if !chart.exists() {
            return Err(RenderError::ChartNotFound(chart.to_path_buf()));
        }
        let mut cmd = Command::new(&self.binary);
        cmd.arg("template").arg(&self.release_name).arg(chart);
        for (k, v) in overrides {
            cmd.arg("--set").arg(format!("{k}={v}"));
        }
        let output = cmd.output().map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => RenderError::RendererMissing {
                binary: self.binary.clone(),
            },
            _ => RenderError::Io(e),
        })?;
        if !output.status.success() {
            return Err(RenderError::Failed {
                binary: self.binary.clone(),
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        String::from_utf8(output.stdout).map_err(|_| RenderError::NotUtf8)
    }

    /// Renders again with `enable_key=true` appended to `overrides`.
    pub fn render_with_policies_enabled(
        &self,
        chart: &Path,
        overrides: &[(String, String)],
        enable_key: &str,
    ) -> Result<String, RenderError> {
        let mut all = overrides.to_vec();
        all.push((enable_key.to_string(), "true".to_string()));
        self.render(chart, &all)
    }
}
