//! Command implementations behind the `texweave` binary.
//!
//! Every command is described by a [`RunConfig`], which is written to
//! `run.json` in its output directory before any work starts, so a run can be
//! replayed with `texweave rerun OUT/run.json`.

mod eval;
mod expand;
mod export;
mod montage;
mod reconstruct;
mod train;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use eval::{cmd_eval, EvalArgs, Metric};
pub use expand::{cmd_expand, ExpandArgs};
pub use export::{cmd_filterbank_export, ExportArgs};
pub use montage::montage;
pub use reconstruct::{cmd_reconstruct, ReconstructArgs};
pub use train::{cmd_train, TrainArgs};

pub const RUN_FILE: &str = "run.json";

/// Exit status for usage errors (bad flags or argument values).
pub const EXIT_USAGE: i32 = 2;
/// Exit status for unreadable or inconsistent inputs.
pub const EXIT_DATA: i32 = 3;
/// Exit status for non-finite training or out-of-domain values.
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(texweave::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use texweave::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                E::InvalidArgument(_)
                | E::ShapeMismatch { .. }
                | E::InvalidAxis { .. }
                | E::NonScalarRoot(_) => EXIT_USAGE,
                E::Data(_) | E::Format(_) | E::Io(_) | E::Image(_) | E::Json(_) => EXIT_DATA,
                E::NonFinite { .. } | E::Domain(_) => EXIT_NUMERIC,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<texweave::Error> for CliError {
    fn from(e: texweave::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Fully resolved description of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunConfig {
    FilterbankExport(ExportArgs),
    Train(TrainArgs),
    Reconstruct(ReconstructArgs),
    Expand(ExpandArgs),
    Eval(EvalArgs),
}

impl RunConfig {
    pub fn out_dir(&self) -> &Path {
        match self {
            RunConfig::FilterbankExport(a) => &a.out,
            RunConfig::Train(a) => &a.out,
            RunConfig::Reconstruct(a) => &a.out,
            RunConfig::Expand(a) => &a.out,
            RunConfig::Eval(a) => &a.out,
        }
    }

    pub fn set_out_dir(&mut self, out: PathBuf) {
        match self {
            RunConfig::FilterbankExport(a) => a.out = out,
            RunConfig::Train(a) => a.out = out,
            RunConfig::Reconstruct(a) => a.out = out,
            RunConfig::Expand(a) => a.out = out,
            RunConfig::Eval(a) => a.out = out,
        }
    }

    /// Makes input paths absolute so the recorded config replays from any
    /// working directory.
    pub fn resolve_paths(&mut self) -> CliResult<()> {
        match self {
            RunConfig::FilterbankExport(_) => {}
            RunConfig::Train(a) => a.data = absolute(&a.data)?,
            RunConfig::Reconstruct(a) => {
                a.checkpoint = absolute(&a.checkpoint)?;
                a.data = absolute(&a.data)?;
                if let Some(t) = &mut a.textons {
                    *t = absolute(t)?;
                }
            }
            RunConfig::Expand(a) => {
                a.center = absolute(&a.center)?;
                for c in &mut a.checkpoints {
                    *c = absolute(c)?;
                }
            }
            RunConfig::Eval(a) => {
                a.original = absolute(&a.original)?;
                for g in &mut a.generated {
                    *g = absolute(g)?;
                }
                if let Some(t) = &mut a.textons {
                    *t = absolute(t)?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("invalid run config {}: {e}", path.display())))
    }

    /// Records the config in its output directory, then runs it.
    pub fn execute(mut self) -> CliResult<()> {
        self.resolve_paths()?;
        let out = self.out_dir().to_path_buf();
        std::fs::create_dir_all(&out)?;
        let json = serde_json::to_string_pretty(&self).map_err(texweave::Error::from)?;
        std::fs::write(out.join(RUN_FILE), json + "\n")?;
        match &self {
            RunConfig::FilterbankExport(a) => cmd_filterbank_export(a),
            RunConfig::Train(a) => cmd_train(a),
            RunConfig::Reconstruct(a) => cmd_reconstruct(a),
            RunConfig::Expand(a) => cmd_expand(a),
            RunConfig::Eval(a) => cmd_eval(a),
        }
    }
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    if p.is_absolute() {
        Ok(p.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(p))
    }
}

/// Reads an image that must exist, reporting the path on failure.
pub(crate) fn read_image(path: &Path) -> CliResult<texweave::Tensor> {
    texweave::imageio::read_rgb(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
