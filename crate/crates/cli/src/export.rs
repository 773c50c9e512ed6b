use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use texweave::filterbank::{KernelInfo, DEFAULT_SUPPORT};
use texweave::imageio::write_png;
use texweave::FilterBank;

use crate::CliResult;

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportArgs {
    /// Kernel side length in pixels (odd).
    #[arg(long, default_value_t = DEFAULT_SUPPORT)]
    pub support: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Manifest {
    support: usize,
    fingerprint: String,
    counts: BTreeMap<&'static str, usize>,
    kernels: Vec<KernelInfo>,
}

/// Writes `kernel_NN.png` (each kernel min-max scaled to gray) and
/// `manifest.json` into `out`.
pub fn cmd_filterbank_export(args: &ExportArgs) -> CliResult<()> {
    let bank = FilterBank::leung_malik(args.support)?;
    let info = bank.info();
    let mut counts = BTreeMap::new();
    for k in &info {
        *counts.entry(k.kind.name()).or_insert(0) += 1;
    }
    for i in 0..bank.len() {
        write_png(
            &bank.kernel_image(i),
            &args.out.join(format!("kernel_{i:02}.png")),
        )?;
    }
    let manifest = Manifest {
        support: bank.support(),
        fingerprint: bank.fingerprint(),
        counts,
        kernels: info,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(texweave::Error::from)?;
    std::fs::write(args.out.join("manifest.json"), json + "\n")?;
    eprintln!("wrote {} kernels to {}", bank.len(), args.out.display());
    Ok(())
}
