use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use texweave::filterbank::DEFAULT_SUPPORT;
use texweave::imageio::write_png;
use texweave::seed::derive_seed;
use texweave::texton::{
    gram_distance, histogram_distance, learn_textons, texton_histogram, TextonDictionary,
    DEFAULT_TEXTONS,
};
use texweave::tiles::{sample_quintet, DatasetConfig, Direction};
use texweave::{DrawModel, FilterBank, Tensor};

use crate::{montage, write_csv, CliError, CliResult};

pub const GUTTER: usize = 2;

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset config the tiles are drawn from.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of quintets to reconstruct.
    #[arg(long, default_value_t = 8)]
    pub tiles: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the direction stored in the checkpoint.
    #[arg(long)]
    pub direction: Option<Direction>,
    /// Texton dictionary; learned from the original tiles when absent.
    #[arg(long)]
    pub textons: Option<PathBuf>,
    /// Dictionary size when learning textons.
    #[arg(long, default_value_t = DEFAULT_TEXTONS)]
    pub k: usize,
    /// Filter support when learning textons.
    #[arg(long, default_value_t = DEFAULT_SUPPORT)]
    pub support: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub(crate) fn rmse(a: &Tensor, b: &Tensor) -> f64 {
    let n = a.numel() as f64;
    (a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Reconstructs target neighbours of sampled quintets. Writes `montage.png`
/// (top row: original target tiles, bottom row: reconstructions),
/// `metrics.csv`, and the texton dictionary used.
pub fn cmd_reconstruct(args: &ReconstructArgs) -> CliResult<()> {
    if args.tiles == 0 {
        return Err(CliError::Usage("--tiles must be >= 1".into()));
    }
    let (model, meta) = DrawModel::load(&args.checkpoint)?;
    let direction = args
        .direction
        .or(meta.direction)
        .ok_or_else(|| CliError::Usage("checkpoint has no direction; pass --direction".into()))?;
    let dataset = DatasetConfig::from_file(&args.data)?;
    if dataset.tile_size != model.config().tile_size {
        return Err(CliError::Data(format!(
            "dataset tile size {} does not match the checkpoint's {}",
            dataset.tile_size,
            model.config().tile_size
        )));
    }
    let textures = dataset.load_textures::<f64>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[0]));
    let mut originals = Vec::with_capacity(args.tiles);
    let mut recons = Vec::with_capacity(args.tiles);
    let mut placement = Vec::with_capacity(args.tiles);
    for i in 0..args.tiles {
        let tex = &textures[i % textures.len()].0;
        let q = sample_quintet(tex, dataset.tile_size, &mut rng)?;
        let target = q.neighbor(direction).clone();
        let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[1, i as u64]));
        let pass = model.forward(&q.center, &target, &mut noise)?;
        recons.push(pass.output_tile().clone());
        originals.push(target);
        placement.push((tex.id, q.origin_of(direction)));
    }

    let dict = match &args.textons {
        Some(path) => TextonDictionary::load(path)?,
        None => {
            let bank = FilterBank::leung_malik(args.support)?;
            let dict = learn_textons(&originals, &bank, args.k, derive_seed(args.seed, &[2]))?;
            dict.save(&args.out.join("textons.bin"))?;
            dict
        }
    };
    let bank = FilterBank::leung_malik(dict.support())?;

    let mut rows = Vec::with_capacity(args.tiles);
    for (i, (orig, rec)) in originals.iter().zip(&recons).enumerate() {
        let hist = histogram_distance(
            &texton_histogram(orig, &dict, &bank)?,
            &texton_histogram(rec, &dict, &bank)?,
        )?;
        let gram = gram_distance(orig, rec, &bank)?;
        let (texture, (row, col)) = placement[i];
        rows.push(format!(
            "{i},{texture},{row},{col},{},{hist},{gram}",
            rmse(orig, rec)
        ));
    }
    write_csv(
        &args.out.join("metrics.csv"),
        "tile,texture,row,col,rmse,histogram,gram",
        &rows,
    )?;
    write_png(
        &montage(&[originals, recons], GUTTER)?,
        &args.out.join("montage.png"),
    )?;
    eprintln!(
        "reconstructed {} {direction} tiles into {}",
        args.tiles,
        args.out.display()
    );
    Ok(())
}
