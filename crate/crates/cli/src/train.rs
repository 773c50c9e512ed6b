use std::path::PathBuf;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use texweave::draw::{Attention, DrawConfig};
use texweave::filterbank::DEFAULT_SUPPORT;
use texweave::losses::{LossKind, LossSpec, DEFAULT_LAMBDA_COLOR, DEFAULT_LAMBDA_TV};
use texweave::seed::derive_seed;
use texweave::tiles::{sample_quintet, DatasetConfig, Direction};
use texweave::trainer::{train_observed, TrainConfig};
use texweave::{DrawModel, TextureImage, TrainingSet};

use crate::{CliError, CliResult};

/// Environment variable capping how many direction models train at once.
pub const THREADS_ENV: &str = "TEXWEAVE_THREADS";

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset config JSON (`tile_size`, `textures[{path, samples_per_epoch}]`).
    #[arg(long)]
    pub data: PathBuf,
    /// Direction of the neighbour the model learns to generate.
    #[arg(
        long,
        required_unless_present = "all_directions",
        conflicts_with = "all_directions"
    )]
    pub direction: Option<Direction>,
    /// Train all four direction models, one thread each.
    #[arg(long)]
    pub all_directions: bool,
    #[arg(long, default_value = "l2")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_TV)]
    pub lambda_tv: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA_COLOR)]
    pub lambda_color: f64,
    /// Support of the filter bank used by the fb, fltbnk and gram losses.
    #[arg(long, default_value_t = DEFAULT_SUPPORT)]
    pub filter_support: usize,
    /// Read/write iterations per generated tile.
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub z_dim: usize,
    /// Encoder and decoder LSTM width.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    /// Side of the attention grid; 0 reads and writes whole tiles.
    #[arg(long, default_value_t = 0)]
    pub attention: usize,
    /// Sample this many quintets once and train on them every epoch instead
    /// of resampling from the textures.
    #[arg(long)]
    pub fixed_quintets: Option<usize>,
    /// Print a progress line every N optimizer steps.
    #[arg(long, default_value_t = 50)]
    pub progress_every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    pub fn directions(&self) -> Vec<Direction> {
        match self.direction {
            Some(d) if !self.all_directions => vec![d],
            _ => Direction::ALL.to_vec(),
        }
    }

    pub fn draw_config(&self, tile_size: usize) -> DrawConfig {
        DrawConfig {
            steps: self.steps,
            z_dim: self.z_dim,
            enc_hidden: self.hidden,
            dec_hidden: self.hidden,
            tile_size,
            channels: 3,
            attention: if self.attention == 0 {
                Attention::Off
            } else {
                Attention::Grid { n: self.attention }
            },
        }
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            lambda_tv: self.lambda_tv,
            lambda_color: self.lambda_color,
            filter_support: self.filter_support,
            ..LossSpec::new(self.loss)
        }
    }

    /// Trainer settings for one direction; the trainer's noise and shuffling
    /// stream is derived from the global seed and the direction.
    pub fn train_config(&self, direction: Direction) -> TrainConfig {
        TrainConfig {
            loss: self.loss_spec(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            clip_norm: self.clip,
            seed: derive_seed(self.seed, &[1, direction.index() as u64]),
            checkpoint_path: Some(self.out.join(format!("{direction}.ckpt"))),
            log_path: Some(self.out.join(format!("{direction}_loss.csv"))),
            ..TrainConfig::new(direction, self.loss)
        }
    }
}

fn thread_cap() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(4),
    }
}

fn training_set(
    args: &TrainArgs,
    textures: Vec<(TextureImage, usize)>,
    tile_size: usize,
) -> CliResult<TrainingSet> {
    let Some(n) = args.fixed_quintets else {
        return Ok(TrainingSet::Textures {
            textures,
            tile_size,
        });
    };
    if n == 0 {
        return Err(CliError::Usage("--fixed-quintets must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[2]));
    let quintets = (0..n)
        .map(|i| sample_quintet(&textures[i % textures.len()].0, tile_size, &mut rng))
        .collect::<texweave::Result<Vec<_>>>()?;
    Ok(TrainingSet::Fixed(quintets))
}

fn train_direction(
    args: &TrainArgs,
    data: &TrainingSet,
    config: &DrawConfig,
    direction: Direction,
) -> CliResult<()> {
    let mut init =
        ChaCha8Rng::seed_from_u64(derive_seed(args.seed, &[0, direction.index() as u64]));
    let model = DrawModel::new(config.clone(), &mut init)?;
    let cfg = args.train_config(direction);
    let every = args.progress_every.max(1);
    let out = train_observed(model, data, &cfg, |row| {
        if row.step % every == 0 {
            eprintln!(
                "[{direction}] epoch {} step {} l_rec {:.6} l_kl {:.6} l_total {:.6} ({} ms)",
                row.epoch, row.step, row.l_rec, row.l_kl, row.l_total, row.ms
            );
        }
    })?;
    eprintln!("[{direction}] done after {} steps", out.steps);
    Ok(())
}

/// Trains the requested direction models; writes `{direction}.ckpt` and
/// `{direction}_loss.csv` per model.
pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let dataset = DatasetConfig::from_file(&args.data)?;
    let tile = dataset.tile_size;
    let config = args.draw_config(tile);
    config.validate()?;
    args.loss_spec().validate()?;
    let textures = dataset.load_textures::<f64>()?;
    let data = training_set(args, textures, tile)?;

    let directions = args.directions();
    let cap = thread_cap()?;
    if directions.len() == 1 || cap == 1 {
        for d in directions {
            train_direction(args, &data, &config, d)?;
        }
        return Ok(());
    }
    for chunk in directions.chunks(cap) {
        let results: Vec<CliResult<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&d| {
                    let (data, config) = (&data, &config);
                    s.spawn(move || train_direction(args, data, config, d))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        });
        results.into_iter().collect::<CliResult<Vec<()>>>()?;
    }
    Ok(())
}
