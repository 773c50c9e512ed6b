use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use texweave::imageio::write_png;
use texweave::synthesis::expand;
use texweave::tiles::crop;
use texweave::{DirectionModels, DrawModel};

use crate::{read_image, write_csv, CliError, CliResult};

#[derive(Args, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandArgs {
    /// One checkpoint per direction; each one's direction comes from its metadata.
    #[arg(long, num_args = 4, required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Center tile image. A larger image contributes its central tile.
    #[arg(long)]
    pub center: PathBuf,
    /// Side of the square output; an odd multiple of the tile size.
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-fade width in pixels at each seam (0 = hard seams).
    #[arg(long, default_value_t = 0)]
    pub blend: usize,
    /// Also write every generated tile to `cells/`.
    #[arg(long)]
    pub dump_cells: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Grows the center tile to `size × size`. Writes `expanded.png` and
/// `steps.csv` (one row per generated tile, in generation order).
pub fn cmd_expand(args: &ExpandArgs) -> CliResult<()> {
    let mut models = DirectionModels::default();
    let mut seen = Vec::new();
    for path in &args.checkpoints {
        let (model, meta) = DrawModel::load(path)?;
        let dir = meta
            .direction
            .ok_or_else(|| CliError::Data(format!("{} records no direction", path.display())))?;
        if seen.contains(&dir) {
            return Err(CliError::Usage(format!(
                "two checkpoints for direction {dir}"
            )));
        }
        seen.push(dir);
        models.insert(dir, model)?;
    }
    let tile = models.get(seen[0])?.config().tile_size;

    let image = read_image(&args.center)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if h < tile || w < tile {
        return Err(CliError::Data(format!(
            "center image is {h}×{w}, smaller than the {tile}px tile"
        )));
    }
    let center = crop(&image, (h - tile) / 2, (w - tile) / 2, tile)?;

    let exp = expand(&center, &models, args.size, args.seed, args.blend)?;
    write_png(&exp.image, &args.out.join("expanded.png"))?;
    let rows: Vec<String> = exp
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "{i},{},{},{},{},{},{},{}",
                s.cell.0, s.cell.1, s.source.0, s.source.1, s.direction, s.ring, s.pass
            )
        })
        .collect();
    write_csv(
        &args.out.join("steps.csv"),
        "index,row,col,source_row,source_col,direction,ring,pass",
        &rows,
    )?;
    if args.dump_cells {
        let dir = args.out.join("cells");
        std::fs::create_dir_all(&dir)?;
        for (&(r, c), t) in exp.grid.cells() {
            write_png(t, &dir.join(format!("r{r}_c{c}.png")))?;
        }
    }
    eprintln!(
        "expanded to {0}×{0} with {1} generated tiles into {2}",
        args.size,
        exp.steps.len(),
        args.out.display()
    );
    Ok(())
}
