//! Texture ingestion and centre/neighbour tile sampling.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_TILE_SIZE: usize = 28;

/// Position of a neighbour tile relative to the centre. Rows grow southward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    /// `(row, col)` offset in tile units.
    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::South => (1, 0),
            Direction::East => (0, 1),
            Direction::West => (0, -1),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "north",
            Direction::South => "south",
            Direction::East => "east",
            Direction::West => "west",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "north" | "n" => Ok(Direction::North),
            "south" | "s" => Ok(Direction::South),
            "east" | "e" => Ok(Direction::East),
            "west" | "w" => Ok(Direction::West),
            other => Err(Error::invalid(format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TextureImage<S> {
    pub pixels: Tensor<S>,
    pub path: Option<PathBuf>,
    pub id: usize,
}

impl<S: Scalar> TextureImage<S> {
    pub fn from_tensor(pixels: Tensor<S>, id: usize) -> Result<Self> {
        if pixels.shape().len() != 3 || pixels.shape()[2] != 3 {
            return Err(Error::Data(format!(
                "texture must be H×W×3, got {:?}",
                pixels.shape()
            )));
        }
        if pixels
            .data()
            .iter()
            .any(|&v| !(v >= S::zero() && v <= S::one()))
        {
            return Err(Error::Data("texture values must lie in [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            path: None,
            id,
        })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    fn check_fits(&self, tile_size: usize) -> Result<()> {
        if self.height() < 3 * tile_size || self.width() < 3 * tile_size {
            return Err(Error::Data(format!(
                "texture {}×{} is smaller than 3×{tile_size} tiles",
                self.height(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// Loads a raster image as a texture; rejects images that cannot hold a
/// 3×3 block of tiles.
pub fn load_texture<S: Scalar>(
    path: &Path,
    id: usize,
    tile_size: usize,
) -> Result<TextureImage<S>> {
    let pixels = imageio::read_rgb(path)?;
    let mut tex = TextureImage::from_tensor(pixels, id)?;
    tex.path = Some(path.to_path_buf());
    tex.check_fits(tile_size)?;
    Ok(tex)
}

/// `size×size` crop with top-left corner at `(row, col)`.
pub fn crop<S: Scalar>(
    image: &Tensor<S>,
    row: usize,
    col: usize,
    size: usize,
) -> Result<Tensor<S>> {
    let (h, w, c) = match *image.shape() {
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::invalid(format!(
                "crop needs H×W×C, got {:?}",
                image.shape()
            )))
        }
    };
    if row + size > h || col + size > w {
        return Err(Error::invalid(format!(
            "crop ({row},{col})+{size} exceeds {h}×{w}"
        )));
    }
    let src = image.data();
    let mut data = Vec::with_capacity(size * size * c);
    for r in row..row + size {
        let start = (r * w + col) * c;
        data.extend_from_slice(&src[start..start + size * c]);
    }
    Tensor::new([size, size, c], data)
}

/// A centre tile and its four abutting neighbours.
#[derive(Clone, Debug, PartialEq)]
pub struct TileQuintet<S> {
    pub center: Tensor<S>,
    /// Indexed by [`Direction::index`].
    pub neighbors: [Tensor<S>; 4],
    /// Top-left `(row, col)` of the centre tile in the source texture.
    pub origin: (usize, usize),
    pub tile_size: usize,
    pub texture_id: usize,
}

impl<S: Scalar> TileQuintet<S> {
    pub fn neighbor(&self, dir: Direction) -> &Tensor<S> {
        &self.neighbors[dir.index()]
    }

    pub fn origin_of(&self, dir: Direction) -> (usize, usize) {
        let (dr, dc) = dir.offset();
        let t = self.tile_size as isize;
        (
            (self.origin.0 as isize + dr * t) as usize,
            (self.origin.1 as isize + dc * t) as usize,
        )
    }
}

/// Cuts the quintet whose centre tile starts at `(row, col)`.
pub fn quintet_at<S: Scalar>(
    img: &TextureImage<S>,
    tile_size: usize,
    row: usize,
    col: usize,
) -> Result<TileQuintet<S>> {
    img.check_fits(tile_size)?;
    if row < tile_size
        || col < tile_size
        || row + 2 * tile_size > img.height()
        || col + 2 * tile_size > img.width()
    {
        return Err(Error::invalid(format!(
            "centre origin ({row},{col}) leaves no room for neighbours"
        )));
    }
    let mut q = TileQuintet {
        center: crop(&img.pixels, row, col, tile_size)?,
        neighbors: std::array::from_fn(|_| Tensor::zeros([1])),
        origin: (row, col),
        tile_size,
        texture_id: img.id,
    };
    for dir in Direction::ALL {
        let (r, c) = q.origin_of(dir);
        q.neighbors[dir.index()] = crop(&img.pixels, r, c, tile_size)?;
    }
    Ok(q)
}

/// Samples a centre origin uniformly over every position that leaves a
/// full tile of margin on each side.
pub fn sample_quintet<S: Scalar, R: Rng + ?Sized>(
    img: &TextureImage<S>,
    tile_size: usize,
    rng: &mut R,
) -> Result<TileQuintet<S>> {
    img.check_fits(tile_size)?;
    let row = rng.random_range(tile_size..=img.height() - 2 * tile_size);
    let col = rng.random_range(tile_size..=img.width() - 2 * tile_size);
    quintet_at(img, tile_size, row, col)
}

/// `per_texture` quintets from each texture, shuffled together.
pub fn build_epoch<S: Scalar, R: Rng + ?Sized>(
    textures: &[(TextureImage<S>, usize)],
    tile_size: usize,
    rng: &mut R,
) -> Result<Vec<TileQuintet<S>>> {
    if textures.is_empty() {
        return Err(Error::Data("no textures supplied".into()));
    }
    let mut out = Vec::with_capacity(textures.iter().map(|(_, n)| n).sum());
    for (tex, count) in textures {
        for _ in 0..*count {
            out.push(sample_quintet(tex, tile_size, rng)?);
        }
    }
    out.shuffle(rng);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureEntry {
    pub path: PathBuf,
    pub samples_per_epoch: usize,
}

/// Dataset description: `{ "tile_size": 28, "textures": [{"path", "samples_per_epoch"}] }`.
/// Relative paths resolve against the config file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(default = "default_tile_size")]
    pub tile_size: usize,
    pub textures: Vec<TextureEntry>,
}

fn default_tile_size() -> usize {
    DEFAULT_TILE_SIZE
}

impl DatasetConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Data(format!(
                "cannot read dataset config {}: {e}",
                path.display()
            ))
        })?;
        let mut cfg: DatasetConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("invalid dataset config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut cfg.textures {
            if t.path.is_relative() {
                t.path = base.join(&t.path);
            }
        }
        if cfg.textures.is_empty() {
            return Err(Error::Data("dataset config lists no textures".into()));
        }
        if cfg.tile_size == 0 {
            return Err(Error::Data("tile_size must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn load_textures<S: Scalar>(&self) -> Result<Vec<(TextureImage<S>, usize)>> {
        self.textures
            .iter()
            .enumerate()
            .map(|(i, t)| {
                Ok((
                    load_texture(&t.path, i, self.tile_size)?,
                    t.samples_per_epoch,
                ))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> TextureImage<f64> {
        let n = (h * w * 3) as f64;
        TextureImage::from_tensor(Tensor::from_fn([h, w, 3], |i| i as f64 / n), 0).unwrap()
    }

    #[test]
    fn minimal_image_has_one_origin() {
        let img = ramp(84, 84);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = sample_quintet(&img, 28, &mut rng).unwrap();
            assert_eq!(q.origin, (28, 28));
            assert_eq!(q.origin_of(Direction::North), (0, 28));
            assert_eq!(q.origin_of(Direction::South), (56, 28));
            assert_eq!(q.origin_of(Direction::West), (28, 0));
            assert_eq!(q.origin_of(Direction::East), (28, 56));
        }
    }

    #[test]
    fn rejects_small_images() {
        let img = ramp(83, 90);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            sample_quintet(&img, 28, &mut rng),
            Err(Error::Data(_))
        ));
        assert!(build_epoch::<f64, _>(&[], 28, &mut rng).is_err());
    }

    #[test]
    fn direction_round_trip() {
        for d in Direction::ALL {
            assert_eq!(d.name().parse::<Direction>().unwrap(), d);
            let (r, c) = d.offset();
            let (ro, co) = d.opposite().offset();
            assert_eq!((r + ro, c + co), (0, 0));
        }
    }
}
