//! Grows a texture outward from a center tile with four direction models.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::draw::DrawModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::tiles::{crop, Direction};

pub type Cell = (isize, isize);

/// Tiles keyed by `(row, col)` offset from the center cell `(0, 0)`.
#[derive(Clone, Debug)]
pub struct TileGrid<S> {
    cells: BTreeMap<Cell, Tensor<S>>,
    tile_size: usize,
    channels: usize,
}

impl<S: Scalar> TileGrid<S> {
    pub fn new(tile_size: usize, channels: usize) -> Self {
        Self {
            cells: BTreeMap::new(),
            tile_size,
            channels,
        }
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, cell: Cell) -> Option<&Tensor<S>> {
        self.cells.get(&cell)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.cells.contains_key(&cell)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&Cell, &Tensor<S>)> {
        self.cells.iter()
    }

    /// Places `tile` at `cell`. The first tile must go to `(0, 0)` and every
    /// later one must touch an occupied cell; occupied cells are never
    /// overwritten.
    pub fn insert(&mut self, cell: Cell, tile: Tensor<S>) -> Result<()> {
        let want = [self.tile_size, self.tile_size, self.channels];
        if tile.shape() != want {
            return Err(Error::shape(tile.shape(), &want));
        }
        if self.cells.contains_key(&cell) {
            return Err(Error::invalid(format!("cell {cell:?} is already filled")));
        }
        let touches = Direction::ALL.iter().any(|d| {
            let (dr, dc) = d.offset();
            self.cells.contains_key(&(cell.0 + dr, cell.1 + dc))
        });
        let ok = if self.cells.is_empty() {
            cell == (0, 0)
        } else {
            touches
        };
        if !ok {
            return Err(Error::invalid(format!(
                "cell {cell:?} would disconnect the grid"
            )));
        }
        self.cells.insert(cell, tile);
        Ok(())
    }

    /// `(row_min, row_max, col_min, col_max)` of occupied cells.
    pub fn bounds(&self) -> Option<(isize, isize, isize, isize)> {
        let mut it = self.cells.keys();
        let &(r, c) = it.next()?;
        Some(it.fold((r, r, c, c), |(r0, r1, c0, c1), &(r, c)| {
            (r0.min(r), r1.max(r), c0.min(c), c1.max(c))
        }))
    }

    pub fn is_rectangle(&self) -> bool {
        self.bounds().is_some_and(|(r0, r1, c0, c1)| {
            let area = (r1 - r0 + 1) as usize * (c1 - c0 + 1) as usize;
            area == self.cells.len()
        })
    }
}

/// One generation in an expansion: `cell` is produced from the tile at
/// `source` by the model for `direction`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub cell: Cell,
    pub source: Cell,
    pub direction: Direction,
    pub ring: usize,
    /// Steps sharing `(ring, pass)` only read tiles from earlier passes.
    pub pass: usize,
}

/// Generation order for a square grid of `side` cells (odd), growing ring by
/// ring around the center. Within a ring, cells already adjacent to a filled
/// tile are produced in row-major order; corners follow in a second pass.
/// The neighbour used is the first filled one in order N, S, E, W.
pub fn schedule(side: usize) -> Result<Vec<Step>> {
    if side == 0 || side.is_multiple_of(2) {
        return Err(Error::invalid(format!("grid side must be odd, got {side}")));
    }
    let radius = (side / 2) as isize;
    let probe = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];
    let mut filled = std::collections::BTreeSet::from([(0isize, 0isize)]);
    let mut steps = Vec::with_capacity(side * side - 1);
    for ring in 1..=radius {
        let mut pending: Vec<Cell> = (-ring..=ring)
            .flat_map(|r| (-ring..=ring).map(move |c| (r, c)))
            .filter(|&(r, c)| r.abs().max(c.abs()) == ring)
            .collect();
        let mut pass = 0;
        while !pending.is_empty() {
            let mut fresh = Vec::new();
            pending.retain(|&(r, c)| {
                let found = probe.iter().find_map(|d| {
                    let (dr, dc) = d.offset();
                    let n = (r + dr, c + dc);
                    filled.contains(&n).then_some((n, *d))
                });
                match found {
                    Some((source, side_of_cell)) => {
                        // The filled tile lies to `side_of_cell` of the empty
                        // one, so the empty cell is its opposite neighbour.
                        fresh.push(Step {
                            cell: (r, c),
                            source,
                            direction: side_of_cell.opposite(),
                            ring: ring as usize,
                            pass,
                        });
                        false
                    }
                    None => true,
                }
            });
            if fresh.is_empty() {
                return Err(Error::invalid("expansion schedule stalled"));
            }
            filled.extend(fresh.iter().map(|s| s.cell));
            steps.extend(fresh);
            pass += 1;
        }
    }
    Ok(steps)
}

/// One model per direction; models must share a configuration.
#[derive(Clone, Debug)]
pub struct DirectionModels<S> {
    models: [Option<DrawModel<S>>; 4],
}

impl<S: Scalar> Default for DirectionModels<S> {
    fn default() -> Self {
        Self {
            models: [None, None, None, None],
        }
    }
}

impl<S: Scalar> DirectionModels<S> {
    pub fn insert(&mut self, direction: Direction, model: DrawModel<S>) -> Result<()> {
        if let Some(other) = self.models.iter().flatten().next() {
            if other.config() != model.config() {
                return Err(Error::invalid(format!(
                    "model for {direction} has a different configuration"
                )));
            }
        }
        self.models[direction.index()] = Some(model);
        Ok(())
    }

    pub fn get(&self, direction: Direction) -> Result<&DrawModel<S>> {
        self.models[direction.index()]
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no model for direction {direction}")))
    }

    fn any(&self) -> Option<&DrawModel<S>> {
        self.models.iter().flatten().next()
    }
}

#[derive(Clone, Debug)]
pub struct Expansion<S> {
    pub grid: TileGrid<S>,
    pub steps: Vec<Step>,
    pub image: Tensor<S>,
}

/// Expands `center` to a `target_size`² image. `blend` is the cross-fade
/// width in pixels at every seam (0 = hard abutment).
pub fn expand<S: Scalar>(
    center: &Tensor<S>,
    models: &DirectionModels<S>,
    target_size: usize,
    seed: u64,
    blend: usize,
) -> Result<Expansion<S>> {
    let &[tile, tw, channels] = center.shape() else {
        return Err(Error::invalid(format!(
            "center must be H×W×C, got {:?}",
            center.shape()
        )));
    };
    if tile != tw {
        return Err(Error::invalid("center tile must be square"));
    }
    if target_size == 0
        || !target_size.is_multiple_of(tile)
        || (target_size / tile).is_multiple_of(2)
    {
        return Err(Error::invalid(format!(
            "target size {target_size} must be an odd multiple of the tile size {tile}"
        )));
    }
    let steps = schedule(target_size / tile)?;
    if let Some(m) = models.any() {
        if m.config().tile_shape() != [tile, tile, channels] {
            return Err(Error::shape(center.shape(), &m.config().tile_shape()));
        }
    }
    for s in &steps {
        models.get(s.direction)?;
    }

    let mut grid = TileGrid::new(tile, channels);
    grid.insert((0, 0), center.clone())?;
    for s in &steps {
        let model = models.get(s.direction)?;
        let input = grid.get(s.source).expect("schedule reads filled cells");
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(seed, &[s.cell.0 as u64, s.cell.1 as u64]));
        let out = model.generate(input, &mut rng)?;
        grid.insert(s.cell, out)?;
    }
    let image = stitch(&grid, blend)?;
    Ok(Expansion { grid, steps, image })
}

/// Places every tile of a rectangular grid edge to edge. With `blend > 0`,
/// the `blend` pixels on each side of every seam are linearly cross-faded
/// with the mirrored pixels across the seam.
pub fn stitch<S: Scalar>(grid: &TileGrid<S>, blend: usize) -> Result<Tensor<S>> {
    let (r0, r1, c0, c1) = grid
        .bounds()
        .ok_or_else(|| Error::invalid("cannot stitch an empty grid"))?;
    if !grid.is_rectangle() {
        return Err(Error::invalid("occupied cells do not form a rectangle"));
    }
    let t = grid.tile_size;
    if 2 * blend > t {
        return Err(Error::invalid(format!(
            "blend width {blend} exceeds half the tile size"
        )));
    }
    let ch = grid.channels;
    let rows = (r1 - r0 + 1) as usize;
    let cols = (c1 - c0 + 1) as usize;
    let (h, w) = (rows * t, cols * t);
    let mut out = Tensor::zeros([h, w, ch]);
    for (&(r, c), tile) in grid.cells() {
        let (oy, ox) = ((r - r0) as usize * t, (c - c0) as usize * t);
        let src = tile.data();
        let dst = out.data_mut();
        for y in 0..t {
            let from = y * t * ch;
            let to = ((oy + y) * w + ox) * ch;
            dst[to..to + t * ch].copy_from_slice(&src[from..from + t * ch]);
        }
    }
    if blend > 0 {
        let hard = out.clone();
        let at = |y: usize, x: usize, k: usize| hard.data()[(y * w + x) * ch + k];
        let weight = |d: usize| S::of(0.5 + (d as f64 + 0.5) / (2.0 * blend as f64));
        let data = out.data_mut();
        for seam in (1..cols).map(|i| i * t) {
            for y in 0..h {
                for d in 0..blend {
                    let (l, r) = (seam - 1 - d, seam + d);
                    let wt = weight(d);
                    for k in 0..ch {
                        let (a, b) = (at(y, l, k), at(y, r, k));
                        data[(y * w + l) * ch + k] = wt * a + (S::one() - wt) * b;
                        data[(y * w + r) * ch + k] = wt * b + (S::one() - wt) * a;
                    }
                }
            }
        }
        let hard = out.clone();
        let at = |y: usize, x: usize, k: usize| hard.data()[(y * w + x) * ch + k];
        let data = out.data_mut();
        for seam in (1..rows).map(|i| i * t) {
            for d in 0..blend {
                let (u, v) = (seam - 1 - d, seam + d);
                let wt = weight(d);
                for x in 0..w {
                    for k in 0..ch {
                        let (a, b) = (at(u, x, k), at(v, x, k));
                        data[(u * w + x) * ch + k] = wt * a + (S::one() - wt) * b;
                        data[(v * w + x) * ch + k] = wt * b + (S::one() - wt) * a;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Tile at grid `cell` of an image stitched from a grid with the given bounds.
pub fn crop_cell<S: Scalar>(
    image: &Tensor<S>,
    cell: Cell,
    origin: Cell,
    tile_size: usize,
) -> Result<Tensor<S>> {
    let (r, c) = (cell.0 - origin.0, cell.1 - origin.1);
    if r < 0 || c < 0 {
        return Err(Error::invalid(format!(
            "cell {cell:?} lies before origin {origin:?}"
        )));
    }
    crop(
        image,
        r as usize * tile_size,
        c as usize * tile_size,
        tile_size,
    )
}
