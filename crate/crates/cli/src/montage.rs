use texweave::Tensor;

use crate::{CliError, CliResult};

/// Lays equally sized `H×W×C` tiles out as a grid separated by white
/// `gutter`-pixel lines. `rows[r][c]` lands in grid cell `(r, c)`.
pub fn montage(rows: &[Vec<Tensor>], gutter: usize) -> CliResult<Tensor> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| CliError::Usage("montage needs at least one tile".into()))?;
    let &[h, w, c] = first.shape() else {
        return Err(CliError::Usage(format!(
            "montage tiles must be H×W×C, got {:?}",
            first.shape()
        )));
    };
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols)
        || rows.iter().flatten().any(|t| t.shape() != first.shape())
    {
        return Err(CliError::Usage(
            "montage rows must hold equally many tiles of one shape".into(),
        ));
    }
    let height = rows.len() * h + (rows.len() - 1) * gutter;
    let width = cols * w + (cols - 1) * gutter;
    let mut out = Tensor::ones([height, width, c]);
    let data = out.data_mut();
    for (r, row) in rows.iter().enumerate() {
        for (col, tile) in row.iter().enumerate() {
            let (y0, x0) = (r * (h + gutter), col * (w + gutter));
            for y in 0..h {
                let dst = ((y0 + y) * width + x0) * c;
                data[dst..dst + w * c].copy_from_slice(&tile.data()[y * w * c..(y + 1) * w * c]);
            }
        }
    }
    Ok(out)
}
