use image::RgbImage;
use rayon::prelude::*;

use super::tile::{block_stats, BlockStats, PixelBlock, TileRecord};
use super::{MosaicError, Result};

/// Keeps the score finite when a tile matches a cell exactly.
pub const SCORE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub row: u32,
    pub col: u32,
    pub tile_id: usize,
    pub score: f64,
}

/// `rows`×`cols` grid of `tile_size` squares placed at `crop_origin` inside a
/// `target_width`×`target_height` target. `cells` is empty until composed,
/// then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicGrid {
    pub rows: u32,
    pub cols: u32,
    pub tile_size: u32,
    pub target_width: u32,
    pub target_height: u32,
    pub crop_origin: (u32, u32),
    pub cells: Vec<Cell>,
}

impl MosaicGrid {
    pub fn cell_count(&self) -> usize {
        self.rows as usize * self.cols as usize
    }

    pub fn is_assigned(&self) -> bool {
        self.cells.len() == self.cell_count()
    }

    /// Top-left pixel of cell `(row, col)` in target coordinates.
    pub fn cell_origin(&self, row: u32, col: u32) -> (u32, u32) {
        (
            self.crop_origin.0 + col * self.tile_size,
            self.crop_origin.1 + row * self.tile_size,
        )
    }

    pub fn mean_score(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().map(|c| c.score).sum::<f64>() / self.cells.len() as f64
    }
}

/// Plans a grid of `tile_size` squares inside a `width`×`height` target.
/// `None` for rows or cols means "as many as fit". The used window is
/// centered; odd leftovers put the extra pixel on the right/bottom.
pub fn plan_grid(
    width: u32,
    height: u32,
    tile_size: u32,
    rows: Option<u32>,
    cols: Option<u32>,
) -> Result<MosaicGrid> {
    if tile_size == 0 {
        return Err(MosaicError::ZeroTileSize);
    }
    let max_rows = height / tile_size;
    let max_cols = width / tile_size;
    if max_rows == 0 || max_cols == 0 {
        return Err(MosaicError::GridTooSmall {
            width,
            height,
            tile_size,
        });
    }
    let rows = rows.unwrap_or(max_rows);
    let cols = cols.unwrap_or(max_cols);
    let used_h = u64::from(rows) * u64::from(tile_size);
    if rows == 0 || used_h > u64::from(height) {
        return Err(MosaicError::Constraint {
            what: "m·s",
            limit_name: "H",
            count: rows,
            tile_size,
            used: used_h,
            limit: height,
        });
    }
    let used_w = u64::from(cols) * u64::from(tile_size);
    if cols == 0 || used_w > u64::from(width) {
        return Err(MosaicError::Constraint {
            what: "n·s",
            limit_name: "W",
            count: cols,
            tile_size,
            used: used_w,
            limit: width,
        });
    }
    let x0 = (u64::from(width) - used_w) / 2;
    let y0 = (u64::from(height) - used_h) / 2;
    Ok(MosaicGrid {
        rows,
        cols,
        tile_size,
        target_width: width,
        target_height: height,
        crop_origin: (x0 as u32, y0 as u32),
        cells: Vec::new(),
    })
}

pub fn score_stats(cell: &BlockStats, tile: &BlockStats) -> f64 {
    1.0 / (cell.distance(tile) + SCORE_EPSILON)
}

/// Inverse statistic distance between a cell block and a tile thumbnail.
pub fn attention_score(cell: &PixelBlock, tile: &TileRecord) -> f64 {
    score_stats(&block_stats(cell), &tile.stats)
}

fn best_tile(cell: &BlockStats, tiles: &[TileRecord]) -> (usize, f64) {
    let mut best = (tiles[0].id, score_stats(cell, &tiles[0].stats));
    for t in &tiles[1..] {
        let s = score_stats(cell, &t.stats);
        // strict: the earlier (lower) id wins ties
        if s > best.1 {
            best = (t.id, s);
        }
    }
    best
}

/// Assigns every cell its highest-scoring tile. Tiles may repeat.
pub fn compose(target: &RgbImage, tiles: &[TileRecord], grid: &MosaicGrid) -> Result<MosaicGrid> {
    if tiles.is_empty() {
        return Err(MosaicError::NoTiles(Default::default()));
    }
    if target.dimensions() != (grid.target_width, grid.target_height) {
        return Err(MosaicError::TargetMismatch {
            width: grid.target_width,
            height: grid.target_height,
            actual_width: target.width(),
            actual_height: target.height(),
        });
    }
    let mut sorted: Vec<TileRecord> = Vec::new();
    let tiles = if tiles.windows(2).all(|w| w[0].id < w[1].id) {
        tiles
    } else {
        sorted.extend_from_slice(tiles);
        sorted.sort_by_key(|t| t.id);
        &sorted[..]
    };
    if let Some(t) = tiles.iter().find(|t| t.thumb.size() != grid.tile_size) {
        return Err(MosaicError::ThumbMismatch {
            id: t.id,
            tile_size: grid.tile_size,
        });
    }

    let cols = grid.cols;
    let cells = (0..grid.cell_count())
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx as u32 / cols, idx as u32 % cols);
            let (x0, y0) = grid.cell_origin(row, col);
            let block = PixelBlock::from_rgb_region(target, x0, y0, grid.tile_size);
            let (tile_id, score) = best_tile(&block_stats(&block), tiles);
            Cell {
                row,
                col,
                tile_id,
                score,
            }
        })
        .collect();

    Ok(MosaicGrid {
        cells,
        ..grid.clone()
    })
}
