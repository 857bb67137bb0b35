use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::grid::MosaicGrid;
use super::tile::TileRecord;
use super::{MosaicError, Result};

pub const METADATA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub version: u32,
    pub grid: GridMeta,
    pub target: TargetMeta,
    pub cells: Vec<CellMeta>,
    pub tiles: Vec<TileMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMeta {
    pub rows: u32,
    pub cols: u32,
    pub tile_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMeta {
    pub width: u32,
    pub height: u32,
    pub crop: [u32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellMeta {
    pub row: u32,
    pub col: u32,
    pub tile_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileMeta {
    pub id: usize,
    /// Path relative to the bundle root, `originals/<file>`.
    pub original: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub knowledge: String,
}

impl Metadata {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let meta: Metadata = serde_json::from_str(text)?;
        meta.validate(None)?;
        Ok(meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Maps a click in native mosaic pixels to its cell. Cells are half-open,
    /// so `x = c·s` lands in column `c`; clicks outside the mosaic give `None`.
    pub fn hit_test(&self, x: u32, y: u32) -> Option<&CellMeta> {
        let s = self.grid.tile_size;
        if s == 0 {
            return None;
        }
        let (row, col) = (y / s, x / s);
        if row >= self.grid.rows || col >= self.grid.cols {
            return None;
        }
        self.cells.get((row * self.grid.cols + col) as usize)
    }

    pub fn tile(&self, id: usize) -> Option<&TileMeta> {
        self.tiles.iter().find(|t| t.id == id)
    }

    /// Structural checks. With `root`, also checks that every original exists.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        let bad = |msg: String| Err(MosaicError::InvalidMetadata(msg));
        if self.version != METADATA_VERSION {
            return bad(format!("version: unsupported {}", self.version));
        }
        let g = &self.grid;
        if g.rows == 0 || g.cols == 0 || g.tile_size == 0 {
            return bad("grid: rows, cols and tile_size must be positive".into());
        }
        let (s, t) = (u64::from(g.tile_size), &self.target);
        if u64::from(g.rows) * s + u64::from(t.crop[1]) > u64::from(t.height)
            || u64::from(g.cols) * s + u64::from(t.crop[0]) > u64::from(t.width)
        {
            return bad("grid: does not fit inside target".into());
        }
        if self.cells.len() != g.rows as usize * g.cols as usize {
            return bad(format!(
                "cells: expected {} entries, found {}",
                g.rows as usize * g.cols as usize,
                self.cells.len()
            ));
        }
        let ids: HashSet<usize> = self.tiles.iter().map(|t| t.id).collect();
        if ids.len() != self.tiles.len() {
            return bad("tiles: duplicate id".into());
        }
        for (idx, c) in self.cells.iter().enumerate() {
            let (row, col) = (idx as u32 / g.cols, idx as u32 % g.cols);
            if (c.row, c.col) != (row, col) {
                return bad(format!("cells[{idx}]: not row-major"));
            }
            if !(c.score.is_finite() && c.score > 0.0) {
                return bad(format!("cells[{idx}].score: must be finite and positive"));
            }
            if !ids.contains(&c.tile_id) {
                return bad(format!("cells[{idx}].tile_id: unknown tile {}", c.tile_id));
            }
        }
        if let Some(root) = root {
            for t in &self.tiles {
                if !root.join(&t.original).is_file() {
                    return bad(format!("tiles[{}].original: {} missing", t.id, t.original));
                }
            }
        }
        Ok(())
    }
}

/// An emitted bundle on disk.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub root: PathBuf,
    pub mosaic_path: PathBuf,
    pub metadata_path: PathBuf,
    pub metadata: Metadata,
}

fn check_knowledge(tiles: &[TileRecord], knowledge: &BTreeMap<usize, String>) -> Result<()> {
    let ids: HashSet<usize> = tiles.iter().map(|t| t.id).collect();
    match knowledge.keys().find(|k| !ids.contains(k)) {
        Some(&bad) => Err(MosaicError::UnknownTile(bad)),
        None => Ok(()),
    }
}

fn paint(grid: &MosaicGrid, tiles: &BTreeMap<usize, &TileRecord>) -> RgbImage {
    let s = grid.tile_size;
    let mut img = RgbImage::new(grid.cols * s, grid.rows * s);
    for cell in &grid.cells {
        let thumb = &tiles[&cell.tile_id].thumb;
        let (x0, y0) = (cell.col * s, cell.row * s);
        for y in 0..s {
            for x in 0..s {
                img.put_pixel(x0 + x, y0 + y, Rgb(thumb.rgb(x, y)));
            }
        }
    }
    img
}

/// Writes `mosaic.png`, `metadata.json` and `originals/` under `out_dir`.
pub fn render_and_emit(
    grid: &MosaicGrid,
    tiles: &[TileRecord],
    knowledge: &BTreeMap<usize, String>,
    out_dir: &Path,
) -> Result<Bundle> {
    if !grid.is_assigned() {
        return Err(MosaicError::Unassigned {
            assigned: grid.cells.len(),
            expected: grid.cell_count(),
        });
    }
    check_knowledge(tiles, knowledge)?;
    let by_id: BTreeMap<usize, &TileRecord> = tiles.iter().map(|t| (t.id, t)).collect();
    let used: BTreeSet<usize> = grid.cells.iter().map(|c| c.tile_id).collect();
    if let Some(&missing) = used.iter().find(|id| !by_id.contains_key(id)) {
        return Err(MosaicError::UnknownTile(missing));
    }
    for &id in &used {
        let t = by_id[&id];
        if !t.source_path.is_file() {
            return Err(MosaicError::MissingSource {
                tile_id: id,
                path: t.source_path.clone(),
            });
        }
    }

    let originals = out_dir.join("originals");
    fs::create_dir_all(&originals)?;

    let mut taken = HashSet::new();
    let mut tile_meta = Vec::with_capacity(used.len());
    for &id in &used {
        let t = by_id[&id];
        let mut name = t.file_name();
        if !taken.insert(name.clone()) {
            name = format!("{id}_{name}");
            taken.insert(name.clone());
        }
        fs::copy(&t.source_path, originals.join(&name)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => MosaicError::MissingSource {
                tile_id: id,
                path: t.source_path.clone(),
            },
            _ => MosaicError::Io(e),
        })?;
        tile_meta.push(TileMeta {
            id,
            original: format!("originals/{name}"),
            width: t.width,
            height: t.height,
            channels: t.channels,
            knowledge: knowledge.get(&id).cloned().unwrap_or_default(),
        });
    }

    let metadata = Metadata {
        version: METADATA_VERSION,
        grid: GridMeta {
            rows: grid.rows,
            cols: grid.cols,
            tile_size: grid.tile_size,
        },
        target: TargetMeta {
            width: grid.target_width,
            height: grid.target_height,
            crop: [grid.crop_origin.0, grid.crop_origin.1],
        },
        cells: grid
            .cells
            .iter()
            .map(|c| CellMeta {
                row: c.row,
                col: c.col,
                tile_id: c.tile_id,
                score: c.score,
            })
            .collect(),
        tiles: tile_meta,
    };

    let mosaic_path = out_dir.join("mosaic.png");
    paint(grid, &by_id).save(&mosaic_path)?;
    let metadata_path = out_dir.join("metadata.json");
    fs::write(&metadata_path, metadata.to_json()?)?;

    Ok(Bundle {
        root: out_dir.to_path_buf(),
        mosaic_path,
        metadata_path,
        metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub tile_id: usize,
    pub filename: String,
    pub knowledge: String,
}

/// Standalone per-tile knowledge document for upload to an external assistant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePack {
    pub version: u32,
    pub records: Vec<KnowledgeRecord>,
}

pub fn export_knowledge(
    tiles: &[TileRecord],
    knowledge: &BTreeMap<usize, String>,
    out: &Path,
) -> Result<KnowledgePack> {
    check_knowledge(tiles, knowledge)?;
    let mut records: Vec<KnowledgeRecord> = tiles
        .iter()
        .map(|t| KnowledgeRecord {
            tile_id: t.id,
            filename: t.file_name(),
            knowledge: knowledge.get(&t.id).cloned().unwrap_or_default(),
        })
        .collect();
    records.sort_by_key(|r| r.tile_id);
    let pack = KnowledgePack {
        version: METADATA_VERSION,
        records,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(&pack)?;
    text.push('\n');
    fs::write(out, text)?;
    Ok(pack)
}
