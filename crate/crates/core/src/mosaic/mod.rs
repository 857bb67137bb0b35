//! Photomosaic composition by pixel-level attention scores.
//!
//! The pipeline is `ingest_tiles` → `plan_grid` → `compose` →
//! `render_and_emit`. Each grid cell is assigned the tile whose statistic
//! vector is closest to the cell's, and the emitted bundle keeps enough
//! metadata to map every painted cell back to the original image.

mod bundle;
mod grid;
mod tile;

use std::path::PathBuf;

use thiserror::Error;

pub use bundle::{
    export_knowledge, render_and_emit, Bundle, CellMeta, GridMeta, KnowledgePack,
    KnowledgeRecord, Metadata, TargetMeta, TileMeta, METADATA_VERSION,
};
pub use grid::{attention_score, compose, plan_grid, score_stats, Cell, MosaicGrid, SCORE_EPSILON};
pub use tile::{
    area_downsample, block_stats, ingest_tiles, load_target, BlockStats, Ingested, PixelBlock,
    SkippedFile, TileRecord, STAT_LEN,
};

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("no decodable tile images in {}", .0.display())]
    NoTiles(PathBuf),
    #[error("tile size must be at least 1 pixel")]
    ZeroTileSize,
    #[error("grid too small: a {width}x{height} target cannot hold one {tile_size}px tile")]
    GridTooSmall {
        width: u32,
        height: u32,
        tile_size: u32,
    },
    #[error(
        "grid constraint violated: {what} = {count}·{tile_size} = {used} exceeds target {limit_name} = {limit}"
    )]
    Constraint {
        what: &'static str,
        limit_name: &'static str,
        count: u32,
        tile_size: u32,
        used: u64,
        limit: u32,
    },
    #[error("target is {actual_width}x{actual_height} but the grid was planned for {width}x{height}")]
    TargetMismatch {
        width: u32,
        height: u32,
        actual_width: u32,
        actual_height: u32,
    },
    #[error("tile {id} thumbnail is not {tile_size}x{tile_size}")]
    ThumbMismatch { id: usize, tile_size: u32 },
    #[error("knowledge refers to unknown tile id {0}")]
    UnknownTile(usize),
    #[error("grid is not fully assigned ({assigned} of {expected} cells)")]
    Unassigned { assigned: usize, expected: usize },
    #[error("source image for tile {tile_id} is missing: {}", .path.display())]
    MissingSource { tile_id: usize, path: PathBuf },
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MosaicError> = std::result::Result<T, E>;
