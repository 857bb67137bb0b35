use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, RgbImage};
use rayon::prelude::*;

use super::{MosaicError, Result};

/// Global channel means followed by the channel means of each 2×2 quadrant
/// (top-left, top-right, bottom-left, bottom-right), always over 3 channels.
pub const STAT_LEN: usize = 15;

/// Square block of 8-bit pixels, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBlock {
    size: u32,
    channels: u8,
    data: Vec<u8>,
}

impl PixelBlock {
    /// Panics unless `channels` is 1 or 3 and `data` holds `size²·channels` values.
    pub fn new(size: u32, channels: u8, data: Vec<u8>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(data.len(), (size * size) as usize * channels as usize);
        Self {
            size,
            channels,
            data,
        }
    }

    pub fn uniform(size: u32, channels: u8, value: u8) -> Self {
        Self::new(
            size,
            channels,
            vec![value; (size * size) as usize * channels as usize],
        )
    }

    /// Copies the `size`×`size` region at `(x0, y0)` out of an RGB image.
    pub fn from_rgb_region(img: &RgbImage, x0: u32, y0: u32, size: u32) -> Self {
        let mut data = Vec::with_capacity((size * size * 3) as usize);
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                data.extend_from_slice(&img.get_pixel(x, y).0);
            }
        }
        Self::new(size, 3, data)
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// RGB value at `(x, y)`; grayscale is replicated across channels.
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let idx = (y * self.size + x) as usize * self.channels as usize;
        if self.channels == 1 {
            let v = self.data[idx];
            [v, v, v]
        } else {
            [self.data[idx], self.data[idx + 1], self.data[idx + 2]]
        }
    }

    pub fn to_rgb(&self) -> PixelBlock {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        PixelBlock::new(self.size, 3, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockStats(pub [f64; STAT_LEN]);

impl BlockStats {
    pub fn distance(&self, other: &BlockStats) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

// Row/column ranges of the two halves. A 1-pixel block uses the whole block
// for both halves so no quadrant is empty.
fn halves(size: u32) -> [(u32, u32); 2] {
    let mid = size / 2;
    if mid == 0 {
        [(0, size), (0, size)]
    } else {
        [(0, mid), (mid, size)]
    }
}

pub fn block_stats(block: &PixelBlock) -> BlockStats {
    let s = block.size();
    let mut out = [0.0; STAT_LEN];
    let mut global = [0.0f64; 3];
    for y in 0..s {
        for x in 0..s {
            let px = block.rgb(x, y);
            for c in 0..3 {
                global[c] += f64::from(px[c]);
            }
        }
    }
    let n = f64::from(s * s);
    for c in 0..3 {
        out[c] = global[c] / n;
    }
    let h = halves(s);
    let mut slot = 3;
    for &(y0, y1) in &h {
        for &(x0, x1) in &h {
            let mut acc = [0.0f64; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let px = block.rgb(x, y);
                    for c in 0..3 {
                        acc[c] += f64::from(px[c]);
                    }
                }
            }
            let count = f64::from((y1 - y0) * (x1 - x0));
            for c in 0..3 {
                out[slot + c] = acc[c] / count;
            }
            slot += 3;
        }
    }
    BlockStats(out)
}

// Box-filter weights mapping `src` pixels onto `dst` pixels. Coordinates are
// scaled by `dst` so every overlap is an exact integer.
fn axis_weights(src: u32, dst: u32) -> Vec<Vec<(usize, f64)>> {
    let (src, dst) = (u64::from(src), u64::from(dst));
    (0..dst)
        .map(|i| {
            let lo = i * src;
            let hi = (i + 1) * src;
            let first = lo / dst;
            let last = (hi - 1) / dst;
            (first..=last)
                .map(|p| {
                    let overlap = hi.min((p + 1) * dst) - lo.max(p * dst);
                    (p as usize, overlap as f64 / src as f64)
                })
                .collect()
        })
        .collect()
}

/// Area-average (box filter) resample of an interleaved 8-bit buffer to a
/// `size`×`size` block.
pub fn area_downsample(
    width: u32,
    height: u32,
    channels: u8,
    pixels: &[u8],
    size: u32,
) -> PixelBlock {
    let ch = channels as usize;
    assert_eq!(pixels.len(), width as usize * height as usize * ch);
    let wx = axis_weights(width, size);
    let wy = axis_weights(height, size);
    let s = size as usize;
    let w = width as usize;

    // horizontal pass: height × size
    let mut tmp = vec![0.0f64; height as usize * s * ch];
    for y in 0..height as usize {
        let src_row = &pixels[y * w * ch..(y + 1) * w * ch];
        for (i, weights) in wx.iter().enumerate() {
            let dst = &mut tmp[(y * s + i) * ch..(y * s + i + 1) * ch];
            for &(p, wt) in weights {
                for c in 0..ch {
                    dst[c] += wt * f64::from(src_row[p * ch + c]);
                }
            }
        }
    }

    let mut data = vec![0u8; s * s * ch];
    for (j, weights) in wy.iter().enumerate() {
        for i in 0..s {
            for c in 0..ch {
                let v: f64 = weights
                    .iter()
                    .map(|&(p, wt)| wt * tmp[(p * s + i) * ch + c])
                    .sum();
                data[(j * s + i) * ch + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    PixelBlock::new(size, channels, data)
}

/// One candidate tile image.
#[derive(Debug, Clone)]
pub struct TileRecord {
    pub id: usize,
    pub source_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub thumb: PixelBlock,
    pub stats: BlockStats,
}

impl TileRecord {
    pub fn from_image(id: usize, source_path: PathBuf, img: &DynamicImage, size: u32) -> Self {
        let (width, height) = (img.width(), img.height());
        let gray = matches!(
            img.color(),
            ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16
        );
        let thumb = if gray {
            area_downsample(width, height, 1, img.to_luma8().as_raw(), size)
        } else {
            area_downsample(width, height, 3, img.to_rgb8().as_raw(), size)
        };
        Self::from_thumb(id, source_path, width, height, thumb)
    }

    pub fn from_thumb(
        id: usize,
        source_path: PathBuf,
        width: u32,
        height: u32,
        thumb: PixelBlock,
    ) -> Self {
        let stats = block_stats(&thumb);
        Self {
            id,
            source_path,
            width,
            height,
            channels: thumb.channels(),
            thumb,
            stats,
        }
    }

    pub fn file_name(&self) -> String {
        self.source_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub tiles: Vec<TileRecord>,
    pub skipped: Vec<SkippedFile>,
}

/// Loads every decodable image file directly inside `dir`. Files are visited
/// in file-name order so ids are stable across runs.
pub fn ingest_tiles(dir: &Path, size: u32) -> Result<Ingested> {
    if size == 0 {
        return Err(MosaicError::ZeroTileSize);
    }
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();

    let decoded: Vec<_> = paths
        .into_par_iter()
        .map(|path| match image::open(&path) {
            Ok(img) => Ok((path, img)),
            Err(e) => Err(SkippedFile {
                path,
                reason: e.to_string(),
            }),
        })
        .collect();

    let mut tiles = Vec::new();
    let mut skipped = Vec::new();
    for item in decoded {
        match item {
            Ok((path, img)) => {
                let id = tiles.len();
                tiles.push(TileRecord::from_image(id, path, &img, size));
            }
            Err(skip) => skipped.push(skip),
        }
    }
    if tiles.is_empty() {
        return Err(MosaicError::NoTiles(dir.to_path_buf()));
    }
    Ok(Ingested { tiles, skipped })
}

pub fn load_target(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb};

    #[test]
    fn axis_weights_partition_unity() {
        for (src, dst) in [(64, 8), (10, 3), (3, 10), (7, 7), (1, 4)] {
            let w = axis_weights(src, dst);
            assert_eq!(w.len(), dst as usize);
            for row in &w {
                let total: f64 = row.iter().map(|&(_, x)| x).sum();
                assert!((total - 1.0).abs() < 1e-12, "{src}->{dst}: {total}");
            }
        }
    }

    #[test]
    fn integer_factor_is_plain_block_mean() {
        // 4x4 -> 2x2: each output is the mean of a 2x2 block
        let px: Vec<u8> = (0..16).map(|v| v * 10).collect();
        let out = area_downsample(4, 4, 1, &px, 2);
        // top-left block: 0,10,40,50 -> 25
        assert_eq!(out.data(), &[25, 45, 105, 125]);
    }

    #[test]
    fn uniform_gray_image_keeps_value() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::from_pixel(64, 64, Luma([137]))
            .save(dir.path().join("gray.png"))
            .unwrap();
        let ing = ingest_tiles(dir.path(), 8).unwrap();
        assert_eq!(ing.tiles.len(), 1);
        let t = &ing.tiles[0];
        assert_eq!(t.channels, 1);
        assert!(t.thumb.data().iter().all(|&v| v == 137));
        for c in 0..3 {
            assert_eq!(t.stats.0[c], 137.0);
        }
    }

    #[test]
    fn corrupted_file_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::from_pixel(16, 16, Rgb([1, 2, 3]))
            .save(dir.path().join("a.png"))
            .unwrap();
        RgbImage::from_pixel(20, 10, Rgb([9, 8, 7]))
            .save(dir.path().join("b.jpg"))
            .unwrap();
        fs::write(dir.path().join("c.png"), b"not a png").unwrap();
        let ing = ingest_tiles(dir.path(), 4).unwrap();
        assert_eq!(ing.tiles.len(), 2);
        assert_eq!(ing.skipped.len(), 1);
        assert!(ing.skipped[0].path.ends_with("c.png"));
        assert_eq!(ing.tiles[0].id, 0);
        assert_eq!(ing.tiles[1].id, 1);
        assert_eq!((ing.tiles[1].width, ing.tiles[1].height), (20, 10));
    }

    #[test]
    fn empty_or_undecodable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            ingest_tiles(dir.path(), 4),
            Err(MosaicError::NoTiles(_))
        ));
        fs::write(dir.path().join("junk.png"), b"junk").unwrap();
        assert!(matches!(
            ingest_tiles(dir.path(), 4),
            Err(MosaicError::NoTiles(_))
        ));
        assert!(matches!(
            ingest_tiles(dir.path(), 0),
            Err(MosaicError::ZeroTileSize)
        ));
    }

    #[test]
    fn grayscale_stats_match_replicated_rgb() {
        let px: Vec<u8> = (0..16).map(|v| (v * 13) as u8).collect();
        let gray = PixelBlock::new(4, 1, px);
        assert_eq!(block_stats(&gray), block_stats(&gray.to_rgb()));
    }

    #[test]
    fn quadrant_stats_layout() {
        // 2x2 RGB block where each pixel is one quadrant
        let data = vec![10, 0, 0, 20, 0, 0, 30, 0, 0, 40, 0, 0];
        let st = block_stats(&PixelBlock::new(2, 3, data));
        assert_eq!(st.0[0], 25.0);
        assert_eq!([st.0[3], st.0[6], st.0[9], st.0[12]], [10.0, 20.0, 30.0, 40.0]);
        let one = block_stats(&PixelBlock::new(1, 3, vec![5, 6, 7]));
        assert_eq!(one.0, [5., 6., 7., 5., 6., 7., 5., 6., 7., 5., 6., 7., 5., 6., 7.]);
    }
}
