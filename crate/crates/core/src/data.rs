//! Image datasets: IDX files, procedurally generated voxel shapes and a
//! shuffling batcher.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::latent::NoiseSource;
use crate::render::{render_pose, Pose, Sampling, VoxelGrid, GRID};
use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
/// Number of evenly spaced azimuths each synthetic shape is rendered from.
pub const VIEWS_PER_SHAPE: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Mnist,
    Fashion,
    Synthetic,
    Mixed,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Mnist => "mnist",
            Source::Fashion => "fashion",
            Source::Synthetic => "synthetic",
            Source::Mixed => "mixed",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Source::Mnist),
            "fashion" => Ok(Source::Fashion),
            "synthetic" => Ok(Source::Synthetic),
            "mixed" => Ok(Source::Mixed),
            other => Err(Error::Dataset(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Grayscale images with pixels in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    rows: usize,
    cols: usize,
    pixels: Vec<f32>,
    source: Source,
}

impl ImageDataset {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f32>, source: Source) -> Result<Self> {
        let per = rows * cols;
        if per == 0 || !pixels.len().is_multiple_of(per) {
            return Err(Error::Dataset(format!(
                "{} pixels do not form whole {rows}×{cols} images",
                pixels.len()
            )));
        }
        if let Some(index) = pixels.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::PixelRange {
                index,
                value: pixels[index] as f64,
            });
        }
        Ok(ImageDataset {
            rows,
            cols,
            pixels,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per = self.rows * self.cols;
        &self.pixels[i * per..(i + 1) * per]
    }

    /// `[B, rows, cols]` tensor of the selected images.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(indices.len() * self.rows * self.cols);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(format!("index {i} out of range for {} images", self.len())));
            }
            data.extend(self.image(i).iter().map(|&v| T::lit(v as f64)));
        }
        Tensor::new(data, &[indices.len(), self.rows, self.cols])
    }

    /// Keeps the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        let per = self.rows * self.cols;
        self.pixels.truncate(n * per);
    }

    /// Concatenates datasets of equal image size.
    pub fn concat(parts: Vec<ImageDataset>) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Dataset("nothing to concatenate".into()))?;
        let (rows, cols) = (first.rows, first.cols);
        let source = if parts.len() == 1 { first.source } else { Source::Mixed };
        let mut pixels = Vec::new();
        for p in &parts {
            if (p.rows, p.cols) != (rows, cols) {
                return Err(Error::DimMismatch {
                    rows: p.rows,
                    cols: p.cols,
                    expected: rows,
                });
            }
            pixels.extend_from_slice(&p.pixels);
        }
        Ok(ImageDataset {
            rows,
            cols,
            pixels,
            source,
        })
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses an IDX3 unsigned-byte image file whose images must be
/// `side × side`. Bytes are scaled by 1/255.
pub fn parse_idx(bytes: &[u8], side: usize, source: Source) -> Result<ImageDataset> {
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            what: "idx header",
            expected: 16,
            actual: bytes.len(),
        });
    }
    let magic = be_u32(bytes, 0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(bytes, 4) as usize;
    let rows = be_u32(bytes, 8) as usize;
    let cols = be_u32(bytes, 12) as usize;
    if rows != side || cols != side {
        return Err(Error::DimMismatch {
            rows,
            cols,
            expected: side,
        });
    }
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "idx payload",
            expected,
            actual: bytes.len(),
        });
    }
    let pixels = bytes[16..expected].iter().map(|&b| b as f32 / 255.0).collect();
    ImageDataset::new(rows, cols, pixels, source)
}

pub fn load_idx(path: &Path, source: Source) -> Result<ImageDataset> {
    parse_idx(&fs::read(path)?, GRID, source)
}

/// Serializes images as an IDX3 file, quantizing pixels to bytes.
pub fn write_idx(path: &Path, data: &ImageDataset) -> Result<()> {
    let mut bytes = Vec::with_capacity(16 + data.pixels.len());
    for v in [IDX_IMAGE_MAGIC, data.len() as u32, data.rows as u32, data.cols as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(data.pixels.iter().map(|&p| (p * 255.0).round() as u8));
    fs::write(path, bytes)?;
    Ok(())
}

/// First file in `dir` whose name ends in `images-idx3-ubyte`.
pub fn find_idx(dir: &Path) -> Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with("images-idx3-ubyte"))
        })
        .collect();
    found.sort();
    found
        .into_iter()
        .next()
        .ok_or_else(|| Error::Dataset(format!("no *images-idx3-ubyte file in {}", dir.display())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Cube,
    Sphere,
    Cross,
    Chair,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Cube, ShapeKind::Sphere, ShapeKind::Cross, ShapeKind::Chair];
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(ShapeKind::Cube),
            "sphere" => Ok(ShapeKind::Sphere),
            "cross" => Ok(ShapeKind::Cross),
            "chair" => Ok(ShapeKind::Chair),
            other => Err(Error::Dataset(format!("unknown shape `{other}`"))),
        }
    }
}

/// Fills the box `lo..=hi` on each axis.
fn fill_box(g: &mut VoxelGrid, lo: [usize; 3], hi: [usize; 3]) {
    for d in lo[0]..=hi[0] {
        for h in lo[1]..=hi[1] {
            for w in lo[2]..=hi[2] {
                g.set(d, h, w, 1.0);
            }
        }
    }
}

/// Axis-aligned cube of the given side, centered in the grid.
pub fn centered_cube(side: usize) -> VoxelGrid {
    let lo = (GRID - side) / 2;
    let hi = lo + side - 1;
    let mut g = VoxelGrid::empty(GRID);
    fill_box(&mut g, [lo; 3], [hi; 3]);
    g
}

/// Ball of radius `r` centered on the rotation axis at height `hc`.
pub fn sphere(r: f64, hc: f64) -> VoxelGrid {
    let c = (GRID as f64 - 1.0) / 2.0;
    let mut g = VoxelGrid::empty(GRID);
    for d in 0..GRID {
        for h in 0..GRID {
            for w in 0..GRID {
                let (x, y, z) = (d as f64 - c, h as f64 - hc, w as f64 - c);
                if x * x + y * y + z * z <= r * r {
                    g.set(d, h, w, 1.0);
                }
            }
        }
    }
    g
}

/// Three orthogonal bars of thickness 2 meeting at the grid center, with
/// per-direction arm lengths `[−d, +d, −h, +h, −w, +w]`.
pub fn cross(arms: [usize; 6]) -> VoxelGrid {
    let c = GRID / 2;
    let mut g = VoxelGrid::empty(GRID);
    let (lo, hi) = (c - 1, c);
    fill_box(&mut g, [lo - arms[0], lo, lo], [hi + arms[1], hi, hi]);
    fill_box(&mut g, [lo, lo - arms[2], lo], [hi, hi + arms[3], hi]);
    fill_box(&mut g, [lo, lo, lo - arms[4]], [hi, hi, hi + arms[5]]);
    g
}

/// A seat slab on four legs with a backrest along one edge.
pub fn chair(seat: usize, leg: usize, back: usize) -> VoxelGrid {
    let c = GRID / 2;
    let half = seat / 2;
    let (lo, hi) = (c - half, c - half + seat - 1);
    // Height index grows downward in image space; legs hang below the seat.
    let seat_h = c;
    let mut g = VoxelGrid::empty(GRID);
    fill_box(&mut g, [lo, seat_h, lo], [hi, seat_h + 1, hi]);
    for (d, w) in [(lo, lo), (lo, hi - 1), (hi - 1, lo), (hi - 1, hi - 1)] {
        fill_box(&mut g, [d, seat_h + 2, w], [d + 1, seat_h + 1 + leg, w + 1]);
    }
    fill_box(&mut g, [lo, seat_h - back, lo], [lo + 1, seat_h - 1, hi]);
    g
}

/// One randomized shape of the given kind. Every shape stays within 12
/// voxels of the vertical axis so all azimuth renders keep it in frame.
pub fn random_shape(kind: ShapeKind, noise: &mut NoiseSource) -> VoxelGrid {
    match kind {
        ShapeKind::Cube => {
            let side = 6 + noise.below(5);
            let max_off = 2;
            let mut g = VoxelGrid::empty(GRID);
            let base = (GRID - side) / 2;
            let lo: [usize; 3] = std::array::from_fn(|_| base + noise.below(2 * max_off + 1) - max_off);
            fill_box(&mut g, lo, lo.map(|v| v + side - 1));
            g
        }
        ShapeKind::Sphere => {
            let r = noise.uniform(4.0, 8.0);
            let hc = 13.5 + noise.uniform(-3.0, 3.0);
            sphere(r, hc)
        }
        ShapeKind::Cross => cross(std::array::from_fn(|_| 3 + noise.below(6))),
        ShapeKind::Chair => chair(8 + 2 * noise.below(3), 4 + noise.below(4), 4 + noise.below(5)),
    }
}

/// Azimuth of view `k` of a synthetic shape: `k · 30°`.
pub fn view_azimuth(k: usize) -> f64 {
    2.0 * PI * k as f64 / VIEWS_PER_SHAPE as f64
}

/// Renders `grid` at the twelve view azimuths with nearest sampling.
pub fn render_views(grid: &VoxelGrid) -> Result<Vec<Vec<f32>>> {
    let t = grid.to_tensor::<f32>();
    (0..VIEWS_PER_SHAPE)
        .map(|k| Ok(render_pose(&t, Pose::azimuth(view_azimuth(k)), Sampling::Nearest)?.to_vec()))
        .collect()
}

/// Ground-truth grids with their rendered views.
#[derive(Clone, Debug)]
pub struct SyntheticShapeSet {
    pub grids: Vec<VoxelGrid>,
    pub kinds: Vec<ShapeKind>,
    /// Image `i` shows grid `i / 12` at azimuth `thetas[i]`.
    pub images: ImageDataset,
    pub thetas: Vec<f64>,
}

impl SyntheticShapeSet {
    pub fn from_grids(grids: Vec<VoxelGrid>, kinds: Vec<ShapeKind>) -> Result<Self> {
        let mut pixels = Vec::new();
        let mut thetas = Vec::new();
        for g in &grids {
            for (k, view) in render_views(g)?.into_iter().enumerate() {
                pixels.extend(view);
                thetas.push(view_azimuth(k));
            }
        }
        Ok(SyntheticShapeSet {
            grids,
            kinds,
            images: ImageDataset::new(GRID, GRID, pixels, Source::Synthetic)?,
            thetas,
        })
    }

    pub fn grid_of_image(&self, i: usize) -> &VoxelGrid {
        &self.grids[i / VIEWS_PER_SHAPE]
    }
}

pub fn make_synthetic(kind: ShapeKind, n_shapes: usize, noise: &mut NoiseSource) -> Result<SyntheticShapeSet> {
    if n_shapes == 0 {
        return Err(Error::Dataset("need at least one shape".into()));
    }
    let grids = (0..n_shapes).map(|_| random_shape(kind, noise)).collect();
    SyntheticShapeSet::from_grids(grids, vec![kind; n_shapes])
}

/// `n_per_kind` shapes of every kind, interleaved.
pub fn make_synthetic_mixed(n_per_kind: usize, noise: &mut NoiseSource) -> Result<SyntheticShapeSet> {
    if n_per_kind == 0 {
        return Err(Error::Dataset("need at least one shape".into()));
    }
    let mut grids = Vec::new();
    let mut kinds = Vec::new();
    for _ in 0..n_per_kind {
        for kind in ShapeKind::ALL {
            grids.push(random_shape(kind, noise));
            kinds.push(kind);
        }
    }
    SyntheticShapeSet::from_grids(grids, kinds)
}

/// Shapes per kind in the default synthetic dataset.
pub const SYNTHETIC_PER_KIND: usize = 8;

/// Loads a dataset by name. IDX sets live in `data_dir/mnist` and
/// `data_dir/fashion`; `mixed` concatenates both with the synthetic set.
pub fn load_dataset(source: Source, data_dir: &Path, seed: u64, limit: Option<usize>) -> Result<ImageDataset> {
    let idx = |name: &str, src| load_idx(&find_idx(&data_dir.join(name))?, src);
    let synthetic = || -> Result<ImageDataset> {
        let mut noise = NoiseSource::with_stream(seed, 3);
        Ok(make_synthetic_mixed(SYNTHETIC_PER_KIND, &mut noise)?.images)
    };
    let mut data = match source {
        Source::Mnist => idx("mnist", Source::Mnist)?,
        Source::Fashion => idx("fashion", Source::Fashion)?,
        Source::Synthetic => synthetic()?,
        Source::Mixed => ImageDataset::concat(vec![
            idx("mnist", Source::Mnist)?,
            idx("fashion", Source::Fashion)?,
            synthetic()?,
        ])?,
    };
    if let Some(n) = limit {
        data.truncate(n);
    }
    Ok(data)
}

/// Shuffled fixed-size batches of dataset indices. An epoch is one full
/// permutation; the short remainder is dropped.
#[derive(Clone, Debug)]
pub struct Batcher {
    n: usize,
    batch_size: usize,
    noise: NoiseSource,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, noise: NoiseSource) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size {batch_size} is too small; batchnorm needs at least 2"
            )));
        }
        if batch_size > n {
            return Err(Error::Dataset(format!("batch size {batch_size} exceeds dataset size {n}")));
        }
        Ok(Batcher {
            n,
            batch_size,
            noise,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    /// Epochs started so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Whether the next batch opens a new epoch.
    pub fn at_epoch_start(&self) -> bool {
        self.order.is_empty() || self.cursor + self.batch_size > self.n
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.at_epoch_start() {
            self.order = (0..self.n).collect();
            self.noise.shuffle(&mut self.order);
            self.cursor = 0;
            self.epoch += 1;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}
