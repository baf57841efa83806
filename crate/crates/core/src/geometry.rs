//! Aspect-ratio matching and tile budgeting for dynamic high-resolution input.
//!
//! An image of `W x H` pixels is mapped onto a grid of `cols x rows` square
//! tiles of side `S`. The grid is chosen from every `(cols, rows)` pair whose
//! product lies inside the tile budget, picking the one whose ratio
//! `cols / rows` is closest to `W / H`. All ratio comparisons are done on
//! integers by cross-multiplication, so ties are exact.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Default tile side in pixels.
pub const DEFAULT_TILE_SIDE: u32 = 448;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimension { width: u32, height: u32 },
    #[error("invalid tile budget: n_min={n_min}, n_max={n_max}, tile_side={tile_side}")]
    InvalidBudget {
        n_min: u32,
        n_max: u32,
        tile_side: u32,
    },
    #[error("{what} must be at least 1")]
    ZeroCount { what: &'static str },
}

impl GeometryError {
    pub fn code(&self) -> &'static str {
        match self {
            GeometryError::ZeroDimension { .. } => "geometry.zero_dimension",
            GeometryError::InvalidBudget { .. } => "geometry.invalid_budget",
            GeometryError::ZeroCount { .. } => "geometry.zero_count",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    width: u32,
    height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::ZeroDimension { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }

    /// Square dims of the given side.
    pub fn square(side: u32) -> Result<Self, GeometryError> {
        Self::new(side, side)
    }
}

/// Allowed tile-count range `[n_min, n_max]` and the tile side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileBudget {
    n_min: u32,
    n_max: u32,
    tile_side: u32,
}

impl TileBudget {
    pub fn new(n_min: u32, n_max: u32, tile_side: u32) -> Result<Self, GeometryError> {
        if n_min == 0 || n_min > n_max || tile_side == 0 {
            return Err(GeometryError::InvalidBudget {
                n_min,
                n_max,
                tile_side,
            });
        }
        Ok(Self {
            n_min,
            n_max,
            tile_side,
        })
    }

    /// `[1, n_max]` with the default 448 px tile.
    pub fn up_to(n_max: u32) -> Result<Self, GeometryError> {
        Self::new(1, n_max, DEFAULT_TILE_SIDE)
    }

    pub fn n_min(&self) -> u32 {
        self.n_min
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn tile_side(&self) -> u32 {
        self.tile_side
    }

    /// Same tile side and lower bound, different upper bound. `n_min` is
    /// lowered when it would exceed the new `n_max`.
    pub fn with_n_max(&self, n_max: u32) -> Result<Self, GeometryError> {
        Self::new(self.n_min.min(n_max.max(1)), n_max, self.tile_side)
    }
}

/// A tile grid: `cols` tiles across, `rows` tiles down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridRatio {
    pub cols: u32,
    pub rows: u32,
}

impl GridRatio {
    pub fn new(cols: u32, rows: u32) -> Self {
        Self { cols, rows }
    }

    pub fn tiles(&self) -> u32 {
        self.cols * self.rows
    }

    pub fn ratio(&self) -> f64 {
        f64::from(self.cols) / f64::from(self.rows)
    }

    /// Compares `|W/H - cols/rows|` between two grids without division.
    ///
    /// `|W/H - c/r| = |W*r - H*c| / (H*r)`, and the common `H` cancels.
    fn cmp_distance(&self, other: &GridRatio, dims: ImageDims) -> Ordering {
        let lhs = ratio_gap(dims, *self) * u128::from(other.rows);
        let rhs = ratio_gap(dims, *other) * u128::from(self.rows);
        lhs.cmp(&rhs)
    }
}

fn ratio_gap(dims: ImageDims, grid: GridRatio) -> u128 {
    let a = u128::from(dims.width) * u128::from(grid.rows);
    let b = u128::from(dims.height) * u128::from(grid.cols);
    a.abs_diff(b)
}

/// Chosen grid plus the resize target it implies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub grid: GridRatio,
    pub resized: ImageDims,
    pub tile_count: u32,
    pub has_thumbnail: bool,
}

impl TileLayout {
    /// The single-tile layout used for video frames.
    pub fn single(tile_side: u32) -> Result<Self, GeometryError> {
        Ok(Self {
            grid: GridRatio::new(1, 1),
            resized: ImageDims::square(tile_side)?,
            tile_count: 1,
            has_thumbnail: false,
        })
    }

    pub fn tile_side(&self) -> u32 {
        self.resized.width / self.grid.cols
    }

    /// Tiles fed to the vision encoder, thumbnail included.
    pub fn total_tiles(&self) -> u32 {
        self.tile_count + u32::from(self.has_thumbnail)
    }
}

/// All grids allowed by the budget, in `(cols * rows, cols)` ascending order.
///
/// Distinct pairs with the same ratio value (1x2 and 2x4) are both kept; the
/// order matters because tie-breaking in [`select_closest_ratio`] scans it.
pub fn enumerate_target_ratios(budget: &TileBudget) -> Vec<GridRatio> {
    let n = budget.n_max;
    let mut grids: Vec<GridRatio> = (1..=n)
        .flat_map(|cols| (1..=n).map(move |rows| GridRatio::new(cols, rows)))
        .filter(|g| {
            let t = u64::from(g.cols) * u64::from(g.rows);
            t >= u64::from(budget.n_min) && t <= u64::from(budget.n_max)
        })
        .collect();
    grids.sort_by_key(|g| (g.tiles(), g.cols));
    grids
}

/// Picks the grid whose ratio is nearest to the image's.
///
/// On an exact tie the later (larger) grid wins only when the original image
/// area exceeds half of that grid's pixel area, i.e. when resizing to it would
/// not more than double the image.
pub fn select_closest_ratio(dims: ImageDims, budget: &TileBudget) -> GridRatio {
    let side = u128::from(budget.tile_side);
    let area = u128::from(dims.area());
    let mut candidates = enumerate_target_ratios(budget).into_iter();
    // a valid budget always admits (n_min, 1)
    let mut best = candidates
        .next()
        .expect("tile budget admits at least one grid");
    for grid in candidates {
        match grid.cmp_distance(&best, dims) {
            Ordering::Less => best = grid,
            Ordering::Equal => {
                if 2 * area > side * side * u128::from(grid.tiles()) {
                    best = grid;
                }
            }
            Ordering::Greater => {}
        }
    }
    best
}

pub fn plan_layout(dims: ImageDims, budget: &TileBudget, thumbnail_enabled: bool) -> TileLayout {
    let grid = select_closest_ratio(dims, budget);
    let side = budget.tile_side;
    let tile_count = grid.tiles();
    TileLayout {
        grid,
        resized: ImageDims {
            width: side * grid.cols,
            height: side * grid.rows,
        },
        tile_count,
        has_thumbnail: thumbnail_enabled && tile_count > 1,
    }
}

/// Per-image tile cap when `n_max` is shared by `image_count` images.
pub fn allocate_multi_image(n_max: u32, image_count: u32) -> Result<u32, GeometryError> {
    if n_max == 0 {
        return Err(GeometryError::ZeroCount { what: "n_max" });
    }
    if image_count == 0 {
        return Err(GeometryError::ZeroCount {
            what: "image_count",
        });
    }
    Ok((n_max / image_count).max(1))
}

/// Video frames are never tiled: each is one `S x S` tile without thumbnail.
pub fn plan_video_frames(
    frame_count: u32,
    tile_side: u32,
) -> Result<Vec<TileLayout>, GeometryError> {
    if frame_count == 0 {
        return Err(GeometryError::ZeroCount {
            what: "frame_count",
        });
    }
    let layout = TileLayout::single(tile_side)?;
    Ok(vec![layout; frame_count as usize])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget(n_min: u32, n_max: u32) -> TileBudget {
        TileBudget::new(n_min, n_max, 448).unwrap()
    }

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    #[test]
    fn enumerates_small_budgets() {
        let pairs: Vec<_> = enumerate_target_ratios(&budget(1, 2))
            .iter()
            .map(|g| (g.cols, g.rows))
            .collect();
        assert_eq!(pairs, vec![(1, 1), (1, 2), (2, 1)]);
        assert_eq!(
            enumerate_target_ratios(&budget(1, 1)),
            vec![GridRatio::new(1, 1)]
        );
    }

    #[test]
    fn enumerates_35_grids_up_to_12() {
        let grids = enumerate_target_ratios(&budget(1, 12));
        let brute = (1..=12u32)
            .flat_map(|i| (1..=12u32).map(move |j| (i, j)))
            .filter(|(i, j)| i * j <= 12)
            .count();
        assert_eq!(brute, 35);
        assert_eq!(grids.len(), 35);
        assert!(grids.contains(&GridRatio::new(1, 2)));
        assert!(grids.contains(&GridRatio::new(2, 4)));
    }

    #[test]
    fn n_min_excludes_small_products() {
        let grids = enumerate_target_ratios(&budget(4, 6));
        assert!(grids.iter().all(|g| (4..=6).contains(&g.tiles())));
        assert!(grids.contains(&GridRatio::new(4, 1)));
        assert!(!grids.contains(&GridRatio::new(1, 1)));
    }

    #[test]
    fn selects_exact_match() {
        assert_eq!(
            select_closest_ratio(dims(800, 600), &budget(1, 12)),
            GridRatio::new(4, 3)
        );
        assert_eq!(
            select_closest_ratio(dims(448, 448), &budget(1, 12)),
            GridRatio::new(1, 1)
        );
    }

    #[test]
    fn tie_keeps_small_grid_for_small_image() {
        // (1,2) and (2,4) tie at distance 0; 20000 <= 0.5 * 448^2 * 8
        assert_eq!(
            select_closest_ratio(dims(100, 200), &budget(1, 12)),
            GridRatio::new(1, 2)
        );
    }

    #[test]
    fn tie_prefers_larger_grid_for_large_image() {
        // 2*1000*2000 = 4e6 > 448^2 * 8 = 1_605_632, and (3,6) needs 448^2*18 = 3_612_672 < 4e6
        assert_eq!(
            select_closest_ratio(dims(1000, 2000), &budget(1, 18)),
            GridRatio::new(3, 6)
        );
    }

    #[test]
    fn plans_layouts() {
        let l = plan_layout(dims(800, 600), &budget(1, 12), true);
        assert_eq!(l.grid, GridRatio::new(4, 3));
        assert_eq!(l.resized, dims(1792, 1344));
        assert_eq!(l.tile_count, 12);
        assert!(l.has_thumbnail);

        let l = plan_layout(dims(448, 448), &budget(1, 12), true);
        assert_eq!(l.resized, dims(448, 448));
        assert_eq!(l.tile_count, 1);
        assert!(!l.has_thumbnail);

        let l = plan_layout(dims(2000, 500), &budget(1, 6), false);
        assert_eq!(l.grid, GridRatio::new(4, 1));
        assert_eq!(l.resized, dims(1792, 448));
        assert!(!l.has_thumbnail);
    }

    #[test]
    fn allocates_per_image_budget() {
        assert_eq!(allocate_multi_image(12, 5).unwrap(), 2);
        assert_eq!(allocate_multi_image(6, 12).unwrap(), 1);
        assert_eq!(allocate_multi_image(24, 2).unwrap(), 12);
        assert!(allocate_multi_image(0, 2).is_err());
        assert!(allocate_multi_image(3, 0).is_err());
    }

    #[test]
    fn video_frames_are_single_tile() {
        let frames = plan_video_frames(32, 448).unwrap();
        assert_eq!(frames.len(), 32);
        assert!(frames.iter().all(|f| f.grid == GridRatio::new(1, 1)
            && f.resized == dims(448, 448)
            && f.tile_count == 1
            && !f.has_thumbnail));
        assert_eq!(plan_video_frames(1, 448).unwrap().len(), 1);
        assert!(plan_video_frames(0, 448).is_err());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert_eq!(
            ImageDims::new(0, 5).unwrap_err().code(),
            "geometry.zero_dimension"
        );
        assert!(TileBudget::new(0, 4, 448).is_err());
        assert!(TileBudget::new(5, 4, 448).is_err());
        assert!(TileBudget::new(1, 4, 0).is_err());
    }

    #[test]
    fn tiny_images_are_upscaled() {
        let l = plan_layout(dims(3, 1), &budget(1, 12), true);
        assert_eq!(l.grid, GridRatio::new(3, 1));
        assert_eq!(l.resized, dims(1344, 448));
    }
}
