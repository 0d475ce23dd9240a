//! Dynamic-cropping planner.
//!
//! An input image is scaled (aspect preserved) and padded onto a canvas whose
//! sides are multiples of the tile size, then cut into non-overlapping tiles.
//! A globally resized view of the full image is appended after the local
//! tiles; the crop cap applies to the local tiles only, so the worst case is
//! `MAX_LOCAL_CROPS` tiles plus one global view.

use crate::imaging::{self, ImageBuffer, WHITE};

/// Tile side length in pixels.
pub const TILE_PX: u32 = 336;

/// Cap on the number of local tiles per image.
pub const MAX_LOCAL_CROPS: u32 = 16;

/// A tiling decision: the grid shape, the scaled image dimensions before
/// padding, and whether the global view is appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TilingPlan {
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub tile_px: u32,
    pub scaled_w: u32,
    pub scaled_h: u32,
    pub include_global: bool,
}

impl TilingPlan {
    /// Number of local tiles.
    pub fn local_crops(&self) -> u32 {
        self.grid_cols * self.grid_rows
    }

    /// Local tiles plus the global view when present.
    pub fn total_crops(&self) -> u32 {
        self.local_crops() + u32::from(self.include_global)
    }

    pub fn canvas_w(&self) -> u32 {
        self.grid_cols * self.tile_px
    }

    pub fn canvas_h(&self) -> u32 {
        self.grid_rows * self.tile_px
    }
}

/// Choose the tile grid for an image of the given dimensions.
///
/// Among all grids with `rows * cols <= max_local`, picks the one whose
/// column/row ratio is closest to the image aspect ratio; ties go to the
/// smaller grid, then to the more square one, then to fewer rows and fewer
/// columns so the choice is fully deterministic. The scale factor is the
/// largest uniform scale that fits the image inside the canvas.
pub fn plan_tiling(in_w: u32, in_h: u32, tile_px: u32, max_local: u32) -> TilingPlan {
    assert!(in_w > 0 && in_h > 0, "input dimensions must be >= 1");
    assert!(tile_px > 0 && max_local > 0);
    let aspect = in_w as f64 / in_h as f64;
    // (|ratio - aspect|, crops, |cols - rows|, rows, cols) lexicographic min
    let mut best: Option<((f64, u32, u32, u32, u32), (u32, u32))> = None;
    for rows in 1..=max_local {
        for cols in 1..=max_local / rows {
            let ratio = cols as f64 / rows as f64;
            let key = (
                (ratio - aspect).abs(),
                rows * cols,
                cols.abs_diff(rows),
                rows,
                cols,
            );
            let better = match &best {
                None => true,
                Some((k, _)) => {
                    (key.0, key.1, key.2, key.3, key.4) < (k.0, k.1, k.2, k.3, k.4)
                }
            };
            if better {
                best = Some((key, (rows, cols)));
            }
        }
    }
    let (rows, cols) = best.expect("grid enumeration is non-empty").1;
    let scale = f64::min(
        cols as f64 * tile_px as f64 / in_w as f64,
        rows as f64 * tile_px as f64 / in_h as f64,
    );
    let scaled_w = ((scale * in_w as f64).round() as u32).max(1);
    let scaled_h = ((scale * in_h as f64).round() as u32).max(1);
    TilingPlan {
        grid_cols: cols,
        grid_rows: rows,
        tile_px,
        scaled_w: scaled_w.min(cols * tile_px),
        scaled_h: scaled_h.min(rows * tile_px),
        include_global: true,
    }
}

/// Plan with the paper-scale tile size and crop cap.
pub fn plan_tiling_default(in_w: u32, in_h: u32) -> TilingPlan {
    plan_tiling(in_w, in_h, TILE_PX, MAX_LOCAL_CROPS)
}

/// Execute a plan: scale, pad with white, cut row-major tiles, and append
/// the globally resized view when the plan includes it. Every returned crop
/// is exactly `tile_px x tile_px`.
pub fn extract_crops(img: &ImageBuffer, plan: &TilingPlan) -> Vec<ImageBuffer> {
    let t = plan.tile_px;
    let scaled = imaging::resize_bilinear(img, plan.scaled_w, plan.scaled_h);
    let canvas = imaging::pad_to(&scaled, plan.canvas_w(), plan.canvas_h(), WHITE)
        .expect("canvas is at least as large as the scaled image");
    let mut crops = Vec::with_capacity(plan.total_crops() as usize);
    for tile_row in 0..plan.grid_rows {
        for tile_col in 0..plan.grid_cols {
            let mut tile = ImageBuffer::filled(t, t, [0, 0, 0]);
            for r in 0..t {
                for c in 0..t {
                    tile.set_pixel(r, c, canvas.pixel(tile_row * t + r, tile_col * t + c));
                }
            }
            crops.push(tile);
        }
    }
    if plan.include_global {
        crops.push(imaging::resize_bilinear(img, t, t));
    }
    crops
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn square_image_gets_single_tile() {
        let plan = plan_tiling_default(336, 336);
        assert_eq!((plan.grid_cols, plan.grid_rows), (1, 1));
        assert_eq!(plan.local_crops(), 1);
        assert_eq!((plan.scaled_w, plan.scaled_h), (336, 336));
    }

    #[test]
    fn two_to_one_prefers_smaller_grid_on_ratio_tie() {
        // (2,1) and (4,2) both match aspect 2.0 exactly; fewer crops wins.
        let plan = plan_tiling_default(1000, 500);
        assert_eq!((plan.grid_cols, plan.grid_rows), (2, 1));
        assert_eq!((plan.scaled_w, plan.scaled_h), (672, 336));
    }

    #[test]
    fn extreme_aspect_uses_tall_grid() {
        let plan = plan_tiling_default(336, 5000);
        assert_eq!((plan.grid_cols, plan.grid_rows), (1, 15));
        assert_eq!(plan.local_crops(), 15);
    }

    #[test]
    fn exhaustive_oracle_agrees_on_small_inputs() {
        // Brute-force re-derivation of the objective over every grid,
        // written independently of the enumeration order above.
        fn oracle(in_w: u32, in_h: u32) -> (u32, u32) {
            let aspect = in_w as f64 / in_h as f64;
            let mut grids = Vec::new();
            for rows in 1..=MAX_LOCAL_CROPS {
                for cols in 1..=MAX_LOCAL_CROPS {
                    if rows * cols <= MAX_LOCAL_CROPS {
                        grids.push((rows, cols));
                    }
                }
            }
            grids
                .into_iter()
                .min_by(|a, b| {
                    let key = |&(r, c): &(u32, u32)| {
                        (
                            (c as f64 / r as f64 - aspect).abs(),
                            r * c,
                            c.abs_diff(r),
                            r,
                            c,
                        )
                    };
                    key(a).partial_cmp(&key(b)).unwrap()
                })
                .unwrap()
        }
        let mut rng = crate::rng::derive(11, "tiling");
        for _ in 0..300 {
            let w = rng.gen_range(1..4000);
            let h = rng.gen_range(1..4000);
            let plan = plan_tiling_default(w, h);
            let (rows, cols) = oracle(w, h);
            assert_eq!((plan.grid_rows, plan.grid_cols), (rows, cols), "{w}x{h}");
        }
    }

    #[test]
    fn crop_extraction_counts() {
        let img = ImageBuffer::white(336, 336);
        let plan = plan_tiling_default(336, 336);
        assert_eq!(extract_crops(&img, &plan).len(), 2); // one tile + global

        let wide = ImageBuffer::white(672, 336);
        let plan = plan_tiling_default(672, 336);
        assert_eq!(extract_crops(&wide, &plan).len(), 3); // 2x1 grid + global
    }

    #[test]
    fn tiles_partition_the_canvas() {
        let mut rng = crate::rng::derive(12, "tiling");
        let mut data = Vec::new();
        let (w, h) = (500, 230);
        for _ in 0..w * h * 3 {
            data.push(rng.gen());
        }
        let img = ImageBuffer::new(w, h, data).unwrap();
        let plan = plan_tiling(w, h, 112, 16);
        let crops = extract_crops(&img, &plan);
        assert_eq!(crops.len() as u32, plan.total_crops());
        for crop in &crops {
            assert_eq!((crop.width(), crop.height()), (112, 112));
        }
        // Reassemble local tiles row-major and compare byte-exact against
        // the padded canvas.
        let scaled = crate::imaging::resize_bilinear(&img, plan.scaled_w, plan.scaled_h);
        let canvas =
            crate::imaging::pad_to(&scaled, plan.canvas_w(), plan.canvas_h(), WHITE).unwrap();
        let mut seen = vec![0u32; (plan.canvas_w() * plan.canvas_h()) as usize];
        for (i, crop) in crops[..plan.local_crops() as usize].iter().enumerate() {
            let tile_row = i as u32 / plan.grid_cols;
            let tile_col = i as u32 % plan.grid_cols;
            for r in 0..112 {
                for c in 0..112 {
                    let (cr, cc) = (tile_row * 112 + r, tile_col * 112 + c);
                    assert_eq!(crop.pixel(r, c), canvas.pixel(cr, cc));
                    seen[(cr * plan.canvas_w() + cc) as usize] += 1;
                }
            }
        }
        assert!(seen.iter().all(|&n| n == 1), "each canvas pixel exactly once");
    }

    #[test]
    fn fuzzed_plans_respect_caps_and_determinism() {
        let mut rng = crate::rng::derive(13, "tiling");
        for _ in 0..2000 {
            let w = rng.gen_range(1..=8000);
            let h = rng.gen_range(1..=8000);
            let plan = plan_tiling_default(w, h);
            assert!(plan.local_crops() >= 1 && plan.local_crops() <= MAX_LOCAL_CROPS);
            assert!(plan.scaled_w <= plan.canvas_w() && plan.scaled_h <= plan.canvas_h());
            assert!(plan.scaled_w >= 1 && plan.scaled_h >= 1);
            assert_eq!(plan, plan_tiling_default(w, h));
        }
    }
}
