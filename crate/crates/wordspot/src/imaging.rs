//! Raster primitives: binarization, connected components, core boxes,
//! projection profiles and text-line hypotheses.
//!
//! All operations are pure functions of their inputs; pages can be processed
//! in parallel without shared state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit grayscale page raster, row-major. 0 is black ink, 255 white paper.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    intensities: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, intensities: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if intensities.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "intensity buffer holds {} values, expected {}",
                intensities.len(),
                width * height
            )));
        }
        Ok(Self { width, height, intensities })
    }

    /// Uniform image filled with one intensity.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.intensities[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.intensities[y * self.width + x] = value;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.intensities
    }

    /// Crop a rectangle; the box must lie within the image.
    pub fn crop(&self, bbox: &BBox) -> Result<GrayImage> {
        let (x, y, w, h) = (bbox.x as usize, bbox.y as usize, bbox.w as usize, bbox.h as usize);
        if x + w > self.width || y + h > self.height {
            return Err(Error::InvalidInput(format!(
                "crop {bbox:?} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w * h);
        for row in y..y + h {
            let start = row * self.width + x;
            out.extend_from_slice(&self.intensities[start..start + w]);
        }
        GrayImage::new(w, h, out)
    }

    /// Load an 8-bit grayscale page from a PGM (P5) or PNG file.
    pub fn load(path: &Path) -> Result<GrayImage> {
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        GrayImage::new(w as usize, h as usize, img.into_raw())
    }

    /// Write as binary PGM (P5).
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.intensities);
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Foreground mask over a page; true marks ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    foreground: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, foreground: Vec<bool>) -> Result<Self> {
        if foreground.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask holds {} values, expected {}",
                foreground.len(),
                width * height
            )));
        }
        Ok(Self { width, height, foreground })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.foreground[y * self.width + x]
    }

    pub fn mask(&self) -> &[bool] {
        &self.foreground
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground.iter().filter(|&&b| b).count()
    }

    /// Render back to grayscale: ink 0, paper 255.
    pub fn to_gray(&self) -> GrayImage {
        let px = self.foreground.iter().map(|&b| if b { 0 } else { 255 }).collect();
        GrayImage { width: self.width, height: self.height, intensities: px }
    }
}

/// Axis-aligned pixel box, top-left origin. Width and height are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        debug_assert!(w >= 1 && h >= 1);
        Self { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && self.right() >= other.right()
            && self.bottom() >= other.bottom()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    /// Rows shared with the vertical interval `[y_top, y_bottom]`, in pixels.
    pub fn vertical_overlap(&self, y_top: usize, y_bottom: usize) -> usize {
        let top = (self.y as usize).max(y_top);
        let bottom = ((self.bottom() as usize).saturating_sub(1)).min(y_bottom);
        if bottom >= top {
            bottom - top + 1
        } else {
            0
        }
    }
}

/// Maximal set of 8-connected foreground pixels.
#[derive(Debug, Clone)]
pub struct ConnectedComponent {
    pub id: usize,
    /// Tight bounding box around all member pixels.
    pub bbox: BBox,
    pub pixel_count: usize,
    /// Reduced box holding most of the pixel mass; filled by
    /// [`compute_core_boxes`], `None` before reduction.
    pub core_box: Option<BBox>,
    /// First member pixel in raster order; any flood fill from here
    /// recovers the whole component.
    seed: (u32, u32),
}

impl ConnectedComponent {
    /// Core box when computed, otherwise the tight box.
    pub fn core(&self) -> BBox {
        self.core_box.unwrap_or(self.bbox)
    }

    /// Build a component record from known geometry. The seed is taken as the
    /// box corner, so [`core_box`] is only meaningful for components produced
    /// by [`connected_components`].
    pub fn from_parts(id: usize, bbox: BBox, pixel_count: usize, core_box: Option<BBox>) -> Self {
        Self { id, bbox, pixel_count, core_box, seed: (bbox.x, bbox.y) }
    }
}

/// Per-row ink accumulation (core-box width per row), after smoothing.
#[derive(Debug, Clone)]
pub struct ProjectionProfile {
    pub values: Vec<f64>,
    pub smoothing_window: usize,
}

/// Horizontal band hypothesised to contain one text line. Bands may share
/// members: a component straddling two hypotheses joins both.
#[derive(Debug, Clone)]
pub struct LineBand {
    pub id: usize,
    pub y_top: usize,
    pub y_bottom: usize,
    pub members: Vec<usize>,
}

/// Threshold at `factor * mean(intensity)`: a pixel is ink iff its intensity
/// is at or below the threshold.
pub fn binarize(img: &GrayImage, threshold_factor: f64) -> Result<BinaryImage> {
    if !(threshold_factor > 0.0 && threshold_factor < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold factor must lie in (0, 1), got {threshold_factor}"
        )));
    }
    if img.intensities.is_empty() {
        return Err(Error::InvalidInput("cannot binarize an empty image".into()));
    }
    let sum: u64 = img.intensities.iter().map(|&v| v as u64).sum();
    let mean = sum as f64 / img.intensities.len() as f64;
    let threshold = threshold_factor * mean;
    let foreground = img.intensities.iter().map(|&v| v as f64 <= threshold).collect();
    BinaryImage::new(img.width, img.height, foreground)
}

const NEIGHBOURS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Partition the foreground into maximal 8-connected components. Ids follow
/// the raster order of each component's first pixel.
pub fn connected_components(bin: &BinaryImage) -> Vec<ConnectedComponent> {
    let (w, h) = (bin.width, bin.height);
    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    let mut stack = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if !bin.foreground[idx] || visited[idx] {
                continue;
            }
            visited[idx] = true;
            stack.push((x, y));
            let (mut min_x, mut max_x, mut min_y, mut max_y) = (x, x, y, y);
            let mut count = 0usize;
            while let Some((cx, cy)) = stack.pop() {
                count += 1;
                min_x = min_x.min(cx);
                max_x = max_x.max(cx);
                min_y = min_y.min(cy);
                max_y = max_y.max(cy);
                for (dx, dy) in NEIGHBOURS_8 {
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let nidx = ny as usize * w + nx as usize;
                    if bin.foreground[nidx] && !visited[nidx] {
                        visited[nidx] = true;
                        stack.push((nx as usize, ny as usize));
                    }
                }
            }
            components.push(ConnectedComponent {
                id: components.len(),
                bbox: BBox::new(
                    min_x as u32,
                    min_y as u32,
                    (max_x - min_x + 1) as u32,
                    (max_y - min_y + 1) as u32,
                ),
                pixel_count: count,
                core_box: None,
                seed: (x as u32, y as u32),
            });
        }
    }
    components
}

/// Reduce a component to the box reached by greedy growth from the centre of
/// its bounding box: at every step the box expands one row or column in the
/// direction gaining the most member pixels (ties resolved down, up, right,
/// left) until it holds at least `density` of the component's mass.
pub fn core_box(cc: &ConnectedComponent, bin: &BinaryImage, density: f64) -> BBox {
    debug_assert!(density > 0.0 && density <= 1.0);
    let bb = cc.bbox;
    let (bw, bh) = (bb.w as usize, bb.h as usize);

    // Member mask local to the bbox, recovered by flood fill from the seed.
    let mut mask = vec![false; bw * bh];
    let mut stack = vec![cc.seed];
    let (sx, sy) = cc.seed;
    mask[(sy - bb.y) as usize * bw + (sx - bb.x) as usize] = true;
    while let Some((cx, cy)) = stack.pop() {
        for (dx, dy) in NEIGHBOURS_8 {
            let nx = cx as i64 + dx;
            let ny = cy as i64 + dy;
            if nx < bb.x as i64
                || ny < bb.y as i64
                || nx >= bb.right() as i64
                || ny >= bb.bottom() as i64
            {
                continue;
            }
            let (nx, ny) = (nx as u32, ny as u32);
            let local = (ny - bb.y) as usize * bw + (nx - bb.x) as usize;
            if bin.get(nx as usize, ny as usize) && !mask[local] {
                mask[local] = true;
                stack.push((nx, ny));
            }
        }
    }

    // Prefix sums for O(1) rectangle counts.
    let mut prefix = vec![0u32; (bw + 1) * (bh + 1)];
    for y in 0..bh {
        for x in 0..bw {
            prefix[(y + 1) * (bw + 1) + x + 1] = prefix[y * (bw + 1) + x + 1]
                + prefix[(y + 1) * (bw + 1) + x]
                - prefix[y * (bw + 1) + x]
                + mask[y * bw + x] as u32;
        }
    }
    let rect = |x0: usize, y0: usize, x1: usize, y1: usize| -> u32 {
        // inclusive corners
        prefix[(y1 + 1) * (bw + 1) + x1 + 1] + prefix[y0 * (bw + 1) + x0]
            - prefix[y0 * (bw + 1) + x1 + 1]
            - prefix[(y1 + 1) * (bw + 1) + x0]
    };

    let target = density * cc.pixel_count as f64;
    let (mut x0, mut x1) = (bw / 2, bw / 2);
    let (mut y0, mut y1) = (bh / 2, bh / 2);
    let mut count = rect(x0, y0, x1, y1);

    while (count as f64) < target {
        // Gains in tie order: down, up, right, left.
        let mut best: Option<(usize, u32)> = None;
        let options = [
            (y1 + 1 < bh).then(|| rect(x0, y1 + 1, x1, y1 + 1)),
            (y0 > 0).then(|| rect(x0, y0 - 1, x1, y0 - 1)),
            (x1 + 1 < bw).then(|| rect(x1 + 1, y0, x1 + 1, y1)),
            (x0 > 0).then(|| rect(x0 - 1, y0, x0 - 1, y1)),
        ];
        for (dir, gain) in options.iter().enumerate() {
            if let Some(g) = gain {
                if best.map_or(true, |(_, bg)| *g > bg) {
                    best = Some((dir, *g));
                }
            }
        }
        let Some((dir, gain)) = best else {
            break; // box already fills the bbox
        };
        match dir {
            0 => y1 += 1,
            1 => y0 -= 1,
            2 => x1 += 1,
            _ => x0 -= 1,
        }
        count += gain;
    }

    BBox::new(
        bb.x + x0 as u32,
        bb.y + y0 as u32,
        (x1 - x0 + 1) as u32,
        (y1 - y0 + 1) as u32,
    )
}

/// Fill the `core_box` of every component.
pub fn compute_core_boxes(ccs: &mut [ConnectedComponent], bin: &BinaryImage, density: f64) {
    let boxes = crate::par::map_items(ccs, |cc| core_box(cc, bin, density));
    for (cc, b) in ccs.iter_mut().zip(boxes) {
        cc.core_box = Some(b);
    }
}

/// Accumulate core-box widths per row, then smooth with a centred moving
/// average (edges averaged over the in-range portion).
pub fn projection_profile(
    ccs: &[ConnectedComponent],
    height: usize,
    window: usize,
) -> Result<ProjectionProfile> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::InvalidInput(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    let mut raw = vec![0.0f64; height];
    for cc in ccs {
        let core = cc.core();
        let top = core.y as usize;
        let bottom = (core.bottom() as usize).min(height);
        for value in raw.iter_mut().take(bottom).skip(top) {
            *value += core.w as f64;
        }
    }
    let half = window / 2;
    let values = (0..height)
        .map(|r| {
            let lo = r.saturating_sub(half);
            let hi = (r + half).min(height.saturating_sub(1));
            let span = &raw[lo..=hi];
            span.iter().sum::<f64>() / span.len() as f64
        })
        .collect();
    Ok(ProjectionProfile { values, smoothing_window: window })
}

/// Cut the page into line bands at profile minima. A row plateau is a
/// separator when both neighbours are strictly larger and its value falls
/// below `min_frac` times the mean over ink-bearing rows; bands whose profile
/// is all zero are dropped.
pub fn line_hypotheses(profile: &ProjectionProfile, min_frac: f64) -> Vec<LineBand> {
    let vals = &profile.values;
    let n = vals.len();
    let positive: Vec<f64> = vals.iter().copied().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return Vec::new();
    }
    let gate = min_frac * (positive.iter().sum::<f64>() / positive.len() as f64);

    let mut separators = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && vals[j + 1] == vals[i] {
            j += 1;
        }
        let interior = i > 0 && j + 1 < n;
        if interior && vals[i - 1] > vals[i] && vals[j + 1] > vals[i] && vals[i] < gate {
            separators.push((i + j) / 2);
        }
        i = j + 1;
    }

    let mut bands = Vec::new();
    let mut start = 0usize;
    let close_band = |start: usize, end: usize, bands: &mut Vec<LineBand>| {
        if start > end {
            return;
        }
        if vals[start..=end].iter().any(|&v| v > 0.0) {
            bands.push(LineBand {
                id: bands.len(),
                y_top: start,
                y_bottom: end,
                members: Vec::new(),
            });
        }
    };
    for &sep in &separators {
        if sep > 0 {
            close_band(start, sep - 1, &mut bands);
        }
        start = sep + 1;
    }
    if start < n {
        close_band(start, n - 1, &mut bands);
    }
    bands
}

/// Attach every component to the bands its core box overlaps by at least
/// `overlap_frac` of the core height; a component matching no band joins the
/// band of maximal overlap (upper band on ties).
pub fn assign_to_lines(
    ccs: &[ConnectedComponent],
    bands: &mut [LineBand],
    overlap_frac: f64,
) {
    for cc in ccs {
        let core = cc.core();
        let need = overlap_frac * core.h as f64;
        let mut matched = false;
        let mut best: Option<(usize, usize)> = None; // (band idx, overlap)
        for (bi, band) in bands.iter().enumerate() {
            let overlap = core.vertical_overlap(band.y_top, band.y_bottom);
            if overlap as f64 >= need && overlap > 0 {
                matched = true;
            }
            if overlap > best.map_or(0, |(_, o)| o) {
                best = Some((bi, overlap));
            }
        }
        if matched {
            for band in bands.iter_mut() {
                let overlap = core.vertical_overlap(band.y_top, band.y_bottom);
                if overlap as f64 >= need && overlap > 0 {
                    band.members.push(cc.id);
                }
            }
        } else if let Some((bi, _)) = best {
            bands[bi].members.push(cc.id);
        } else if !bands.is_empty() {
            // Core box overlaps nothing at all (e.g. dropped all-zero band);
            // attach to the nearest band by centre distance, upper on ties.
            let cy = cc.core().y as f64 + cc.core().h as f64 / 2.0;
            let bi = bands
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = ((a.y_top + a.y_bottom) as f64 / 2.0 - cy).abs();
                    let db = ((b.y_top + b.y_bottom) as f64 / 2.0 - cy).abs();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            bands[bi].members.push(cc.id);
        }
    }
}
