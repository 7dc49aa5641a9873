use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::projection::{project_cells, ProjectedSegment, ViewAngles};
use crate::error::{Error, Result};
use crate::transport::{ConcentrationField, TransportGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    /// mm per pixel.
    pub pixel_size: f64,
    #[serde(rename = "I_thr")]
    pub i_thr: u8,
    pub fps: f64,
}

impl RenderConfig {
    pub fn rest() -> Self {
        Self {
            width: 512,
            height: 512,
            pixel_size: 0.368,
            i_thr: 250,
            fps: 10.0,
        }
    }

    pub fn hyperemia() -> Self {
        Self {
            pixel_size: 0.279,
            fps: 7.5,
            ..Self::rest()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::InvalidInput("pixel size must be positive".into()));
        }
        if self.i_thr == 0 {
            return Err(Error::InvalidInput("I_thr must lie in (0, 255]".into()));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::InvalidInput("fps must be positive".into()));
        }
        Ok(())
    }

    /// Acquisition instants `k/fps` strictly before `duration`.
    pub fn frame_times(&self, duration: f64) -> Vec<f64> {
        (0..)
            .map(|k| k as f64 / self.fps)
            .take_while(|&t| t < duration - 1e-9)
            .collect()
    }
}

/// 8-bit grayscale image, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct AngiogramFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub time: f64,
}

impl AngiogramFrame {
    pub fn blank(width: usize, height: usize, time: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![255; width * height],
            time,
        }
    }

    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        write_pgm(w, self.width, self.height, &self.pixels)
    }
}

pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    Ok(())
}

/// Read a binary PGM with maxval 255. Comments are not supported.
pub fn read_pgm<R: Read>(mut r: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Parse("expected P5 PGM with maxval 255".into()));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
    let (w, h) = (parse(&fields[1])?, parse(&fields[2])?);
    let data = buf.get(pos..pos + w * h).ok_or_else(|| Error::Parse("truncated PGM data".into()))?;
    Ok((w, h, data.to_vec()))
}

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Pixels whose centres lie within `radius` of the capsule axis.
fn capsule_pixels(seg: &ProjectedSegment, to_pixel: impl Fn([f64; 2]) -> [f64; 2], w: usize, h: usize, ps: f64) -> Vec<u32> {
    let a = to_pixel(seg.a);
    let b = to_pixel(seg.b);
    let r = seg.radius / ps;
    let lo_x = (a[0].min(b[0]) - r).floor().max(0.0) as usize;
    let hi_x = ((a[0].max(b[0]) + r).ceil().max(0.0) as usize).min(w);
    let lo_y = (a[1].min(b[1]) - r).floor().max(0.0) as usize;
    let hi_y = ((a[1].max(b[1]) + r).ceil().max(0.0) as usize).min(h);
    let mut out = Vec::new();
    for row in lo_y..hi_y {
        for col in lo_x..hi_x {
            let p = [col as f64 + 0.5, row as f64 + 0.5];
            if dist_to_segment(p, a, b) <= r {
                out.push((row * w + col) as u32);
            }
        }
    }
    out
}

/// Per-cell pixel footprints for one view, reused across frames.
#[derive(Debug, Clone)]
pub struct Rasterizer {
    pub config: RenderConfig,
    pub view: ViewAngles,
    /// Detector-plane point mapped to the image centre, mm.
    pub centre: [f64; 2],
    footprints: Vec<Vec<u32>>,
}

impl Rasterizer {
    /// Centres the projected centrelines of `grid` in the image.
    pub fn new(grid: &TransportGrid, view: ViewAngles, config: RenderConfig) -> Result<Self> {
        view.validate()?;
        config.validate()?;
        let cells = project_cells(grid, &view);
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in &cells {
            for p in [c.a, c.b] {
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        let centre = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        Ok(Self::from_cells(&cells, view, config, centre))
    }

    pub fn from_cells(cells: &[ProjectedSegment], view: ViewAngles, config: RenderConfig, centre: [f64; 2]) -> Self {
        let (w, h, ps) = (config.width, config.height, config.pixel_size);
        let to_pixel = |p: [f64; 2]| {
            [
                (p[0] - centre[0]) / ps + w as f64 / 2.0,
                (centre[1] - p[1]) / ps + h as f64 / 2.0,
            ]
        };
        let footprints = cells
            .iter()
            .map(|c| capsule_pixels(c, to_pixel, w, h, ps))
            .collect();
        Self {
            config,
            view,
            centre,
            footprints,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.footprints.len()
    }

    pub fn footprint(&self, cell: usize) -> &[u32] {
        &self.footprints[cell]
    }

    /// Image of one concentration snapshot. Each cell paints
    /// `round(255·(1 − min(c, c0)/c0))`; overlaps keep the darkest value.
    pub fn render_frame(&self, c: &[f64], c0: f64, time: f64) -> AngiogramFrame {
        let mut f = AngiogramFrame::blank(self.config.width, self.config.height, time);
        for (cell, px) in self.footprints.iter().enumerate() {
            let v = grayscale(c[cell], c0);
            if v == 255 {
                continue;
            }
            for &p in px {
                let slot = &mut f.pixels[p as usize];
                *slot = (*slot).min(v);
            }
        }
        f
    }

    /// Render every snapshot of `field`, time-stamped with `field.times`
    /// shifted by `time_offset`.
    pub fn render_field(&self, field: &ConcentrationField, time_offset: f64) -> Vec<AngiogramFrame> {
        field
            .frames
            .par_iter()
            .zip(field.times.par_iter())
            .map(|(c, &t)| self.render_frame(c, field.c0, t - time_offset))
            .collect()
    }
}

pub fn grayscale(c: f64, c0: f64) -> u8 {
    let r = (c.clamp(0.0, c0)) / c0;
    (255.0 * (1.0 - r)).round() as u8
}

/// Binary mask: 255 where the frame is strictly darker than `i_thr`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub count: usize,
}

impl Mask {
    pub fn write_pgm<W: Write>(&self, w: W) -> Result<()> {
        write_pgm(w, self.width, self.height, &self.pixels)
    }
}

pub fn threshold_count(frame: &AngiogramFrame, i_thr: u8) -> usize {
    frame.pixels.iter().filter(|&&p| p < i_thr).count()
}

pub fn threshold_mask(frame: &AngiogramFrame, i_thr: u8) -> Mask {
    let pixels: Vec<u8> = frame
        .pixels
        .iter()
        .map(|&p| if p < i_thr { 255 } else { 0 })
        .collect();
    let count = pixels.iter().filter(|&&p| p == 255).count();
    Mask {
        width: frame.width,
        height: frame.height,
        pixels,
        count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::build_grid;
    use crate::tree::{BranchSegment, Side, VesselTree};
    use proptest::prelude::*;

    fn cfg(ps: f64) -> RenderConfig {
        RenderConfig {
            width: 64,
            height: 64,
            pixel_size: ps,
            i_thr: 250,
            fps: 10.0,
        }
    }

    fn bar_grid() -> TransportGrid {
        let tree = VesselTree::from_segments(vec![BranchSegment {
            id: "S".into(),
            name: "bar".into(),
            parent: None,
            radius: 1.0,
            length: 10.0,
            proximal_point: [0.0, 0.0, 0.0],
            distal_point: [10.0, 0.0, 0.0],
            terminal: true,
            side: Side::Left,
        }])
        .unwrap();
        build_grid(&tree, 10.0).unwrap()
    }

    /// Independent count: every pixel centre checked against the capsule
    /// in millimetres.
    fn brute_force_count(w: usize, h: usize, ps: f64, centre: [f64; 2], a: [f64; 2], b: [f64; 2], r: f64) -> usize {
        let mut n = 0;
        for row in 0..h {
            for col in 0..w {
                let x = centre[0] + (col as f64 + 0.5 - w as f64 / 2.0) * ps;
                let y = centre[1] - (row as f64 + 0.5 - h as f64 / 2.0) * ps;
                let t = ((x - a[0]) * (b[0] - a[0]) + (y - a[1]) * (b[1] - a[1]))
                    / ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2));
                let t = t.clamp(0.0, 1.0);
                let d = (x - a[0] - t * (b[0] - a[0])).hypot(y - a[1] - t * (b[1] - a[1]));
                if d <= r + 1e-12 {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn saturated_bar_matches_pixel_oracle() {
        let grid = bar_grid();
        let r = Rasterizer::new(&grid, ViewAngles::new(0.0, 0.0), cfg(0.5)).unwrap();
        let f = r.render_frame(&[400.0], 400.0, 0.0);
        let black = f.pixels.iter().filter(|&&p| p == 0).count();
        let oracle = brute_force_count(64, 64, 0.5, r.centre, [0.0, 0.0], [10.0, 0.0], 1.0);
        assert_eq!(black, oracle);
        // 20 x 4 core plus two half-disc caps.
        assert!((80..=96).contains(&black), "{black}");
        assert!(f.pixels.iter().all(|&p| p == 0 || p == 255));
    }

    #[test]
    fn empty_and_half_concentration() {
        let grid = bar_grid();
        let r = Rasterizer::new(&grid, ViewAngles::new(0.0, 0.0), cfg(0.5)).unwrap();
        assert!(r.render_frame(&[0.0], 400.0, 0.0).pixels.iter().all(|&p| p == 255));
        let f = r.render_frame(&[200.0], 400.0, 0.0);
        assert!(f.pixels.iter().all(|&p| p == 128 || p == 255));
        assert_eq!(grayscale(200.0, 400.0), 128);
        assert_eq!(grayscale(1000.0, 400.0), 0);
    }

    #[test]
    fn mask_counts() {
        let mut f = AngiogramFrame::blank(8, 8, 0.0);
        assert_eq!(threshold_mask(&f, 250).count, 0);
        for p in f.pixels.iter_mut().take(5) {
            *p = 128;
        }
        assert_eq!(threshold_mask(&f, 250).count, 5);
        let dark = AngiogramFrame {
            pixels: vec![0; 64],
            ..f.clone()
        };
        assert_eq!(threshold_mask(&dark, 250).count, 64);
        f.pixels[10] = 250;
        assert_eq!(threshold_count(&f, 250), 5);
    }

    #[test]
    fn pgm_round_trip() {
        let mut f = AngiogramFrame::blank(3, 2, 0.0);
        f.pixels = vec![0, 10, 20, 30, 40, 255];
        let mut buf = Vec::new();
        f.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        let (w, h, px) = read_pgm(&buf[..]).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(px, f.pixels);
    }

    #[test]
    fn frame_grid() {
        assert_eq!(RenderConfig::rest().frame_times(8.0).len(), 80);
        assert_eq!(RenderConfig::hyperemia().frame_times(9.0 * 0.73).len(), 50);
    }

    proptest! {
        #[test]
        fn mask_count_monotone_in_threshold(px in prop::collection::vec(any::<u8>(), 64), a in 1u8..=255, b in 1u8..=255) {
            let f = AngiogramFrame { width: 8, height: 8, pixels: px, time: 0.0 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(threshold_count(&f, lo) <= threshold_count(&f, hi));
        }

        #[test]
        fn raising_concentration_never_brightens(
            c in prop::collection::vec(0.0f64..450.0, 50),
            bump in prop::collection::vec(0.0f64..200.0, 50),
        ) {
            let tree = VesselTree::reference();
            let grid = build_grid(&tree, 10.0).unwrap();
            let r = Rasterizer::new(&grid, ViewAngles::REST, RenderConfig { width: 96, height: 96, pixel_size: 2.0, i_thr: 250, fps: 10.0 }).unwrap();
            let n = grid.n_cells();
            let base: Vec<f64> = (0..n).map(|j| c[j % 50]).collect();
            let raised: Vec<f64> = (0..n).map(|j| base[j] + bump[j % 50]).collect();
            let f1 = r.render_frame(&base, 400.0, 0.0);
            let f2 = r.render_frame(&raised, 400.0, 0.0);
            prop_assert!(f1.pixels.iter().zip(&f2.pixels).all(|(a, b)| b <= a));
        }
    }
}
