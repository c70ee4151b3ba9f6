//! Frame-camera baseline: render greyscale frames of the scene, then locate
//! the ball with a threshold band, square erosion and 8-connected blob
//! labeling.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::Micros;
use crate::scene::SceneSpec;

const RNG_STREAM_SALT: u64 = 1 << 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("invalid frame parameters: {0}")]
    Invalid(String),
}

/// Per-axis affine map `out = in * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMap {
    pub scale: [f64; 2],
    pub offset: [f64; 2],
}

impl AxisMap {
    pub const IDENTITY: AxisMap = AxisMap {
        scale: [1.0, 1.0],
        offset: [0.0, 0.0],
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] * self.scale[0] + self.offset[0],
            p[1] * self.scale[1] + self.offset[1],
        ]
    }

    pub fn inverse(&self) -> AxisMap {
        AxisMap {
            scale: [1.0 / self.scale[0], 1.0 / self.scale[1]],
            offset: [
                -self.offset[0] / self.scale[0],
                -self.offset[1] / self.scale[1],
            ],
        }
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &AxisMap) -> AxisMap {
        AxisMap {
            scale: [self.scale[0] * first.scale[0], self.scale[1] * first.scale[1]],
            offset: [
                first.offset[0] * self.scale[0] + self.offset[0],
                first.offset[1] * self.scale[1] + self.offset[1],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub t: Micros,
}

impl Frame {
    pub fn new(width: usize, height: usize, t: Micros) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
            t,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn byte_len(&self) -> usize {
        self.pixels.len()
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameCameraSpec {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    /// Maps sensor pixel coordinates of the scene to frame pixels.
    pub from_scene: AxisMap,
    pub ball_intensity: u8,
    pub background_intensity: u8,
    /// Bright single-pixel noise per frame.
    pub salt_per_frame: usize,
    pub seed: u64,
}

impl Default for FrameCameraSpec {
    fn default() -> Self {
        // 128 px sensor field mapped onto the central 480x480 of a 640x480 frame
        Self {
            width: 640,
            height: 480,
            fps: 64.0,
            from_scene: AxisMap {
                scale: [3.75, 3.75],
                offset: [80.0, 0.0],
            },
            ball_intensity: 220,
            background_intensity: 20,
            salt_per_frame: 0,
            seed: 1,
        }
    }
}

impl FrameCameraSpec {
    pub fn validate(&self) -> Result<(), FrameError> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(FrameError::Invalid("fps must be > 0".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(FrameError::Invalid("frame must be non-empty".into()));
        }
        Ok(())
    }

    pub fn frame_period_us(&self) -> f64 {
        1e6 / self.fps
    }

    /// Capture time of frame `k`.
    pub fn frame_time(&self, k: u64) -> Micros {
        (k as f64 * self.frame_period_us()).round() as Micros
    }

    /// Number of frames captured in `[0, duration)`.
    pub fn frame_count(&self, duration: Micros) -> u64 {
        let mut k = (duration as f64 / self.frame_period_us()).floor() as u64;
        while self.frame_time(k) < duration {
            k += 1;
        }
        while k > 0 && self.frame_time(k - 1) >= duration {
            k -= 1;
        }
        k
    }
}

/// Renders frame `k` of the scene.
pub fn render_frame(scene: &SceneSpec, camera: &FrameCameraSpec, k: u64) -> Frame {
    let t = camera.frame_time(k);
    let mut frame = Frame::new(camera.width, camera.height, t);
    frame.pixels.fill(camera.background_intensity);

    let c = camera.from_scene.apply(scene.center_at(t.min(scene.duration)));
    let rx = scene.ball_radius * camera.from_scene.scale[0].abs();
    let ry = scene.ball_radius * camera.from_scene.scale[1].abs();
    let x0 = (c[0] - rx).floor().max(0.0) as usize;
    let y0 = (c[1] - ry).floor().max(0.0) as usize;
    let x1 = (c[0] + rx).ceil().min(camera.width as f64 - 1.0);
    let y1 = (c[1] + ry).ceil().min(camera.height as f64 - 1.0);
    if x1 >= 0.0 && y1 >= 0.0 {
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let dx = (x as f64 - c[0]) / rx;
                let dy = (y as f64 - c[1]) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    frame.set(x, y, camera.ball_intensity);
                }
            }
        }
    }

    if camera.salt_per_frame > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(camera.seed);
        rng.set_stream(RNG_STREAM_SALT + k);
        for _ in 0..camera.salt_per_frame {
            let x = rng.random_range(0..camera.width);
            let y = rng.random_range(0..camera.height);
            frame.set(x, y, 255);
        }
    }
    frame
}

/// Lazily renders all frames of a scene.
pub fn render_frames<'a>(
    scene: &'a SceneSpec,
    camera: &'a FrameCameraSpec,
) -> Result<impl Iterator<Item = Frame> + 'a, FrameError> {
    camera.validate()?;
    let n = camera.frame_count(scene.duration);
    Ok((0..n).map(move |k| render_frame(scene, camera, k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobParams {
    /// Region of interest; `None` is the whole frame.
    pub roi: Option<Roi>,
    /// Half-size of the square erosion kernel; 0 disables erosion.
    pub erode_radius: usize,
    pub threshold_low: u8,
    pub threshold_high: u8,
    pub blob_min_area: usize,
    pub blob_max_area: usize,
    pub connectivity: Connectivity,
    /// Frame pixels to millimetres.
    pub to_mm: AxisMap,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            roi: None,
            erode_radius: 1,
            threshold_low: 128,
            threshold_high: 255,
            blob_min_area: 300,
            blob_max_area: 3_000,
            connectivity: Connectivity::Eight,
            to_mm: AxisMap::IDENTITY,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.threshold_low > self.threshold_high {
            return Err(FrameError::Invalid("threshold_low > threshold_high".into()));
        }
        if self.blob_min_area > self.blob_max_area {
            return Err(FrameError::Invalid("blob_min_area > blob_max_area".into()));
        }
        Ok(())
    }
}

/// Binary mask over a rectangular region, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

fn clip_roi(frame: &Frame, roi: Option<Roi>) -> Roi {
    let r = roi.unwrap_or(Roi {
        x: 0,
        y: 0,
        width: frame.width,
        height: frame.height,
    });
    let x = r.x.min(frame.width);
    let y = r.y.min(frame.height);
    Roi {
        x,
        y,
        width: r.width.min(frame.width - x),
        height: r.height.min(frame.height - y),
    }
}

/// Pixels of the region with intensity in `[low, high]`.
pub fn threshold_band(frame: &Frame, roi: Roi, low: u8, high: u8) -> Mask {
    let mut bits = Vec::with_capacity(roi.width * roi.height);
    for y in roi.y..roi.y + roi.height {
        let row = &frame.pixels[y * frame.width + roi.x..y * frame.width + roi.x + roi.width];
        bits.extend(row.iter().map(|&v| v >= low && v <= high));
    }
    Mask {
        width: roi.width,
        height: roi.height,
        bits,
    }
}

/// Binary erosion with a `(2r+1)^2` square; pixels beyond the mask count as off.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    // the square kernel is separable: horizontal pass, then vertical
    let pass = |src: &[bool], len: usize, lines: usize, at: &dyn Fn(usize, usize) -> usize| {
        let mut dst = vec![false; src.len()];
        for line in 0..lines {
            let mut run = 0usize;
            let mut on_run = vec![0usize; len];
            for i in 0..len {
                run = if src[at(line, i)] { run + 1 } else { 0 };
                on_run[i] = run;
            }
            for i in 0..len {
                if i < radius || i + radius >= len {
                    continue;
                }
                if on_run[i + radius] > 2 * radius {
                    dst[at(line, i)] = true;
                }
            }
        }
        dst
    };
    let horizontal = pass(&mask.bits, w, h, &|row, i| row * w + i);
    let bits = pass(&horizontal, h, w, &|col, i| i * w + col);
    Mask {
        width: w,
        height: h,
        bits,
    }
}

/// Connected components of a mask: a label per pixel (0 = background) and
/// the number of components. Labels follow raster order of first pixels.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width, mask.height);
    let mut parent: Vec<u32> = vec![0];
    let mut labels = vec![0u32; w * h];

    fn find(parent: &mut [u32], mut a: u32) -> u32 {
        while parent[a as usize] != a {
            parent[a as usize] = parent[parent[a as usize] as usize];
            a = parent[a as usize];
        }
        a
    }

    for y in 0..h {
        for x in 0..w {
            if !mask.bits[y * w + x] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut look = |nx: isize, ny: isize| {
                if nx >= 0 && ny >= 0 && (nx as usize) < w {
                    let l = labels[ny as usize * w + nx as usize];
                    if l != 0 {
                        neighbours[n] = l;
                        n += 1;
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            look(xi - 1, yi);
            look(xi, yi - 1);
            if connectivity == Connectivity::Eight {
                look(xi - 1, yi - 1);
                look(xi + 1, yi - 1);
            }
            let label = if n == 0 {
                let l = parent.len() as u32;
                parent.push(l);
                l
            } else {
                let mut root = find(&mut parent, neighbours[0]);
                for &other in &neighbours[1..n] {
                    let o = find(&mut parent, other);
                    if o != root {
                        let (lo, hi) = (root.min(o), root.max(o));
                        parent[hi as usize] = lo;
                        root = lo;
                    }
                }
                root
            };
            labels[y * w + x] = label;
        }
    }

    // compact roots to 1..=count in raster order of first appearance
    let mut compact = vec![0u32; parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = find(&mut parent, *l) as usize;
        if compact[root] == 0 {
            count += 1;
            compact[root] = count;
        }
        *l = compact[root];
    }
    (labels, count as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobDetection {
    pub t: Micros,
    /// Centroid in frame pixels.
    pub px: [f64; 2],
    /// Centroid in millimetres.
    pub mm: [f64; 2],
    pub area: usize,
}

/// Threshold band, erosion, labeling and area selection inside the ROI; the
/// centroid of the largest qualifying blob, if any.
pub fn detect_blob(frame: &Frame, params: &BlobParams) -> Option<BlobDetection> {
    let roi = clip_roi(frame, params.roi);
    if roi.width == 0 || roi.height == 0 {
        return None;
    }
    let mask = threshold_band(frame, roi, params.threshold_low, params.threshold_high);
    let mask = erode(&mask, params.erode_radius);
    let (labels, count) = label_components(&mask, params.connectivity);
    if count == 0 {
        return None;
    }
    let mut area = vec![0usize; count + 1];
    let mut sx = vec![0f64; count + 1];
    let mut sy = vec![0f64; count + 1];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        area[l as usize] += 1;
        sx[l as usize] += (i % roi.width) as f64;
        sy[l as usize] += (i / roi.width) as f64;
    }
    let best = (1..=count)
        .filter(|&l| area[l] >= params.blob_min_area && area[l] <= params.blob_max_area)
        .max_by(|&a, &b| area[a].cmp(&area[b]).then(b.cmp(&a)))?;
    let px = [
        sx[best] / area[best] as f64 + roi.x as f64,
        sy[best] / area[best] as f64 + roi.y as f64,
    ];
    Some(BlobDetection {
        t: frame.t,
        px,
        mm: params.to_mm.apply(px),
        area: area[best],
    })
}

/// CSV with header `t,x_mm,y_mm,area`.
pub fn detections_to_csv(detections: &[BlobDetection]) -> String {
    let mut s = String::from("t,x_mm,y_mm,area\n");
    for d in detections {
        let _ = writeln!(s, "{},{},{},{}", d.t, d.mm[0], d.mm[1], d.area);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{NoiseSpec, PathMode, Trajectory};

    fn square_blob(frame: &mut Frame, x0: usize, y0: usize, side: usize, v: u8) {
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                frame.set(x, y, v);
            }
        }
    }

    #[test]
    fn centered_blob_centroid() {
        let mut f = Frame::new(64, 64, 0);
        square_blob(&mut f, 20, 30, 10, 200);
        let params = BlobParams {
            threshold_low: 50,
            blob_min_area: 50,
            blob_max_area: 500,
            erode_radius: 1,
            ..BlobParams::default()
        };
        let d = detect_blob(&f, &params).unwrap();
        assert!((d.px[0] - 24.5).abs() <= 0.5);
        assert!((d.px[1] - 34.5).abs() <= 0.5);
        assert_eq!(d.area, 64);
    }

    #[test]
    fn small_blob_is_rejected() {
        let mut f = Frame::new(32, 32, 0);
        f.set(3, 3, 200);
        f.set(4, 3, 200);
        let params = BlobParams {
            threshold_low: 50,
            blob_min_area: 50,
            erode_radius: 0,
            ..BlobParams::default()
        };
        assert!(detect_blob(&f, &params).is_none());
    }

    #[test]
    fn erosion_shrinks_square_by_radius() {
        let mut f = Frame::new(20, 20, 0);
        square_blob(&mut f, 5, 5, 7, 255);
        let roi = clip_roi(&f, None);
        let m = threshold_band(&f, roi, 100, 255);
        assert_eq!(erode(&m, 1).count(), 25);
        assert_eq!(erode(&m, 3).count(), 1);
        assert_eq!(erode(&m, 4).count(), 0);
    }

    #[test]
    fn roi_limits_search() {
        let mut f = Frame::new(64, 64, 0);
        square_blob(&mut f, 2, 2, 10, 200);
        square_blob(&mut f, 40, 40, 8, 200);
        let params = BlobParams {
            roi: Some(Roi {
                x: 32,
                y: 32,
                width: 32,
                height: 32,
            }),
            threshold_low: 50,
            blob_min_area: 10,
            erode_radius: 0,
            ..BlobParams::default()
        };
        let d = detect_blob(&f, &params).unwrap();
        assert_eq!(d.area, 64);
        assert!((d.px[0] - 43.5).abs() < 1e-9);
    }

    #[test]
    fn frame_counts_and_clipping() {
        let mut scene = SceneSpec::preset("stationary").unwrap();
        scene.noise = NoiseSpec::default();
        scene.duration = 1_000_000;
        let cam = FrameCameraSpec::default();
        let frames: Vec<_> = render_frames(&scene, &cam).unwrap().collect();
        assert_eq!(frames.len(), 64);
        assert!(frames.windows(2).all(|w| w[0].pixels == w[1].pixels));

        scene.trajectory = Trajectory::Linear {
            from: [-24.0, 64.0],
            to: [-24.0, 64.0],
            mode: PathMode::Once,
        };
        let f = render_frame(&scene, &cam, 0);
        let lit = f.pixels.iter().filter(|&&v| v == cam.ball_intensity).count();
        let full = render_frame(&SceneSpec { duration: 1, ..SceneSpec::preset("stationary").unwrap() }, &cam, 0)
            .pixels
            .iter()
            .filter(|&&v| v == cam.ball_intensity)
            .count();
        // center lands at frame x = -10, radius 22.5: most of the disk is cut off
        assert!(lit < full / 2);
        assert!(lit > 0);
    }

    #[test]
    fn pgm_header() {
        let f = Frame::new(3, 2, 0);
        let pgm = f.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(pgm.len(), 11 + 6);
    }

    #[test]
    fn axis_map_inverse_and_composition() {
        let m = AxisMap {
            scale: [2.0, 4.0],
            offset: [1.0, -3.0],
        };
        let p = m.inverse().apply(m.apply([5.0, 7.0]));
        assert!((p[0] - 5.0).abs() < 1e-12 && (p[1] - 7.0).abs() < 1e-12);
        let c = m.after(&m);
        assert_eq!(c.apply([1.0, 1.0]), m.apply(m.apply([1.0, 1.0])));
    }
}
