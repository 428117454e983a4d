//! Deterministic synthetic training data: articulated stick figures rendered
//! in two poses per sample pair, with exact ground-truth keypoints, plus
//! ingestion of externally prepared datasets in the same on-disk layout.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! dataset.json                  descriptor (mode, skeleton tables, canvas)
//! images/{identity}_{pose}.png
//! keypoints/{identity}_{pose}.jsonl
//! pairs.csv                     x_path,y_path,lx_path,ly_path,identity_id
//! ```
//!
//! Real datasets are ingested by converting them to this layout.

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::keypoints::{self, HeatmapMode, KeypointSet};
use crate::rng::{mix64, stream_rng};
use crate::{Error, Result};

/// Keypoint order used by the synthetic skeleton.
///
/// 0 neck (root), 1 head, 2 left elbow, 3 left hand, 4 right elbow,
/// 5 right hand, 6 left foot, 7 right foot.
pub const FIGURE_KEYPOINTS: usize = 8;

/// Left/right index pairs exchanged under a horizontal flip.
pub const FIGURE_SWAP_TABLE: [(usize, usize); 3] = [(2, 4), (3, 5), (6, 7)];

/// Skeleton edges (keypoint index pairs) used for pose masks.
pub const FIGURE_ADJACENCY: [(usize, usize); 7] =
    [(0, 1), (0, 2), (2, 3), (0, 4), (4, 5), (0, 6), (0, 7)];

/// Appearance parameters of one synthetic identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub body_rgb: [u8; 3],
    pub background_rgb: [u8; 3],
    /// Stroke radius in pixels.
    pub thickness: f32,
    /// Per-pixel background jitter amplitude (u8 steps); 0 disables texture.
    pub noise_amplitude: u8,
}

/// Full description of one figure rendering: identity appearance plus pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub identity_seed: u64,
    pub appearance: Appearance,
    /// Joint angles in radians: `[lean, head, shoulder_l, elbow_l,
    /// shoulder_r, elbow_r, leg_l, leg_r]`.
    pub angles: [f32; 8],
    /// Neck position in pixels.
    pub root: (f32, f32),
    /// `[H, W]`.
    pub canvas: [usize; 2],
}

/// One paired training sample: the same identity in two poses.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    /// Source image `[3, H, W]` in `[-1, 1]`.
    pub x: Array3<f32>,
    /// Target image `[3, H, W]` in `[-1, 1]`.
    pub y: Array3<f32>,
    /// Keypoints of `x`.
    pub lx: KeypointSet,
    /// Keypoints of `y`.
    pub ly: KeypointSet,
    pub identity_id: u32,
}

/// Machine-readable dataset metadata stored as `dataset.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub mode: HeatmapMode,
    pub n_keypoints: usize,
    /// Disc radius for person-mode heatmap rendering.
    pub heatmap_radius: f32,
    /// `[H, W]`.
    pub canvas: [usize; 2],
    pub swap_table: Vec<(usize, usize)>,
    pub adjacency: Vec<(usize, usize)>,
    pub n_identities: usize,
    pub poses_per_identity: usize,
    pub seed: u64,
    pub thickness: f32,
    pub noise_amplitude: u8,
}

/// One row of `pairs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub x_path: String,
    pub y_path: String,
    pub lx_path: String,
    pub ly_path: String,
    pub identity_id: u32,
}

// Skeleton proportions relative to min(H, W).
const TORSO: f32 = 0.22;
const HEAD_OFFSET: f32 = 0.16;
const UPPER_ARM: f32 = 0.16;
const FOREARM: f32 = 0.14;
const LEG: f32 = 0.23;
const HEAD_RADIUS: f32 = 0.08;

fn dir(theta: f32) -> (f32, f32) {
    // angle 0 points up (negative y), positive angles turn clockwise
    (theta.sin(), -theta.cos())
}

fn offset(p: (f32, f32), len: f32, theta: f32) -> (f32, f32) {
    let (dx, dy) = dir(theta);
    (p.0 + len * dx, p.1 + len * dy)
}

impl FigureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.appearance.thickness < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "stroke thickness must be >= 1 pixel, got {}",
                self.appearance.thickness
            )));
        }
        if !self.angles.iter().all(|a| a.is_finite()) {
            return Err(Error::InvalidArgument("joint angles must be finite".into()));
        }
        let [h, w] = self.canvas;
        let (rx, ry) = self.root;
        if !(rx >= 0.0 && rx < w as f32 && ry >= 0.0 && ry < h as f32) {
            return Err(Error::InvalidArgument(format!(
                "root ({rx}, {ry}) lies outside the {h}x{w} canvas"
            )));
        }
        Ok(())
    }

    /// Joint positions in keypoint order, plus the internal hip point used
    /// for drawing the legs.
    ///
    /// Positions are quantized to 1/8 pixel. Eighth-pixel coordinates are
    /// exactly representable, which keeps horizontal flips involutive and
    /// render/flip equivariance bit-exact.
    pub fn skeleton(&self) -> ([(f32, f32); FIGURE_KEYPOINTS], (f32, f32)) {
        let s = self.canvas[0].min(self.canvas[1]) as f32;
        let [lean, head, sh_l, el_l, sh_r, el_r, leg_l, leg_r] = self.angles;
        let neck = self.root;
        let head_p = offset(neck, HEAD_OFFSET * s, lean + head);
        let elbow_l = offset(neck, UPPER_ARM * s, sh_l);
        let hand_l = offset(elbow_l, FOREARM * s, sh_l + el_l);
        let elbow_r = offset(neck, UPPER_ARM * s, sh_r);
        let hand_r = offset(elbow_r, FOREARM * s, sh_r + el_r);
        let hip = offset(neck, TORSO * s, lean + std::f32::consts::PI);
        let foot_l = offset(hip, LEG * s, leg_l);
        let foot_r = offset(hip, LEG * s, leg_r);
        let snap = |(x, y): (f32, f32)| ((x * 8.0).round() / 8.0, (y * 8.0).round() / 8.0);
        (
            [
                snap(neck),
                snap(head_p),
                snap(elbow_l),
                snap(hand_l),
                snap(elbow_r),
                snap(hand_r),
                snap(foot_l),
                snap(foot_r),
            ],
            snap(hip),
        )
    }
}

fn deterministic_noise(identity_seed: u64, x: usize, y: usize, amplitude: u8) -> i16 {
    if amplitude == 0 {
        return 0;
    }
    let h = mix64(identity_seed ^ mix64((x as u64) << 32 | y as u64));
    let span = 2 * amplitude as i16 + 1;
    (h % span as u64) as i16 - amplitude as i16
}

fn dist_to_segment(p: (f32, f32), a: (f32, f32), b: (f32, f32)) -> f32 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Render a figure to u8 RGB pixels (row-major `[H][W][3]`) plus its exact
/// keypoints. The u8 image is the canonical form written to PNG; the float
/// tensor form is derived from it so that on-disk and in-memory pixels agree
/// bit-for-bit.
pub fn render_figure_u8(spec: &FigureSpec) -> Result<(Vec<u8>, KeypointSet)> {
    spec.validate()?;
    let [h, w] = spec.canvas;
    let s = h.min(w) as f32;
    let (joints, hip) = spec.skeleton();
    let margin = spec.appearance.thickness.max(HEAD_RADIUS * s);
    for (i, &(x, y)) in joints.iter().chain(std::iter::once(&hip)).enumerate() {
        if !(x >= margin - 0.5
            && x < w as f32 - margin + 0.5
            && y >= margin - 0.5
            && y < h as f32 - margin + 0.5)
        {
            return Err(Error::InvalidArgument(format!(
                "joint {i} at ({x:.1}, {y:.1}) leaves the {h}x{w} canvas (margin {margin:.1})"
            )));
        }
    }

    let app = &spec.appearance;
    let mut img = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let n = deterministic_noise(spec.identity_seed, x, y, app.noise_amplitude);
            for c in 0..3 {
                let v = (app.background_rgb[c] as i16 + n).clamp(0, 255) as u8;
                img[(y * w + x) * 3 + c] = v;
            }
        }
    }

    let t = app.thickness;
    let mut strokes: Vec<((f32, f32), (f32, f32), f32)> = vec![
        (joints[0], hip, t),          // torso
        (joints[0], joints[1], t),    // neck to head base
        (joints[0], joints[2], t),    // upper arms
        (joints[2], joints[3], t),    // forearms
        (joints[0], joints[4], t),
        (joints[4], joints[5], t),
        (hip, joints[6], t),          // legs
        (hip, joints[7], t),
    ];
    // head disc doubles as a zero-length stroke of larger radius
    strokes.push((joints[1], joints[1], HEAD_RADIUS * s));

    for &(a, b, r) in &strokes {
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil() as usize).min(w - 1);
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let y1 = ((a.1.max(b.1) + r).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                if dist_to_segment((x as f32, y as f32), a, b) <= r {
                    let base = (y * w + x) * 3;
                    img[base..base + 3].copy_from_slice(&app.body_rgb);
                }
            }
        }
    }

    let keypoints = KeypointSet::all_visible([h, w], joints.to_vec())?;
    Ok((img, keypoints))
}

/// Render a figure to a `[3, H, W]` tensor in `[-1, 1]` plus its exact
/// keypoints. The keypoints are the renderer's own joint positions — the
/// ground-truth oracle that stands in for an external keypoint extractor.
pub fn render_figure(spec: &FigureSpec) -> Result<(Array3<f32>, KeypointSet)> {
    let (u8img, keypoints) = render_figure_u8(spec)?;
    Ok((u8_to_tensor(&u8img, spec.canvas), keypoints))
}

/// u8 RGB row-major pixels to `[3, H, W]` in `[-1, 1]`.
pub fn u8_to_tensor(pixels: &[u8], canvas: [usize; 2]) -> Array3<f32> {
    let [h, w] = canvas;
    let mut out = Array3::<f32>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[[c, y, x]] = pixels[(y * w + x) * 3 + c] as f32 / 127.5 - 1.0;
            }
        }
    }
    out
}

/// `[3, H, W]` tensor in `[-1, 1]` to u8 RGB row-major pixels.
pub fn tensor_to_u8(img: &Array3<f32>) -> Vec<u8> {
    let (c, h, w) = img.dim();
    assert_eq!(c, 3, "expected an RGB tensor");
    let mut out = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = ((img[[ch, y, x]] + 1.0) * 127.5).round().clamp(0.0, 255.0);
                out[(y * w + x) * 3 + ch] = v as u8;
            }
        }
    }
    out
}

/// Mirror an image tensor around the vertical axis.
pub fn hflip_image(img: &Array3<f32>) -> Array3<f32> {
    let mut out = img.clone();
    out.invert_axis(ndarray::Axis(2));
    out.as_standard_layout().to_owned()
}

/// Flip a pair jointly: both images mirrored, both keypoint sets flipped with
/// the dataset's swap table.
pub fn flip_pair(pair: &TrainingPair, swap_table: &[(usize, usize)]) -> TrainingPair {
    TrainingPair {
        x: hflip_image(&pair.x),
        y: hflip_image(&pair.y),
        lx: pair.lx.hflip(swap_table),
        ly: pair.ly.hflip(swap_table),
        identity_id: pair.identity_id,
    }
}

/// Options for synthetic dataset generation.
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub thickness: f32,
    pub noise_amplitude: u8,
    pub heatmap_radius: f32,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            thickness: 2.0,
            noise_amplitude: 0,
            heatmap_radius: 2.0,
        }
    }
}

fn sample_identity_appearance(identity_seed: u64, opts: &GenerateOptions) -> Appearance {
    let mut rng = stream_rng(identity_seed, "appearance", 0);
    let background_rgb = [
        rng.random_range(0..=110u8),
        rng.random_range(0..=110u8),
        rng.random_range(0..=110u8),
    ];
    let body_rgb = [
        rng.random_range(145..=255u8),
        rng.random_range(145..=255u8),
        rng.random_range(145..=255u8),
    ];
    Appearance {
        body_rgb,
        background_rgb,
        thickness: opts.thickness,
        noise_amplitude: opts.noise_amplitude,
    }
}

fn sample_pose(identity_seed: u64, pose_idx: usize, canvas: [usize; 2]) -> ([f32; 8], (f32, f32)) {
    let mut rng = stream_rng(identity_seed, "pose", pose_idx as u64);
    let [h, w] = canvas;
    let (cx, cy) = (w as f32 / 2.0, h as f32 * 0.40);
    let wiggle = 0.03 * w.min(h) as f32;
    let root = (
        cx + rng.random_range(-wiggle..=wiggle),
        cy + rng.random_range(-wiggle..=wiggle),
    );
    let lean = rng.random_range(-0.20..=0.20f32);
    let head = rng.random_range(-0.25..=0.25f32);
    let sh_l = rng.random_range(-2.2..=-0.7f32);
    let el_l = rng.random_range(-0.8..=0.8f32);
    let sh_r = rng.random_range(0.7..=2.2f32);
    let el_r = rng.random_range(-0.8..=0.8f32);
    let pi = std::f32::consts::PI;
    let leg_l = pi + rng.random_range(0.10..=0.45f32);
    let leg_r = pi - rng.random_range(0.10..=0.45f32);
    ([lean, head, sh_l, el_l, sh_r, el_r, leg_l, leg_r], root)
}

fn figure_for(seed: u64, identity: usize, pose: usize, canvas: [usize; 2], opts: &GenerateOptions) -> FigureSpec {
    let identity_seed = mix64(seed ^ mix64(identity as u64));
    let appearance = sample_identity_appearance(identity_seed, opts);
    let (angles, root) = sample_pose(identity_seed, pose, canvas);
    FigureSpec {
        identity_seed,
        appearance,
        angles,
        root,
        canvas,
    }
}

fn image_name(identity: usize, pose: usize) -> String {
    format!("{identity:04}_{pose:02}")
}

/// Generate a paired dataset on disk and return its descriptor.
///
/// Emits every ordered same-identity pose pair, so the index holds
/// `n_identities * poses_per_identity * (poses_per_identity - 1)` rows.
pub fn generate_dataset(
    out_dir: &Path,
    n_identities: usize,
    poses_per_identity: usize,
    canvas: [usize; 2],
    seed: u64,
    opts: &GenerateOptions,
) -> Result<DatasetDescriptor> {
    if n_identities < 1 {
        return Err(Error::InvalidArgument(
            "need at least one identity".into(),
        ));
    }
    if poses_per_identity < 2 {
        return Err(Error::InvalidArgument(
            "need at least two poses per identity to form pairs".into(),
        ));
    }
    let images_dir = out_dir.join("images");
    let keypoints_dir = out_dir.join("keypoints");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&keypoints_dir).map_err(|e| Error::io(&keypoints_dir, e))?;

    for identity in 0..n_identities {
        for pose in 0..poses_per_identity {
            let spec = figure_for(seed, identity, pose, canvas, opts);
            let (pixels, kp) = render_figure_u8(&spec)?;
            let name = image_name(identity, pose);
            let img_path = images_dir.join(format!("{name}.png"));
            save_png(&img_path, &pixels, canvas)?;
            keypoints::write_jsonl(&keypoints_dir.join(format!("{name}.jsonl")), &[kp])?;
        }
    }

    let pairs_path = out_dir.join("pairs.csv");
    let mut writer = csv::Writer::from_path(&pairs_path).map_err(|e| {
        Error::load(&pairs_path, format!("create pair index: {e}"))
    })?;
    for identity in 0..n_identities {
        for p in 0..poses_per_identity {
            for q in 0..poses_per_identity {
                if p == q {
                    continue;
                }
                let rec = PairRecord {
                    x_path: format!("images/{}.png", image_name(identity, p)),
                    y_path: format!("images/{}.png", image_name(identity, q)),
                    lx_path: format!("keypoints/{}.jsonl", image_name(identity, p)),
                    ly_path: format!("keypoints/{}.jsonl", image_name(identity, q)),
                    identity_id: identity as u32,
                };
                writer.serialize(&rec).map_err(|e| {
                    Error::load(&pairs_path, format!("write pair index: {e}"))
                })?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(&pairs_path, e))?;

    let descriptor = DatasetDescriptor {
        mode: HeatmapMode::Person,
        n_keypoints: FIGURE_KEYPOINTS,
        heatmap_radius: opts.heatmap_radius,
        canvas,
        swap_table: FIGURE_SWAP_TABLE.to_vec(),
        adjacency: FIGURE_ADJACENCY.to_vec(),
        n_identities,
        poses_per_identity,
        seed,
        thickness: opts.thickness,
        noise_amplitude: opts.noise_amplitude,
    };
    write_descriptor(out_dir, &descriptor)?;
    Ok(descriptor)
}

fn save_png(path: &Path, pixels: &[u8], canvas: [usize; 2]) -> Result<()> {
    let [h, w] = canvas;
    let img = image::RgbImage::from_raw(w as u32, h as u32, pixels.to_vec())
        .ok_or_else(|| Error::InvalidArgument("pixel buffer does not match canvas".into()))?;
    img.save(path)
        .map_err(|e| Error::load(path, format!("write PNG: {e}")))
}

/// Load a PNG into a `[3, H, W]` tensor in `[-1, 1]`.
pub fn load_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::load(path, format!("read PNG: {e}")))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(u8_to_tensor(img.as_raw(), [h, w]))
}

/// Write a `[3, H, W]` tensor in `[-1, 1]` as PNG.
pub fn save_tensor_png(path: &Path, img: &Array3<f32>) -> Result<()> {
    let (_, h, w) = img.dim();
    save_png(path, &tensor_to_u8(img), [h, w])
}

pub fn write_descriptor(dir: &Path, descriptor: &DatasetDescriptor) -> Result<()> {
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(descriptor)
        .map_err(|e| Error::load(&path, format!("serialize descriptor: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_descriptor(dir: &Path) -> Result<DatasetDescriptor> {
    let path = dir.join("dataset.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::load(&path, format!("parse descriptor: {e}")))
}

/// Read the pair index of a dataset directory.
pub fn read_pair_index(dir: &Path) -> Result<Vec<PairRecord>> {
    let path = dir.join("pairs.csv");
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| Error::load(&path, format!("open pair index: {e}")))?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        let rec: PairRecord =
            row.map_err(|e| Error::load(&path, format!("parse pair index: {e}")))?;
        records.push(rec);
    }
    Ok(records)
}

fn load_pair_record(dir: &Path, rec: &PairRecord) -> Result<TrainingPair> {
    let load_kp = |rel: &str| -> Result<KeypointSet> {
        let path = dir.join(rel);
        let sets = keypoints::read_jsonl(&path)?;
        sets.into_iter()
            .next()
            .ok_or_else(|| Error::load(&path, "keypoint file is empty"))
    };
    Ok(TrainingPair {
        x: load_png(&dir.join(&rec.x_path))?,
        y: load_png(&dir.join(&rec.y_path))?,
        lx: load_kp(&rec.lx_path)?,
        ly: load_kp(&rec.ly_path)?,
        identity_id: rec.identity_id,
    })
}

/// Streaming loader over the pair index.
///
/// With `augment`, each pair is flipped jointly (images mirrored, keypoints
/// swapped) with probability 0.5, decided by the given seed; two iterations
/// with the same seed replay the same augmented sequence.
pub struct PairStream {
    dir: PathBuf,
    records: std::vec::IntoIter<PairRecord>,
    swap_table: Vec<(usize, usize)>,
    augment: bool,
    rng: rand_chacha::ChaCha8Rng,
}

impl PairStream {
    pub fn open(dir: &Path, augment: bool, seed: u64) -> Result<Self> {
        let descriptor = read_descriptor(dir)?;
        let records = read_pair_index(dir)?;
        Ok(PairStream {
            dir: dir.to_path_buf(),
            records: records.into_iter(),
            swap_table: descriptor.swap_table,
            augment,
            rng: stream_rng(seed, "load-augment", 0),
        })
    }
}

impl Iterator for PairStream {
    type Item = Result<TrainingPair>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        let mut pair = match load_pair_record(&self.dir, &rec) {
            Ok(p) => p,
            Err(e) => return Some(Err(e)),
        };
        if self.augment && self.rng.random_bool(0.5) {
            pair = flip_pair(&pair, &self.swap_table);
        }
        Some(Ok(pair))
    }
}

/// Load the stream into memory without augmentation.
pub fn load_pairs(dir: &Path, augment: bool, seed: u64) -> Result<Vec<TrainingPair>> {
    PairStream::open(dir, augment, seed)?.collect()
}

/// Whole dataset held in memory, as the trainer consumes it.
pub struct LoadedDataset {
    pub descriptor: DatasetDescriptor,
    pub pairs: Vec<TrainingPair>,
}

impl LoadedDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let descriptor = read_descriptor(dir)?;
        let pairs = load_pairs(dir, false, 0)?;
        Ok(LoadedDataset { descriptor, pairs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec() -> FigureSpec {
        FigureSpec {
            identity_seed: 7,
            appearance: Appearance {
                body_rgb: [200, 180, 160],
                background_rgb: [30, 60, 90],
                thickness: 2.0,
                noise_amplitude: 0,
            },
            angles: [0.0, 0.0, -1.2, 0.3, 1.2, -0.3, 3.4, 2.9],
            root: (32.0, 27.0),
            canvas: [64, 64],
        }
    }

    #[test]
    fn render_is_deterministic() {
        let spec = toy_spec();
        let (a, ka) = render_figure(&spec).unwrap();
        let (b, kb) = render_figure(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ka, kb);
    }

    #[test]
    fn neck_keypoint_equals_root() {
        let mut spec = toy_spec();
        spec.angles = [0.0; 8];
        spec.angles[6] = std::f32::consts::PI + 0.3;
        spec.angles[7] = std::f32::consts::PI - 0.3;
        let (_, kp) = render_figure(&spec).unwrap();
        assert_eq!(kp.points[0], spec.root);
    }

    #[test]
    fn keypoints_land_on_body_pixels() {
        let spec = toy_spec();
        let (pixels, kp) = render_figure_u8(&spec).unwrap();
        let [_, w] = spec.canvas;
        for (i, &(x, y)) in kp.points.iter().enumerate() {
            let (xi, yi) = (x.round() as usize, y.round() as usize);
            let base = (yi * w + xi) * 3;
            let px = [pixels[base], pixels[base + 1], pixels[base + 2]];
            assert_ne!(
                px, spec.appearance.background_rgb,
                "keypoint {i} at ({x}, {y}) sits on background"
            );
        }
    }

    #[test]
    fn out_of_canvas_joints_rejected() {
        let mut spec = toy_spec();
        spec.root = (2.0, 2.0); // head and limbs leave the canvas
        assert!(render_figure(&spec).is_err());
    }

    #[test]
    fn pair_count_and_identity_partition() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 10, 3, [64, 64], 1, &GenerateOptions::default()).unwrap();
        let index = read_pair_index(dir.path()).unwrap();
        assert_eq!(index.len(), 10 * 3 * 2);
        for rec in &index {
            // identity encoded in the file name; pairs never cross identities
            let xid = &rec.x_path[7..11];
            let yid = &rec.y_path[7..11];
            assert_eq!(xid, yid);
            assert_eq!(xid.parse::<u32>().unwrap(), rec.identity_id);
        }
    }

    #[test]
    fn two_pose_dataset_yields_mutually_reversed_pairs() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 1, 2, [64, 64], 3, &GenerateOptions::default()).unwrap();
        let index = read_pair_index(dir.path()).unwrap();
        assert_eq!(index.len(), 2);
        assert_eq!(index[0].x_path, index[1].y_path);
        assert_eq!(index[0].y_path, index[1].x_path);
    }

    #[test]
    fn same_seed_reproduces_pixels() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(d1.path(), 2, 2, [48, 48], 9, &GenerateOptions::default()).unwrap();
        generate_dataset(d2.path(), 2, 2, [48, 48], 9, &GenerateOptions::default()).unwrap();
        let p1 = load_pairs(d1.path(), false, 0).unwrap();
        let p2 = load_pairs(d2.path(), false, 0).unwrap();
        assert_eq!(p1.len(), p2.len());
        for (a, b) in p1.iter().zip(&p2) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.y, b.y);
            assert_eq!(a.lx, b.lx);
            assert_eq!(a.ly, b.ly);
        }
    }

    #[test]
    fn loaded_pairs_match_render_oracle_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let opts = GenerateOptions::default();
        generate_dataset(dir.path(), 2, 2, [64, 64], 5, &opts).unwrap();
        let pairs = load_pairs(dir.path(), false, 0).unwrap();
        // re-render identity 0 poses 0/1 and compare with the loaded pair
        let spec_x = figure_for(5, 0, 0, [64, 64], &opts);
        let spec_y = figure_for(5, 0, 1, [64, 64], &opts);
        let (img_x, kp_x) = render_figure(&spec_x).unwrap();
        let (img_y, kp_y) = render_figure(&spec_y).unwrap();
        let pair = &pairs[0];
        assert_eq!(pair.x, img_x);
        assert_eq!(pair.y, img_y);
        assert_eq!(pair.lx, kp_x);
        assert_eq!(pair.ly, kp_y);
    }

    #[test]
    fn forced_flip_mirrors_images_and_keypoints_jointly() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 1, 2, [64, 64], 2, &GenerateOptions::default()).unwrap();
        let plain = load_pairs(dir.path(), false, 0).unwrap();
        let flipped: Vec<_> = plain
            .iter()
            .map(|p| flip_pair(p, &FIGURE_SWAP_TABLE))
            .collect();
        for (p, f) in plain.iter().zip(&flipped) {
            assert_eq!(f.x, hflip_image(&p.x));
            assert_eq!(f.y, hflip_image(&p.y));
            assert_eq!(f.lx, p.lx.hflip(&FIGURE_SWAP_TABLE));
            assert_eq!(f.ly, p.ly.hflip(&FIGURE_SWAP_TABLE));
            // double flip restores the original
            let back = flip_pair(f, &FIGURE_SWAP_TABLE);
            assert_eq!(back.x, p.x);
            assert_eq!(back.lx, p.lx);
        }
    }

    #[test]
    fn augmented_stream_replays_with_same_seed() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 3, 3, [48, 48], 11, &GenerateOptions::default()).unwrap();
        let a = load_pairs(dir.path(), true, 42).unwrap();
        let b = load_pairs(dir.path(), true, 42).unwrap();
        let c = load_pairs(dir.path(), true, 43).unwrap();
        assert_eq!(a.len(), b.len());
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.x, pb.x);
            assert_eq!(pa.lx, pb.lx);
        }
        // a different seed should flip at least one pair differently
        assert!(a.iter().zip(&c).any(|(pa, pc)| pa.x != pc.x));
    }

    #[test]
    fn missing_file_error_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(dir.path(), 1, 2, [48, 48], 0, &GenerateOptions::default()).unwrap();
        let victim = dir.path().join("images/0000_01.png");
        std::fs::remove_file(&victim).unwrap();
        let err = load_pairs(dir.path(), false, 0).unwrap_err();
        assert!(err.to_string().contains("0000_01.png"), "error was: {err}");
    }

    #[test]
    fn noise_texture_is_deterministic_and_bounded() {
        let mut spec = toy_spec();
        spec.appearance.noise_amplitude = 8;
        let (a, _) = render_figure_u8(&spec).unwrap();
        let (b, _) = render_figure_u8(&spec).unwrap();
        assert_eq!(a, b);
        let bg = spec.appearance.background_rgb;
        let max_dev = a
            .chunks(3)
            .filter(|px| px != &spec.appearance.body_rgb.as_slice())
            .flat_map(|px| {
                px.iter()
                    .zip(bg.iter())
                    .map(|(&v, &b)| (v as i16 - b as i16).unsigned_abs())
            })
            .max()
            .unwrap();
        assert!(max_dev <= 8, "noise deviation {max_dev} exceeds amplitude");
    }
}
