//! Conversion between coordinate-form keypoint sets and image-form keypoint
//! representations.
//!
//! Two image conventions are supported: `Person` mode renders one disc
//! channel per keypoint, `Face` mode renders all landmarks as black dots on a
//! white RGB image. Rendering stays in `[0, 1]`; rescaling to the network
//! range happens at the trainer boundary.

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::{Error, Result};

/// Ordered 2-D landmarks with visibility flags, in pixel coordinates.
///
/// `points[i] = (x, y)` with `0 <= x < width`, `0 <= y < height` for every
/// visible point. Order is meaningful: channel `i` of a person-mode heatmap
/// belongs to point `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    /// `[height, width]` of the frame the coordinates live in.
    pub frame: [usize; 2],
    /// `(x, y)` per landmark.
    pub points: Vec<(f32, f32)>,
    /// One flag per landmark; invisible points carry no location meaning.
    pub visible: Vec<bool>,
}

/// Rendering convention for image-form keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    /// Black landmark dots on a white 3-channel image.
    Face,
    /// One binary disc channel per keypoint.
    Person,
}

impl fmt::Display for HeatmapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeatmapMode::Face => write!(f, "face"),
            HeatmapMode::Person => write!(f, "person"),
        }
    }
}

/// Image-form keypoint representation, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// `[C, H, W]`.
    pub data: Array3<f32>,
    pub mode: HeatmapMode,
    /// Disc radius in pixels; meaningful in person mode only.
    pub radius: f32,
}

/// Default person-mode channel count, following the PG² heatmap convention.
pub const DEFAULT_PERSON_CHANNELS: usize = 18;
/// Default person-mode disc radius in pixels.
pub const DEFAULT_PERSON_RADIUS: f32 = 4.0;
/// Dot radius used for face-mode landmarks.
const FACE_DOT_RADIUS: f32 = 1.0;

impl KeypointSet {
    pub fn new(frame: [usize; 2], points: Vec<(f32, f32)>, visible: Vec<bool>) -> Result<Self> {
        let set = KeypointSet {
            frame,
            points,
            visible,
        };
        set.validate()?;
        Ok(set)
    }

    /// All points visible.
    pub fn all_visible(frame: [usize; 2], points: Vec<(f32, f32)>) -> Result<Self> {
        let n = points.len();
        Self::new(frame, points, vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Check the structural invariants: matching lengths and in-frame
    /// visible coordinates.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.visible.len() {
            return Err(Error::InvalidArgument(format!(
                "keypoint set has {} points but {} visibility flags",
                self.points.len(),
                self.visible.len()
            )));
        }
        let [h, w] = self.frame;
        for (i, (&(x, y), &vis)) in self.points.iter().zip(&self.visible).enumerate() {
            if vis && !(x >= 0.0 && x < w as f32 && y >= 0.0 && y < h as f32) {
                return Err(Error::InvalidArgument(format!(
                    "visible keypoint {i} at ({x}, {y}) lies outside the {h}x{w} frame"
                )));
            }
        }
        Ok(())
    }

    /// Mirror around the vertical axis: `x' = width - 1 - x`, then apply the
    /// left/right index swap table. The table lists index pairs to exchange;
    /// an empty table is the identity.
    pub fn hflip(&self, swap_table: &[(usize, usize)]) -> KeypointSet {
        let w = self.frame[1] as f32;
        let mut points: Vec<(f32, f32)> = self.points.iter().map(|&(x, y)| (w - 1.0 - x, y)).collect();
        let mut visible = self.visible.clone();
        for &(a, b) in swap_table {
            points.swap(a, b);
            visible.swap(a, b);
        }
        KeypointSet {
            frame: self.frame,
            points,
            visible,
        }
    }
}

/// Permutation of heatmap channels induced by a swap table (person mode).
pub fn channel_permutation(n: usize, swap_table: &[(usize, usize)]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for &(a, b) in swap_table {
        perm.swap(a, b);
    }
    perm
}

/// Render a keypoint set into its image form.
///
/// Person mode paints, for every visible keypoint, the pixels whose center is
/// within `radius` of the keypoint (Euclidean, disc clipped at the frame
/// border) into that keypoint's own channel. Face mode starts from a white
/// 3-channel image and paints every visible landmark as a black dot.
pub fn render(keypoints: &KeypointSet, mode: HeatmapMode, radius: f32) -> Result<Heatmap> {
    keypoints.validate()?;
    let [h, w] = keypoints.frame;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot render into an empty {h}x{w} frame"
        )));
    }
    match mode {
        HeatmapMode::Person => {
            if radius < 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "person-mode radius must be >= 1, got {radius}"
                )));
            }
            let mut data = Array3::<f32>::zeros((keypoints.len(), h, w));
            for (c, (&(px, py), &vis)) in keypoints.points.iter().zip(&keypoints.visible).enumerate() {
                if !vis {
                    continue;
                }
                paint_disc(&mut data, c, px, py, radius, 1.0);
            }
            Ok(Heatmap {
                data,
                mode,
                radius,
            })
        }
        HeatmapMode::Face => {
            let mut data = Array3::<f32>::ones((3, h, w));
            for (&(px, py), &vis) in keypoints.points.iter().zip(&keypoints.visible) {
                if !vis {
                    continue;
                }
                for c in 0..3 {
                    paint_disc(&mut data, c, px, py, FACE_DOT_RADIUS, 0.0);
                }
            }
            Ok(Heatmap {
                data,
                mode,
                radius: FACE_DOT_RADIUS,
            })
        }
    }
}

fn paint_disc(data: &mut Array3<f32>, channel: usize, px: f32, py: f32, radius: f32, value: f32) {
    let (_, h, w) = data.dim();
    let y0 = (py - radius).floor().max(0.0) as usize;
    let y1 = ((py + radius).ceil() as usize).min(h.saturating_sub(1));
    let x0 = (px - radius).floor().max(0.0) as usize;
    let x1 = ((px + radius).ceil() as usize).min(w.saturating_sub(1));
    let r2 = radius * radius;
    for y in y0..=y1 {
        let dy = y as f32 - py;
        for x in x0..=x1 {
            let dx = x as f32 - px;
            if dx * dx + dy * dy <= r2 {
                data[[channel, y, x]] = value;
            }
        }
    }
}

/// Recover coordinates from a person-mode heatmap.
///
/// Each channel decodes to the centroid of its maximum-valued pixels; an
/// all-zero channel decodes to an invisible point. Face mode is not
/// invertible per-point and is rejected.
pub fn decode(heatmap: &Heatmap) -> Result<KeypointSet> {
    if heatmap.mode == HeatmapMode::Face {
        return Err(Error::UnsupportedMode(
            "face-mode heatmaps cannot be decoded to individual keypoints".into(),
        ));
    }
    let (c, h, w) = heatmap.data.dim();
    let mut points = Vec::with_capacity(c);
    let mut visible = Vec::with_capacity(c);
    for ch in 0..c {
        let plane = heatmap.data.index_axis(ndarray::Axis(0), ch);
        let mut max = 0.0f32;
        for &v in plane.iter() {
            if v > max {
                max = v;
            }
        }
        if max <= 0.0 {
            points.push((0.0, 0.0));
            visible.push(false);
            continue;
        }
        let mut sx = 0.0f64;
        let mut sy = 0.0f64;
        let mut n = 0u64;
        for y in 0..h {
            for x in 0..w {
                if plane[[y, x]] == max {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        points.push(((sx / n as f64) as f32, (sy / n as f64) as f32));
        visible.push(true);
    }
    Ok(KeypointSet {
        frame: [h, w],
        points,
        visible,
    })
}

/// Write keypoint sets to a `.jsonl` file, one JSON object per line.
pub fn write_jsonl(path: &Path, sets: &[KeypointSet]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for set in sets {
        let line = serde_json::to_string(set)
            .map_err(|e| Error::load(path, format!("serialize keypoints: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Read keypoint sets from a `.jsonl` file.
pub fn read_jsonl(path: &Path) -> Result<Vec<KeypointSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut sets = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let set: KeypointSet = serde_json::from_str(&line)
            .map_err(|e| Error::load(path, format!("line {}: {e}", lineno + 1)))?;
        set.validate()
            .map_err(|e| Error::load(path, format!("line {}: {e}", lineno + 1)))?;
        sets.push(set);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mirror_heatmap(hm: &Heatmap, perm: &[usize]) -> Array3<f32> {
        let (c, h, w) = hm.data.dim();
        let mut out = Array3::<f32>::zeros((c, h, w));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[ch, y, x]] = hm.data[[perm[ch], y, w - 1 - x]];
                }
            }
        }
        out
    }

    #[test]
    fn empty_face_render_is_all_white() {
        let k = KeypointSet::new([64, 64], vec![], vec![]).unwrap();
        let hm = render(&k, HeatmapMode::Face, 1.0).unwrap();
        assert_eq!(hm.data.dim(), (3, 64, 64));
        assert!(hm.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn person_disc_is_exact() {
        let k = KeypointSet::all_visible([64, 64], vec![(32.0, 32.0)]).unwrap();
        let hm = render(&k, HeatmapMode::Person, 4.0).unwrap();
        assert_eq!(hm.data.dim(), (1, 64, 64));
        for y in 0..64 {
            for x in 0..64 {
                let d2 = (x as f32 - 32.0).powi(2) + (y as f32 - 32.0).powi(2);
                let expected = if d2 <= 16.0 { 1.0 } else { 0.0 };
                assert_eq!(hm.data[[0, y, x]], expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn corner_disc_clips_to_frame() {
        let k = KeypointSet::all_visible([64, 64], vec![(0.0, 0.0)]).unwrap();
        let hm = render(&k, HeatmapMode::Person, 4.0).unwrap();
        // quadrant only; a full disc of radius 4 holds 49 pixels, the corner
        // quadrant keeps the 15 with x >= 0 and y >= 0
        let on: usize = hm.data.iter().filter(|&&v| v == 1.0).count();
        let expected: usize = (0..=4)
            .flat_map(|y| (0..=4).map(move |x| (x, y)))
            .filter(|&(x, y): &(i32, i32)| x * x + y * y <= 16)
            .count();
        assert_eq!(on, expected);
    }

    #[test]
    fn render_is_deterministic() {
        let k = KeypointSet::all_visible([32, 48], vec![(10.5, 3.25), (40.0, 20.0)]).unwrap();
        let a = render(&k, HeatmapMode::Person, 3.0).unwrap();
        let b = render(&k, HeatmapMode::Person, 3.0).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn face_mode_is_two_valued() {
        let k = KeypointSet::all_visible([32, 32], vec![(5.0, 5.0), (20.25, 11.5)]).unwrap();
        let hm = render(&k, HeatmapMode::Face, 1.0).unwrap();
        assert!(hm.data.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(hm.data.iter().any(|&v| v == 0.0));
    }

    #[test]
    fn invisible_keypoint_leaves_zero_channel() {
        let k = KeypointSet::new([32, 32], vec![(5.0, 5.0), (9.0, 9.0)], vec![true, false]).unwrap();
        let hm = render(&k, HeatmapMode::Person, 2.0).unwrap();
        assert!(hm
            .data
            .index_axis(ndarray::Axis(0), 1)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn radius_below_one_rejected() {
        let k = KeypointSet::all_visible([32, 32], vec![(5.0, 5.0)]).unwrap();
        assert!(render(&k, HeatmapMode::Person, 0.5).is_err());
    }

    #[test]
    fn empty_frame_rejected() {
        let k = KeypointSet::new([0, 32], vec![], vec![]).unwrap();
        assert!(render(&k, HeatmapMode::Person, 2.0).is_err());
    }

    #[test]
    fn decode_rejects_face_mode() {
        let k = KeypointSet::all_visible([32, 32], vec![(5.0, 5.0)]).unwrap();
        let hm = render(&k, HeatmapMode::Face, 1.0).unwrap();
        assert!(matches!(decode(&hm), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn decode_recovers_disc_centers_exactly() {
        let k = KeypointSet::all_visible([64, 64], vec![(10.0, 10.0), (50.0, 50.0)]).unwrap();
        let hm = render(&k, HeatmapMode::Person, 4.0).unwrap();
        let back = decode(&hm).unwrap();
        assert_eq!(back.points[0], (10.0, 10.0));
        assert_eq!(back.points[1], (50.0, 50.0));
        assert_eq!(back.visible, vec![true, true]);
    }

    #[test]
    fn decode_marks_zero_channel_invisible() {
        let hm = Heatmap {
            data: Array3::zeros((1, 16, 16)),
            mode: HeatmapMode::Person,
            radius: 4.0,
        };
        let back = decode(&hm).unwrap();
        assert_eq!(back.visible, vec![false]);
    }

    #[test]
    fn hflip_mirrors_x() {
        let k = KeypointSet::all_visible([32, 64], vec![(0.0, 5.0)]).unwrap();
        let f = k.hflip(&[]);
        assert_eq!(f.points[0], (63.0, 5.0));
    }

    #[test]
    fn hflip_is_involution_with_swap_table() {
        let k =
            KeypointSet::all_visible([32, 32], vec![(1.0, 2.0), (3.0, 4.0), (5.0, 6.0)]).unwrap();
        let table = [(1, 2)];
        let back = k.hflip(&table).hflip(&table);
        assert_eq!(back, k);
    }

    #[test]
    fn flip_equivariance_exact_on_quarter_grid() {
        // quarter-pixel coordinates keep the mirror arithmetic exact in f32
        let k = KeypointSet::all_visible(
            [48, 48],
            vec![(10.25, 7.5), (30.0, 30.75), (22.5, 40.0)],
        )
        .unwrap();
        let table = [(0, 2)];
        let hm = render(&k, HeatmapMode::Person, 3.0).unwrap();
        let hm_flipped = render(&k.hflip(&table), HeatmapMode::Person, 3.0).unwrap();
        let perm = channel_permutation(3, &table);
        assert_eq!(hm_flipped.data, mirror_heatmap(&hm, &perm));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.jsonl");
        let sets = vec![
            KeypointSet::all_visible([32, 32], vec![(1.5, 2.0)]).unwrap(),
            KeypointSet::new([32, 32], vec![(3.0, 4.0), (0.0, 0.0)], vec![true, false]).unwrap(),
        ];
        write_jsonl(&path, &sets).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back, sets);
        // serialized field layout is part of the on-disk contract
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().starts_with("{\"frame\":[32,32],\"points\":"));
    }

    proptest! {
        #[test]
        fn rendered_values_stay_in_unit_range(
            xs in proptest::collection::vec((0u32..256, 0u32..256), 0..6),
            radius in 1u32..5,
        ) {
            let points: Vec<(f32, f32)> = xs.iter().map(|&(x, y)| (x as f32 / 4.0, y as f32 / 4.0)).collect();
            let k = KeypointSet::all_visible([64, 64], points).unwrap();
            let hm = render(&k, HeatmapMode::Person, radius as f32).unwrap();
            prop_assert!(hm.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn flip_equivariance_on_random_quarter_grid(
            xs in proptest::collection::vec((8u32..248, 8u32..248), 1..6),
        ) {
            let points: Vec<(f32, f32)> = xs.iter().map(|&(x, y)| (x as f32 / 4.0, y as f32 / 4.0)).collect();
            let n = points.len();
            let k = KeypointSet::all_visible([64, 64], points).unwrap();
            let hm = render(&k, HeatmapMode::Person, 2.0).unwrap();
            let flipped = render(&k.hflip(&[]), HeatmapMode::Person, 2.0).unwrap();
            let perm = channel_permutation(n, &[]);
            prop_assert_eq!(flipped.data, mirror_heatmap(&hm, &perm));
        }
    }
}
