//! Domain types for the tactile hand: raw pad readings, the spatial tactile
//! image, robot state, actions and trajectories.
//!
//! The hand carries 15 tactile pads: three fingers with 4 pads each (base to
//! tip) followed by the thumb with 3 pads (base to tip). Every pad is a 4x4
//! grid of taxels and every taxel reads 3 force axes, so one frame holds
//! 15 * 4 * 4 * 3 = 720 scalars.
//!
//! The image layout stacks each finger's pads into a 16x4 column and the
//! thumb's into a 12x4 column, concatenated side by side into a 3-channel
//! 16x16 image (one channel per force axis). The thumb column is padded with
//! a constant in its bottom 4 rows.

use crate::error::{Result, TdexError};
use serde::{Deserialize, Serialize};

pub const NUM_PADS: usize = 15;
pub const PAD_ROWS: usize = 4;
pub const PAD_COLS: usize = 4;
pub const NUM_AXES: usize = 3;
pub const FRAME_LEN: usize = NUM_PADS * PAD_ROWS * PAD_COLS * NUM_AXES; // 720
pub const IMAGE_SIZE: usize = 16;
pub const IMAGE_LEN: usize = NUM_AXES * IMAGE_SIZE * IMAGE_SIZE;
/// Fingers with a full 4-pad column; the thumb contributes the last 3 pads.
pub const NUM_FINGERS: usize = 3;
pub const THUMB_FIRST_PAD: usize = NUM_FINGERS * 4; // 12
pub const ACTION_DIM: usize = 23;

/// One timestep of raw (uncalibrated) tactile readings.
///
/// Values are stored pad-major: index = ((pad * 4 + row) * 4 + col) * 3 + axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileFrame {
    values: Vec<f64>,
}

impl TactileFrame {
    pub fn zeros() -> Self {
        TactileFrame {
            values: vec![0.0; FRAME_LEN],
        }
    }

    /// Builds a frame from 720 pad-major values; rejects wrong lengths and
    /// non-finite readings.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != FRAME_LEN {
            return Err(TdexError::InvalidData(format!(
                "tactile frame needs {FRAME_LEN} values, got {}",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(TdexError::InvalidData(
                "tactile frame contains non-finite values".into(),
            ));
        }
        Ok(TactileFrame { values })
    }

    #[inline]
    pub fn index(pad: usize, row: usize, col: usize, axis: usize) -> usize {
        debug_assert!(pad < NUM_PADS && row < PAD_ROWS && col < PAD_COLS && axis < NUM_AXES);
        ((pad * PAD_ROWS + row) * PAD_COLS + col) * NUM_AXES + axis
    }

    #[inline]
    pub fn get(&self, pad: usize, row: usize, col: usize, axis: usize) -> f64 {
        self.values[Self::index(pad, row, col, axis)]
    }

    #[inline]
    pub fn set(&mut self, pad: usize, row: usize, col: usize, axis: usize, value: f64) {
        self.values[Self::index(pad, row, col, axis)] = value;
    }

    /// The 720 raw values in pad-major order.
    pub fn flattened(&self) -> &[f64] {
        &self.values
    }

    /// Reorders pads: output pad `i` takes the input's pad `perm[i]`.
    pub fn permute_pads(&self, perm: &[usize; NUM_PADS]) -> TactileFrame {
        let mut out = TactileFrame::zeros();
        let pad_len = PAD_ROWS * PAD_COLS * NUM_AXES;
        for (dst, &src) in perm.iter().enumerate() {
            let d = dst * pad_len;
            let s = src * pad_len;
            out.values[d..d + pad_len].copy_from_slice(&self.values[s..s + pad_len]);
        }
        out
    }
}

/// The 3-channel 16x16 spatial arrangement of one frame.
///
/// Pixels are stored channel-major: index = (channel * 16 + row) * 16 + col.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileImage {
    pixels: Vec<f64>,
}

impl TactileImage {
    pub fn zeros() -> Self {
        TactileImage {
            pixels: vec![0.0; IMAGE_LEN],
        }
    }

    pub fn from_pixels(pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != IMAGE_LEN {
            return Err(TdexError::InvalidData(format!(
                "tactile image needs {IMAGE_LEN} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(TactileImage { pixels })
    }

    #[inline]
    pub fn index(channel: usize, row: usize, col: usize) -> usize {
        debug_assert!(channel < NUM_AXES && row < IMAGE_SIZE && col < IMAGE_SIZE);
        (channel * IMAGE_SIZE + row) * IMAGE_SIZE + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.pixels[Self::index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.pixels[Self::index(channel, row, col)] = value;
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Inverse of [`layout_image`]: reads the non-padded pixels back into a
    /// frame. Padded pixels are ignored.
    pub fn to_frame(&self) -> TactileFrame {
        let mut frame = TactileFrame::zeros();
        for channel in 0..NUM_AXES {
            for row in 0..IMAGE_SIZE {
                for col in 0..IMAGE_SIZE {
                    if let Some((pad, prow, pcol, axis)) = taxel_of(channel, row, col) {
                        frame.set(pad, prow, pcol, axis, self.get(channel, row, col));
                    }
                }
            }
        }
        frame
    }
}

/// Pixel coordinates (channel, row, col) of a taxel.
///
/// Finger f in 0..3 occupies columns 4f..4f+4 with its pads stacked base to
/// tip from row 0; the thumb occupies columns 12..16 with rows 12..16 padded.
#[inline]
pub fn pixel_of(pad: usize, row: usize, col: usize, axis: usize) -> (usize, usize, usize) {
    debug_assert!(pad < NUM_PADS && row < PAD_ROWS && col < PAD_COLS && axis < NUM_AXES);
    if pad < THUMB_FIRST_PAD {
        let finger = pad / 4;
        let stack = pad % 4;
        (axis, stack * PAD_ROWS + row, finger * PAD_COLS + col)
    } else {
        let stack = pad - THUMB_FIRST_PAD;
        (
            axis,
            stack * PAD_ROWS + row,
            NUM_FINGERS * PAD_COLS + col,
        )
    }
}

/// Inverse of [`pixel_of`]; `None` for the 4x4 padded block at the bottom of
/// the thumb column.
#[inline]
pub fn taxel_of(channel: usize, row: usize, col: usize) -> Option<(usize, usize, usize, usize)> {
    debug_assert!(channel < NUM_AXES && row < IMAGE_SIZE && col < IMAGE_SIZE);
    let block = col / PAD_COLS;
    let stack = row / PAD_ROWS;
    let pad = if block < NUM_FINGERS {
        block * 4 + stack
    } else {
        if stack >= NUM_PADS - THUMB_FIRST_PAD {
            return None; // thumb padding rows
        }
        THUMB_FIRST_PAD + stack
    };
    Some((pad, row % PAD_ROWS, col % PAD_COLS, channel))
}

/// Arm + hand state stored with every frame. Fingertip positions are
/// precomputed and stored rather than derived by forward kinematics here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub ee_pos: [f64; 3],
    /// Unit quaternion (w, x, y, z).
    pub ee_quat: [f64; 4],
    pub joints: [f64; 16],
    pub fingertips: [[f64; 3]; 4],
}

impl RobotState {
    pub fn validate(&self) -> Result<()> {
        validate_quat(&self.ee_quat)?;
        let finite = self.ee_pos.iter().all(|v| v.is_finite())
            && self.joints.iter().all(|v| v.is_finite())
            && self.fingertips.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(TdexError::InvalidData(
                "robot state contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

pub const IDENTITY_QUAT: [f64; 4] = [1.0, 0.0, 0.0, 0.0];

fn validate_quat(q: &[f64; 4]) -> Result<()> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(TdexError::InvalidData(format!(
            "quaternion norm {norm} not within 1e-6 of 1"
        )));
    }
    Ok(())
}

/// A 23-dimensional command: arm pose (position + unit quaternion) and 16
/// absolute hand joint targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub ee_pos: [f64; 3],
    pub ee_quat: [f64; 4],
    pub joints: [f64; 16],
}

impl Action {
    pub fn validate(&self) -> Result<()> {
        validate_quat(&self.ee_quat)?;
        if !self.ee_pos.iter().chain(self.joints.iter()).all(|v| v.is_finite()) {
            return Err(TdexError::InvalidData(
                "action contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    /// Flattens to 23 numbers ordered ee_pos | ee_quat | joints.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(ACTION_DIM);
        out.extend_from_slice(&self.ee_pos);
        out.extend_from_slice(&self.ee_quat);
        out.extend_from_slice(&self.joints);
        out
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != ACTION_DIM {
            return Err(TdexError::InvalidData(format!(
                "action needs {ACTION_DIM} values, got {}",
                values.len()
            )));
        }
        let action = Action {
            ee_pos: [values[0], values[1], values[2]],
            ee_quat: [values[3], values[4], values[5], values[6]],
            joints: values[7..23].try_into().expect("length checked"),
        };
        action.validate()?;
        Ok(action)
    }

    /// Same as [`Action::from_slice`] but renormalizes the quaternion slice
    /// first; regressed outputs land here. A near-zero quaternion falls back
    /// to identity.
    pub fn from_slice_renormalized(values: &[f64]) -> Result<Self> {
        if values.len() != ACTION_DIM {
            return Err(TdexError::InvalidData(format!(
                "action needs {ACTION_DIM} values, got {}",
                values.len()
            )));
        }
        let mut fixed = values.to_vec();
        let norm = fixed[3..7].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for v in &mut fixed[3..7] {
                *v /= norm;
            }
        } else {
            fixed[3..7].copy_from_slice(&IDENTITY_QUAT);
        }
        Self::from_slice(&fixed)
    }
}

/// One trajectory entry: timestamp plus everything observed (and, for
/// demonstrations, commanded) at that instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub tactile: TactileFrame,
    pub state: RobotState,
    pub visual_feature: Option<Vec<f64>>,
    pub action: Option<Action>,
}

/// Time-ordered frames with strictly increasing timestamps and a constant
/// visual-feature dimension wherever one is present.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    frames: Vec<Frame>,
}

impl Trajectory {
    pub fn from_frames(frames: Vec<Frame>) -> Result<Self> {
        let mut visual_dim: Option<usize> = None;
        for (i, frame) in frames.iter().enumerate() {
            if !frame.t.is_finite() {
                return Err(TdexError::InvalidData(format!(
                    "frame {i}: non-finite timestamp"
                )));
            }
            if i > 0 && frame.t <= frames[i - 1].t {
                return Err(TdexError::InvalidData(format!(
                    "frame {i}: timestamp {} not strictly after {}",
                    frame.t,
                    frames[i - 1].t
                )));
            }
            frame.state.validate()?;
            if let Some(a) = &frame.action {
                a.validate()?;
            }
            if let Some(v) = &frame.visual_feature {
                match visual_dim {
                    None => visual_dim = Some(v.len()),
                    Some(d) if d != v.len() => {
                        return Err(TdexError::InvalidData(format!(
                            "frame {i}: visual feature dim {} differs from {d}",
                            v.len()
                        )))
                    }
                    _ => {}
                }
                if !v.iter().all(|x| x.is_finite()) {
                    return Err(TdexError::InvalidData(format!(
                        "frame {i}: non-finite visual feature"
                    )));
                }
            }
        }
        Ok(Trajectory { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Keeps only the frames at `indices` (must be strictly increasing).
    pub fn select(&self, indices: &[usize]) -> Trajectory {
        Trajectory {
            frames: indices.iter().map(|&i| self.frames[i].clone()).collect(),
        }
    }
}

/// Per-axis min/max over a training set, used to map raw readings into [0,1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; NUM_AXES],
    pub max: [f64; NUM_AXES],
}

impl NormStats {
    /// Stats that leave values in [0,1] unchanged.
    pub fn identity() -> Self {
        NormStats {
            min: [0.0; NUM_AXES],
            max: [1.0; NUM_AXES],
        }
    }
}

/// Scans every taxel of every frame and records the per-axis min and max.
pub fn fit_norm_stats<'a, I>(frames: I) -> Result<NormStats>
where
    I: IntoIterator<Item = &'a TactileFrame>,
{
    let mut min = [f64::INFINITY; NUM_AXES];
    let mut max = [f64::NEG_INFINITY; NUM_AXES];
    let mut seen = false;
    for frame in frames {
        seen = true;
        for (i, &v) in frame.flattened().iter().enumerate() {
            if !v.is_finite() {
                return Err(TdexError::InvalidData(
                    "tactile frame contains non-finite values".into(),
                ));
            }
            let axis = i % NUM_AXES;
            min[axis] = min[axis].min(v);
            max[axis] = max[axis].max(v);
        }
    }
    if !seen {
        return Err(TdexError::EmptyDataset);
    }
    Ok(NormStats { min, max })
}

/// Maps each value to (v - min) / (max - min) for its axis, clamped to [0,1].
/// A degenerate axis (max == min) maps to 0 everywhere.
pub fn normalize(frame: &TactileFrame, stats: &NormStats) -> TactileFrame {
    let mut out = frame.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        let axis = i % NUM_AXES;
        let span = stats.max[axis] - stats.min[axis];
        *v = if span > 0.0 {
            ((*v - stats.min[axis]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
    }
    out
}

/// Arranges a frame's values spatially without touching them; padding pixels
/// take `pad_value`.
pub fn layout_image(frame: &TactileFrame, pad_value: f64) -> TactileImage {
    let mut image = TactileImage {
        pixels: vec![pad_value; IMAGE_LEN],
    };
    for pad in 0..NUM_PADS {
        for row in 0..PAD_ROWS {
            for col in 0..PAD_COLS {
                for axis in 0..NUM_AXES {
                    let (c, r, cc) = pixel_of(pad, row, col, axis);
                    image.pixels[TactileImage::index(c, r, cc)] = frame.get(pad, row, col, axis);
                }
            }
        }
    }
    image
}

/// Normalizes a raw frame and lays it out as a 3x16x16 image.
pub fn tactile_image(frame: &TactileFrame, stats: &NormStats, pad_value: f64) -> TactileImage {
    layout_image(&normalize(frame, stats), pad_value)
}

/// A 3-channel square image of arbitrary size, produced by [`upscale`].
#[derive(Clone, Debug, PartialEq)]
pub struct UpscaledImage {
    size: usize,
    pixels: Vec<f64>,
}

impl UpscaledImage {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.pixels[(channel * self.size + row) * self.size + col]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
}

/// Nearest-neighbor upsampling to 3 x size x size; size 16 is the identity.
pub fn upscale(image: &TactileImage, size: usize) -> Result<UpscaledImage> {
    if size < IMAGE_SIZE {
        return Err(TdexError::InvalidArg(format!(
            "upscale size must be >= {IMAGE_SIZE}, got {size}"
        )));
    }
    let mut pixels = vec![0.0; NUM_AXES * size * size];
    for channel in 0..NUM_AXES {
        for row in 0..size {
            let src_row = row * IMAGE_SIZE / size;
            for col in 0..size {
                let src_col = col * IMAGE_SIZE / size;
                pixels[(channel * size + row) * size + col] =
                    image.get(channel, src_row, src_col);
            }
        }
    }
    Ok(UpscaledImage { size, pixels })
}
