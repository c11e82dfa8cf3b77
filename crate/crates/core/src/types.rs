//! Shared data model: frames, poses, masks, conditions, and the pixel-level
//! helpers every other module builds on.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame dimensions must be multiples of this so 8×8 blocks and 16-row
/// slices tile exactly.
pub const DIM_ALIGN: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameRole {
    Cav,
    Rf,
    Delta,
    Rec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    Morning,
    Noon,
    Evening,
    Wet,
    Rain,
}

impl Environment {
    pub const ALL: [Environment; 5] = [
        Environment::Morning,
        Environment::Noon,
        Environment::Evening,
        Environment::Wet,
        Environment::Rain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Environment::Morning => "morning",
            Environment::Noon => "noon",
            Environment::Evening => "evening",
            Environment::Wet => "wet",
            Environment::Rain => "rain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traffic {
    Empty,
    Sparse,
    Dense,
}

impl Traffic {
    pub fn as_str(self) -> &'static str {
        match self {
            Traffic::Empty => "empty",
            Traffic::Sparse => "sparse",
            Traffic::Dense => "dense",
        }
    }
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Traffic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Environment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Environment::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown condition `{s}`")))
    }
}

impl FromStr for Traffic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Traffic::Empty, Traffic::Sparse, Traffic::Dense]
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown traffic level `{s}`")))
    }
}

/// Environmental condition plus traffic density of a capture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionTag {
    pub environment: Environment,
    pub traffic: Traffic,
}

impl ConditionTag {
    pub const fn new(environment: Environment, traffic: Traffic) -> Self {
        ConditionTag { environment, traffic }
    }

    /// The condition the background model was built under.
    pub const fn background() -> Self {
        ConditionTag::new(Environment::Morning, Traffic::Empty)
    }
}

impl Default for ConditionTag {
    fn default() -> Self {
        ConditionTag::background()
    }
}

pub type Matrix4 = [[f64; 4]; 4];

pub const IDENTITY4: Matrix4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

const POSE_TOLERANCE: f64 = 1e-6;

/// Homogeneous rigid camera transform, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    matrix: Matrix4,
}

impl CameraPose {
    pub fn new(matrix: Matrix4) -> Result<Self> {
        if matrix[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::InvalidPose(format!(
                "bottom row must be (0,0,0,1), got {:?}",
                matrix[3]
            )));
        }
        if !matrix.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let err = orthonormality_error(&matrix);
        if err > POSE_TOLERANCE {
            return Err(Error::InvalidPose(format!(
                "rotation block not orthonormal (max deviation {err:.3e})"
            )));
        }
        Ok(CameraPose { matrix })
    }

    pub fn identity() -> Self {
        CameraPose { matrix: IDENTITY4 }
    }

    pub fn translation(x: f64, y: f64, z: f64) -> Self {
        let mut m = IDENTITY4;
        m[0][3] = x;
        m[1][3] = y;
        m[2][3] = z;
        CameraPose { matrix: m }
    }

    pub fn matrix(&self) -> &Matrix4 {
        &self.matrix
    }

    pub fn translation_part(&self) -> [f64; 3] {
        [self.matrix[0][3], self.matrix[1][3], self.matrix[2][3]]
    }

    pub fn rotation_block(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]
    }
}

impl Default for CameraPose {
    fn default() -> Self {
        CameraPose::identity()
    }
}

/// Largest entry of |RᵀR − I| for the upper-left 3×3 block.
pub fn orthonormality_error(m: &Matrix4) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

pub fn mat_mul(a: &Matrix4, b: &Matrix4) -> Matrix4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Determinant by cofactor expansion along the first row.
pub fn determinant(m: &Matrix4) -> f64 {
    fn det3(m: [[f64; 3]; 3]) -> f64 {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
    let mut det = 0.0;
    for col in 0..4 {
        let mut minor = [[0.0; 3]; 3];
        for (r, minor_row) in minor.iter_mut().enumerate() {
            let mut c2 = 0;
            for c in 0..4 {
                if c != col {
                    minor_row[c2] = m[r + 1][c];
                    c2 += 1;
                }
            }
        }
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[0][col] * det3(minor);
    }
    det
}

pub fn rot_x(theta: f64) -> Matrix4 {
    let (s, c) = theta.sin_cos();
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, -s, 0.0],
        [0.0, s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn rot_y(theta: f64) -> Matrix4 {
    let (s, c) = theta.sin_cos();
    [
        [c, 0.0, s, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [-s, 0.0, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn rot_z(theta: f64) -> Matrix4 {
    let (s, c) = theta.sin_cos();
    [
        [c, -s, 0.0, 0.0],
        [s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// The fixed axis-change rotation Rz(π/2)·Rx(−π/2)·Ry(π) applied when moving
/// simulator poses into the renderer's convention.
pub fn simulator_axis_change() -> Matrix4 {
    mat_mul(&mat_mul(&rot_z(PI / 2.0), &rot_x(-PI / 2.0)), &rot_y(PI))
}

/// Converts a simulator camera pose into the renderer's convention:
/// `Rz(π/2) · Rx(−π/2) · Ry(π) · axis_swap · pose`.
///
/// `axis_swap` is a signed axis-permutation; identity is the usual choice.
pub fn convert_pose_carla_to_ns(pose: &CameraPose, axis_swap: &Matrix4) -> Result<CameraPose> {
    let det = determinant(axis_swap);
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::InvalidPose(format!(
            "axis transform is not invertible (det = {det})"
        )));
    }
    let m = mat_mul(&mat_mul(&simulator_axis_change(), axis_swap), pose.matrix());
    // Clean the floating dust in the homogeneous row before validating.
    let mut m = m;
    m[3] = [0.0, 0.0, 0.0, 1.0];
    CameraPose::new(m)
}

/// RGB raster with role, pose and capture metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    pub role: FrameRole,
    pub pose: CameraPose,
    pub frame_index: u32,
    pub condition: ConditionTag,
}

impl Frame {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>, role: FrameRole) -> Result<Self> {
        check_dims(width, height)?;
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidFrame(format!(
                "expected {expected} bytes for {width}x{height} RGB, got {}",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            role,
            pose: CameraPose::identity(),
            frame_index: 0,
            condition: ConditionTag::background(),
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3], role: FrameRole) -> Result<Self> {
        check_dims(width, height)?;
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Frame::new(width, height, pixels, role)
    }

    /// Same dimensions and metadata, all pixels black.
    pub fn black_like(other: &Frame, role: FrameRole) -> Self {
        Frame {
            width: other.width,
            height: other.height,
            pixels: vec![0; other.pixels.len()],
            role,
            pose: other.pose,
            frame_index: other.frame_index,
            condition: other.condition,
        }
    }

    pub fn with_meta(mut self, pose: CameraPose, frame_index: u32, condition: ConditionTag) -> Self {
        self.pose = pose;
        self.frame_index = frame_index;
        self.condition = condition;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn ensure_same_dims(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidFrame("zero-sized frame".into()));
    }
    if width % DIM_ALIGN != 0 || height % DIM_ALIGN != 0 {
        return Err(Error::InvalidFrame(format!(
            "{width}x{height} is not a multiple of {DIM_ALIGN} in both dimensions"
        )));
    }
    if width > u16::MAX as u32 || height > u16::MAX as u32 {
        return Err(Error::InvalidFrame(format!("{width}x{height} exceeds 65535")));
    }
    Ok(())
}

/// Single-channel real-valued plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// BT.601 luma, full range.
pub fn luma(frame: &Frame) -> Plane {
    let data = frame
        .pixels()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    Plane {
        width: frame.width() as usize,
        height: frame.height() as usize,
        data,
    }
}

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Packed binary raster with a label. Area and bounding box are kept in sync
/// with the bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    words: Vec<u64>,
    label: u16,
    area: u64,
    bbox: Option<BBox>,
}

impl Mask {
    pub fn empty(width: u32, height: u32, label: u16) -> Result<Self> {
        if label == 0 {
            return Err(Error::InvalidMask("label 0 is reserved for background".into()));
        }
        let n = width as usize * height as usize;
        Ok(Mask {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
            label,
            area: 0,
            bbox: None,
        })
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        label: u16,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self> {
        let mut mask = Mask::empty(width, height, label)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.raw_set(x, y);
                }
            }
        }
        mask.refresh();
        Ok(mask)
    }

    /// Mask with the listed pixels set.
    pub fn from_points(
        width: u32,
        height: u32,
        label: u16,
        points: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let mut mask = Mask::empty(width, height, label)?;
        for (x, y) in points {
            if x >= width || y >= height {
                return Err(Error::InvalidMask(format!("point ({x},{y}) outside raster")));
            }
            mask.raw_set(x, y);
        }
        mask.refresh();
        Ok(mask)
    }

    pub fn from_bools(width: u32, height: u32, label: u16, bits: &[bool]) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::InvalidMask(format!(
                "expected {} bits, got {}",
                width as usize * height as usize,
                bits.len()
            )));
        }
        Mask::from_fn(width, height, label, |x, y| {
            bits[y as usize * width as usize + x as usize]
        })
    }

    pub fn rect(width: u32, height: u32, label: u16, bbox: BBox) -> Result<Self> {
        Mask::from_fn(width, height, label, |x, y| bbox.contains(x, y))
    }

    pub fn full(width: u32, height: u32, label: u16) -> Result<Self> {
        Mask::from_fn(width, height, label, |_, _| true)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn label(&self) -> u16 {
        self.label
    }

    pub fn with_label(mut self, label: u16) -> Result<Self> {
        if label == 0 {
            return Err(Error::InvalidMask("label 0 is reserved for background".into()));
        }
        self.label = label;
        Ok(self)
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    pub fn bbox(&self) -> Option<BBox> {
        self.bbox
    }

    pub fn is_empty(&self) -> bool {
        self.area == 0
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = y as usize * self.width as usize + x as usize;
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    fn raw_set(&mut self, x: u32, y: u32) {
        let i = y as usize * self.width as usize + x as usize;
        self.words[i / 64] |= 1 << (i % 64);
    }

    /// Recomputes area and bounding box from the bits.
    fn refresh(&mut self) {
        self.area = self.words.iter().map(|w| w.count_ones() as u64).sum();
        self.bbox = None;
        if self.area == 0 {
            return;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for (x, y) in self.iter_set() {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        self.bbox = Some(BBox { x0, y0, x1, y1 });
    }

    /// Set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * 64 + b;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    fn ensure_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Mask) -> Result<u64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    pub fn union_area(&self, other: &Mask) -> Result<u64> {
        self.ensure_same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum())
    }

    /// In-place union; keeps this mask's label.
    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.ensure_same_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        self.refresh();
        Ok(())
    }

    /// True when every set pixel of `other` is also set here.
    pub fn contains_mask(&self, other: &Mask) -> Result<bool> {
        self.ensure_same_dims(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(a, b)| b & !a == 0))
    }
}

/// Intersection over union of two masks on the same raster; 0 when both are
/// empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    let inter = a.intersection_area(b)?;
    let union = a.union_area(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    SegmenterRf,
    SegmenterCav,
    ClassOracle,
    Delta,
    GroundTruth,
}

/// Labeled masks over one raster; labels are unique within the set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    width: u32,
    height: u32,
    masks: Vec<Mask>,
    pub source: MaskSource,
}

impl MaskSet {
    pub fn new(width: u32, height: u32, masks: Vec<Mask>, source: MaskSource) -> Result<Self> {
        let mut labels = std::collections::HashSet::with_capacity(masks.len());
        for m in &masks {
            if m.dims() != (width, height) {
                return Err(Error::dims((width, height), m.dims()));
            }
            if !labels.insert(m.label()) {
                return Err(Error::InvalidMask(format!("duplicate label {}", m.label())));
            }
        }
        Ok(MaskSet {
            width,
            height,
            masks,
            source,
        })
    }

    pub fn empty(width: u32, height: u32, source: MaskSource) -> Self {
        MaskSet {
            width,
            height,
            masks: Vec::new(),
            source,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn get(&self, label: u16) -> Option<&Mask> {
        self.masks.iter().find(|m| m.label() == label)
    }

    /// Union of every mask as a single bitmap labeled 1.
    pub fn union(&self) -> Mask {
        let mut out = Mask::empty(self.width, self.height, 1).expect("label 1 is valid");
        for m in &self.masks {
            out.union_with(m).expect("masks share the set's raster");
        }
        out
    }
}
