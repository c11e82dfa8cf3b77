//! Deterministic procedural scenes: a static background model shared by both
//! ends of the link, and live captures that add moving actors and an
//! environmental condition on top of it.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pnm;
use crate::types::{
    CameraPose, ConditionTag, Environment, Frame, FrameRole, Mask, MaskSet, MaskSource, Traffic,
};

pub const DEFAULT_WIDTH: u32 = 320;
pub const DEFAULT_HEIGHT: u32 = 192;
pub const MAX_BATCH_LEN: u32 = 10;
pub const MAX_ACTORS_PER_CLASS: u32 = 100;

pub const VEHICLE_LABEL_BASE: u16 = 1;
pub const PEDESTRIAN_LABEL_BASE: u16 = 101;
/// Label of the full-frame occluder (a truck parked right in front of the
/// camera).
pub const OCCLUDER_LABEL: u16 = 255;

const VEHICLE_SIZE: (i32, i32) = (24, 12);
const PEDESTRIAN_SIZE: (i32, i32) = (4, 10);
const OUTLINE_PX: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

pub fn class_of(label: u16) -> ObjectClass {
    if (PEDESTRIAN_LABEL_BASE..PEDESTRIAN_LABEL_BASE + MAX_ACTORS_PER_CLASS as u16).contains(&label)
    {
        ObjectClass::Pedestrian
    } else {
        ObjectClass::Vehicle
    }
}

/// Actor counts used for each traffic level.
pub fn traffic_counts(traffic: Traffic) -> (u32, u32) {
    match traffic {
        Traffic::Empty => (0, 0),
        Traffic::Sparse => (5, 3),
        Traffic::Dense => (10, 3),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub n_vehicles: u32,
    pub n_pedestrians: u32,
    pub condition: ConditionTag,
    pub batch_len: u32,
    pub background_id: u64,
    /// Covers the whole field of view with one foreground object.
    pub full_occluder: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            n_vehicles: 0,
            n_pedestrians: 0,
            condition: ConditionTag::background(),
            batch_len: MAX_BATCH_LEN,
            background_id: 0,
            full_occluder: false,
        }
    }
}

impl SceneSpec {
    /// Scene with actor counts taken from the traffic level and a background
    /// area derived from the seed.
    pub fn for_condition(seed: u64, environment: Environment, traffic: Traffic) -> Self {
        let (n_vehicles, n_pedestrians) = traffic_counts(traffic);
        SceneSpec {
            seed,
            n_vehicles,
            n_pedestrians,
            condition: ConditionTag::new(environment, traffic),
            background_id: seed % 7,
            ..SceneSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_BATCH_LEN).contains(&self.batch_len) {
            return Err(Error::InvalidParameter(format!(
                "batch_len {} outside [1, {MAX_BATCH_LEN}]",
                self.batch_len
            )));
        }
        if self.n_vehicles > MAX_ACTORS_PER_CLASS || self.n_pedestrians > MAX_ACTORS_PER_CLASS {
            return Err(Error::InvalidParameter(format!(
                "at most {MAX_ACTORS_PER_CLASS} actors per class"
            )));
        }
        // Reuse the frame constructor's dimension rules.
        Frame::filled(self.width, self.height, [0; 3], FrameRole::Cav)?;
        if self.height < 64 {
            return Err(Error::InvalidParameter("scene height must be at least 64".into()));
        }
        Ok(())
    }

    /// Camera pose of frame `t`. The camera drives along the street at a
    /// constant 2 to 4 px per frame from a seeded starting point.
    pub fn pose(&self, t: u32) -> CameraPose {
        let offset = mix(self.seed, 0x9e37) % self.width as u64;
        let speed = 2 + mix(self.seed, 0x5bd1) % 3;
        CameraPose::translation((offset + speed * t as u64) as f64, 0.0, 0.0)
    }

    pub fn scenario_name(&self) -> String {
        format!(
            "{}_{}_s{}",
            self.condition.environment, self.condition.traffic, self.seed
        )
    }
}

/// Renders the empty static scene for a camera pose.
pub trait BackgroundProvider: Sync {
    fn render(&self, pose: &CameraPose, background_id: u64) -> Result<Frame>;
}

/// Street-canyon background: sky, building facades with windows,
/// sidewalks and a marked road. Horizontal camera translation scrolls the
/// street (wrapping at the frame width).
#[derive(Clone, Copy, Debug)]
pub struct ProceduralBackground {
    pub width: u32,
    pub height: u32,
}

impl ProceduralBackground {
    pub fn new(width: u32, height: u32) -> Self {
        ProceduralBackground { width, height }
    }
}

struct Layout {
    horizon: i32,
    road_top: i32,
    road_bottom: i32,
}

impl Layout {
    fn new(height: u32) -> Self {
        let h = height as i32;
        Layout {
            horizon: h * 45 / 100,
            road_top: h * 56 / 100,
            road_bottom: h * 90 / 100,
        }
    }
}

struct Building {
    x: i32,
    w: i32,
    top: i32,
    color: [u8; 3],
    window: [u8; 3],
}

// Channel levels 16, 44, 79 and 255 stay inside one 32-wide quantization
// bin under texture and under the noon, evening and wet transforms, and
// these combinations keep distinct bins from each other and from the sky
// and sidewalk in all of them.
const FACADES: [[u8; 3]; 8] = [
    [44, 44, 44],
    [44, 79, 79],
    [79, 44, 79],
    [79, 79, 44],
    [16, 79, 79],
    [16, 44, 79],
    [255, 255, 79],
    [79, 255, 255],
];
const SKY: [u8; 3] = [44, 79, 255];
const SIDEWALK: [u8; 3] = [255, 255, 255];
const ROAD: [u8; 3] = [79, 79, 79];
const LANE: [u8; 3] = [255, 255, 16];
const TEXTURE_AMPLITUDE: f64 = 4.0;

impl BackgroundProvider for ProceduralBackground {
    fn render(&self, pose: &CameraPose, background_id: u64) -> Result<Frame> {
        let [tx, ty, _] = pose.translation_part();
        if !tx.is_finite() || !ty.is_finite() {
            return Err(Error::Provider("pose translation is not finite".into()));
        }
        let (w, h) = (self.width as i32, self.height as i32);
        let layout = Layout::new(self.height);
        let buildings = buildings_for(background_id, w, &layout);
        let shift = (tx.round() as i64).rem_euclid(w as i64) as i32;

        let mut frame = Frame::filled(self.width, self.height, [0; 3], FrameRole::Rf)?;
        for y in 0..h {
            for x in 0..w {
                let wx = (x + shift).rem_euclid(w);
                let rgb = background_pixel(background_id, wx, y, w, &layout, &buildings);
                frame.set_pixel(x as u32, y as u32, rgb);
            }
        }
        Ok(frame.with_meta(*pose, 0, ConditionTag::background()))
    }
}

fn buildings_for(background_id: u64, world_w: i32, layout: &Layout) -> Vec<Building> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(background_id, 0xb111));
    let count = rng.gen_range(5..=12);
    (0..count)
        .map(|_| {
            let w = rng.gen_range(20..=70);
            let x = rng.gen_range(0..world_w);
            let top = rng.gen_range(8..=(layout.horizon - 20).max(9));
            let color = FACADES[rng.gen_range(0..FACADES.len())];
            let window = [color[0] / 3, color[1] / 3, color[2] / 2];
            Building {
                x,
                w,
                top,
                color,
                window,
            }
        })
        .collect()
}

fn background_pixel(
    background_id: u64,
    wx: i32,
    y: i32,
    world_w: i32,
    layout: &Layout,
    buildings: &[Building],
) -> [u8; 3] {
    if y < layout.horizon {
        // Later buildings are drawn in front of earlier ones.
        for b in buildings.iter().rev() {
            let dx = (wx - b.x).rem_euclid(world_w);
            if dx < b.w && y >= b.top {
                let local_y = y - b.top;
                let in_window = dx >= 3
                    && dx < b.w - 3
                    && (dx - 3) % 8 < 3
                    && local_y >= 4
                    && (local_y - 4) % 10 < 4;
                let base = if in_window { b.window } else { b.color };
                return textured(base, background_id, wx, y);
            }
        }
        return textured(SKY, background_id, wx, y);
    }
    if y < layout.road_top || y >= layout.road_bottom {
        return textured(SIDEWALK, background_id, wx, y);
    }
    let mid = (layout.road_top + layout.road_bottom) / 2;
    if (y == mid || y == mid + 1) && wx.rem_euclid(32) < 16 {
        return LANE;
    }
    textured(ROAD, background_id, wx, y)
}

fn textured(base: [u8; 3], background_id: u64, wx: i32, y: i32) -> [u8; 3] {
    let n = value_noise(mix(background_id, 0x7e47), wx as f64, y as f64, 4.0);
    let d = (n * TEXTURE_AMPLITUDE).round() as i32;
    base.map(|c| (c as i32 + d).clamp(0, 255) as u8)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ActorKind {
    Vehicle,
    Pedestrian,
    Occluder,
}

#[derive(Clone, Copy, Debug)]
struct Actor {
    kind: ActorKind,
    label: u16,
    x0: i32,
    y0: i32,
    vx: i32,
    w: i32,
    h: i32,
    color: [u8; 3],
}

const VEHICLE_COLORS: [[u8; 3]; 6] = [
    [220, 30, 30],
    [30, 60, 220],
    [230, 200, 20],
    [30, 190, 40],
    [150, 40, 200],
    [240, 130, 20],
];
const PEDESTRIAN_COLORS: [[u8; 3]; 4] = [[200, 0, 200], [0, 200, 200], [250, 110, 0], [150, 250, 0]];

fn signed_speed(rng: &mut ChaCha8Rng, max: i32) -> i32 {
    let s = rng.gen_range(1..=max);
    if rng.gen_bool(0.5) {
        s
    } else {
        -s
    }
}

/// Actors in painter's order. Each class draws from its own stream, so a
/// denser scene with the same seed contains the sparser scene's actors.
fn actors_for(spec: &SceneSpec) -> Vec<Actor> {
    let (w, h) = (spec.width as i32, spec.height as i32);
    let layout = Layout::new(spec.height);
    let mut actors = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0x7e41));
    for i in 0..spec.n_vehicles {
        let (vw, vh) = VEHICLE_SIZE;
        let y0 = rng.gen_range(layout.road_top + 1..=(layout.road_bottom - vh - 1));
        let x0 = rng.gen_range(-vw / 2..=(w - vw / 2));
        actors.push(Actor {
            kind: ActorKind::Vehicle,
            label: VEHICLE_LABEL_BASE + i as u16,
            x0,
            y0,
            vx: signed_speed(&mut rng, 4),
            w: vw,
            h: vh,
            color: VEHICLE_COLORS[rng.gen_range(0..VEHICLE_COLORS.len())],
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 0x9ed5));
    for i in 0..spec.n_pedestrians {
        let (pw, ph) = PEDESTRIAN_SIZE;
        let y0 = if rng.gen_bool(0.5) {
            rng.gen_range(layout.horizon..=(layout.road_top - ph).max(layout.horizon))
        } else {
            rng.gen_range(layout.road_bottom..=(h - ph))
        };
        let x0 = rng.gen_range(0..=(w - pw));
        actors.push(Actor {
            kind: ActorKind::Pedestrian,
            label: PEDESTRIAN_LABEL_BASE + i as u16,
            x0,
            y0,
            vx: signed_speed(&mut rng, 2),
            w: pw,
            h: ph,
            color: PEDESTRIAN_COLORS[rng.gen_range(0..PEDESTRIAN_COLORS.len())],
        });
    }

    if spec.full_occluder {
        actors.push(Actor {
            kind: ActorKind::Occluder,
            label: OCCLUDER_LABEL,
            x0: 0,
            y0: 0,
            vx: 0,
            w,
            h,
            color: [0; 3],
        });
    }
    actors
}

/// One time step of a scene: the live capture, the background render for
/// the same pose, and per-actor ground-truth masks.
#[derive(Clone, Debug)]
pub struct ScenePair {
    pub cav: Frame,
    pub rf: Frame,
    pub gt: MaskSet,
}

pub fn render_pair(spec: &SceneSpec, t: u32) -> Result<ScenePair> {
    render_pair_with(&ProceduralBackground::new(spec.width, spec.height), spec, t)
}

pub fn render_pair_with(
    provider: &dyn BackgroundProvider,
    spec: &SceneSpec,
    t: u32,
) -> Result<ScenePair> {
    spec.validate()?;
    if t >= spec.batch_len {
        return Err(Error::OutOfRange(format!(
            "frame ordinal {t} outside batch of {}",
            spec.batch_len
        )));
    }
    let pose = spec.pose(t);
    let rf = provider.render(&pose, spec.background_id)?;
    if rf.dims() != (spec.width, spec.height) {
        return Err(Error::dims(rf.dims(), (spec.width, spec.height)));
    }
    let rf = rf.with_meta(pose, t, ConditionTag::background());

    let (w, h) = (spec.width as i32, spec.height as i32);
    let mut composite = rf.clone();
    let mut owner = vec![0u16; (w * h) as usize];
    for actor in actors_for(spec) {
        let ax = actor.x0 + actor.vx * t as i32;
        let ay = actor.y0;
        for y in ay.max(0)..(ay + actor.h).min(h) {
            for x in ax.max(0)..(ax + actor.w).min(w) {
                let (lx, ly) = (x - ax, y - ay);
                let rgb = match actor.kind {
                    ActorKind::Occluder => rf.pixel(x as u32, y as u32).map(|c| 255 - c),
                    ActorKind::Vehicle => {
                        let edge = lx < OUTLINE_PX
                            || ly < OUTLINE_PX
                            || lx >= actor.w - OUTLINE_PX
                            || ly >= actor.h - OUTLINE_PX;
                        if edge {
                            actor.color.map(|c| (c as f64 * 0.6).round() as u8)
                        } else {
                            actor.color
                        }
                    }
                    ActorKind::Pedestrian => actor.color,
                };
                composite.set_pixel(x as u32, y as u32, rgb);
                owner[(y * w + x) as usize] = actor.label;
            }
        }
    }

    let mut labels: Vec<u16> = owner.iter().copied().filter(|&l| l != 0).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut masks = Vec::with_capacity(labels.len());
    for label in labels {
        let mask = Mask::from_fn(spec.width, spec.height, label, |x, y| {
            owner[(y * spec.width + x) as usize] == label && composite.pixel(x, y) != rf.pixel(x, y)
        })?;
        if !mask.is_empty() {
            masks.push(mask);
        }
    }
    let gt = MaskSet::new(spec.width, spec.height, masks, MaskSource::GroundTruth)?;

    let env = spec.condition.environment;
    let cond_seed = match env {
        Environment::Rain => mix(spec.seed, 0x4a17 + t as u64),
        _ => mix(spec.seed, 0x4a17),
    };
    let mut cav = apply_condition(&composite, env, cond_seed);
    cav.role = FrameRole::Cav;
    let cav = cav.with_meta(pose, t, spec.condition);
    Ok(ScenePair { cav, rf, gt })
}

/// Whole batch of pairs for a scene.
pub fn render_batch(
    provider: &dyn BackgroundProvider,
    spec: &SceneSpec,
) -> Result<Vec<ScenePair>> {
    (0..spec.batch_len)
        .map(|t| render_pair_with(provider, spec, t))
        .collect()
}

fn scale_round(v: u8, k: f64) -> i32 {
    (v as f64 * k).round() as i32
}

fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

/// Number of rain streaks drawn on a `width`×`height` frame.
pub fn rain_streak_count(width: u32, height: u32) -> usize {
    (0.002 * width as f64 * height as f64 / 12.0).ceil() as usize
}

/// Photometric stand-in for an environmental condition.
pub fn apply_condition(frame: &Frame, environment: Environment, seed: u64) -> Frame {
    let mut out = frame.clone();
    let (w, h) = frame.dims();
    match environment {
        Environment::Morning => {}
        Environment::Noon => {
            for v in out.pixels_mut() {
                *v = clamp_u8(scale_round(*v, 1.05));
            }
        }
        Environment::Evening => {
            for px in out.pixels_mut().chunks_exact_mut(3) {
                px[0] = clamp_u8(scale_round(px[0], 0.6) + 10);
                px[1] = clamp_u8(scale_round(px[1], 0.6));
                px[2] = clamp_u8(scale_round(px[2], 0.6) - 10);
            }
        }
        Environment::Wet => {
            for y in 0..h {
                for x in 0..w {
                    let n = value_noise(seed, x as f64, y as f64, 16.0);
                    let k = 1.0 + 0.1 * n;
                    let rgb = frame.pixel(x, y).map(|c| clamp_u8(scale_round(c, k)));
                    out.set_pixel(x, y, rgb);
                }
            }
        }
        Environment::Rain => {
            for v in out.pixels_mut() {
                *v = clamp_u8(scale_round(*v, 0.7));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..rain_streak_count(w, h) {
                let x0 = rng.gen_range(0..w);
                let y0 = rng.gen_range(0..h);
                let len = rng.gen_range(8..=16);
                for i in 0..len {
                    let (x, y) = (x0 + i, y0 + i);
                    if x < w && y < h {
                        out.set_pixel(x, y, [220; 3]);
                    }
                }
            }
        }
    }
    out
}

/// Writes one scenario as `<out>/<scenario>/<t>_{cav,rf}.ppm` and
/// `<t>_gt_<label>.pgm`.
pub fn write_scenario(out: &Path, spec: &SceneSpec) -> Result<std::path::PathBuf> {
    let dir = out.join(spec.scenario_name());
    fs::create_dir_all(&dir)?;
    for t in 0..spec.batch_len {
        let pair = render_pair(spec, t)?;
        pnm::save_ppm(dir.join(format!("{t}_cav.ppm")), &pair.cav)?;
        pnm::save_ppm(dir.join(format!("{t}_rf.ppm")), &pair.rf)?;
        for m in pair.gt.masks() {
            pnm::save_pgm(dir.join(format!("{t}_gt_{}.pgm", m.label())), m)?;
        }
    }
    Ok(dir)
}

/// SplitMix64 finalizer over `a ^ b·φ`.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let h = mix(mix(seed, i as u64), j as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Bilinear value noise in [-1, 1] on a square lattice of the given pitch.
fn value_noise(seed: u64, x: f64, y: f64, pitch: f64) -> f64 {
    let (gx, gy) = (x / pitch, y / pitch);
    let (i, j) = (gx.floor() as i64, gy.floor() as i64);
    let (fx, fy) = (gx - i as f64, gy - j as f64);
    let a = lattice(seed, i, j);
    let b = lattice(seed, i + 1, j);
    let c = lattice(seed, i, j + 1);
    let d = lattice(seed, i + 1, j + 1);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}
