//! Image quality, byte accounting and constraint checks.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::PipelineVariant;
use crate::types::{luma, ConditionTag, Environment, Frame, Plane, Traffic};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// PSNR over all RGB samples, capped for identical inputs.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sse: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_CAP_DB);
    }
    let mse = sse as f64 / a.pixels().len() as f64;
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable valid-region filter.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                s += kv * rows[(y + j) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM of two planes over all fully contained windows.
pub fn ssim_planes(a: &Plane, b: &Plane) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::dims((a.width as u32, a.height as u32), (b.width as u32, b.height as u32)));
    }
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidFrame(format!("{w}x{h} is smaller than the SSIM window")));
    }
    let k = gaussian_kernel();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = filter_valid(&a.data, w, h, &k);
    let mu_b = filter_valid(&b.data, w, h, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM on BT.601 luma.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_dims(b)?;
    ssim_planes(&luma(a), &luma(b))
}

pub fn data_savings(raw_bytes: u64, compressed_bytes: u64) -> Result<f64> {
    if raw_bytes == 0 {
        return Err(Error::InvalidParameter("raw_bytes must be positive".into()));
    }
    Ok(100.0 * (1.0 - compressed_bytes as f64 / raw_bytes as f64))
}

pub fn compression_ratio(raw_bytes: u64, compressed_bytes: u64) -> Result<f64> {
    if compressed_bytes == 0 {
        return Err(Error::InvalidParameter("compressed_bytes must be positive".into()));
    }
    Ok(raw_bytes as f64 / compressed_bytes as f64)
}

/// Upper bounds reached with a perfect foreground segmentation:
/// (maximum savings in percent, maximum compression ratio).
pub fn ideal_bounds(raw_bytes: u64, ideal_compressed_bytes: u64) -> Result<(f64, f64)> {
    Ok((
        data_savings(raw_bytes, ideal_compressed_bytes)?,
        compression_ratio(raw_bytes, ideal_compressed_bytes)?,
    ))
}

pub fn rfdvc_savings_vs_baseline(rfdvc: &QualityReport, vc: &QualityReport) -> Result<f64> {
    if vc.compressed_bytes == 0 {
        return Err(Error::InvalidParameter("baseline has zero bytes".into()));
    }
    Ok(100.0 * (1.0 - rfdvc.compressed_bytes as f64 / vc.compressed_bytes as f64))
}

/// One row of results. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub variant: PipelineVariant,
    pub condition: Environment,
    pub traffic: Traffic,
    pub quant_step: u32,
    pub bler_target: f64,
    pub realized_loss: f64,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
    pub savings_pct: f64,
    pub psnr_rec_db: f64,
    pub ssim_rec: f64,
    pub ssim_delta: f64,
    pub c_throughput: Option<bool>,
    pub c_delta_quality: Option<bool>,
    pub c_rec_quality: Option<bool>,
    pub c_loss: Option<bool>,
    pub c_robustness: Option<bool>,
}

pub const REPORT_COLUMNS: [&str; 17] = [
    "variant",
    "condition",
    "traffic",
    "quant_step",
    "bler_target",
    "realized_loss",
    "raw_bytes",
    "compressed_bytes",
    "savings_pct",
    "psnr_rec_db",
    "ssim_rec",
    "ssim_delta",
    "c_throughput",
    "c_delta_quality",
    "c_rec_quality",
    "c_loss",
    "c_robustness",
];

impl QualityReport {
    pub fn condition_tag(&self) -> ConditionTag {
        ConditionTag::new(self.condition, self.traffic)
    }

    pub fn with_verdicts(mut self, v: &Verdicts) -> Self {
        self.c_throughput = Some(v.throughput);
        self.c_delta_quality = Some(v.delta_quality);
        self.c_rec_quality = Some(v.rec_quality);
        self.c_loss = Some(v.loss);
        self.c_robustness = Some(v.robustness);
        self
    }
}

pub fn write_reports<W: std::io::Write>(w: W, reports: &[QualityReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(REPORT_COLUMNS)?;
    for r in reports {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports<R: std::io::Read>(r: R) -> Result<Vec<QualityReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSpec {
    /// Throughput in bits per second.
    pub t_net: f64,
    /// Latency budget in seconds.
    pub tau: f64,
    pub q_min_delta: f64,
    pub q_min_rec: f64,
    pub epsilon: f64,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        ConstraintSpec {
            t_net: 10e6,
            tau: 0.1,
            q_min_delta: 0.9,
            q_min_rec: 0.8,
            epsilon: 0.1,
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_net > 0.0) || !(self.tau >= 0.0) {
            return Err(Error::InvalidParameter("t_net must be positive and tau non-negative".into()));
        }
        for (name, q) in [("q_min_delta", self.q_min_delta), ("q_min_rec", self.q_min_rec)] {
            if !(-1.0..=1.0).contains(&q) {
                return Err(Error::InvalidParameter(format!("{name} = {q} outside [-1, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    pub throughput: bool,
    pub delta_quality: bool,
    pub rec_quality: bool,
    pub loss: bool,
    pub robustness: bool,
}

impl Verdicts {
    pub fn all(&self) -> bool {
        self.throughput && self.delta_quality && self.rec_quality && self.loss && self.robustness
    }
}

/// Checks one report against the thresholds. `reports_all_conditions` holds
/// the comparable reports of every condition in the experiment; robustness
/// requires the delta-quality bound to hold in all of them. Every tag in
/// `required` must be represented.
pub fn evaluate_constraints(
    report: &QualityReport,
    spec: &ConstraintSpec,
    reports_all_conditions: &[QualityReport],
    required: &[ConditionTag],
) -> Result<Verdicts> {
    spec.validate()?;
    let present: HashSet<(Environment, Traffic)> = reports_all_conditions
        .iter()
        .map(|r| (r.condition, r.traffic))
        .collect();
    let missing: Vec<String> = required
        .iter()
        .chain(std::iter::once(&report.condition_tag()))
        .filter(|t| !present.contains(&(t.environment, t.traffic)))
        .map(|t| format!("{}/{}", t.environment, t.traffic))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCondition(missing.join(", ")));
    }
    let delta_ok = |r: &QualityReport| r.ssim_delta >= spec.q_min_delta;
    Ok(Verdicts {
        throughput: report.compressed_bytes as f64 * 8.0 <= spec.t_net * spec.tau,
        delta_quality: delta_ok(report),
        rec_quality: report.ssim_rec >= spec.q_min_rec,
        loss: report.realized_loss <= spec.epsilon,
        robustness: reports_all_conditions.iter().all(delta_ok),
    })
}
