//! Experiment driver: JSON configs, the scenario grid, summary statistics,
//! BLER sweeps, and the pass/fail checks behind `--check`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{bler_to_config, ChannelConfig};
use crate::codec::CodecParams;
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_constraints, rfdvc_savings_vs_baseline, ConstraintSpec, QualityReport, REPORT_COLUMNS,
};
use crate::pipeline::{run_pipeline_with, PipelineVariant};
use crate::scene::{mix, ProceduralBackground, SceneSpec, DEFAULT_HEIGHT, DEFAULT_WIDTH, MAX_BATCH_LEN};
use crate::seg::SegParams;
use crate::types::{ConditionTag, Environment, Traffic};

/// Environment variable that replaces the configured seeds.
pub const SEED_ENV: &str = "RFDVC_SEED";

/// Minimum seed count for aggregate claims.
pub const MIN_AGGREGATE_SEEDS: usize = 10;

/// Fixed part of a Gilbert-Elliott channel; the bad-entry probability is
/// solved per BLER target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burstiness {
    pub p_bg: f64,
    pub e_g: f64,
    pub e_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub conditions: Vec<Environment>,
    pub traffic: Vec<Traffic>,
    pub variants: Vec<PipelineVariant>,
    pub quant_steps: Vec<u32>,
    pub bler_targets: Vec<f64>,
    pub burstiness: Option<Burstiness>,
    pub constraints: ConstraintSpec,
    pub width: u32,
    pub height: u32,
    pub batch_len: u32,
    pub gop_len: u32,
    pub slice_rows: u32,
    pub payload_bytes: usize,
    pub channel_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seeds: (0..MIN_AGGREGATE_SEEDS as u64).collect(),
            conditions: vec![Environment::Noon, Environment::Evening, Environment::Wet],
            traffic: vec![Traffic::Sparse, Traffic::Dense],
            variants: PipelineVariant::ALL.to_vec(),
            quant_steps: vec![8],
            bler_targets: vec![0.0],
            burstiness: None,
            constraints: ConstraintSpec::default(),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            batch_len: MAX_BATCH_LEN,
            gop_len: CodecParams::default().gop_len,
            slice_rows: CodecParams::default().slice_rows,
            payload_bytes: ChannelConfig::default().payload_bytes,
            channel_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// One point of the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellKey {
    pub seed: u64,
    pub condition: Environment,
    pub traffic: Traffic,
    pub variant: PipelineVariant,
    pub quant_step: u32,
    pub bler_target: f64,
}

#[derive(Clone, Debug)]
pub struct GridRow {
    pub key: CellKey,
    pub outcome: std::result::Result<QualityReport, String>,
}

impl GridRow {
    pub fn report(&self) -> Option<&QualityReport> {
        self.outcome.as_ref().ok()
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Replaces the seed list with `base, base+1, ...` of the same length
    /// and uses `base` as the channel seed.
    pub fn override_seed(&mut self, base: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (base..base + n).collect();
        self.channel_seed = base;
    }

    /// Applies `RFDVC_SEED` when it is set.
    pub fn apply_seed_env(&mut self) -> Result<()> {
        if let Some(base) = seed_from_env()? {
            self.override_seed(base);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("seeds", self.seeds.is_empty()),
            ("conditions", self.conditions.is_empty()),
            ("traffic", self.traffic.is_empty()),
            ("variants", self.variants.is_empty()),
            ("quant_steps", self.quant_steps.is_empty()),
            ("bler_targets", self.bler_targets.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::InvalidParameter(format!("`{name}` must not be empty")));
        }
        for &q in &self.quant_steps {
            self.codec_params(q)?;
        }
        for &b in &self.bler_targets {
            self.channel_config(b, 0)?;
        }
        self.scene_spec(self.seeds[0], self.conditions[0], self.traffic[0]).validate()?;
        self.constraints.validate()
    }

    /// Extra requirement of a BLER sweep: targets strictly ascending.
    pub fn validate_sweep(&self) -> Result<()> {
        self.validate()?;
        if self.bler_targets.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("bler_targets must be sorted ascending".into()));
        }
        Ok(())
    }

    pub fn scene_spec(&self, seed: u64, condition: Environment, traffic: Traffic) -> SceneSpec {
        SceneSpec {
            width: self.width,
            height: self.height,
            batch_len: self.batch_len,
            ..SceneSpec::for_condition(seed, condition, traffic)
        }
    }

    pub fn codec_params(&self, quant_step: u32) -> Result<CodecParams> {
        let p = CodecParams {
            quant_step,
            gop_len: self.gop_len,
            slice_rows: self.slice_rows,
        };
        p.validate()?;
        Ok(p)
    }

    /// Channel for one BLER target. Every BLER level of a scene seed shares
    /// the channel seed, so heavier loss only adds lost packets.
    pub fn channel_config(&self, bler_target: f64, scene_seed: u64) -> Result<ChannelConfig> {
        let base = match self.burstiness {
            None => bler_to_config(bler_target)?,
            Some(b) => {
                if !(b.e_g <= bler_target && bler_target < b.e_b) {
                    return Err(Error::InvalidParameter(format!(
                        "BLER {bler_target} unreachable with e_g {} and e_b {}",
                        b.e_g, b.e_b
                    )));
                }
                ChannelConfig {
                    p_gb: b.p_bg * (bler_target - b.e_g) / (b.e_b - bler_target),
                    p_bg: b.p_bg,
                    e_g: b.e_g,
                    e_b: b.e_b,
                    ..ChannelConfig::default()
                }
            }
        };
        let cfg = ChannelConfig {
            payload_bytes: self.payload_bytes,
            t_net: self.constraints.t_net,
            tau: self.constraints.tau,
            seed: mix(self.channel_seed, scene_seed),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Condition tags every robustness verdict must cover.
    pub fn required_conditions(&self) -> Vec<ConditionTag> {
        let mut out = Vec::new();
        for &c in &self.conditions {
            for &t in &self.traffic {
                out.push(ConditionTag::new(c, t));
            }
        }
        out
    }

    /// Cells in output order: seeds, conditions, traffic, variants, quant
    /// steps, BLER targets.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &condition in &self.conditions {
                for &traffic in &self.traffic {
                    for &variant in &self.variants {
                        for &quant_step in &self.quant_steps {
                            for &bler_target in &self.bler_targets {
                                out.push(CellKey {
                                    seed,
                                    condition,
                                    traffic,
                                    variant,
                                    quant_step,
                                    bler_target,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidParameter(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn run_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<QualityReport> {
    let spec = cfg.scene_spec(key.seed, key.condition, key.traffic);
    let provider = ProceduralBackground::new(spec.width, spec.height);
    let codec = cfg.codec_params(key.quant_step)?;
    let channel = cfg.channel_config(key.bler_target, key.seed)?;
    let run = run_pipeline_with(
        &provider,
        &spec,
        key.variant,
        &codec,
        &SegParams::default(),
        &channel,
        key.bler_target,
    )?;
    Ok(run.report)
}

/// Runs every cell on at most `jobs` threads and fills in the constraint
/// verdicts. A failing cell keeps its error and the rest of the grid runs.
pub fn run_cells(cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<GridRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rows: Vec<GridRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|key| GridRow {
                key: *key,
                outcome: run_cell(cfg, key).map_err(|e| e.to_string()),
            })
            .collect()
    });
    attach_verdicts(cfg, &mut rows);
    Ok(rows)
}

type PeerKey = (u64, PipelineVariant, u32, u64);

fn peer_key(k: &CellKey) -> PeerKey {
    (k.seed, k.variant, k.quant_step, k.bler_target.to_bits())
}

/// Verdicts compare each report with its peers under the other conditions
/// (same seed, variant, quant step and BLER). Incomplete coverage leaves
/// the verdict columns empty.
fn attach_verdicts(cfg: &ExperimentConfig, rows: &mut [GridRow]) {
    let required = cfg.required_conditions();
    let mut peers: BTreeMap<(u64, &'static str, u32, u64), Vec<QualityReport>> = BTreeMap::new();
    for row in rows.iter() {
        if let Some(r) = row.report() {
            let (s, v, q, b) = peer_key(&row.key);
            peers.entry((s, v.as_str(), q, b)).or_default().push(r.clone());
        }
    }
    for row in rows.iter_mut() {
        let (s, v, q, b) = peer_key(&row.key);
        let group = &peers.get(&(s, v.as_str(), q, b));
        if let (Ok(report), Some(group)) = (&mut row.outcome, group) {
            if let Ok(v) = evaluate_constraints(report, &cfg.constraints, group, &required) {
                *report = report.clone().with_verdicts(&v);
            }
        }
    }
}

/// Linear-interpolation quantile (`p` in [0, 1]) by partial selection.
/// Reorders `values`.
pub fn quantile(values: &mut [f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let pos = p * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut a, right) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 {
        return Some(a);
    }
    let b = right.iter().copied().min_by(f64::total_cmp).unwrap_or(a);
    Some(a + (b - a) * frac)
}

/// Q1, median, Q3.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    let mut buf = values.to_vec();
    Some((
        quantile(&mut buf, 0.25)?,
        quantile(&mut buf, 0.5)?,
        quantile(&mut buf, 0.75)?,
    ))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Per-cell aggregate over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub condition: Environment,
    pub traffic: Traffic,
    pub variant: PipelineVariant,
    pub quant_step: u32,
    pub bler_target: f64,
    pub n: usize,
    pub failures: usize,
    pub savings_q1: Option<f64>,
    pub savings_median: Option<f64>,
    pub savings_q3: Option<f64>,
    /// Savings against the baseline run of the same seed and cell.
    pub vs_baseline_q1: Option<f64>,
    pub vs_baseline_median: Option<f64>,
    pub vs_baseline_q3: Option<f64>,
    pub ssim_rec_mean: Option<f64>,
    pub ssim_rec_std: Option<f64>,
}

type CellId = (Environment, Traffic, PipelineVariant, u32, u64);

fn cell_id(k: &CellKey) -> CellId {
    (k.condition, k.traffic, k.variant, k.quant_step, k.bler_target.to_bits())
}

pub fn summarize(rows: &[GridRow]) -> Vec<SummaryRow> {
    let mut order: Vec<CellId> = Vec::new();
    let mut groups: BTreeMap<(u8, u8, &'static str, u32, u64), Vec<&GridRow>> = BTreeMap::new();
    let sort_key = |c: &CellId| (c.0 as u8, c.1 as u8, c.2.as_str(), c.3, c.4);
    for row in rows {
        let id = cell_id(&row.key);
        let slot = groups.entry(sort_key(&id)).or_default();
        if slot.is_empty() {
            order.push(id);
        }
        slot.push(row);
    }
    let baseline: BTreeMap<(u64, u8, u8, u32, u64), &QualityReport> = rows
        .iter()
        .filter(|r| r.key.variant == PipelineVariant::VcBaseline)
        .filter_map(|r| {
            let k = &r.key;
            r.report()
                .map(|rep| ((k.seed, k.condition as u8, k.traffic as u8, k.quant_step, k.bler_target.to_bits()), rep))
        })
        .collect();

    order
        .iter()
        .map(|id| {
            let group = &groups[&sort_key(id)];
            let ok: Vec<(&CellKey, &QualityReport)> =
                group.iter().filter_map(|r| r.report().map(|rep| (&r.key, rep))).collect();
            let savings: Vec<f64> = ok.iter().map(|(_, r)| r.savings_pct).collect();
            let ssim: Vec<f64> = ok.iter().map(|(_, r)| r.ssim_rec).collect();
            let vs: Vec<f64> = if id.2.is_rfdvc() {
                ok.iter()
                    .filter_map(|(k, r)| {
                        let b = baseline.get(&(k.seed, k.condition as u8, k.traffic as u8, k.quant_step, k.bler_target.to_bits()))?;
                        rfdvc_savings_vs_baseline(r, b).ok()
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let sq = quartiles(&savings);
            let vq = quartiles(&vs);
            let ms = mean_std(&ssim);
            SummaryRow {
                condition: id.0,
                traffic: id.1,
                variant: id.2,
                quant_step: id.3,
                bler_target: f64::from_bits(id.4),
                n: ok.len(),
                failures: group.len() - ok.len(),
                savings_q1: sq.map(|q| q.0),
                savings_median: sq.map(|q| q.1),
                savings_q3: sq.map(|q| q.2),
                vs_baseline_q1: vq.map(|q| q.0),
                vs_baseline_median: vq.map(|q| q.1),
                vs_baseline_q3: vq.map(|q| q.2),
                ssim_rec_mean: ms.map(|m| m.0),
                ssim_rec_std: ms.map(|m| m.1),
            }
        })
        .collect()
}

/// Writes `seed` followed by the report columns, one row per successful
/// cell.
pub fn write_grid_csv<W: Write>(w: W, rows: &[GridRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    let mut header = vec!["seed"];
    header.extend(REPORT_COLUMNS);
    out.write_record(&header)?;
    for row in rows {
        if let Some(r) = row.report() {
            out.serialize((row.key.seed, r))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_failures_csv<W: Write>(w: W, rows: &[GridRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["seed", "condition", "traffic", "variant", "quant_step", "bler_target", "error"])?;
    for row in rows {
        if let Err(e) = &row.outcome {
            let k = &row.key;
            out.write_record([
                k.seed.to_string(),
                k.condition.to_string(),
                k.traffic.to_string(),
                k.variant.to_string(),
                k.quant_step.to_string(),
                k.bler_target.to_string(),
                e.clone(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: W, summary: &[SummaryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in summary {
        out.serialize(s)?;
    }
    if summary.is_empty() {
        out.write_record([
            "condition", "traffic", "variant", "quant_step", "bler_target", "n", "failures",
            "savings_q1", "savings_median", "savings_q3", "vs_baseline_q1", "vs_baseline_median",
            "vs_baseline_q3", "ssim_rec_mean", "ssim_rec_std",
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GridOutput {
    pub rows: Vec<GridRow>,
    pub summary: Vec<SummaryRow>,
}

impl GridOutput {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Runs the grid and writes `grid.csv`, `summary.csv` and `failures.csv`
/// into the output directory.
pub fn run_grid(cfg: &ExperimentConfig, jobs: usize) -> Result<GridOutput> {
    let rows = run_cells(cfg, jobs)?;
    let summary = summarize(&rows);
    fs::create_dir_all(&cfg.output_dir)?;
    write_grid_csv(fs::File::create(cfg.output_dir.join("grid.csv"))?, &rows)?;
    write_summary_csv(fs::File::create(cfg.output_dir.join("summary.csv"))?, &summary)?;
    write_failures_csv(fs::File::create(cfg.output_dir.join("failures.csv"))?, &rows)?;
    Ok(GridOutput { rows, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub variant: PipelineVariant,
    pub bler_target: f64,
    pub ssim_rec_mean: f64,
    pub n: usize,
}

/// Mean reconstruction SSIM per variant and BLER; rain is kept apart.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepCurves {
    pub weathers: Vec<SweepPoint>,
    pub rain: Vec<SweepPoint>,
}

impl SweepCurves {
    pub fn curve(&self, rain: bool, variant: PipelineVariant) -> Vec<&SweepPoint> {
        let pts = if rain { &self.rain } else { &self.weathers };
        pts.iter().filter(|p| p.variant == variant).collect()
    }
}

pub fn sweep_curves(cfg: &ExperimentConfig, rows: &[GridRow]) -> SweepCurves {
    let mut curves = SweepCurves::default();
    for rain in [false, true] {
        let out = if rain { &mut curves.rain } else { &mut curves.weathers };
        for &variant in &cfg.variants {
            for &b in &cfg.bler_targets {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| {
                        r.key.variant == variant
                            && r.key.bler_target.to_bits() == b.to_bits()
                            && (r.key.condition == Environment::Rain) == rain
                    })
                    .filter_map(|r| r.report().map(|rep| rep.ssim_rec))
                    .collect();
                if let Some((mean, _)) = mean_std(&vals) {
                    out.push(SweepPoint {
                        variant,
                        bler_target: b,
                        ssim_rec_mean: mean,
                        n: vals.len(),
                    });
                }
            }
        }
    }
    curves
}

pub fn write_sweep_csv<W: Write>(w: W, points: &[SweepPoint]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["variant", "bler_target", "ssim_rec_mean", "n"])?;
    for p in points {
        out.serialize(p)?;
    }
    out.flush()?;
    Ok(())
}

const PALETTE: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// Line chart of SSIM against BLER, one polyline per variant.
pub fn sweep_svg(points: &[SweepPoint], title: &str) -> String {
    let (w, h, m) = (640.0, 400.0, 56.0);
    let xmax = points.iter().map(|p| p.bler_target).fold(0.0f64, f64::max).max(1e-9);
    let ymin = points.iter().map(|p| p.ssim_rec_mean).fold(1.0f64, f64::min).min(0.9).floor_to(0.1);
    let sx = |x: f64| m + x / xmax * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - ymin) / (1.0 - ymin) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, xml_escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let x = xmax * i as f64 / 4.0;
        let y = ymin + (1.0 - ymin) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.3}</text>"#, sx(x), h - m + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.2}</text>"#, m - 6.0, sy(y) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">BLER</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">SSIM</text>"#, h / 2.0, h / 2.0);

    let mut variants: Vec<PipelineVariant> = Vec::new();
    for p in points {
        if !variants.contains(&p.variant) {
            variants.push(p.variant);
        }
    }
    for (i, v) in variants.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = points
            .iter()
            .filter(|p| p.variant == *v)
            .map(|p| format!("{:.1},{:.1}", sx(p.bler_target), sy(p.ssim_rec_mean)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, w - m - 120.0, w - m - 100.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{v}</text>"#, w - m - 94.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

trait FloorTo {
    fn floor_to(self, step: f64) -> f64;
}

impl FloorTo for f64 {
    fn floor_to(self, step: f64) -> f64 {
        (self / step).floor() * step
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub rows: Vec<GridRow>,
    pub curves: SweepCurves,
}

/// Runs the grid over the BLER targets and writes `sweep.csv` and
/// `sweep_rain.csv` with matching SVG charts.
pub fn sweep_bler(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepOutput> {
    cfg.validate_sweep()?;
    let rows = run_cells(cfg, jobs)?;
    let curves = sweep_curves(cfg, &rows);
    fs::create_dir_all(&cfg.output_dir)?;
    for (name, pts, title) in [
        ("sweep", &curves.weathers, "SSIM vs BLER"),
        ("sweep_rain", &curves.rain, "SSIM vs BLER (rain)"),
    ] {
        write_sweep_csv(fs::File::create(cfg.output_dir.join(format!("{name}.csv")))?, pts)?;
        if !pts.is_empty() {
            fs::write(cfg.output_dir.join(format!("{name}.svg")), sweep_svg(pts, title))?;
        }
    }
    write_failures_csv(fs::File::create(cfg.output_dir.join("failures.csv"))?, &rows)?;
    Ok(SweepOutput { rows, curves })
}

/// Configuration of a single `run`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub variant: PipelineVariant,
    pub codec: CodecParams,
    pub channel: ChannelConfig,
    /// When set, replaces the loss parameters of `channel` with the default
    /// bursty chain at this rate.
    pub bler_target: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec::for_condition(0, Environment::Noon, Traffic::Sparse),
            variant: PipelineVariant::RfdvcGt,
            codec: CodecParams::default(),
            channel: ChannelConfig::default(),
            bler_target: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn channel_config(&self) -> Result<ChannelConfig> {
        match self.bler_target {
            None => Ok(self.channel.clone()),
            Some(b) => {
                let loss = bler_to_config(b)?;
                Ok(ChannelConfig {
                    p_gb: loss.p_gb,
                    p_bg: loss.p_bg,
                    e_g: loss.e_g,
                    e_b: loss.e_b,
                    ..self.channel.clone()
                })
            }
        }
    }
}

/// Runs one batch and writes `<t>_rec.ppm`, `trace.csv` and `report.csv`
/// (one row per frame) into `out`.
pub fn run_single(cfg: &RunConfig, out: &Path) -> Result<crate::pipeline::RunResult> {
    let channel = cfg.channel_config()?;
    let bler = match cfg.bler_target {
        Some(b) => b,
        None => crate::channel::analytical_loss_rate(&channel)?,
    };
    let provider = ProceduralBackground::new(cfg.scene.width, cfg.scene.height);
    let run = run_pipeline_with(
        &provider,
        &cfg.scene,
        cfg.variant,
        &cfg.codec,
        &SegParams::default(),
        &channel,
        bler,
    )?;
    fs::create_dir_all(out)?;
    for (t, f) in run.rec_frames.iter().enumerate() {
        crate::pnm::save_ppm(out.join(format!("{t}_rec.ppm")), f)?;
    }
    run.trace.write_csv(fs::File::create(out.join("trace.csv"))?)?;
    crate::metrics::write_reports(fs::File::create(out.join("report.csv"))?, &run.frame_reports)?;
    Ok(run)
}

/// Outcome of one `--check` assertion.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

pub const ORDERING_MIN_FRACTION: f64 = 0.95;
pub const SPARSE_SAVINGS_MIN_PCT: f64 = 50.0;
pub const RESILIENCE_MIN_GAP: f64 = 0.05;
pub const RESILIENCE_BLER: f64 = 0.25;
pub const INVERSION_TOLERANCE: f64 = 0.01;

/// Fraction of non-rain (seed, cell) groups with all three variants where
/// GT ≤ DS ≤ baseline in compressed bytes, plus the group count.
pub fn ordering_fraction(rows: &[GridRow]) -> (f64, usize) {
    let mut groups: BTreeMap<(u64, u8, u8, u32, u64), [Option<u64>; 3]> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.key.condition != Environment::Rain) {
        if let Some(r) = row.report() {
            let k = &row.key;
            let slot = groups
                .entry((k.seed, k.condition as u8, k.traffic as u8, k.quant_step, k.bler_target.to_bits()))
                .or_default();
            let i = PipelineVariant::ALL.iter().position(|v| *v == k.variant).unwrap_or(0);
            slot[i] = Some(r.compressed_bytes);
        }
    }
    let complete: Vec<[u64; 3]> = groups
        .values()
        .filter_map(|g| Some([g[0]?, g[1]?, g[2]?]))
        .collect();
    if complete.is_empty() {
        return (f64::NAN, 0);
    }
    let ok = complete.iter().filter(|[vc, gt, ds]| gt <= ds && ds <= vc).count();
    (ok as f64 / complete.len() as f64, complete.len())
}

/// Savings of the GT variant against the baseline, per seed, over sparse
/// loss-free cells outside rain.
pub fn sparse_gt_savings(rows: &[GridRow]) -> Vec<f64> {
    let pick = |v: PipelineVariant| -> BTreeMap<(u64, u8, u32), &QualityReport> {
        rows.iter()
            .filter(|r| {
                r.key.variant == v
                    && r.key.traffic == Traffic::Sparse
                    && r.key.condition != Environment::Rain
                    && r.key.bler_target == 0.0
            })
            .filter_map(|r| r.report().map(|rep| ((r.key.seed, r.key.condition as u8, r.key.quant_step), rep)))
            .collect()
    };
    let gt = pick(PipelineVariant::RfdvcGt);
    let vc = pick(PipelineVariant::VcBaseline);
    gt.iter()
        .filter_map(|(k, g)| rfdvc_savings_vs_baseline(g, vc.get(k)?).ok())
        .collect()
}

fn seed_count_check(cfg: &ExperimentConfig) -> Check {
    Check {
        name: "aggregate_seed_count",
        passed: cfg.seeds.len() >= MIN_AGGREGATE_SEEDS,
        detail: format!("{} seeds (need {MIN_AGGREGATE_SEEDS})", cfg.seeds.len()),
    }
}

pub fn check_grid(cfg: &ExperimentConfig, out: &GridOutput) -> Vec<Check> {
    let mut checks = vec![
        seed_count_check(cfg),
        Check {
            name: "cells_completed",
            passed: out.failures() == 0,
            detail: format!("{} of {} cells failed", out.failures(), out.rows.len()),
        },
    ];
    let (frac, n) = ordering_fraction(&out.rows);
    if n > 0 {
        checks.push(Check {
            name: "ideal_bound_ordering",
            passed: frac >= ORDERING_MIN_FRACTION,
            detail: format!("{:.1}% of {n} cells ordered (need {:.0}%)", frac * 100.0, ORDERING_MIN_FRACTION * 100.0),
        });
    }
    let savings = sparse_gt_savings(&out.rows);
    if let Some((_, med, _)) = quartiles(&savings) {
        checks.push(Check {
            name: "sparse_savings",
            passed: med >= SPARSE_SAVINGS_MIN_PCT,
            detail: format!("median {med:.1}% over {} runs (need {SPARSE_SAVINGS_MIN_PCT}%)", savings.len()),
        });
    }
    checks
}

/// Counts adjacent increases and reports whether they stay within
/// tolerance: at most one, smaller than [`INVERSION_TOLERANCE`].
pub fn non_increasing_within_tolerance(values: &[f64]) -> bool {
    let rises: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    rises.is_empty() || (rises.len() == 1 && rises[0] < INVERSION_TOLERANCE)
}

pub fn check_sweep(cfg: &ExperimentConfig, out: &SweepOutput) -> Vec<Check> {
    let c = &out.curves;
    let mut checks = vec![
        seed_count_check(cfg),
        Check {
            name: "cells_completed",
            passed: out.rows.iter().all(|r| r.outcome.is_ok()),
            detail: format!(
                "{} of {} cells failed",
                out.rows.iter().filter(|r| r.outcome.is_err()).count(),
                out.rows.len()
            ),
        },
    ];
    let at = |v: PipelineVariant| {
        c.curve(false, v)
            .into_iter()
            .find(|p| p.bler_target == RESILIENCE_BLER)
            .map(|p| p.ssim_rec_mean)
    };
    if let (Some(gt), Some(vc)) = (at(PipelineVariant::RfdvcGt), at(PipelineVariant::VcBaseline)) {
        checks.push(Check {
            name: "loss_resilience_gap",
            passed: gt - vc >= RESILIENCE_MIN_GAP,
            detail: format!("ssim gt {gt:.4} vs baseline {vc:.4} at BLER {RESILIENCE_BLER}"),
        });
    }
    for v in [PipelineVariant::RfdvcGt, PipelineVariant::VcBaseline] {
        let ys: Vec<f64> = c.curve(false, v).iter().map(|p| p.ssim_rec_mean).collect();
        if ys.len() > 1 {
            checks.push(Check {
                name: if v == PipelineVariant::RfdvcGt { "gt_curve_monotone" } else { "baseline_curve_monotone" },
                passed: non_increasing_within_tolerance(&ys),
                detail: format!("{ys:.4?}"),
            });
        }
    }
    checks
}
