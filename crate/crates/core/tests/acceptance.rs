//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line straight
//! to stderr (bypassing the test harness capture) and then asserts.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfdvc::channel::{analytical_loss_rate, bler_to_config, mean_burst_length, ChannelConfig, ChannelState, GilbertElliott};
use rfdvc::codec::{decode_all, encode_batch, CodecParams, YccFrame};
use rfdvc::harness::{
    non_increasing_within_tolerance, ordering_fraction, quartiles, run_cells, sweep_curves, ExperimentConfig,
};
use rfdvc::metrics::{
    compression_ratio, data_savings, evaluate_constraints, psnr, rfdvc_savings_vs_baseline, ssim, ConstraintSpec,
    QualityReport,
};
use rfdvc::pipeline::{class_oracle, run_pipeline, PipelineVariant};
use rfdvc::scene::{render_batch, render_pair, write_scenario, ProceduralBackground, SceneSpec};
use rfdvc::seg::{ideal_delta, seg_delta, SegParams};
use rfdvc::types::{Environment, Frame, FrameRole, Traffic};

const BIN: &str = env!("CARGO_BIN_EXE_rfdvc");

fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    let line = format!("[acceptance] criterion {id:>2} {tag} {name}: {detail}\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn plane_psnr(a: &[u8], b: &[u8]) -> f64 {
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

#[test]
fn criterion_01_codec_round_trip() {
    let start = Instant::now();
    let params = CodecParams { quant_step: 1, ..CodecParams::default() };
    let mut worst = f64::INFINITY;
    let mut frames = 0;
    for (seed, env) in [
        (1, Environment::Morning),
        (2, Environment::Noon),
        (3, Environment::Evening),
        (4, Environment::Wet),
        (5, Environment::Rain),
    ] {
        let spec = SceneSpec::for_condition(seed, env, Traffic::Dense);
        let cav: Vec<Frame> = render_batch(&ProceduralBackground::new(spec.width, spec.height), &spec)
            .unwrap()
            .into_iter()
            .map(|p| p.cav)
            .collect();
        let dec = decode_all(&encode_batch(&cav, &params).unwrap()).unwrap();
        for (src, out) in cav.iter().zip(&dec.planes) {
            let src = YccFrame::from_frame(src);
            for c in 0..3 {
                worst = worst.min(plane_psnr(&src.planes[c], &out.planes[c]));
            }
            frames += 1;
        }
    }

    // Block-constant content: gray frames exact in RGB, colored ones exact
    // in the coded planes.
    let (w, h) = (64u32, 48u32);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gray = Vec::new();
    let mut color = Vec::new();
    for _ in 0..4 {
        let mut g = Frame::filled(w, h, [0; 3], FrameRole::Cav).unwrap();
        let mut c = g.clone();
        for by in 0..h / 8 {
            for bx in 0..w / 8 {
                let v: u8 = rng.gen();
                let rgb: [u8; 3] = rng.gen();
                for y in by * 8..by * 8 + 8 {
                    for x in bx * 8..bx * 8 + 8 {
                        g.set_pixel(x, y, [v; 3]);
                        c.set_pixel(x, y, rgb);
                    }
                }
            }
        }
        gray.push(g);
        color.push(c);
    }
    let p8 = CodecParams::default();
    let gray_dec = decode_all(&encode_batch(&gray, &p8).unwrap()).unwrap();
    let gray_exact = gray.iter().zip(&gray_dec.frames).all(|(a, b)| a.pixels() == b.pixels());
    let color_dec = decode_all(&encode_batch(&color, &p8).unwrap()).unwrap();
    let color_exact = color
        .iter()
        .zip(&color_dec.planes)
        .all(|(a, b)| YccFrame::from_frame(a).planes == b.planes);

    let elapsed = start.elapsed();
    let passed = frames == 50 && worst >= 45.0 && gray_exact && color_exact && elapsed < Duration::from_secs(30);
    report(
        1,
        "codec round trip",
        passed,
        &format!(
            "{frames} frames, min plane PSNR {worst:.2} dB (>= 45), uniform exact gray={gray_exact} planes={color_exact}, {:.1}s (< 30s)",
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

fn encode_via_cli(frames_dir: &Path, out: &Path, q: u32) -> Vec<u8> {
    let status = Command::new(BIN)
        .args(["codec", "encode", "--suffix", "_cav.ppm", "--q", &q.to_string(), "--in"])
        .arg(frames_dir)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read(out).unwrap()
}

#[test]
fn criterion_02_codec_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SceneSpec::for_condition(21, Environment::Evening, Traffic::Dense);
    let dir = write_scenario(tmp.path(), &spec).unwrap();
    let a = encode_via_cli(&dir, &tmp.path().join("a.rfdv"), 8);
    let b = encode_via_cli(&dir, &tmp.path().join("b.rfdv"), 8);
    let identical = !a.is_empty() && a == b;

    let steps = [1, 2, 4, 8, 16, 32];
    let mut monotone = true;
    let mut sizes_seen = Vec::new();
    for seed in [3, 8, 13] {
        let s = SceneSpec::for_condition(seed, Environment::Noon, Traffic::Sparse);
        let cav: Vec<Frame> = render_batch(&ProceduralBackground::new(s.width, s.height), &s)
            .unwrap()
            .into_iter()
            .map(|p| p.cav)
            .collect();
        let sizes: Vec<usize> = steps
            .iter()
            .map(|&q| {
                encode_batch(&cav, &CodecParams { quant_step: q, ..CodecParams::default() })
                    .unwrap()
                    .total_bytes()
            })
            .collect();
        monotone &= sizes.windows(2).all(|w| w[1] <= w[0]);
        sizes_seen.push(sizes);
    }
    let passed = identical && monotone;
    report(
        2,
        "codec determinism",
        passed,
        &format!("two processes identical={identical} ({} bytes), sizes over q {steps:?}: {sizes_seen:?}", a.len()),
    );
    assert!(passed);
}

#[test]
fn criterion_03_gilbert_elliott_fidelity() {
    let start = Instant::now();
    let sets = [
        (0.1, 0.5, 0.0, 1.0),
        (0.05, 0.3, 0.0, 1.0),
        (0.02, 0.2, 0.01, 0.9),
        (0.2, 0.6, 0.0, 0.5),
        (0.3, 0.3, 0.05, 0.8),
    ];
    let mut passed = true;
    let mut details = Vec::new();
    for (i, &(p_gb, p_bg, e_g, e_b)) in sets.iter().enumerate() {
        let cfg = ChannelConfig { p_gb, p_bg, e_g, e_b, seed: 100 + i as u64, ..ChannelConfig::default() };
        let expected = analytical_loss_rate(&cfg).unwrap();
        let mut chain = GilbertElliott::new(&cfg).unwrap();
        let mut lost = 0usize;
        let mut bad = Vec::with_capacity(1_000_000);
        for _ in 0..1_000_000 {
            let (state, delivered) = chain.step();
            lost += usize::from(!delivered);
            bad.push(state == ChannelState::Bad);
        }
        let rate = lost as f64 / 1e6;
        let burst = mean_burst_length(&bad);
        let ok = (rate - expected).abs() <= 0.002 && (burst * p_bg - 1.0).abs() <= 0.05;
        passed &= ok;
        details.push(format!("rate {rate:.4}/{expected:.4} burst {burst:.3}/{:.3}", 1.0 / p_bg));
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(10);
    report(
        3,
        "Gilbert-Elliott fidelity",
        passed,
        &format!("{}; {:.1}s (< 10s)", details.join("; "), elapsed.as_secs_f64()),
    );
    assert!(passed);
}

#[test]
fn criterion_04_ideal_bound_ordering() {
    let cfg = ExperimentConfig {
        seeds: (0..10).collect(),
        conditions: vec![Environment::Noon, Environment::Evening, Environment::Wet],
        traffic: vec![Traffic::Sparse, Traffic::Dense],
        variants: PipelineVariant::ALL.to_vec(),
        quant_steps: vec![8],
        bler_targets: vec![0.0],
        ..ExperimentConfig::default()
    };
    let rows = run_cells(&cfg, jobs()).unwrap();
    let failures = rows.iter().filter(|r| r.outcome.is_err()).count();
    let (frac, n) = ordering_fraction(&rows);
    let passed = failures == 0 && n == 60 && frac >= 0.95;
    report(
        4,
        "ideal-bound ordering",
        passed,
        &format!("GT <= DS <= VC in {:.1}% of {n} cells (>= 95%)", frac * 100.0),
    );
    assert!(passed);
}

fn coverage(spec: &SceneSpec) -> f64 {
    let mut covered = 0u64;
    for t in 0..spec.batch_len {
        covered += render_pair(spec, t).unwrap().gt.union().area();
    }
    covered as f64 / (spec.width as u64 * spec.height as u64 * spec.batch_len as u64) as f64
}

fn savings_gt_vs_vc(spec: &SceneSpec) -> f64 {
    let ch = bler_to_config(0.0).unwrap();
    let c = CodecParams::default();
    let vc = run_pipeline(spec, PipelineVariant::VcBaseline, &c, &ch).unwrap();
    let gt = run_pipeline(spec, PipelineVariant::RfdvcGt, &c, &ch).unwrap();
    rfdvc_savings_vs_baseline(&gt.report, &vc.report).unwrap()
}

#[test]
fn criterion_05_savings_magnitude() {
    let start = Instant::now();
    let sparse: Vec<f64> = (0..12)
        .map(|seed| SceneSpec::for_condition(seed, Environment::Morning, Traffic::Sparse))
        .filter(|s| coverage(s) <= 0.10)
        .map(|s| savings_gt_vs_vc(&s))
        .collect();
    let median = quartiles(&sparse).map(|q| q.1).unwrap_or(f64::NAN);
    let full: Vec<f64> = (0..5)
        .map(|seed| {
            let s = SceneSpec {
                full_occluder: true,
                ..SceneSpec::for_condition(seed, Environment::Morning, Traffic::Sparse)
            };
            assert!(coverage(&s) == 1.0);
            savings_gt_vs_vc(&s)
        })
        .collect();
    let worst_full = full.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    let passed = sparse.len() >= 10 && median >= 50.0 && worst_full < 5.0 && elapsed < Duration::from_secs(120);
    report(
        5,
        "data-savings magnitude",
        passed,
        &format!(
            "sparse median {median:.1}% over {} scenes (>= 50%), full-coverage max |savings| {worst_full:.2}% (< 5%), {:.1}s",
            sparse.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_06_loss_resilience() {
    let cfg = ExperimentConfig {
        seeds: (0..10).collect(),
        conditions: vec![Environment::Noon, Environment::Evening, Environment::Wet],
        traffic: vec![Traffic::Sparse],
        variants: vec![PipelineVariant::VcBaseline, PipelineVariant::RfdvcGt],
        quant_steps: vec![8],
        bler_targets: vec![0.0, 0.05, 0.1, 0.25],
        ..ExperimentConfig::default()
    };
    let rows = run_cells(&cfg, jobs()).unwrap();
    let curves = sweep_curves(&cfg, &rows);
    let ys = |v| -> Vec<f64> { curves.curve(false, v).iter().map(|p| p.ssim_rec_mean).collect() };
    let (gt, vc) = (ys(PipelineVariant::RfdvcGt), ys(PipelineVariant::VcBaseline));
    let gap = gt[3] - vc[3];
    let passed = rows.iter().all(|r| r.outcome.is_ok())
        && gap >= 0.05
        && non_increasing_within_tolerance(&gt)
        && non_increasing_within_tolerance(&vc);
    report(
        6,
        "loss resilience",
        passed,
        &format!("at BLER 0.25 GT {:.4} vs VC {:.4} (gap {gap:.4} >= 0.05); GT {gt:.4?}; VC {vc:.4?}", gt[3], vc[3]),
    );
    assert!(passed);
}

#[test]
fn criterion_07_background_integrity() {
    let mut checked = 0u64;
    let mut mismatched = 0u64;
    for (seed, env) in [(2, Environment::Noon), (5, Environment::Evening), (9, Environment::Wet)] {
        let spec = SceneSpec::for_condition(seed, env, Traffic::Dense);
        for variant in [PipelineVariant::RfdvcGt, PipelineVariant::RfdvcDs] {
            for bler in [0.0, 0.05, 0.1, 0.25, 0.5] {
                let ch = bler_to_config(bler).unwrap().with_seed(seed);
                let r = run_pipeline(&spec, variant, &CodecParams::default(), &ch).unwrap();
                for t in 0..r.rec_frames.len() {
                    let inside = r.polys[t].rasterize(spec.width, spec.height);
                    for y in 0..spec.height {
                        for x in 0..spec.width {
                            if !inside.get(x, y) {
                                checked += 1;
                                mismatched += u64::from(r.rec_frames[t].pixel(x, y) != r.rf_frames[t].pixel(x, y));
                            }
                        }
                    }
                }
            }
        }
    }
    let passed = checked > 0 && mismatched == 0;
    report(
        7,
        "background integrity",
        passed,
        &format!("{mismatched} of {checked} pixels outside polygons differ from RF (BLER up to 0.5)"),
    );
    assert!(passed);
}

#[test]
fn criterion_08_segmentation_fidelity() {
    let p = SegParams::default();
    let mut ideal_px = 0u64;
    let mut covered = 0u64;
    for seed in 0..10 {
        for traffic in [Traffic::Sparse, Traffic::Dense] {
            let spec = SceneSpec::for_condition(seed, Environment::Morning, traffic);
            for t in [0, 4, 9] {
                let pair = render_pair(&spec, t).unwrap();
                let ideal = ideal_delta(&pair.cav, &pair.gt, &p).unwrap();
                let ds = seg_delta(&pair.rf, &pair.cav, &class_oracle(&pair.gt).unwrap(), &p).unwrap();
                for (i, px) in ideal.delta.pixels().chunks(3).enumerate() {
                    if px != [0, 0, 0] {
                        ideal_px += 1;
                        let (x, y) = (i as u32 % spec.width, i as u32 / spec.width);
                        covered += u64::from(ds.region.get(x, y));
                    }
                }
            }
        }
    }
    let frac = covered as f64 / ideal_px as f64;
    let mut empty_black = true;
    for seed in 0..5 {
        let spec = SceneSpec::for_condition(seed, Environment::Morning, Traffic::Empty);
        let pair = render_pair(&spec, 3).unwrap();
        let ds = seg_delta(&pair.rf, &pair.cav, &class_oracle(&pair.gt).unwrap(), &p).unwrap();
        empty_black &= ds.delta.pixels().iter().all(|&v| v == 0) && ds.polys.is_empty();
    }
    let passed = frac >= 0.99 && empty_black;
    report(
        8,
        "delta segmentation fidelity",
        passed,
        &format!("{:.3}% of {ideal_px} ideal pixels covered (>= 99%), empty scenes black={empty_black}", frac * 100.0),
    );
    assert!(passed);
}

fn random_report(rng: &mut ChaCha8Rng) -> QualityReport {
    let envs = [Environment::Noon, Environment::Evening, Environment::Wet];
    QualityReport {
        variant: PipelineVariant::RfdvcGt,
        condition: envs[rng.gen_range(0..3)],
        traffic: Traffic::Sparse,
        quant_step: 8,
        bler_target: rng.gen_range(0.0..0.5),
        realized_loss: rng.gen_range(0.0..0.5),
        raw_bytes: 1_843_200,
        compressed_bytes: rng.gen_range(1..400_000),
        savings_pct: 0.0,
        psnr_rec_db: rng.gen_range(10.0..60.0),
        ssim_rec: rng.gen_range(0.5..1.0),
        ssim_delta: rng.gen_range(0.5..1.0),
        c_throughput: None,
        c_delta_quality: None,
        c_rec_quality: None,
        c_loss: None,
        c_robustness: None,
    }
}

#[test]
fn criterion_09_metric_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ssim_ok = true;
    let mut psnr_ok = true;
    for _ in 0..20 {
        let mut px = vec![0u8; 48 * 32 * 3];
        rng.fill(&mut px[..]);
        let a = Frame::new(48, 32, px.clone(), FrameRole::Rec).unwrap();
        ssim_ok &= (ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-9;
        psnr_ok &= psnr(&a, &a).unwrap() == 99.0;
        px[0] ^= 1;
        let b = Frame::new(48, 32, px, FrameRole::Rec).unwrap();
        let v = psnr(&a, &b).unwrap();
        psnr_ok &= v < 99.0 && v.is_finite() && v == psnr(&b, &a).unwrap();
    }

    let mut identity_ok = true;
    for _ in 0..1000 {
        let raw: u64 = rng.gen_range(1..10_000_000);
        let comp: u64 = rng.gen_range(1..10_000_000);
        let s = data_savings(raw, comp).unwrap();
        let r = compression_ratio(raw, comp).unwrap();
        identity_ok &= (s - 100.0 * (1.0 - 1.0 / r)).abs() <= 1e-9 * s.abs().max(1.0);
    }

    let mut monotone_ok = true;
    for _ in 0..100 {
        let report = random_report(&mut rng);
        let mut peers: Vec<QualityReport> = (0..3).map(|_| random_report(&mut rng)).collect();
        peers.push(report.clone());
        let base = ConstraintSpec {
            t_net: rng.gen_range(1e6..50e6),
            tau: rng.gen_range(0.01..0.5),
            q_min_delta: rng.gen_range(0.5..1.0),
            q_min_rec: rng.gen_range(0.5..1.0),
            epsilon: rng.gen_range(0.0..0.5),
        };
        let f: f64 = rng.gen_range(0.0..1.0);
        let tightened = [
            ConstraintSpec { t_net: base.t_net * f, ..base.clone() },
            ConstraintSpec { tau: base.tau * f, ..base.clone() },
            ConstraintSpec { q_min_delta: base.q_min_delta + (1.0 - base.q_min_delta) * f, ..base.clone() },
            ConstraintSpec { q_min_rec: base.q_min_rec + (1.0 - base.q_min_rec) * f, ..base.clone() },
            ConstraintSpec { epsilon: base.epsilon * f, ..base.clone() },
        ];
        let v0 = evaluate_constraints(&report, &base, &peers, &[]).unwrap();
        let before = [v0.throughput, v0.delta_quality, v0.rec_quality, v0.loss, v0.robustness];
        for spec in &tightened {
            let v = evaluate_constraints(&report, spec, &peers, &[]).unwrap();
            let after = [v.throughput, v.delta_quality, v.rec_quality, v.loss, v.robustness];
            monotone_ok &= before.iter().zip(after).all(|(&b, a)| b || !a);
        }
    }

    let passed = ssim_ok && psnr_ok && identity_ok && monotone_ok;
    report(
        9,
        "metric sanity",
        passed,
        &format!("ssim(a,a)=1 {ssim_ok}, psnr cap {psnr_ok}, savings/ratio identity x1000 {identity_ok}, evaluator monotone x100 {monotone_ok}"),
    );
    assert!(passed);
}

fn grid_via_cli(config: &Path, out: &Path, jobs: usize) {
    let status = Command::new(BIN)
        .args(["grid", "--jobs", &jobs.to_string(), "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove(rfdvc::harness::SEED_ENV)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
}

#[test]
fn criterion_10_grid_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("grid.json");
    std::fs::write(
        &config,
        r#"{"seeds": [0, 1], "conditions": ["noon", "rain"], "traffic": ["sparse"],
            "variants": ["vc_baseline", "rfdvc_gt", "rfdvc_ds"], "quant_steps": [8],
            "bler_targets": [0.0, 0.1]}"#,
    )
    .unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    grid_via_cli(&config, &a, 1);
    grid_via_cli(&config, &b, jobs().max(2));
    let mut same = true;
    let mut sizes = Vec::new();
    for name in ["grid.csv", "summary.csv", "failures.csv"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        same &= x == y;
        sizes.push(format!("{name} {} bytes", x.len()));
    }
    let rows = std::fs::read_to_string(a.join("grid.csv")).unwrap().lines().count() - 1;
    let passed = same && rows == 24;
    report(
        10,
        "end-to-end determinism",
        passed,
        &format!("identical={same} across two runs (jobs 1 vs many), {rows} rows; {}", sizes.join(", ")),
    );
    assert!(passed);
}
