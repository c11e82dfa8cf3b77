use std::fs;

use rfdvc::channel::bler_to_config;
use rfdvc::codec::CodecParams;
use rfdvc::harness::{
    run_cells, run_grid, summarize, sweep_curves, write_failures_csv, CellKey, ExperimentConfig, GridRow,
};
use rfdvc::metrics::read_reports;
use rfdvc::pipeline::{run_pipeline, PipelineVariant};
use rfdvc::types::{Environment, Traffic};

fn small(seeds: Vec<u64>) -> ExperimentConfig {
    ExperimentConfig {
        seeds,
        conditions: vec![Environment::Noon],
        traffic: vec![Traffic::Sparse],
        variants: vec![PipelineVariant::RfdvcGt],
        quant_steps: vec![8],
        bler_targets: vec![0.0],
        batch_len: 3,
        ..ExperimentConfig::default()
    }
}

#[test]
fn one_cell_one_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { output_dir: tmp.path().to_path_buf(), ..small(vec![5]) };
    let out = run_grid(&cfg, 1).unwrap();
    assert_eq!(out.rows.len(), 1);
    let grid = fs::read_to_string(tmp.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
    assert!(grid.starts_with("seed,variant,condition,traffic,"));
    assert!(grid.lines().nth(1).unwrap().starts_with("5,rfdvc_gt,noon,sparse,8,0.0,"));
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);

    // The grid columns after `seed` are the report schema.
    let body: String = grid.lines().map(|l| l.split_once(',').unwrap().1.to_owned() + "\n").collect();
    let reports = read_reports(body.as_bytes()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].c_robustness, Some(true));
}

#[test]
fn zero_loss_sweep_matches_single_runs() {
    let cfg = ExperimentConfig {
        conditions: vec![Environment::Evening, Environment::Rain],
        variants: vec![PipelineVariant::VcBaseline, PipelineVariant::RfdvcGt],
        ..small(vec![1, 2])
    };
    let rows = run_cells(&cfg, 2).unwrap();
    let curves = sweep_curves(&cfg, &rows);
    for (rain, env) in [(false, Environment::Evening), (true, Environment::Rain)] {
        for v in [PipelineVariant::VcBaseline, PipelineVariant::RfdvcGt] {
            let expected: f64 = [1, 2]
                .iter()
                .map(|&seed| {
                    let spec = cfg.scene_spec(seed, env, Traffic::Sparse);
                    let ch = bler_to_config(0.0).unwrap();
                    run_pipeline(&spec, v, &CodecParams::default(), &ch).unwrap().report.ssim_rec
                })
                .sum::<f64>()
                / 2.0;
            let curve = curves.curve(rain, v);
            assert_eq!(curve.len(), 1);
            assert_eq!(curve[0].n, 2);
            assert!((curve[0].ssim_rec_mean - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn gt_savings_bound_ds_per_cell() {
    let cfg = ExperimentConfig {
        seeds: (0..10).collect(),
        conditions: vec![Environment::Noon, Environment::Evening, Environment::Wet],
        traffic: vec![Traffic::Sparse, Traffic::Dense],
        variants: vec![PipelineVariant::RfdvcGt, PipelineVariant::RfdvcDs],
        batch_len: 4,
        ..small(vec![])
    };
    let rows = run_cells(&cfg, 2).unwrap();
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 12);
    let mut cells = 0;
    let mut ok = 0;
    for gt in summary.iter().filter(|s| s.variant == PipelineVariant::RfdvcGt) {
        let ds = summary
            .iter()
            .find(|s| s.variant == PipelineVariant::RfdvcDs && s.condition == gt.condition && s.traffic == gt.traffic)
            .unwrap();
        cells += 1;
        ok += usize::from(gt.savings_median >= ds.savings_median);
    }
    assert!(ok as f64 >= 0.95 * cells as f64, "{ok}/{cells}");
}

fn sorted_quartiles(mut v: Vec<f64>) -> (f64, f64, f64) {
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    (q(0.25), q(0.5), q(0.75))
}

#[test]
fn summary_quartiles_match_sort_oracle() {
    let cfg = ExperimentConfig {
        variants: vec![PipelineVariant::VcBaseline, PipelineVariant::RfdvcGt],
        traffic: vec![Traffic::Sparse, Traffic::Dense],
        ..small((0..7).collect())
    };
    let rows = run_cells(&cfg, 2).unwrap();
    for s in summarize(&rows) {
        let savings: Vec<f64> = rows
            .iter()
            .filter(|r| r.key.variant == s.variant && r.key.traffic == s.traffic)
            .map(|r| r.report().unwrap().savings_pct)
            .collect();
        assert_eq!(savings.len(), 7);
        let (q1, med, q3) = sorted_quartiles(savings);
        assert_eq!(s.savings_q1, Some(q1));
        assert_eq!(s.savings_median, Some(med));
        assert_eq!(s.savings_q3, Some(q3));
        assert_eq!(s.vs_baseline_median.is_some(), s.variant.is_rfdvc());
    }
}

#[test]
fn failed_cells_are_kept_and_counted() {
    let cfg = small(vec![3]);
    let mut rows = run_cells(&cfg, 1).unwrap();
    let key = CellKey { seed: 4, ..rows[0].key };
    rows.push(GridRow { key, outcome: Err("provider failed: tile missing".into()) });
    let summary = summarize(&rows);
    assert_eq!(summary.len(), 1);
    assert_eq!((summary[0].n, summary[0].failures), (1, 1));
    let mut buf = Vec::new();
    write_failures_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("4,noon,sparse,rfdvc_gt,8,0,"));
    assert!(text.contains("tile missing"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let grid = ExperimentConfig::load(dir.join("grid.json")).unwrap();
    grid.validate().unwrap();
    assert_eq!(grid.cells().len(), 180);
    let sweep = ExperimentConfig::load(dir.join("sweep.json")).unwrap();
    sweep.validate_sweep().unwrap();
    let run = rfdvc::harness::RunConfig::load(dir.join("run.json")).unwrap();
    run.scene.validate().unwrap();
    let ch = run.channel_config().unwrap();
    assert!((rfdvc::channel::analytical_loss_rate(&ch).unwrap() - 0.1).abs() < 1e-12);
    assert_eq!(ch.seed, 7);
}
