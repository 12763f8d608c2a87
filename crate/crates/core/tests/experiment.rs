use std::fs;
use std::path::Path;

use ppro::experiment::{
    parse_key_values, run_experiment, run_sweep, DatasetSource, ExperimentConfig, ModelKind, SeedResult, Summary, SweepKind,
    FAILURE_MARKER,
};

const SMALL: &str = "
# small block model
name = small
dataset = sbm
sbm_n = 60
sbm_blocks = 3
sbm_p_in = 0.1
sbm_p_out = 0.01
sbm_dim = 8
sbm_labels_per_class = 5
steps = 3
hidden = 8
controller_hidden = 4
epochs = 6
patience = 6
";

fn parse(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text, Path::new("test.cfg"), Path::new("/data")).unwrap()
}

#[test]
fn config_text_round_trips() {
    let cfg = parse(&format!("{SMALL}repeats = 3\nsweep = grid\ngrid.lr = 0.01, 0.05\ngrid.epsilon = 0.5\ngrid_budget = 1\nno_step = true\n"));
    assert_eq!(cfg.repeats, 3);
    assert!(cfg.train.ablation.no_step);
    assert!(matches!(&cfg.sweep, SweepKind::Grid { space, budget: Some(1) } if space.len() == 2));
    assert_eq!(parse(&cfg.to_text()), cfg);

    let dir = parse("dataset = cora\nmodel = fixed\n");
    assert_eq!(dir.dataset, DatasetSource::Dir("/data/cora".into()));
    assert_eq!(dir.model, ModelKind::Fixed);
    assert_eq!(parse(&dir.to_text()), dir);
}

#[test]
fn bad_config_lines_are_rejected() {
    let origin = Path::new("x.cfg");
    let err = parse_key_values("a = 1\nno equals sign\n", origin).unwrap_err();
    assert!(err.to_string().starts_with("x.cfg:2:"), "{err}");
    for bad in ["unknown_key = 1", "repeats = 0", "model = mystery", "sweep = spiral", "lr = fast", "grid.lr = 0.1,,0.2"] {
        assert!(ExperimentConfig::parse(bad, origin, Path::new(".")).is_err(), "{bad}");
    }
}

#[test]
fn summary_uses_sample_standard_deviation() {
    let accs = [0.70, 0.72, 0.74, 0.76, 0.78, 0.80, 0.82, 0.84, 0.86, 0.88];
    let summary = Summary {
        runs: accs
            .iter()
            .enumerate()
            .map(|(i, &a)| SeedResult {
                seed: i as u64,
                val_acc: a,
                test_acc: a,
            })
            .collect(),
    };
    assert!((summary.mean() - 0.79).abs() < 1e-12);
    // Σ (a − 0.79)² = 0.033 over n − 1 = 9
    assert!((summary.std() - (0.033f64 / 9.0).sqrt()).abs() < 1e-12);
    let single = Summary { runs: summary.runs[..1].to_vec() };
    assert_eq!(single.std(), 0.0);
}

#[test]
fn repeats_write_per_seed_outputs() {
    let root = tempfile::tempdir().unwrap();
    let cfg = parse(&format!("{SMALL}repeats = 10\nseed = 5\n"));
    let (dir, summary) = run_experiment(&cfg, root.path()).unwrap();
    assert_eq!(dir, root.path().join("small"));
    assert_eq!(summary.runs.len(), 10);
    let seeds: Vec<u64> = summary.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, (5..15).collect::<Vec<_>>());
    for seed in 5..15 {
        for ext in ["csv", "summary.txt", "nodes.tsv", "ckpt"] {
            assert!(dir.join(format!("seed-{seed}.{ext}")).exists(), "seed-{seed}.{ext}");
        }
    }
    let csv = fs::read_to_string(dir.join("seed-5.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,loss_g,loss_p,loss_w,train_acc,val_acc");
    assert_eq!(csv.lines().count(), 7);
    let nodes = fs::read_to_string(dir.join("seed-5.nodes.tsv")).unwrap();
    assert_eq!(nodes.lines().filter(|l| !l.starts_with('#') && !l.starts_with("node")).count(), 60);
    let dot = fs::read_to_string(dir.join("graph.dot")).unwrap();
    assert!(dot.starts_with("graph ") && dot.contains(" -- ") && dot.contains("step="));
    assert_eq!(fs::read_to_string(dir.join("priority.tsv")).unwrap().lines().count(), 60);
    let written = fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(written.contains("runs = 10"));
    assert!(written.contains(&format!("test_acc_mean = {}", summary.mean())));
    assert_eq!(parse(&fs::read_to_string(dir.join("config.txt")).unwrap()), cfg);
    assert!(!dir.join(FAILURE_MARKER).exists());
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = parse(&format!("{SMALL}repeats = 2\n"));
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (da, _) = run_experiment(&cfg, a.path()).unwrap();
    let (db, _) = run_experiment(&cfg, b.path()).unwrap();
    for f in ["seed-0.csv", "seed-1.csv", "seed-0.nodes.tsv", "seed-0.ckpt", "graph.dot", "priority.tsv"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn depth_sweep_tabulates_each_depth() {
    let root = tempfile::tempdir().unwrap();
    let cfg = parse(&format!("{SMALL}sweep = depth\ndepths = 1,2,4\nrepeats = 2\n"));
    let dir = run_sweep(&cfg, root.path()).unwrap();
    let table = fs::read_to_string(dir.join("depth_sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "depth,runs,test_acc_mean,test_acc_std,val_acc_mean");
    let depths: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(depths, ["1", "2", "4"]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("2")));
    for d in [1, 2, 4] {
        assert!(dir.join(format!("depth-{d}/seed-1.csv")).exists());
    }
}

#[test]
fn grid_sweep_writes_a_leaderboard() {
    let root = tempfile::tempdir().unwrap();
    let cfg = parse(&format!("{SMALL}sweep = grid\ngrid.lr = 0.01,0.05\ngrid.dropout = 0,0.5\n"));
    let dir = run_sweep(&cfg, root.path()).unwrap();
    let board = fs::read_to_string(dir.join("leaderboard.tsv")).unwrap();
    assert_eq!(board.lines().next().unwrap(), "rank\tindex\tlr\tdropout\tval_acc\ttest_acc");
    assert_eq!(board.lines().count(), 5);
    assert!(dir.join("best/summary.txt").exists());
}

#[test]
fn failed_runs_leave_a_marker() {
    let root = tempfile::tempdir().unwrap();
    // controllers on the GCN backbone are rejected at training time
    let cfg = parse(&format!("{SMALL}backbone = gcn\n"));
    assert!(run_experiment(&cfg, root.path()).is_err());
    let marker = fs::read_to_string(root.path().join("small").join(FAILURE_MARKER)).unwrap();
    assert!(marker.contains("GCN"), "{marker}");
    // a later successful run clears it
    let ok = parse(SMALL);
    run_experiment(&ok, root.path()).unwrap();
    assert!(!root.path().join("small").join(FAILURE_MARKER).exists());
}
