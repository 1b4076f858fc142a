use std::path::Path;
use std::process::{Command, Output};

use meltpath_core::config::ExperimentConfig;
use meltpath_core::reward::{enumerate_movements, MovementMetrics, RewardEntry, RewardTable, BACKEND_SURROGATE};

const TINY: &str = r#"
schema_version = 1
seed = 3

[domain]
size_mm = [0.2, 0.2, 0.03]
voxel_um = 5.0
grains = 40
n_ori = 8

[material]
clamp_radius_um = 2.5

[phase_field]
mobility_m4_js = 3.5e-6
width_um = 12.5

[grid]
n = 2
hatch_mm = 0.05

[train]
max_episodes = 200
"#;

fn meltpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meltpath"))
        .args(args)
        .env("MELTPATH_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn surrogate_csv(cfg: &ExperimentConfig) -> String {
    let grid = cfg.grid_spec().unwrap();
    let entries = enumerate_movements(&grid)
        .into_iter()
        .map(|movement| RewardEntry {
            movement,
            metrics: movement.in_bounds().then_some(MovementMetrics {
                avg_aspect_ratio: Some(1.5 + movement.from_index as f64 * 0.1),
                avg_grain_volume_um3: Some(800.0),
                melted_voxels: 100,
            }),
        })
        .collect();
    RewardTable::new(grid, BACKEND_SURROGATE, "", entries).unwrap().to_csv()
}

#[test]
fn voronoi_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let vgf = dir.path().join("field.vgf");
    ok(&meltpath(&[
        "gen-voronoi", "--size", "0.05,0.05,0.02", "--voxel-um", "2.5", "--seeds", "12", "--orientations", "6",
        "--seed", "4", "--out", s(&vgf),
    ]));
    let stats_dir = dir.path().join("stats");
    let out = meltpath(&["analyze", "--field", s(&vgf), "--min-volume", "0", "--out", s(&stats_dir)]);
    ok(&out);
    let stats = std::fs::read_to_string(stats_dir.join("stats.csv")).unwrap();
    assert_eq!(stats, String::from_utf8(out.stdout).unwrap());
    assert!(stats_dir.join("hist_aspect.csv").exists());
    assert!(stats_dir.join("hist_volume.csv").exists());
}

#[test]
fn gen_path_patterns() {
    let dir = tempfile::tempdir().unwrap();
    for pattern in ["serpentine", "spiral", "diagonal"] {
        let csv = dir.path().join(format!("{pattern}.csv"));
        ok(&meltpath(&[
            "gen-path", "--pattern", pattern, "--area", "0.1,0.1,0.3,0.3", "--hatch", "0.1", "--z", "0.05", "--out",
            s(&csv),
        ]));
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.lines().count() > 2, "{pattern}: {text}");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, TINY.replace("grains = 40", "grains = 0")).unwrap();
    let out = meltpath(&["ledger", "--config", s(&bad), "--out", s(&dir.path().join("l"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, format!("{TINY}\n[extra]\nx = 1\n")).unwrap();
    let out = meltpath(&["ledger", "--config", s(&unknown), "--out", s(&dir.path().join("l"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_meltpath"))
        .args(["ledger", "--config", s(&bad), "--out", "x"])
        .env("MELTPATH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_table_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let table = dir.path().join("table.csv");
    std::fs::write(&table, "from_index,action\n0,Sideways\n").unwrap();
    let out = meltpath(&["train", "--config", s(&cfg), "--table", s(&table), "--out", s(&dir.path().join("t"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn surrogate_table_roundtrip_and_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, TINY).unwrap();
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let src = dir.path().join("surrogate.csv");
    std::fs::write(&src, surrogate_csv(&cfg)).unwrap();

    let table = dir.path().join("table.csv");
    ok(&meltpath(&[
        "reward-table", "--config", s(&cfg_path), "--backend", "surrogate", "--from", s(&src), "--out", s(&table),
    ]));
    let served = RewardTable::read_csv(&table).unwrap();
    let original = RewardTable::read_csv(&src).unwrap();
    assert_eq!(served.entries(), original.entries());
    assert_eq!(served.backend, BACKEND_SURROGATE);
    assert_eq!(served.config_hash, cfg.hash());

    // A table for a different grid is a configuration error.
    let out = meltpath(&[
        "reward-table", "--config", s(&cfg_path), "--grid", "3", "--backend", "surrogate", "--from", s(&src),
        "--out", s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        ok(&meltpath(&[
            "train", "--config", s(&cfg_path), "--table", s(&table), "--episodes", "150", "--out", s(&out_dir),
        ]));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["episodes.csv", "snapshots.csv", "greedy_path.csv", "reward_curve.svg"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert_eq!(x, y, "{f} differs between runs");
    }
    let episodes = std::fs::read_to_string(a.join("episodes.csv")).unwrap();
    // Logs carry the hash of the effective config, overrides included.
    let mut effective = cfg.clone();
    effective.train.max_episodes = 150;
    assert!(episodes.starts_with(&format!("# config_hash={}", effective.hash())));
    assert_eq!(episodes.lines().filter(|l| !l.starts_with('#')).count(), 151);
    assert!(a.join("snapshots").join("path_ep000100.csv").exists());
}

#[test]
fn simulate_and_export_voi_on_tiny_domain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    let text = format!(
        "{TINY}\n[export]\npowers_w = [25.0]\ntrack_mm = 0.1\nvoi_mm = [0.05, 0.05, 0.02]\naugment = false\n"
    );
    std::fs::write(&cfg_path, &text).unwrap();
    let path = dir.path().join("path.csv");
    ok(&meltpath(&[
        "gen-path", "--pattern", "serpentine", "--area", "0.07,0.07,0.06,0.06", "--hatch", "0.03", "--z", "0.03",
        "--out", s(&path),
    ]));
    let sim = dir.path().join("sim");
    ok(&meltpath(&["simulate", "--config", s(&cfg_path), "--path", s(&path), "--out", s(&sim)]));
    for f in ["final.vgf", "melt.vgf", "stats.csv", "hist_aspect.csv", "hist_volume.csv", "ledger.csv"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }

    let voi = dir.path().join("voi");
    ok(&meltpath(&["export-voi", "--config", s(&cfg_path), "--tracks", "1", "--out", s(&voi)]));
    let manifest = meltpath_core::harness::ExportManifest::load(&voi).unwrap();
    assert!(manifest.complete);
    assert!(!manifest.samples.is_empty());
    assert!(manifest.missing_files(&voi).is_empty());
    assert_eq!(manifest.config_hash, ExperimentConfig::from_toml(&text).unwrap().hash());
}
