//! End-to-end experiment stages shared by the CLI and the acceptance suite.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::domain::vgf::{save_grain_field, save_temperature};
use crate::domain::{augment_voi, voxels_for, GrainField, VoiWindow};
use crate::drl::{extract_greedy_path, masked_greedy_path, Env, RewardConfig, TrainOutcome};
use crate::error::{Error, Result};
use crate::morphology::{label_grains, stats, Histogram, MorphologyStats};
use crate::phasefield::{run_track, run_track_with, TrackSample, TrackSettings};
use crate::reward::{build_table, DnsBackend, RewardTable};
use crate::scanpath::{path_from_actions, Action, ScanPath};
use crate::thermal::TemperatureField;

/// Expansion budget for the masked decoder; a 5 x 5 grid needs far fewer.
pub const DECODE_BUDGET: usize = 1_000_000;

/// Mean volume of all grains in the initial field.
pub fn mean_initial_grain_volume(cfg: &ExperimentConfig, initial: &GrainField) -> Result<f64> {
    let grains = label_grains(initial, None, cfg.morphology.connectivity()?)?;
    Ok(stats(&grains, cfg.morphology.min_volume_um3).mean_volume_um3)
}

pub fn reward_config(cfg: &ExperimentConfig, initial: &GrainField) -> Result<RewardConfig> {
    cfg.reward.resolve(|| mean_initial_grain_volume(cfg, initial))
}

pub fn dns_backend(cfg: &ExperimentConfig, initial: &GrainField) -> Result<DnsBackend> {
    let mut b = DnsBackend::new(cfg.grid_spec()?, initial.clone(), cfg.laser, cfg.material, cfg.pf_params()?);
    b.settings = TrackSettings {
        sample_every: 0,
        ..cfg.track.clone()
    };
    b.connectivity = cfg.morphology.connectivity()?;
    b.min_volume_um3 = cfg.morphology.min_volume_um3;
    Ok(b)
}

/// DNS reward table for the configured grid; `parallelism` 0 uses the
/// global pool.
pub fn build_dns_table(cfg: &ExperimentConfig, initial: &GrainField, parallelism: usize) -> Result<RewardTable> {
    let backend = dns_backend(cfg, initial)?;
    build_table(&backend.grid, &backend, parallelism, &cfg.hash())
}

/// Boustrophedon path over the grid points.
pub fn zigzag_actions(cfg: &ExperimentConfig) -> Result<Vec<Action>> {
    Ok(cfg.grid_spec()?.serpentine_actions())
}

pub fn grid_path(cfg: &ExperimentConfig, actions: &[Action]) -> Result<ScanPath> {
    Ok(path_from_actions(&cfg.grid_spec()?, actions)?.with_laser(&cfg.laser))
}

/// Where the DRL path handed to the comparison came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrlPathSource {
    /// The final network's greedy rollout covers the grid.
    FinalGreedy,
    /// The latest snapshot whose greedy rollout covers the grid.
    Snapshot { episode: usize },
    /// Neither covers; decoded from the final network with invalid moves masked.
    MaskedDecode,
}

impl std::fmt::Display for DrlPathSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::FinalGreedy => write!(f, "final greedy rollout"),
            Self::Snapshot { episode } => write!(f, "greedy rollout of the episode-{episode} snapshot"),
            Self::MaskedDecode => write!(f, "masked greedy decode of the final network"),
        }
    }
}

/// Picks a covering action sequence from a training outcome.
pub fn select_drl_path(outcome: &TrainOutcome, env: &Env) -> Result<(Vec<Action>, DrlPathSource)> {
    let fin = extract_greedy_path(&outcome.net, env)?;
    if fin.covered {
        return Ok((fin.valid_actions().to_vec(), DrlPathSource::FinalGreedy));
    }
    if let Some(s) = outcome.snapshots.iter().rev().find(|s| s.rollout.covered) {
        return Ok((
            s.rollout.valid_actions().to_vec(),
            DrlPathSource::Snapshot { episode: s.episode },
        ));
    }
    Ok((masked_greedy_path(&outcome.net, env, DECODE_BUDGET)?, DrlPathSource::MaskedDecode))
}

/// Morphology of the region melted by one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub name: String,
    pub waypoints: usize,
    pub length_mm: f64,
    pub melted_voxels: usize,
    pub steps: usize,
    pub stats: MorphologyStats,
    #[serde(skip)]
    pub wall_s: f64,
}

pub fn evaluate_path(cfg: &ExperimentConfig, initial: &GrainField, name: &str, path: &ScanPath) -> Result<ArmReport> {
    let t0 = Instant::now();
    let settings = TrackSettings {
        sample_every: 0,
        ..cfg.track.clone()
    };
    let res = run_track(initial, path, &cfg.laser, &cfg.material, &cfg.pf_params()?, &settings)?;
    let grains = label_grains(&res.field, Some(&res.melt), cfg.morphology.connectivity()?)?;
    Ok(ArmReport {
        name: name.to_string(),
        waypoints: path.waypoints().len(),
        length_mm: path.length_mm(),
        melted_voxels: res.melt.count(),
        steps: res.steps(),
        stats: stats(&grains, cfg.morphology.min_volume_um3),
        wall_s: t0.elapsed().as_secs_f64(),
    })
}

/// Zigzag against DRL on one initial microstructure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub initial_field_hash: String,
    pub zigzag: ArmReport,
    pub drl: ArmReport,
    /// DRL minus zigzag; absent when either arm has no qualifying grain.
    pub delta_mean_aspect_ratio: Option<f64>,
    pub delta_mean_volume_um3: f64,
}

pub fn run_compare(
    cfg: &ExperimentConfig,
    initial: &GrainField,
    zigzag: &ScanPath,
    drl: &ScanPath,
) -> Result<ComparisonReport> {
    let (z, d) = rayon::join(
        || evaluate_path(cfg, initial, "zigzag", zigzag),
        || evaluate_path(cfg, initial, "drl", drl),
    );
    let (z, d) = (z?, d?);
    Ok(ComparisonReport {
        config_hash: cfg.hash(),
        initial_field_hash: initial.content_hash(),
        delta_mean_aspect_ratio: match (d.stats.mean_aspect_ratio, z.stats.mean_aspect_ratio) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        },
        delta_mean_volume_um3: d.stats.mean_volume_um3 - z.stats.mean_volume_um3,
        zigzag: z,
        drl: d,
    })
}

impl ComparisonReport {
    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = format!("# config_hash={}\n# initial_field_hash={}\n", self.config_hash, self.initial_field_hash);
        s.push_str("arm,waypoints,length_mm,melted_voxels,grain_count,included_count,mean_volume_um3,mean_aspect_ratio\n");
        for a in [&self.zigzag, &self.drl] {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                a.name,
                a.waypoints,
                a.length_mm,
                a.melted_voxels,
                a.stats.grain_count,
                a.stats.included_count,
                a.stats.mean_volume_um3,
                opt(a.stats.mean_aspect_ratio)
            );
        }
        let _ = writeln!(
            s,
            "delta,,,,,,{},{}",
            self.delta_mean_volume_um3,
            opt(self.delta_mean_aspect_ratio)
        );
        s
    }

    /// Writes the summary, per-arm histograms and SVG renderings to `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tag = format!("# config_hash={}\n", self.config_hash);
        let mut files = vec![(dir.join("compare_summary.csv"), self.summary_csv())];
        for a in [&self.zigzag, &self.drl] {
            files.push((
                dir.join(format!("hist_aspect_{}.csv", a.name)),
                format!("{tag}{}", a.stats.aspect_histogram.to_csv()),
            ));
            files.push((
                dir.join(format!("hist_volume_{}.csv", a.name)),
                format!("{tag}{}", a.stats.volume_histogram.to_csv()),
            ));
        }
        files.push((
            dir.join("hist_aspect.svg"),
            svg_histograms(
                "aspect ratio",
                &self.zigzag.stats.aspect_histogram,
                &self.drl.stats.aspect_histogram,
            ),
        ));
        files.push((
            dir.join("hist_volume.svg"),
            svg_histograms(
                "grain volume (um^3)",
                &self.zigzag.stats.volume_histogram,
                &self.drl.stats.volume_histogram,
            ),
        ));
        let mut written = Vec::new();
        for (p, text) in files {
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
        Ok(written)
    }
}

/// One exported training sample; paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub track: usize,
    /// Nominal track power; the source ramps down after the track ends.
    pub power_w: f64,
    pub step: usize,
    /// 0 for the original orientation, otherwise 1 + index into the
    /// augmentation table.
    pub augmentation: usize,
    pub voi_origin_voxel: [usize; 3],
    pub grain_t: String,
    pub temperature_t: String,
    pub temperature_next: String,
    pub grain_next: String,
}

impl SampleEntry {
    pub fn files(&self) -> [&str; 4] {
        [&self.grain_t, &self.temperature_t, &self.temperature_next, &self.grain_next]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub config_hash: String,
    pub voxel_um: f64,
    pub voi_dims: [usize; 3],
    pub n_ori: usize,
    pub step_stride: usize,
    /// False when the export stopped early; the listed samples are intact.
    pub complete: bool,
    pub samples: Vec<SampleEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl ExportManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", p.display())))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Listed files that are missing under `dir`.
    pub fn missing_files(&self, dir: &Path) -> Vec<String> {
        self.samples
            .iter()
            .flat_map(|s| s.files())
            .filter(|f| !dir.join(f).is_file())
            .map(str::to_string)
            .collect()
    }
}

/// Straight single track along x through the domain center at the top
/// surface, `track_mm` long.
pub fn export_track(cfg: &ExperimentConfig, power_w: f64) -> Result<ScanPath> {
    let ext = cfg.domain_spec()?.voxel_extent_mm();
    let len = cfg.export.track_mm.min(ext[0]);
    let x0 = (ext[0] - len) / 2.0;
    let laser = crate::thermal::LaserParams {
        power_w,
        ..cfg.laser
    };
    ScanPath::new(vec![[x0, ext[1] / 2.0, ext[2]], [x0 + len, ext[1] / 2.0, ext[2]]], &laser)
}

/// Runs `tracks` single-track simulations (cycling through the power
/// sweep), pairs every sample with the one `sample_every` steps later and
/// writes the four VOI files of each pair, plus augmented copies when
/// enabled. On failure a manifest listing the samples written so far is
/// left in `out` with `complete = false` and the error is returned.
pub fn export_voi_dataset(
    cfg: &ExperimentConfig,
    initial: &GrainField,
    tracks: usize,
    out: &Path,
) -> Result<ExportManifest> {
    let stride = cfg.track.sample_every;
    if stride == 0 {
        return Err(Error::Config("track.sample_every must be positive for export".into()));
    }
    if cfg.export.powers_w.is_empty() {
        return Err(Error::Config("export.powers_w is empty".into()));
    }
    let spec = *initial.spec();
    let voi_dims = cfg.export.voi_mm.map(|mm| voxels_for(mm, spec.voxel_um));
    if (0..3).any(|k| voi_dims[k] > spec.dims[k]) {
        return Err(Error::Config(format!(
            "VOI of {voi_dims:?} voxels exceeds the domain {:?}",
            spec.dims
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = ExportManifest {
        config_hash: cfg.hash(),
        voxel_um: spec.voxel_um,
        voi_dims,
        n_ori: initial.n_ori(),
        step_stride: stride,
        complete: false,
        samples: Vec::new(),
    };
    let result = export_tracks(cfg, initial, tracks, out, &mut manifest);
    manifest.complete = result.is_ok();
    let saved = manifest.save(out);
    result?;
    saved?;
    Ok(manifest)
}

fn export_tracks(
    cfg: &ExperimentConfig,
    initial: &GrainField,
    tracks: usize,
    out: &Path,
    manifest: &mut ExportManifest,
) -> Result<()> {
    let pf = cfg.pf_params()?;
    let hash = manifest.config_hash.clone();
    for track in 0..tracks {
        let power_w = cfg.export.powers_w[track % cfg.export.powers_w.len()];
        let path = export_track(cfg, power_w)?;
        let laser = path.laser();
        let mut prev: Option<TrackSample> = None;
        run_track_with(initial, &path, &laser, &cfg.material, &pf, &cfg.track, |cur| {
            if let Some(p) = prev.take() {
                write_pair(cfg, &p, &cur, track, power_w, out, &hash, manifest)?;
                // Keep the partial manifest current so a crash loses at most one pair.
                manifest.save(out)?;
            }
            prev = Some(cur);
            Ok(())
        })?;
    }
    Ok(())
}

fn write_pair(
    cfg: &ExperimentConfig,
    a: &TrackSample,
    b: &TrackSample,
    track: usize,
    power_w: f64,
    out: &Path,
    hash: &str,
    manifest: &mut ExportManifest,
) -> Result<()> {
    let spec = *a.field.spec();
    let dims = manifest.voi_dims;
    let window = VoiWindow::centered(&spec, a.laser_mm, dims)?;
    let g0 = crate::domain::extract_window(&a.field.without_eta(), &window)?;
    let g1 = crate::domain::extract_window(&b.field.without_eta(), &window)?;
    let t0 = voi_temperature(&a.temperature, &window)?;
    let t1 = voi_temperature(&b.temperature, &window)?;
    let mut variants = vec![(g0.clone(), t0.clone(), t1.clone(), g1.clone())];
    if cfg.export.augment {
        let first = augment_voi(&g0, &t0)?;
        let second = augment_voi(&g1, &t1)?;
        for ((ga, ta), (gb, tb)) in first.into_iter().zip(second) {
            variants.push((ga, ta, tb, gb));
        }
    }
    for (aug, (ga, ta, tb, gb)) in variants.into_iter().enumerate() {
        let id = manifest.samples.len();
        let name = |kind: &str| format!("s{id:06}_{kind}.vgf");
        let entry = SampleEntry {
            id,
            track,
            power_w,
            step: a.step,
            augmentation: aug,
            voi_origin_voxel: window.origin_voxel,
            grain_t: name("grain_t"),
            temperature_t: name("temp_t"),
            temperature_next: name("temp_next"),
            grain_next: name("grain_next"),
        };
        save_grain_field(out.join(&entry.grain_t), &ga, Some(hash))?;
        save_temperature(out.join(&entry.temperature_t), &ta, Some(hash))?;
        save_temperature(out.join(&entry.temperature_next), &tb, Some(hash))?;
        save_grain_field(out.join(&entry.grain_next), &gb, Some(hash))?;
        manifest.samples.push(entry);
    }
    Ok(())
}

fn voi_temperature(t: &TemperatureField, window: &VoiWindow) -> Result<TemperatureField> {
    let spec = crate::domain::DomainSpec::from_dims(window.dims, t.spec().voxel_um)?;
    TemperatureField::new(spec, window.copy_out(t.spec(), t.values(), 1))
}

/// Wall-clock bookkeeping per pipeline stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RuntimeLedger {
    pub config_hash: String,
    pub rows: Vec<LedgerRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub stage: String,
    pub seconds: f64,
    /// Phase-field steps executed by the stage, when it ran the DNS.
    pub dns_steps: Option<usize>,
    /// Seconds per surrogate step covering the same stride, when measured.
    pub surrogate_s_per_ml_step: Option<f64>,
}

impl RuntimeLedger {
    pub const CSV_HEADER: &'static str = "stage,seconds,dns_steps,dns_s_per_ml_step,surrogate_s_per_ml_step,ratio";

    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            rows: Vec::new(),
        }
    }

    pub fn record(&mut self, stage: impl Into<String>, seconds: f64, dns_steps: Option<usize>) {
        self.rows.push(LedgerRow {
            stage: stage.into(),
            seconds,
            dns_steps,
            surrogate_s_per_ml_step: None,
        });
    }

    /// Times `f` and records it as `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let v = f()?;
        self.record(stage, t0.elapsed().as_secs_f64(), None);
        Ok(v)
    }

    /// CSV with one row per stage. The per-ML-step DNS cost covers
    /// `stride` phase-field steps; the ratio needs both sides.
    pub fn to_csv(&self, stride: usize) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut s = format!("# config_hash={}\n{}\n", self.config_hash, Self::CSV_HEADER);
        for r in &self.rows {
            let dns = r
                .dns_steps
                .filter(|&n| n > 0)
                .map(|n| r.seconds / n as f64 * stride as f64);
            let ratio = match (dns, r.surrogate_s_per_ml_step) {
                (Some(d), Some(m)) if m > 0.0 => Some(d / m),
                _ => None,
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.stage,
                r.seconds,
                r.dns_steps.map_or(String::new(), |n| n.to_string()),
                opt(dns),
                opt(r.surrogate_s_per_ml_step),
                opt(ratio)
            );
        }
        s
    }
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 360.0;
const PAD: f64 = 40.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n\
         <line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>\n",
        SVG_W / 2.0,
        SVG_H - PAD,
        SVG_W - PAD,
        SVG_H - PAD,
        SVG_H - PAD
    )
}

/// Side-by-side bars of two histograms with identical bins.
pub fn svg_histograms(title: &str, zigzag: &Histogram, drl: &Histogram) -> String {
    let mut s = svg_open(title);
    let bins = zigzag.counts.len().max(1);
    let peak = zigzag.counts.iter().chain(&drl.counts).copied().max().unwrap_or(0).max(1) as f64;
    let bw = (SVG_W - 2.0 * PAD) / bins as f64;
    let plot_h = SVG_H - 2.0 * PAD;
    for (k, (h, color)) in [(zigzag, "#1f77b4"), (drl, "#ff7f0e")].into_iter().enumerate() {
        for (i, &c) in h.counts.iter().enumerate() {
            let height = c as f64 / peak * plot_h;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{height:.2}\" fill=\"{color}\"/>",
                PAD + i as f64 * bw + k as f64 * bw / 2.0,
                SVG_H - PAD - height,
                bw / 2.0
            );
        }
    }
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{}\">{}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        SVG_H - PAD + 16.0,
        zigzag.edges.first().copied().unwrap_or(0.0),
        SVG_W - PAD,
        SVG_H - PAD + 16.0,
        zigzag.edges.last().copied().unwrap_or(0.0)
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{PAD}\" fill=\"#1f77b4\">zigzag</text><text x=\"{}\" y=\"{}\" fill=\"#ff7f0e\">DRL</text>",
        SVG_W - PAD - 60.0,
        SVG_W - PAD - 60.0,
        PAD + 16.0
    );
    s.push_str("</svg>\n");
    s
}

/// Polyline of a series against its index, such as cumulative reward per
/// episode.
pub fn svg_series(title: &str, values: &[f64]) -> String {
    let mut s = svg_open(title);
    if values.len() >= 2 {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = values.len() - 1;
        let mut pts = String::new();
        for (i, v) in values.iter().enumerate() {
            let x = PAD + i as f64 / n as f64 * (SVG_W - 2.0 * PAD);
            let y = SVG_H - PAD - (v - lo) / span * (SVG_H - 2.0 * PAD);
            let _ = write!(pts, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"#1f77b4\" points=\"{}\"/>",
            pts.trim_end()
        );
        let _ = writeln!(
            s,
            "<text x=\"4\" y=\"{PAD}\">{hi}</text><text x=\"4\" y=\"{}\">{lo}</text>",
            SVG_H - PAD
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
schema_version = 1
seed = 4
[domain]
size_mm = [0.3, 0.2, 0.06]
voxel_um = 5.0
grains = 100
[material]
clamp_radius_um = 2.5
[phase_field]
mobility_m4_js = 3.5e-6
width_um = 12.5
[track]
sample_every = 20
[grid]
n = 2
hatch_mm = 0.1
[export]
track_mm = 0.1
voi_mm = [0.06, 0.06, 0.03]
augment = false
"#,
        )
        .unwrap()
    }

    #[test]
    fn identical_paths_give_zero_deltas() {
        let cfg = small_cfg();
        let init = cfg.initial_field().unwrap();
        let p = grid_path(&cfg, &zigzag_actions(&cfg).unwrap()).unwrap();
        let r = run_compare(&cfg, &init, &p, &p).unwrap();
        assert_eq!(r.delta_mean_volume_um3, 0.0);
        assert!(r.delta_mean_aspect_ratio.is_none_or(|d| d == 0.0));
        assert_eq!(r.initial_field_hash, init.content_hash());
        assert!(r.zigzag.melted_voxels > 0);
        let dir = tempfile::tempdir().unwrap();
        let files = r.write(dir.path()).unwrap();
        assert_eq!(files.len(), 7);
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert!(text.contains(&cfg.hash()));
    }

    #[test]
    fn export_counts_match_schedule_and_disk() {
        let mut cfg = small_cfg();
        let init = cfg.initial_field().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = export_voi_dataset(&cfg, &init, 1, dir.path()).unwrap();
        let path = export_track(&cfg, cfg.export.powers_w[0]).unwrap();
        let steps = run_track(&init, &path, &path.laser(), &cfg.material, &cfg.pf_params().unwrap(), &cfg.track)
            .unwrap()
            .steps();
        assert_eq!(m.samples.len(), steps / 20);
        assert!(m.complete);
        assert!(m.missing_files(dir.path()).is_empty());
        assert_eq!(ExportManifest::load(dir.path()).unwrap(), m);
        let vgf = std::fs::read_dir(dir.path()).unwrap().filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "vgf")
        });
        assert_eq!(vgf.count(), 4 * m.samples.len());

        cfg.export.augment = true;
        let dir2 = tempfile::tempdir().unwrap();
        let m2 = export_voi_dataset(&cfg, &init, 1, dir2.path()).unwrap();
        assert_eq!(m2.samples.len(), 20 * m.samples.len());
        assert_eq!(m2.samples[0].grain_t, m.samples[0].grain_t);
    }

    #[test]
    fn export_failure_leaves_partial_manifest() {
        let cfg = small_cfg();
        let init = cfg.initial_field().unwrap();
        let dir = tempfile::tempdir().unwrap();
        // A directory squatting on the third sample's first file makes the write fail.
        std::fs::create_dir(dir.path().join("s000002_grain_t.vgf")).unwrap();
        assert!(export_voi_dataset(&cfg, &init, 1, dir.path()).is_err());
        let m = ExportManifest::load(dir.path()).unwrap();
        assert!(!m.complete);
        assert_eq!(m.samples.len(), 2);
        assert!(m.missing_files(dir.path()).is_empty());
    }

    #[test]
    fn ledger_ratio_needs_surrogate() {
        let mut l = RuntimeLedger::new("abc");
        l.record("simulate", 2.0, Some(1000));
        l.record("analyze", 0.5, None);
        let csv = l.to_csv(100);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[2], "simulate,2,1000,0.2,,");
        l.rows[0].surrogate_s_per_ml_step = Some(0.001);
        assert!(l.to_csv(100).lines().nth(2).unwrap().ends_with(",0.001,200"));
    }

    #[test]
    fn svg_is_well_formed() {
        let h = Histogram::new(crate::morphology::BinSpec::ASPECT, [1.5, 2.0, 2.5]);
        let s = svg_histograms("ar", &h, &h);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(svg_series("r", &[1.0, 3.0, 2.0]).contains("polyline"));
    }
}
