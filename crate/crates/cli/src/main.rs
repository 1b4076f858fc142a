use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use meltpath_core::config::ExperimentConfig;
use meltpath_core::domain::vgf::{load_grain_field, load_mask, save_grain_field, save_mask};
use meltpath_core::domain::{generate_voronoi_microstructure, DomainSpec, GrainField, DEFAULT_N_ORI};
use meltpath_core::drl::{train, Env, RewardCase, TrainOutcome};
use meltpath_core::harness::{
    build_dns_table, evaluate_path, export_voi_dataset, grid_path, reward_config, run_compare, select_drl_path,
    svg_series, zigzag_actions, RuntimeLedger,
};
use meltpath_core::morphology::{label_grains, stats};
use meltpath_core::phasefield::{run_track, TrackSettings};
use meltpath_core::reward::{build_table, RewardTable, TableBackend, BACKEND_DNS, BACKEND_SURROGATE};
use meltpath_core::scanpath::{diagonal, spiral_clockwise, vertical_serpentine, ScanArea, ScanPath};
use meltpath_core::Error;

const THREADS_ENV: &str = "MELTPATH_THREADS";

#[derive(Parser)]
#[command(name = "meltpath", version, about = "Grain-structure-aware laser scan-path planning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a Voronoi microstructure and save it as .vgf.
    GenVoronoi {
        /// Domain size in mm, as x,y,z.
        #[arg(long, value_delimiter = ',')]
        size: Vec<f64>,
        #[arg(long)]
        voxel_um: f64,
        #[arg(long)]
        seeds: usize,
        #[arg(long, default_value_t = DEFAULT_N_ORI)]
        orientations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scan path as CSV.
    GenPath {
        #[arg(long, value_enum)]
        pattern: Pattern,
        /// Scan area as x0,y0,width,height in mm.
        #[arg(long, value_delimiter = ',')]
        area: Vec<f64>,
        #[arg(long)]
        hatch: f64,
        #[arg(long)]
        z: f64,
        #[arg(long, default_value_t = 25.0)]
        power: f64,
        #[arg(long, default_value_t = 0.5)]
        speed: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the phase-field simulation of a path and save the result.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        path: PathBuf,
        /// Initial field; generated from the config when absent.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grain statistics of a field, optionally restricted to a melt mask.
    Analyze {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        connectivity: usize,
        #[arg(long, default_value_t = meltpath_core::morphology::DEFAULT_MIN_VOLUME_UM3)]
        min_volume: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export VOI training pairs from single-track simulations.
    ExportVoi {
        #[arg(long)]
        config: PathBuf,
        /// Number of tracks; defaults to one per configured power.
        #[arg(long)]
        tracks: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute the per-movement reward table.
    RewardTable {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        hatch: Option<f64>,
        #[arg(long, value_enum, default_value_t = Backend::Dns)]
        backend: Backend,
        /// Table produced by the surrogate, required with `--backend surrogate`.
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the DQN on a reward table.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        case: Option<u8>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the zigzag path with a DRL path on the same initial field.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// DRL path CSV; trained from `--table` when absent.
        #[arg(long)]
        drl_path: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time one single-track DNS run and write the runtime ledger.
    Ledger {
        #[arg(long)]
        config: PathBuf,
        /// Measured surrogate seconds per ML step, for the speed-up ratio.
        #[arg(long)]
        surrogate_s_per_step: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Serpentine,
    Spiral,
    Diagonal,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Backend {
    Dns,
    Surrogate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Numeric { .. } | Error::NonFinite(_)) => 3,
        Some(Error::Format { .. }) => 4,
        _ => 1,
    }
}

/// Sizes the global pool from the environment, capped by the hardware.
fn init_threads() -> Result<()> {
    let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .parse()
                .map_err(|_| anyhow!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
            if n == 0 {
                bail!("{THREADS_ENV} must be positive");
            }
            n.min(hw)
        }
        Err(_) => hw,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenVoronoi {
            size,
            voxel_um,
            seeds,
            orientations,
            seed,
            out,
        } => {
            let size = fixed_len::<3>(&size, "--size")?;
            let spec = DomainSpec::new(size, voxel_um)?;
            let field = generate_voronoi_microstructure(spec, seeds, orientations, seed)?;
            save_grain_field(&out, &field, None)?;
            println!("wrote {} ({:?} voxels)", out.display(), spec.dims);
        }
        Cmd::GenPath {
            pattern,
            area,
            hatch,
            z,
            power,
            speed,
            out,
        } => {
            let area = fixed_len::<4>(&area, "--area")?;
            let a = ScanArea {
                origin_mm: [area[0], area[1]],
                size_mm: [area[2], area[3]],
                z_mm: z,
            };
            let laser = meltpath_core::thermal::LaserParams { power_w: power, speed_m_s: speed };
            laser.validate()?;
            let path = match pattern {
                Pattern::Serpentine => vertical_serpentine(&a, hatch, None)?,
                Pattern::Spiral => spiral_clockwise(&a, hatch)?,
                Pattern::Diagonal => diagonal(&a, hatch)?,
            }
            .with_laser(&laser);
            path.write_csv(&out)?;
            println!("wrote {} ({} waypoints, {:.3} mm)", out.display(), path.waypoints().len(), path.length_mm());
        }
        Cmd::Simulate { config, path, field, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let initial = initial_field(&cfg, field.as_deref())?;
            let path = ScanPath::read_csv(&path)?;
            create_dir(&out)?;
            let hash = cfg.hash();
            let settings = TrackSettings {
                sample_every: 0,
                ..cfg.track.clone()
            };
            let t0 = Instant::now();
            let res = run_track(&initial, &path, &path.laser(), &cfg.material, &cfg.pf_params()?, &settings)?;
            let secs = t0.elapsed().as_secs_f64();
            let fin = res.final_field(&initial)?;
            let mask = res.melt_mask(initial.spec());
            save_grain_field(out.join("final.vgf"), &fin, Some(&hash))?;
            save_mask(out.join("melt.vgf"), &mask, Some(&hash))?;
            let grains = label_grains(&res.field, Some(&res.melt), cfg.morphology.connectivity()?)?;
            let st = stats(&grains, cfg.morphology.min_volume_um3);
            write_tagged(&out.join("stats.csv"), &hash, &st.to_csv())?;
            write_tagged(&out.join("hist_aspect.csv"), &hash, &st.aspect_histogram.to_csv())?;
            write_tagged(&out.join("hist_volume.csv"), &hash, &st.volume_histogram.to_csv())?;
            let mut ledger = RuntimeLedger::new(&hash);
            ledger.record("simulate", secs, Some(res.steps()));
            std::fs::write(out.join("ledger.csv"), ledger.to_csv(cfg.track.sample_every.max(1)))?;
            println!(
                "{} steps in {secs:.1} s; {} melted voxels, {} grains, mean AR {}",
                res.steps(),
                res.melt.count(),
                st.grain_count,
                fmt_opt(st.mean_aspect_ratio)
            );
        }
        Cmd::Analyze {
            field,
            mask,
            connectivity,
            min_volume,
            out,
        } => {
            let f = load_grain_field(&field)?;
            let m = mask.as_deref().map(load_mask).transpose()?;
            let conn = meltpath_core::morphology::Connectivity::from_count(connectivity)?;
            let st = stats(&label_grains(&f, m.as_ref(), conn)?, min_volume);
            create_dir(&out)?;
            std::fs::write(out.join("stats.csv"), st.to_csv())?;
            std::fs::write(out.join("hist_aspect.csv"), st.aspect_histogram.to_csv())?;
            std::fs::write(out.join("hist_volume.csv"), st.volume_histogram.to_csv())?;
            print!("{}", st.to_csv());
        }
        Cmd::ExportVoi { config, tracks, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let initial = cfg.initial_field()?;
            let tracks = tracks.unwrap_or(cfg.export.powers_w.len());
            let m = export_voi_dataset(&cfg, &initial, tracks, &out)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Cmd::RewardTable {
            config,
            grid,
            hatch,
            backend,
            from,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            override_grid(&mut cfg, grid, hatch)?;
            let t0 = Instant::now();
            let table = match backend {
                Backend::Dns => {
                    if from.is_some() {
                        return Err(Error::Config("--from applies only to the surrogate backend".into()).into());
                    }
                    build_dns_table(&cfg, &cfg.initial_field()?, 0)?
                }
                Backend::Surrogate => {
                    let src = from.ok_or_else(|| Error::Config("--backend surrogate needs --from <table.csv>".into()))?;
                    surrogate_table(&cfg, &src)?
                }
            };
            table.write_csv(&out)?;
            println!(
                "wrote {} ({} rows, backend {}) in {:.1} s",
                out.display(),
                table.entries().len(),
                table.backend,
                t0.elapsed().as_secs_f64()
            );
        }
        Cmd::Train {
            config,
            table,
            case,
            alpha,
            beta,
            episodes,
            seed,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(c) = case {
                cfg.reward.case = RewardCase::try_from(c).map_err(Error::Config)?;
            }
            if let Some(a) = alpha {
                cfg.reward.alpha = a;
            }
            if let Some(b) = beta {
                cfg.reward.beta = b;
            }
            if let Some(e) = episodes {
                cfg.train.max_episodes = e;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            cfg.validate()?;
            let table = RewardTable::read_csv(&table)?;
            let (env, outcome) = train_on(&cfg, &table)?;
            create_dir(&out)?;
            write_training(&cfg, &env, &outcome, &out)?;
        }
        Cmd::Compare {
            config,
            drl_path,
            table,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let initial = cfg.initial_field()?;
            let hash = cfg.hash();
            let mut ledger = RuntimeLedger::new(&hash);
            create_dir(&out)?;
            let drl = match (drl_path, table) {
                (Some(p), _) => ScanPath::read_csv(&p)?,
                (None, Some(t)) => {
                    let table = RewardTable::read_csv(&t)?;
                    let t0 = Instant::now();
                    let (env, outcome) = train_on(&cfg, &table)?;
                    ledger.record("train", t0.elapsed().as_secs_f64(), None);
                    write_training(&cfg, &env, &outcome, &out)?;
                    let (actions, source) = select_drl_path(&outcome, &env)?;
                    println!("DRL path: {source}");
                    grid_path(&cfg, &actions)?
                }
                (None, None) => {
                    return Err(Error::Config("compare needs --drl-path or --table".into()).into());
                }
            };
            let zig = grid_path(&cfg, &zigzag_actions(&cfg)?)?;
            zig.write_csv(out.join("path_zigzag.csv"))?;
            drl.write_csv(out.join("path_drl.csv"))?;
            let report = run_compare(&cfg, &initial, &zig, &drl)?;
            for arm in [&report.zigzag, &report.drl] {
                ledger.record(format!("simulate_{}", arm.name), arm.wall_s, Some(arm.steps));
            }
            report.write(&out)?;
            std::fs::write(out.join("ledger.csv"), ledger.to_csv(cfg.track.sample_every.max(1)))?;
            print!("{}", report.summary_csv());
        }
        Cmd::Ledger {
            config,
            surrogate_s_per_step,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mut ledger = RuntimeLedger::new(cfg.hash());
            let t0 = Instant::now();
            let initial = cfg.initial_field()?;
            ledger.record("gen_voronoi", t0.elapsed().as_secs_f64(), None);
            let path = meltpath_core::harness::export_track(&cfg, cfg.laser.power_w)?;
            let arm = evaluate_path(&cfg, &initial, "single_track", &path)?;
            ledger.record("simulate_single_track", arm.wall_s, Some(arm.steps));
            ledger.rows.last_mut().unwrap().surrogate_s_per_ml_step = surrogate_s_per_step;
            let csv = ledger.to_csv(cfg.track.sample_every.max(1));
            std::fs::write(&out, &csv).with_context(|| format!("writing {}", out.display()))?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn initial_field(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<GrainField> {
    Ok(match path {
        Some(p) => load_grain_field(p)?,
        None => cfg.initial_field()?,
    })
}

fn override_grid(cfg: &mut ExperimentConfig, n: Option<usize>, hatch: Option<f64>) -> Result<()> {
    if n.is_none() && hatch.is_none() {
        return Ok(());
    }
    if let Some(n) = n {
        cfg.grid.n = n;
    }
    if let Some(h) = hatch {
        cfg.grid.hatch_mm = h;
    }
    // An explicit origin no longer applies to a resized grid.
    cfg.grid.origin_mm = None;
    cfg.validate()?;
    Ok(())
}

/// Re-serves a surrogate-produced table after checking it matches the
/// configured grid, so both backends go through the same validation.
fn fixed_len<const N: usize>(v: &[f64], flag: &str) -> Result<[f64; N]> {
    v.try_into()
        .map_err(|_| Error::Config(format!("{flag} takes {N} comma-separated values, got {}", v.len())).into())
}

fn surrogate_table(cfg: &ExperimentConfig, src: &Path) -> Result<RewardTable> {
    let backend = TableBackend::load(src)?;
    let grid = cfg.grid_spec()?;
    if backend.grid() != &grid {
        return Err(Error::Config(format!(
            "table grid {:?} does not match the configured grid {:?}",
            backend.grid(),
            grid
        ))
        .into());
    }
    if meltpath_core::reward::RewardBackend::id(&backend) == BACKEND_DNS {
        eprintln!("warning: {} was produced by the {BACKEND_DNS} backend", src.display());
    } else if meltpath_core::reward::RewardBackend::id(&backend) != BACKEND_SURROGATE {
        return Err(Error::Config(format!("{} is not a surrogate table", src.display())).into());
    }
    Ok(build_table(&grid, &backend, 0, &cfg.hash())?)
}

fn train_on(cfg: &ExperimentConfig, table: &RewardTable) -> Result<(Env, TrainOutcome)> {
    let initial_needed = cfg.reward.gv_scale_um3.is_none() && cfg.reward.case != RewardCase::AspectRatio;
    let rc = if initial_needed {
        reward_config(cfg, &cfg.initial_field()?)?
    } else {
        // The volume scale is unused by the aspect-ratio reward.
        cfg.reward.resolve(|| Ok(1.0))?
    };
    let env = Env::new(&table.grid, table, &rc)?;
    let t0 = Instant::now();
    let outcome = train(&env, &cfg.train)?;
    eprintln!(
        "trained {} episodes in {:.1} s; first full coverage: {}",
        outcome.log.len(),
        t0.elapsed().as_secs_f64(),
        outcome.first_full_coverage.map_or("never".to_string(), |e| e.to_string())
    );
    Ok((env, outcome))
}

fn write_training(cfg: &ExperimentConfig, env: &Env, outcome: &TrainOutcome, out: &Path) -> Result<()> {
    let hash = cfg.hash();
    write_tagged(&out.join("episodes.csv"), &hash, &outcome.log_csv())?;
    let mut snaps = String::from("episode,cumulative_reward,covered,visited\n");
    for s in &outcome.snapshots {
        let visited: Vec<String> = s.rollout.visited.iter().map(|v| v.to_string()).collect();
        snaps.push_str(&format!(
            "{},{},{},{}\n",
            s.episode,
            s.rollout.cumulative_reward,
            s.rollout.covered,
            visited.join(" ")
        ));
    }
    write_tagged(&out.join("snapshots.csv"), &hash, &snaps)?;
    let snap_dir = out.join("snapshots");
    create_dir(&snap_dir)?;
    for s in &outcome.snapshots {
        s.rollout
            .path
            .clone()
            .with_laser(&cfg.laser)
            .write_csv(snap_dir.join(format!("path_ep{:06}.csv", s.episode)))?;
    }
    let greedy = meltpath_core::drl::extract_greedy_path(&outcome.net, env)?;
    greedy.path.clone().with_laser(&cfg.laser).write_csv(out.join("greedy_path.csv"))?;
    let rewards: Vec<f64> = outcome.log.iter().map(|r| r.cumulative_reward).collect();
    std::fs::write(out.join("reward_curve.svg"), svg_series("cumulative reward per episode", &rewards))?;
    println!(
        "greedy rollout: return {}, covered {}, {} points",
        greedy.cumulative_reward,
        greedy.covered,
        greedy.visited.len()
    );
    Ok(())
}

fn write_tagged(path: &Path, hash: &str, body: &str) -> Result<()> {
    std::fs::write(path, format!("# config_hash={hash}\n{body}")).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".to_string(), |x| format!("{x:.4}"))
}
