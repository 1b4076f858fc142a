//! Per-movement reward tables.
//!
//! Every directed movement on the scan grid is simulated once, on a fresh
//! copy of the initial microstructure, and summarized by the mean aspect
//! ratio and mean grain volume of the grains inside its melt region. The
//! table is a pure map over movements, so its content does not depend on
//! evaluation order or worker count.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::GrainField;
use crate::error::{Error, Result};
use crate::morphology::{label_grains, stats, Connectivity, DEFAULT_MIN_VOLUME_UM3};
use crate::phasefield::{run_track, PFParams, TrackSettings};
use crate::scanpath::{Action, GridSpec, ScanPath};
use crate::thermal::{LaserParams, MaterialThermal};

/// Column header shared by every backend.
pub const CSV_HEADER: &str = "from_index,action,to_index,avg_aspect_ratio,avg_grain_volume_um3,melted_voxels,valid";

pub const BACKEND_DNS: &str = "dns";
pub const BACKEND_SURROGATE: &str = "surrogate";

/// Directed grid movement; `to_index` is `None` when it leaves the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Movement {
    pub from_index: usize,
    pub action: Action,
    pub to_index: Option<usize>,
}

impl Movement {
    pub fn in_bounds(&self) -> bool {
        self.to_index.is_some()
    }

    /// Position in the canonical table order.
    pub fn row(&self) -> usize {
        self.from_index * 4 + self.action.index()
    }
}

/// All (point, action) pairs, points row-major and actions in canonical order.
pub fn enumerate_movements(grid: &GridSpec) -> Vec<Movement> {
    (0..grid.points())
        .flat_map(|from_index| {
            Action::ALL.into_iter().map(move |action| Movement {
                from_index,
                action,
                to_index: grid.neighbor(from_index, action),
            })
        })
        .collect()
}

/// Melt-region summary of one movement. The means are `None` when nothing
/// melted or no grain passed the volume threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovementMetrics {
    pub avg_aspect_ratio: Option<f64>,
    pub avg_grain_volume_um3: Option<f64>,
    pub melted_voxels: usize,
}

impl MovementMetrics {
    pub const EMPTY: MovementMetrics = MovementMetrics {
        avg_aspect_ratio: None,
        avg_grain_volume_um3: None,
        melted_voxels: 0,
    };

    pub fn is_empty(&self) -> bool {
        self.avg_aspect_ratio.is_none() || self.avg_grain_volume_um3.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardEntry {
    pub movement: Movement,
    /// `None` for out-of-bounds movements.
    pub metrics: Option<MovementMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    pub grid: GridSpec,
    pub backend: String,
    pub config_hash: String,
    entries: Vec<RewardEntry>,
}

impl RewardTable {
    /// Checks size, ordering and geometry against `grid`.
    pub fn new(grid: GridSpec, backend: &str, config_hash: &str, entries: Vec<RewardEntry>) -> Result<Self> {
        grid.validate()?;
        let expected = enumerate_movements(&grid);
        if entries.len() != expected.len() {
            return Err(Error::invalid(format!(
                "reward table for n={} needs {} rows, got {}",
                grid.n,
                expected.len(),
                entries.len()
            )));
        }
        for (e, m) in entries.iter().zip(&expected) {
            if e.movement != *m {
                return Err(Error::invalid(format!(
                    "row {} is {:?}, expected {:?}",
                    m.row(),
                    e.movement,
                    m
                )));
            }
            if e.metrics.is_some() != m.in_bounds() {
                return Err(Error::invalid(format!("row {} has metrics inconsistent with its validity", m.row())));
            }
        }
        Ok(Self {
            grid,
            backend: backend.to_string(),
            config_hash: config_hash.to_string(),
            entries,
        })
    }

    /// Table whose every in-bounds movement carries the same metrics.
    pub fn uniform(grid: GridSpec, metrics: MovementMetrics) -> Result<Self> {
        let entries = enumerate_movements(&grid)
            .into_iter()
            .map(|movement| RewardEntry {
                movement,
                metrics: movement.in_bounds().then_some(metrics),
            })
            .collect();
        Self::new(grid, "synthetic", "", entries)
    }

    pub fn entries(&self) -> &[RewardEntry] {
        &self.entries
    }

    pub fn entry(&self, from_index: usize, action: Action) -> &RewardEntry {
        &self.entries[from_index * 4 + action.index()]
    }

    pub fn metrics(&self, from_index: usize, action: Action) -> Option<&MovementMetrics> {
        self.entry(from_index, action).metrics.as_ref()
    }

    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = String::new();
        let _ = writeln!(s, "# backend={}", self.backend);
        let _ = writeln!(s, "# config_hash={}", self.config_hash);
        let _ = writeln!(s, "# grid_n={}", g.n);
        let _ = writeln!(s, "# hatch_mm={}", g.hatch_mm);
        let _ = writeln!(s, "# origin_mm={},{}", g.origin_mm[0], g.origin_mm[1]);
        let _ = writeln!(s, "# z_mm={}", g.z_mm);
        s.push_str(CSV_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for e in &self.entries {
            let m = e.movement;
            let to = m.to_index.map_or(String::new(), |t| t.to_string());
            match &e.metrics {
                Some(x) => {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{},true",
                        m.from_index,
                        m.action.name(),
                        to,
                        opt(x.avg_aspect_ratio),
                        opt(x.avg_grain_volume_um3),
                        x.melted_voxels
                    );
                }
                None => {
                    let _ = writeln!(s, "{},{},{},,,0,false", m.from_index, m.action.name(), to);
                }
            }
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    /// Parses a table written by any backend. The header must match
    /// [`CSV_HEADER`] exactly and the grid metadata lines must be present.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = std::collections::BTreeMap::new();
        let mut offset = 0u64;
        let mut header_seen = false;
        let mut rows = Vec::new();
        for line in text.lines() {
            let here = offset;
            offset += line.len() as u64 + 1;
            if let Some(c) = line.strip_prefix('#') {
                let (k, v) = c
                    .trim()
                    .split_once('=')
                    .ok_or_else(|| Error::format(here, format!("metadata line without '=': {line:?}")))?;
                meta.insert(k.trim().to_string(), v.trim().to_string());
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line.trim_end() != CSV_HEADER {
                    return Err(Error::format(here, format!("expected header {CSV_HEADER:?}, found {line:?}")));
                }
                header_seen = true;
                continue;
            }
            rows.push((here, line));
        }
        if !header_seen {
            return Err(Error::format(offset, "missing reward table header"));
        }
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::format(0, format!("missing metadata field {k:?}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::format(0, format!("metadata {k}: {e}")))
        };
        let n = get("grid_n")?
            .parse::<usize>()
            .map_err(|e| Error::format(0, format!("metadata grid_n: {e}")))?;
        let origin: Vec<f64> = get("origin_mm")?
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(0, format!("metadata origin_mm: {e}")))?;
        if origin.len() != 2 {
            return Err(Error::format(0, "metadata origin_mm needs two values"));
        }
        let grid = GridSpec {
            n,
            hatch_mm: num("hatch_mm")?,
            origin_mm: [origin[0], origin[1]],
            z_mm: num("z_mm")?,
        };
        let backend = get("backend")?.clone();
        let config_hash = meta.get("config_hash").cloned().unwrap_or_default();

        let mut entries = Vec::with_capacity(rows.len());
        for (at, line) in rows {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(Error::format(at, format!("expected 7 fields, found {}", f.len())));
            }
            let bad = |what: &str| Error::format(at, format!("bad {what} in row {line:?}"));
            let from_index: usize = f[0].parse().map_err(|_| bad("from_index"))?;
            let action = Action::parse(f[1]).ok_or_else(|| bad("action"))?;
            let to_index = if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse::<usize>().map_err(|_| bad("to_index"))?)
            };
            let opt = |s: &str, what: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    let v: f64 = s.parse().map_err(|_| bad(what))?;
                    if !v.is_finite() || v <= 0.0 {
                        return Err(bad(what));
                    }
                    Ok(Some(v))
                }
            };
            let avg_aspect_ratio = opt(f[3], "avg_aspect_ratio")?;
            let avg_grain_volume_um3 = opt(f[4], "avg_grain_volume_um3")?;
            let melted_voxels: usize = f[5].parse().map_err(|_| bad("melted_voxels"))?;
            let valid = match f[6] {
                "true" | "1" => true,
                "false" | "0" => false,
                _ => return Err(bad("valid")),
            };
            let movement = Movement {
                from_index,
                action,
                to_index,
            };
            let metrics = valid.then_some(MovementMetrics {
                avg_aspect_ratio,
                avg_grain_volume_um3,
                melted_voxels,
            });
            entries.push(RewardEntry { movement, metrics });
        }
        Self::new(grid, &backend, &config_hash, entries).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::format(0, m),
            other => other,
        })
    }
}

/// Source of per-movement metrics.
pub trait RewardBackend: Sync {
    fn id(&self) -> &str;
    fn metrics(&self, m: &Movement) -> Result<MovementMetrics>;
}

/// Direct phase-field simulation of each movement.
pub struct DnsBackend {
    pub grid: GridSpec,
    pub base: GrainField,
    pub laser: LaserParams,
    pub mat: MaterialThermal,
    pub pf: PFParams,
    pub settings: TrackSettings,
    pub connectivity: Connectivity,
    pub min_volume_um3: f64,
}

impl DnsBackend {
    pub fn new(grid: GridSpec, base: GrainField, laser: LaserParams, mat: MaterialThermal, pf: PFParams) -> Self {
        Self {
            grid,
            base,
            laser,
            mat,
            pf,
            settings: TrackSettings {
                sample_every: 0,
                ..Default::default()
            },
            connectivity: Connectivity::Six,
            min_volume_um3: DEFAULT_MIN_VOLUME_UM3,
        }
    }
}

impl RewardBackend for DnsBackend {
    fn id(&self) -> &str {
        BACKEND_DNS
    }

    fn metrics(&self, m: &Movement) -> Result<MovementMetrics> {
        movement_metrics(
            m,
            &self.grid,
            &self.base,
            &self.laser,
            &self.mat,
            &self.pf,
            &self.settings,
            self.connectivity,
            self.min_volume_um3,
        )
    }
}

/// Scans the single segment of `m` over a fresh copy of `base` and
/// summarizes the grains inside that segment's melt region.
#[allow(clippy::too_many_arguments)]
pub fn movement_metrics(
    m: &Movement,
    grid: &GridSpec,
    base: &GrainField,
    laser: &LaserParams,
    mat: &MaterialThermal,
    pf: &PFParams,
    settings: &TrackSettings,
    connectivity: Connectivity,
    min_volume_um3: f64,
) -> Result<MovementMetrics> {
    let to = m.to_index.ok_or_else(|| {
        Error::invalid(format!(
            "movement {} from point {} leaves the grid",
            m.action.name(),
            m.from_index
        ))
    })?;
    let path = ScanPath::new(vec![grid.position_mm(m.from_index), grid.position_mm(to)], laser)?;
    let settings = TrackSettings {
        sample_every: 0,
        ..*settings
    };
    let res = run_track(base, &path, laser, mat, pf, &settings)?;
    let melted_voxels = res.melt.count();
    if melted_voxels == 0 {
        return Ok(MovementMetrics::EMPTY);
    }
    let grains = label_grains(&res.field, Some(&res.melt), connectivity)?;
    let s = stats(&grains, min_volume_um3);
    Ok(MovementMetrics {
        avg_aspect_ratio: s.mean_aspect_ratio,
        avg_grain_volume_um3: (s.grain_count > 0).then_some(s.mean_volume_um3),
        melted_voxels,
    })
}

/// Serves metrics from a previously produced table, for example one
/// exported by the surrogate model.
pub struct TableBackend {
    table: RewardTable,
}

impl TableBackend {
    pub fn new(table: RewardTable) -> Self {
        Self { table }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(RewardTable::read_csv(path)?))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.table.grid
    }
}

impl RewardBackend for TableBackend {
    fn id(&self) -> &str {
        &self.table.backend
    }

    fn metrics(&self, m: &Movement) -> Result<MovementMetrics> {
        if m.from_index >= self.table.grid.points() {
            return Err(Error::invalid(format!("point {} is outside the table grid", m.from_index)));
        }
        let e = self.table.entry(m.from_index, m.action);
        if e.movement != *m {
            return Err(Error::invalid(format!("table row {:?} does not match {:?}", e.movement, m)));
        }
        e.metrics
            .ok_or_else(|| Error::invalid(format!("movement {m:?} is out of bounds in the table")))
    }
}

/// Evaluates every in-bounds movement on a pool of `parallelism` workers
/// (0 uses the global pool). Failed movements are collected and reported
/// together by row index.
pub fn build_table(grid: &GridSpec, backend: &dyn RewardBackend, parallelism: usize, config_hash: &str) -> Result<RewardTable> {
    grid.validate()?;
    let movements = enumerate_movements(grid);
    let eval = || -> Vec<Result<Option<MovementMetrics>>> {
        movements
            .par_iter()
            .map(|m| if m.in_bounds() { backend.metrics(m).map(Some) } else { Ok(None) })
            .collect()
    };
    let results = if parallelism == 0 {
        eval()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?
            .install(eval)
    };
    let mut failed = Vec::new();
    let mut entries = Vec::with_capacity(movements.len());
    for (m, r) in movements.iter().zip(results) {
        match r {
            Ok(metrics) => entries.push(RewardEntry { movement: *m, metrics }),
            Err(_) => failed.push(m.row()),
        }
    }
    if !failed.is_empty() {
        return Err(Error::PartialTable { failed });
    }
    RewardTable::new(*grid, backend.id(), config_hash, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{generate_voronoi_microstructure, DomainSpec};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            n,
            hatch_mm: 0.1,
            origin_mm: [0.1, 0.1],
            z_mm: 0.05,
        }
    }

    #[test]
    fn movement_counts() {
        assert_eq!(enumerate_movements(&grid(5)).len(), 100);
        assert_eq!(enumerate_movements(&grid(11)).len(), 484);
        let m2 = enumerate_movements(&grid(2));
        assert_eq!(m2.len(), 16);
        assert_eq!(m2.iter().filter(|m| m.in_bounds()).count(), 8);
        let m5 = enumerate_movements(&grid(5));
        assert_eq!(m5.iter().filter(|m| m.in_bounds()).count(), 80);
    }

    #[test]
    fn movement_order_is_row_major_then_action() {
        let ms = enumerate_movements(&grid(3));
        for (i, m) in ms.iter().enumerate() {
            assert_eq!(m.row(), i);
        }
        assert_eq!(ms[0].action, Action::Up);
        assert_eq!(ms[0].to_index, Some(3));
        assert_eq!(ms[1].to_index, None);
        assert_eq!(ms[2].to_index, None);
        assert_eq!(ms[3].to_index, Some(1));
    }

    struct Fake {
        calls: AtomicUsize,
        fail_row: Option<usize>,
    }

    impl RewardBackend for Fake {
        fn id(&self) -> &str {
            "fake"
        }

        fn metrics(&self, m: &Movement) -> Result<MovementMetrics> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            if Some(m.row()) == self.fail_row {
                return Err(Error::invalid("boom"));
            }
            let to = m.to_index.unwrap() as f64;
            Ok(MovementMetrics {
                avg_aspect_ratio: Some(1.0 + m.from_index as f64 / 7.0),
                avg_grain_volume_um3: Some(1000.0 + to / 3.0),
                melted_voxels: m.row(),
            })
        }
    }

    #[test]
    fn build_is_independent_of_parallelism() {
        let f = Fake {
            calls: AtomicUsize::new(0),
            fail_row: None,
        };
        let a = build_table(&grid(4), &f, 1, "h").unwrap().to_csv();
        let b = build_table(&grid(4), &f, 3, "h").unwrap().to_csv();
        assert_eq!(a, b);
        assert_eq!(f.calls.load(Ordering::Relaxed), 2 * 48);
    }

    #[test]
    fn failures_are_listed() {
        let f = Fake {
            calls: AtomicUsize::new(0),
            fail_row: Some(3),
        };
        match build_table(&grid(2), &f, 2, "h") {
            Err(Error::PartialTable { failed }) => assert_eq!(failed, vec![3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let f = Fake {
            calls: AtomicUsize::new(0),
            fail_row: None,
        };
        let t = build_table(&grid(3), &f, 1, "abc").unwrap();
        let text = t.to_csv();
        assert!(text.lines().any(|l| l == CSV_HEADER));
        let back = RewardTable::from_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn table_backend_reproduces_its_table() {
        let f = Fake {
            calls: AtomicUsize::new(0),
            fail_row: None,
        };
        let mut t = build_table(&grid(3), &f, 1, "abc").unwrap();
        t.backend = BACKEND_SURROGATE.to_string();
        let tb = TableBackend::new(RewardTable::from_csv(&t.to_csv()).unwrap());
        let again = build_table(&grid(3), &tb, 2, "abc").unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn malformed_tables_rejected() {
        let t = RewardTable::uniform(grid(2), MovementMetrics::EMPTY).unwrap().to_csv();
        let wrong_header = t.replace("melted_voxels", "melted");
        assert!(matches!(RewardTable::from_csv(&wrong_header), Err(Error::Format { .. })));
        let short: String = t.lines().take(t.lines().count() - 1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(RewardTable::from_csv(&short), Err(Error::Format { .. })));
        let swapped = t.replacen("0,Up,2,", "0,Down,2,", 1);
        assert!(RewardTable::from_csv(&swapped).is_err());
    }

    fn desk() -> (GrainField, PFParams, MaterialThermal) {
        let spec = DomainSpec::new([0.3, 0.2, 0.06], 5.0).unwrap();
        let field = generate_voronoi_microstructure(spec, 100, 20, 3).unwrap();
        let p = PFParams::from_physical(0.5, 3.5e-6, 12.5, 5.0, 20, 0.125).unwrap();
        let mat = MaterialThermal {
            clamp_radius_um: 2.5,
            ..Default::default()
        };
        (field, p, mat)
    }

    #[test]
    fn opposite_movements_melt_equally() {
        let (field, p, mat) = desk();
        // Points on voxel faces so the two directions mirror exactly.
        let g = GridSpec {
            n: 2,
            hatch_mm: 0.1,
            origin_mm: [0.1, 0.1],
            z_mm: 0.06,
        };
        let be = DnsBackend::new(g, field, LaserParams::default(), mat, p);
        let fwd = Movement {
            from_index: 0,
            action: Action::Right,
            to_index: Some(1),
        };
        let back = Movement {
            from_index: 1,
            action: Action::Left,
            to_index: Some(0),
        };
        let a = be.metrics(&fwd).unwrap();
        let b = be.metrics(&back).unwrap();
        assert!(a.melted_voxels > 0);
        assert_eq!(a.melted_voxels, b.melted_voxels);
        assert!(a.avg_aspect_ratio.unwrap() >= 1.0);
        assert!(a.avg_grain_volume_um3.unwrap() > 0.0);
    }

    #[test]
    fn cold_laser_gives_empty_metrics() {
        let (field, p, mat) = desk();
        let g = grid(2);
        let laser = LaserParams {
            power_w: 0.5,
            ..Default::default()
        };
        let be = DnsBackend::new(g, field, laser, mat, p);
        let m = enumerate_movements(&g)[0];
        let r = be.metrics(&m).unwrap();
        assert_eq!(r, MovementMetrics::EMPTY);
        assert!(r.is_empty());
    }

    #[test]
    fn out_of_bounds_movement_rejected() {
        let (field, p, mat) = desk();
        let g = grid(2);
        let be = DnsBackend::new(g, field, LaserParams::default(), mat, p);
        assert!(matches!(be.metrics(&enumerate_movements(&g)[1]), Err(Error::InvalidArgument(_))));
    }
}
