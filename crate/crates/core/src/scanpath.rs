//! Scan-path generation: heuristic patterns and grid action sequences.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::thermal::LaserParams;

/// Timed polyline traversed by the laser at constant speed and power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPath {
    waypoints: Vec<[f64; 3]>,
    pub speed_m_s: f64,
    pub power_w: f64,
}

impl ScanPath {
    pub fn new(waypoints: Vec<[f64; 3]>, laser: &LaserParams) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::invalid("a scan path needs at least one waypoint"));
        }
        if let Some(k) = waypoints.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("waypoints {k} and {} coincide", k + 1)));
        }
        laser.validate()?;
        Ok(Self {
            waypoints,
            speed_m_s: laser.speed_m_s,
            power_w: laser.power_w,
        })
    }

    pub fn with_laser(mut self, laser: &LaserParams) -> Self {
        self.speed_m_s = laser.speed_m_s;
        self.power_w = laser.power_w;
        self
    }

    pub fn laser(&self) -> LaserParams {
        LaserParams {
            power_w: self.power_w,
            speed_m_s: self.speed_m_s,
        }
    }

    pub fn waypoints(&self) -> &[[f64; 3]] {
        &self.waypoints
    }

    pub fn segment_lengths_mm(&self) -> Vec<f64> {
        self.waypoints.windows(2).map(|w| dist(w[0], w[1])).collect()
    }

    pub fn length_mm(&self) -> f64 {
        self.segment_lengths_mm().iter().sum()
    }

    pub fn duration_s(&self) -> f64 {
        self.length_mm() * 1e-3 / self.speed_m_s
    }

    /// Arrival time at each waypoint.
    pub fn times_s(&self) -> Vec<f64> {
        let mut t = vec![0.0];
        let mut acc = 0.0;
        for l in self.segment_lengths_mm() {
            acc += l;
            t.push(acc * 1e-3 / self.speed_m_s);
        }
        t
    }

    /// Laser position and unit heading at time `t_s` (clamped to the path).
    /// At a waypoint the heading of the segment that starts there is used;
    /// a single-point path heads along +x.
    pub fn state_at(&self, t_s: f64) -> ([f64; 3], [f64; 3]) {
        if self.waypoints.len() == 1 {
            return (self.waypoints[0], [1.0, 0.0, 0.0]);
        }
        let mut remaining = (t_s.max(0.0) * self.speed_m_s * 1e3).max(0.0);
        let last = self.waypoints.len() - 2;
        for (k, w) in self.waypoints.windows(2).enumerate() {
            let len = dist(w[0], w[1]);
            let dir = [0, 1, 2].map(|i| (w[1][i] - w[0][i]) / len);
            if remaining < len || k == last {
                let s = remaining.min(len);
                return ([0, 1, 2].map(|i| w[0][i] + s * dir[i]), dir);
            }
            remaining -= len;
        }
        unreachable!("paths with two or more waypoints have a segment")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x_mm,y_mm,z_mm,t_s,power_W\n");
        for (w, t) in self.waypoints.iter().zip(self.times_s()) {
            s.push_str(&format!("{},{},{},{},{}\n", w[0], w[1], w[2], t, self.power_w));
        }
        s
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::format(0, e.to_string()))?.clone();
        let expected = ["x_mm", "y_mm", "z_mm", "t_s", "power_W"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(0, format!("path CSV header must be {}", expected.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::format(e.position().map_or(0, |p| p.byte()), e.to_string()))?;
            let offset = rec.position().map_or(0, |p| p.byte());
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(offset, format!("bad number: {e}")))?;
            rows.push(vals);
        }
        if rows.is_empty() {
            return Err(Error::format(0, "path CSV has no waypoints"));
        }
        let waypoints: Vec<[f64; 3]> = rows.iter().map(|r| [r[0], r[1], r[2]]).collect();
        let power_w = rows[0][4];
        let speed_m_s = if rows.len() > 1 {
            let dt = rows[1][3] - rows[0][3];
            dist(waypoints[0], waypoints[1]) * 1e-3 / dt
        } else {
            LaserParams::default().speed_m_s
        };
        Self::new(waypoints, &LaserParams { power_w, speed_m_s })
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Rectangular scan area on the plane `z = z_mm`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanArea {
    pub origin_mm: [f64; 2],
    pub size_mm: [f64; 2],
    pub z_mm: f64,
}

impl ScanArea {
    fn check_hatch(&self, hatch_mm: f64) -> Result<()> {
        if !(hatch_mm > 0.0) || !hatch_mm.is_finite() {
            return Err(Error::invalid(format!("hatch must be positive, got {hatch_mm}")));
        }
        if !(self.size_mm[0] > 0.0 && self.size_mm[1] > 0.0) {
            return Err(Error::invalid("scan area must have positive size"));
        }
        if hatch_mm > self.size_mm[0].min(self.size_mm[1]) {
            return Err(Error::invalid(format!(
                "hatch {hatch_mm} mm is wider than the scan area {:?} mm",
                self.size_mm
            )));
        }
        Ok(())
    }
}

/// Vertical boustrophedon: columns at `x = margin + k * hatch`, alternating
/// upward and downward, joined by horizontal jogs along the area edge. The
/// margin defaults to centering the columns.
pub fn vertical_serpentine(area: &ScanArea, hatch_mm: f64, margin_mm: Option<f64>) -> Result<ScanPath> {
    area.check_hatch(hatch_mm)?;
    let [w, h] = area.size_mm;
    let n = (w / hatch_mm + 1e-9).floor() as usize + 1;
    let margin = margin_mm.unwrap_or(((w - (n - 1) as f64 * hatch_mm) / 2.0).max(0.0));
    if margin < 0.0 || margin + (n - 1) as f64 * hatch_mm > w + 1e-9 {
        return Err(Error::invalid(format!("margin {margin} mm pushes columns outside the area")));
    }
    let [x0, y0] = area.origin_mm;
    let mut pts = Vec::with_capacity(2 * n);
    for k in 0..n {
        let x = x0 + margin + k as f64 * hatch_mm;
        let (a, b) = if k % 2 == 0 { (y0, y0 + h) } else { (y0 + h, y0) };
        pts.push([x, a, area.z_mm]);
        pts.push([x, b, area.z_mm]);
    }
    ScanPath::new(pts, &LaserParams::default())
}

/// Inward rectangular spiral, clockwise seen from +z, starting at the
/// lower-left corner with rings `hatch` apart.
pub fn spiral_clockwise(area: &ScanArea, hatch_mm: f64) -> Result<ScanPath> {
    area.check_hatch(hatch_mm)?;
    let [x0, y0] = area.origin_mm;
    let [w, h] = area.size_mm;
    let (l, r, b, t) = (x0, x0 + w, y0, y0 + h);
    let z = area.z_mm;
    let eps = 1e-9;
    let mut pts = vec![[l, b, z]];
    let mut k = 0usize;
    loop {
        let kf = k as f64 * hatch_mm;
        let next = kf + hatch_mm;
        let legs = [[l + kf, t - kf], [r - kf, t - kf], [r - kf, b + kf], [l + next, b + kf]];
        let mut stop = false;
        for p in legs {
            let cur = *pts.last().unwrap();
            let len = (p[0] - cur[0]).abs() + (p[1] - cur[1]).abs();
            // legs are axis-aligned; a leg that does not advance in its own
            // direction would cross the previous ring
            let advances = match pts.len() % 4 {
                1 => p[1] - cur[1] > eps,
                2 => p[0] - cur[0] > eps,
                3 => cur[1] - p[1] > eps,
                _ => cur[0] - p[0] > eps,
            };
            if len <= eps || !advances {
                stop = true;
                break;
            }
            pts.push([p[0], p[1], z]);
        }
        if stop {
            break;
        }
        k += 1;
    }
    ScanPath::new(pts, &LaserParams::default())
}

/// Parallel passes at 45 degrees, `hatch` apart perpendicular to the passes,
/// centered on the area and linked end to end.
pub fn diagonal(area: &ScanArea, hatch_mm: f64) -> Result<ScanPath> {
    area.check_hatch(hatch_mm)?;
    let [x0, y0] = area.origin_mm;
    let [w, h] = area.size_mm;
    let c = [x0 + w / 2.0, y0 + h / 2.0];
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let d = [s2, s2];
    let nrm = [s2, -s2];
    let half_extent = (w + h) * s2 / 2.0;
    let passes = (2.0 * half_extent / hatch_mm - 1e-9).ceil().max(1.0) as usize;
    let mut pts = Vec::with_capacity(2 * passes);
    for k in 0..passes {
        let p = (k as f64 - (passes - 1) as f64 / 2.0) * hatch_mm;
        let base = [c[0] + p * nrm[0], c[1] + p * nrm[1]];
        // clip base + s d to the rectangle
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (axis, (min, max)) in [(x0, x0 + w), (y0, y0 + h)].into_iter().enumerate() {
            let a = (min - base[axis]) / d[axis];
            let b = (max - base[axis]) / d[axis];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
        let start = [base[0] + lo * d[0], base[1] + lo * d[1], area.z_mm];
        let end = [base[0] + hi * d[0], base[1] + hi * d[1], area.z_mm];
        if k % 2 == 0 {
            pts.push(start);
            pts.push(end);
        } else {
            pts.push(end);
            pts.push(start);
        }
    }
    ScanPath::new(pts, &LaserParams::default())
}

/// Grid movement. The discriminant order is the canonical action order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// (column, row) step.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "Up",
            Action::Down => "Down",
            Action::Left => "Left",
            Action::Right => "Right",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        match s.trim() {
            "Up" | "U" | "up" => Some(Action::Up),
            "Down" | "D" | "down" => Some(Action::Down),
            "Left" | "L" | "left" => Some(Action::Left),
            "Right" | "R" | "right" => Some(Action::Right),
            _ => None,
        }
    }
}

/// `n x n` grid of scan points, `hatch` apart, point 0 at `origin_mm`.
/// Points are indexed row-major: `index = row * n + col`, rows along +y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub hatch_mm: f64,
    pub origin_mm: [f64; 2],
    pub z_mm: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("grid needs n >= 2, got {}", self.n)));
        }
        if !(self.hatch_mm > 0.0) {
            return Err(Error::invalid("grid hatch must be positive"));
        }
        Ok(())
    }

    /// Grid centered on a domain of the given x-y extent.
    pub fn centered(n: usize, hatch_mm: f64, extent_mm: [f64; 2], z_mm: f64) -> Self {
        let span = (n.saturating_sub(1)) as f64 * hatch_mm;
        Self {
            n,
            hatch_mm,
            origin_mm: [(extent_mm[0] - span) / 2.0, (extent_mm[1] - span) / 2.0],
            z_mm,
        }
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    pub fn col_row(&self, index: usize) -> (usize, usize) {
        (index % self.n, index / self.n)
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n + col
    }

    pub fn position_mm(&self, index: usize) -> [f64; 3] {
        let (c, r) = self.col_row(index);
        [
            self.origin_mm[0] + c as f64 * self.hatch_mm,
            self.origin_mm[1] + r as f64 * self.hatch_mm,
            self.z_mm,
        ]
    }

    /// Destination of `action` from `index`, or `None` when it leaves the grid.
    pub fn neighbor(&self, index: usize, action: Action) -> Option<usize> {
        let (c, r) = self.col_row(index);
        let (dc, dr) = action.delta();
        let (nc, nr) = (c as i64 + dc, r as i64 + dr);
        let n = self.n as i64;
        if nc < 0 || nr < 0 || nc >= n || nr >= n {
            None
        } else {
            Some(self.index(nc as usize, nr as usize))
        }
    }

    /// Vertical serpentine over the grid from the origin: up the first
    /// column, step right, down the next, and so on.
    pub fn serpentine_actions(&self) -> Vec<Action> {
        let mut actions = Vec::with_capacity(self.points() - 1);
        for col in 0..self.n {
            let dir = if col % 2 == 0 { Action::Up } else { Action::Down };
            actions.extend(std::iter::repeat_n(dir, self.n - 1));
            if col + 1 < self.n {
                actions.push(Action::Right);
            }
        }
        actions
    }
}

/// Visited grid points for an action sequence starting at the origin.
pub fn visit_sequence(grid: &GridSpec, actions: &[Action]) -> Result<Vec<usize>> {
    let mut visited = vec![false; grid.points()];
    let mut seq = vec![0usize];
    visited[0] = true;
    let mut cur = 0;
    for (step, &a) in actions.iter().enumerate() {
        let next = grid.neighbor(cur, a).ok_or_else(|| Error::InvalidPath {
            step,
            message: format!("{} from point {cur} leaves the grid", a.name()),
        })?;
        if visited[next] {
            return Err(Error::InvalidPath {
                step,
                message: format!("{} from point {cur} revisits point {next}", a.name()),
            });
        }
        visited[next] = true;
        seq.push(next);
        cur = next;
    }
    Ok(seq)
}

/// Converts a validated action sequence into a scan path through the grid.
pub fn path_from_actions(grid: &GridSpec, actions: &[Action]) -> Result<ScanPath> {
    grid.validate()?;
    let seq = visit_sequence(grid, actions)?;
    ScanPath::new(seq.iter().map(|&i| grid.position_mm(i)).collect(), &LaserParams::default())
}
