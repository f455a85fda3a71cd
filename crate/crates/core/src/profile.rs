//! Rotationally symmetric metrics `ds² + φ(s)² g_{S^{n-1}}` on the n-sphere.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stencil;

/// Allowed deviation of the pole slopes from ±1.
pub const TOL_POLE: f64 = 1e-3;
/// Largest accepted ratio between the widest and narrowest grid cell.
pub const MAX_SPACING_RATIO: f64 = 10.0;
/// Smallest number of grid cells.
pub const MIN_CELLS: usize = 8;

/// Which end of the meridian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pole {
    South,
    North,
}

impl fmt::Display for Pole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pole::South => f.write_str("s = 0"),
            Pole::North => f.write_str("s = L"),
        }
    }
}

/// One broken invariant of a [`Profile`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Violation {
    Dimension { n: usize },
    TooFewNodes { nodes: usize },
    LengthMismatch { grid: usize, warp: usize },
    NonFinite { node: usize },
    GridStart { s0: f64 },
    NonIncreasingGrid { node: usize },
    PoleValue { node: usize, phi: f64 },
    NonPositiveWarp { node: usize, phi: f64 },
    PoleSlope { pole: Pole, slope: f64 },
    SpacingRatio { ratio: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Dimension { n } => write!(f, "dimension n = {n} must be at least 3"),
            Violation::TooFewNodes { nodes } => {
                write!(f, "{nodes} nodes, need at least {}", MIN_CELLS + 1)
            }
            Violation::LengthMismatch { grid, warp } => {
                write!(f, "grid has {grid} nodes but warp has {warp}")
            }
            Violation::NonFinite { node } => write!(f, "non-finite value at node {node}"),
            Violation::GridStart { s0 } => write!(f, "grid must start at s = 0, got {s0}"),
            Violation::NonIncreasingGrid { node } => {
                write!(f, "grid not strictly increasing at node {node}")
            }
            Violation::PoleValue { node, phi } => {
                write!(f, "warp must vanish at pole node {node}, got {phi}")
            }
            Violation::NonPositiveWarp { node, phi } => {
                write!(
                    f,
                    "warp must be positive at interior node {node}, got {phi}"
                )
            }
            Violation::PoleSlope { pole, slope } => {
                write!(
                    f,
                    "pole slope at {pole} is {slope:.6}, expected magnitude 1"
                )
            }
            Violation::SpacingRatio { ratio } => {
                write!(
                    f,
                    "grid spacing ratio {ratio:.3} exceeds {MAX_SPACING_RATIO}"
                )
            }
        }
    }
}

/// Warp function sampled on a meridian grid at one flow time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    n: usize,
    grid: Vec<f64>,
    warp: Vec<f64>,
    time: f64,
}

/// Two round caps of radius `bump_radius` joined by a neck of radius `neck_radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumbbellSpec {
    pub bump_radius: f64,
    pub neck_radius: f64,
    pub neck_width: f64,
}

/// Fraction of a quarter meridian of the cap used for the cap-to-neck blend.
const BLEND_FRACTION: f64 = 0.8;

fn smoothstep5(t: f64) -> f64 {
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

impl DumbbellSpec {
    fn check(&self) -> Result<()> {
        let DumbbellSpec {
            bump_radius: a,
            neck_radius: b,
            neck_width: w,
        } = *self;
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::config("bump_radius", "must be positive"));
        }
        if !(b.is_finite() && b > 0.0 && b < a) {
            return Err(Error::config(
                "neck_radius",
                "must be positive and smaller than bump_radius",
            ));
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::config("neck_width", "must be non-negative"));
        }
        Ok(())
    }

    /// Meridian length of the dumbbell.
    pub fn length(&self) -> f64 {
        let cap = 0.5 * PI * self.bump_radius;
        2.0 * (cap + BLEND_FRACTION * cap + 0.5 * self.neck_width)
    }

    /// Warp value at arclength `s`.
    pub fn warp_at(&self, s: f64) -> f64 {
        let a = self.bump_radius;
        let len = self.length();
        let u = s.min(len - s).max(0.0);
        let cap = 0.5 * PI * a;
        let blend = BLEND_FRACTION * cap;
        if u <= cap {
            a * (u / a).sin()
        } else if u < cap + blend {
            let w = smoothstep5((u - cap) / blend);
            (1.0 - w) * a * (u / a).sin() + w * self.neck_radius
        } else {
            self.neck_radius
        }
    }
}

impl Profile {
    /// Builds a profile and checks every invariant.
    pub fn new(n: usize, grid: Vec<f64>, warp: Vec<f64>, time: f64) -> Result<Self> {
        let p = Profile {
            n,
            grid,
            warp,
            time,
        };
        let v = validate_profile(&p);
        if v.is_empty() {
            Ok(p)
        } else {
            Err(Error::InvalidProfile(v))
        }
    }

    pub(crate) fn from_parts(n: usize, grid: Vec<f64>, warp: Vec<f64>, time: f64) -> Self {
        Profile {
            n,
            grid,
            warp,
            time,
        }
    }

    /// Round sphere of the given radius on a uniform grid with `m` cells.
    pub fn round(n: usize, radius: f64, m: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::config("radius", "must be positive"));
        }
        let len = PI * radius;
        let grid = uniform_grid(len, m);
        let warp = grid
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if i == 0 || i == m {
                    0.0
                } else {
                    radius * (s / radius).sin()
                }
            })
            .collect();
        Profile::new(n, grid, warp, 0.0)
    }

    /// Dumbbell on a uniform grid with `m` cells.
    pub fn dumbbell(n: usize, spec: &DumbbellSpec, m: usize) -> Result<Self> {
        spec.check()?;
        let grid = uniform_grid(spec.length(), m);
        let warp = grid
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if i == 0 || i == m {
                    0.0
                } else {
                    spec.warp_at(s)
                }
            })
            .collect();
        Profile::new(n, grid, warp, 0.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn warp(&self) -> &[f64] {
        &self.warp
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of grid cells `m` (the grid has `m + 1` nodes).
    pub fn cells(&self) -> usize {
        self.grid.len() - 1
    }

    /// Meridian length `L`.
    pub fn length(&self) -> f64 {
        *self.grid.last().expect("profile has nodes")
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Metric scaled by `lambda²`: lengths by `lambda`, time by `lambda²`.
    pub fn scaled(&self, lambda: f64) -> Profile {
        Profile {
            n: self.n,
            grid: self.grid.iter().map(|s| s * lambda).collect(),
            warp: self.warp.iter().map(|p| p * lambda).collect(),
            time: self.time * lambda * lambda,
        }
    }

    /// Largest over smallest cell width.
    pub fn spacing_ratio(&self) -> f64 {
        let (lo, hi) = self
            .grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        hi / lo
    }

    /// Smallest cell width.
    pub fn min_spacing(&self) -> f64 {
        self.grid
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// True when the grid is uniform up to round-off.
    pub fn is_uniform(&self) -> bool {
        let h = self.length() / self.cells() as f64;
        self.grid
            .iter()
            .enumerate()
            .all(|(i, &s)| (s - i as f64 * h).abs() <= 1e-12 * self.length())
    }

    /// Smallest interior warp value and its node.
    pub fn warp_min(&self) -> (usize, f64) {
        let m = self.cells();
        (1..m)
            .map(|i| (i, self.warp[i]))
            .fold(
                (0, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            )
    }

    /// Largest warp value.
    pub fn warp_max(&self) -> f64 {
        self.warp.iter().cloned().fold(0.0, f64::max)
    }

    /// Pole slopes `(φ'(0), φ'(L))` from the odd cubic through the two nearest interior nodes.
    pub fn pole_slopes(&self) -> (f64, f64) {
        let m = self.cells();
        let south = odd_cubic_slope(
            self.grid[1],
            self.grid[2],
            self.warp[1] - self.warp[0],
            self.warp[2] - self.warp[0],
        );
        let len = self.length();
        let north = -odd_cubic_slope(
            len - self.grid[m - 1],
            len - self.grid[m - 2],
            self.warp[m - 1] - self.warp[m],
            self.warp[m - 2] - self.warp[m],
        );
        (south, north)
    }

    /// Writes the `s,phi` snapshot CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["s", "phi"])?;
        for (s, p) in self.grid.iter().zip(&self.warp) {
            w.write_record([fmt_f64(*s), fmt_f64(*p)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads an `s,phi` snapshot CSV and validates it.
    pub fn read_csv(path: &Path, n: usize, time: f64) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            s: f64,
            phi: f64,
        }
        let mut r = csv::Reader::from_path(path)?;
        let mut grid = Vec::new();
        let mut warp = Vec::new();
        for row in r.deserialize() {
            let row: Row = row?;
            grid.push(row.s);
            warp.push(row.phi);
        }
        Profile::new(n, grid, warp, time)
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.12e}")
}

pub(crate) fn uniform_grid(len: f64, m: usize) -> Vec<f64> {
    let h = len / m as f64;
    let mut g: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    g[m] = len;
    g
}

/// Slope at 0 of `f(u) = a u + b u³` through `(u1, f1)` and `(u2, f2)`.
fn odd_cubic_slope(u1: f64, u2: f64, f1: f64, f2: f64) -> f64 {
    (f1 * u2.powi(3) - f2 * u1.powi(3)) / (u1 * u2.powi(3) - u2 * u1.powi(3))
}

/// Lists every invariant violation of `p`. An empty list means the profile is valid.
pub fn validate_profile(p: &Profile) -> Vec<Violation> {
    let mut out = Vec::new();
    if p.n < 3 {
        out.push(Violation::Dimension { n: p.n });
    }
    if p.grid.len() != p.warp.len() {
        out.push(Violation::LengthMismatch {
            grid: p.grid.len(),
            warp: p.warp.len(),
        });
        return out;
    }
    if p.grid.len() < MIN_CELLS + 1 {
        out.push(Violation::TooFewNodes {
            nodes: p.grid.len(),
        });
        return out;
    }
    let m = p.cells();
    let mut finite = true;
    for i in 0..=m {
        if !(p.grid[i].is_finite() && p.warp[i].is_finite()) {
            out.push(Violation::NonFinite { node: i });
            finite = false;
        }
    }
    if !finite {
        return out;
    }
    if p.grid[0] != 0.0 {
        out.push(Violation::GridStart { s0: p.grid[0] });
    }
    let mut increasing = true;
    for i in 1..=m {
        if p.grid[i] <= p.grid[i - 1] {
            out.push(Violation::NonIncreasingGrid { node: i });
            increasing = false;
        }
    }
    for node in [0, m] {
        if p.warp[node] != 0.0 {
            out.push(Violation::PoleValue {
                node,
                phi: p.warp[node],
            });
        }
    }
    for i in 1..m {
        if p.warp[i] <= 0.0 {
            out.push(Violation::NonPositiveWarp {
                node: i,
                phi: p.warp[i],
            });
        }
    }
    if increasing {
        let (south, north) = p.pole_slopes();
        if (south - 1.0).abs() > TOL_POLE {
            out.push(Violation::PoleSlope {
                pole: Pole::South,
                slope: south,
            });
        }
        if (north + 1.0).abs() > TOL_POLE {
            out.push(Violation::PoleSlope {
                pole: Pole::North,
                slope: north,
            });
        }
        let ratio = p.spacing_ratio();
        if ratio > MAX_SPACING_RATIO {
            out.push(Violation::SpacingRatio { ratio });
        }
    }
    out
}

/// Resamples `p` onto a uniform grid with the same number of cells by cubic interpolation.
pub fn reparametrize_arclength(p: &Profile) -> Profile {
    if p.is_uniform() {
        return p.clone();
    }
    resample_uniform(p, p.cells())
}

/// Resamples `p` onto a uniform grid of `m` cells by cubic interpolation.
pub fn resample_uniform(p: &Profile, m: usize) -> Profile {
    let grid = uniform_grid(p.length(), m);
    let mut warp: Vec<f64> = grid
        .iter()
        .map(|&s| stencil::cubic_interpolate_odd(&p.grid, &p.warp, s))
        .collect();
    warp[0] = 0.0;
    warp[m] = 0.0;
    Profile::from_parts(p.n, grid, warp, p.time)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_sphere_is_valid() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        assert!(validate_profile(&p).is_empty());
        assert!((p.length() - PI).abs() < 1e-15);
    }

    #[test]
    fn interior_zero_is_reported_at_its_node() {
        let p = Profile::round(3, 1.0, 64).unwrap();
        let mut warp = p.warp().to_vec();
        warp[20] = 0.0;
        let q = Profile::from_parts(3, p.grid().to_vec(), warp, 0.0);
        let v = validate_profile(&q);
        assert_eq!(v, vec![Violation::NonPositiveWarp { node: 20, phi: 0.0 }]);
    }

    #[test]
    fn half_slope_at_pole_is_reported() {
        let m = 128;
        let grid = uniform_grid(PI, m);
        let warp: Vec<f64> = grid
            .iter()
            .map(|&s| s.sin() * (1.0 - 0.5 * (0.5 * s).cos().powi(2)))
            .collect();
        let mut warp = warp;
        warp[m] = 0.0;
        let q = Profile::from_parts(3, grid, warp, 0.0);
        let v = validate_profile(&q);
        assert_eq!(v.len(), 1);
        match v[0] {
            Violation::PoleSlope { pole, slope } => {
                assert_eq!(pole, Pole::South);
                assert!((slope - 0.5).abs() < 1e-3);
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_two_is_rejected() {
        assert!(matches!(
            Profile::round(2, 1.0, 64),
            Err(Error::InvalidProfile(_))
        ));
    }

    #[test]
    fn dumbbell_is_valid_and_symmetric() {
        let spec = DumbbellSpec {
            bump_radius: 1.0,
            neck_radius: 0.35,
            neck_width: 0.6,
        };
        let p = Profile::dumbbell(3, &spec, 128).unwrap();
        let m = p.cells();
        for i in 0..=m {
            assert!((p.warp()[i] - p.warp()[m - i]).abs() < 1e-12);
        }
        assert!((p.warp()[m / 2] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let p = Profile::round(4, 1.5, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        p.write_csv(&path).unwrap();
        let q = Profile::read_csv(&path, 4, 0.0).unwrap();
        for (a, b) in p.warp().iter().zip(q.warp()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn reparametrize_restores_uniform_grid() {
        let m = 256;
        let grid: Vec<f64> = (0..=m)
            .map(|i| {
                let x = PI * i as f64 / m as f64;
                x + 0.1 * (2.0 * x).sin()
            })
            .collect();
        let warp: Vec<f64> = grid.iter().map(|s| s.sin()).collect();
        let mut warp = warp;
        warp[m] = 0.0;
        let p = Profile::new(3, grid, warp, 0.0).unwrap();
        let q = reparametrize_arclength(&p);
        assert!(q.is_uniform());
        assert!(q.spacing_ratio() <= 1.05);
        for (s, f) in q.grid().iter().zip(q.warp()) {
            assert!((f - s.sin()).abs() < 1e-6);
        }
    }
}
