//! Geodesic distance on the reduced surface `ds² + φ(s)² dα²`, `α ∈ [0, π]`.
//!
//! Distances between points of a warped product over `S^{n-1}` only depend on the meridian
//! coordinates and the angle between the two directions on `S^{n-1}`, so a 2-D fast-marching
//! solve on `(s, α)` gives distances from a point to every other point. Ball volumes weight each
//! cell by `φ^{n-1} sin^{n-2} α`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, sphere_area};
use crate::profile::{fmt_f64, Profile};

/// Grid and seeding controls for the fast-marching solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceOptions {
    /// Number of cells in `α ∈ [0, π]`.
    pub alpha_cells: usize,
    /// Nodes closer to the center than this many meridian cells are seeded with the chordal
    /// distance `√(Δs² + 4 φ φ_c sin²(α/2))`, exact for flat polar coordinates.
    pub seed_cells: f64,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        DistanceOptions {
            alpha_cells: 128,
            seed_cells: 8.0,
        }
    }
}

/// Distance from one center on the meridian (at `α = 0`) to every node of the `(s, α)` grid.
#[derive(Clone, Debug)]
pub struct DistanceField {
    s: Vec<f64>,
    phi: Vec<f64>,
    alpha_cells: usize,
    center: usize,
    dist: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    d: f64,
    i: usize,
    j: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (d, i, j)
        other
            .d
            .total_cmp(&self.d)
            .then_with(|| other.i.cmp(&self.i))
            .then_with(|| other.j.cmp(&self.j))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const RING: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
];

/// `min_{P ∈ [A, B]} T(P) + |P|` with `T` linear along the edge and the target at the origin.
fn segment_update(ta: f64, tb: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let mut best = (ta + a.0.hypot(a.1)).min(tb + b.0.hypot(b.1));
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let el = ex.hypot(ey);
    if el < 1e-14 {
        return best;
    }
    let k = (tb - ta) / el;
    if k.abs() >= 1.0 {
        return best;
    }
    let (ux, uy) = (ex / el, ey / el);
    let (wx, wy) = (-a.0, -a.1);
    let proj = wx * ux + wy * uy;
    let perp = (wx * wx + wy * wy - proj * proj).max(0.0).sqrt();
    let x = proj - k * perp / (1.0 - k * k).sqrt();
    if x > 0.0 && x < el {
        let (px, py) = (a.0 + x * ux, a.1 + x * uy);
        best = best.min(ta + k * x + px.hypot(py));
    }
    best
}

struct Marcher<'a> {
    s: &'a [f64],
    phi: &'a [f64],
    m: usize,
    k: usize,
    da: f64,
    t: Vec<f64>,
    alive: Vec<bool>,
    heap: BinaryHeap<Entry>,
}

impl Marcher<'_> {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.k + 1) + j
    }

    fn is_pole(&self, i: usize) -> bool {
        i == 0 || i == self.m
    }

    fn known(&self, i: usize, j: usize) -> f64 {
        let j = if self.is_pole(i) { 0 } else { j };
        let id = self.idx(i, j);
        if self.alive[id] {
            self.t[id]
        } else {
            f64::INFINITY
        }
    }

    fn mirror(&self, b: isize) -> usize {
        let k = self.k as isize;
        let b = if b < 0 { -b } else { b };
        (if b > k { 2 * k - b } else { b }) as usize
    }

    fn propose(&mut self, i: usize, j: usize, v: f64) {
        let id = self.idx(i, j);
        if v < self.t[id] {
            if self.is_pole(i) {
                for jj in 0..=self.k {
                    let id = self.idx(i, jj);
                    self.t[id] = v;
                }
            } else {
                self.t[id] = v;
            }
            self.heap.push(Entry { d: v, i, j });
        }
    }

    /// Recomputes the tentative value at `(i, j)` from candidates involving the newly accepted
    /// node `src`.
    fn update(&mut self, i: usize, j: usize, src: (usize, usize)) {
        if self.is_pole(i) {
            let r = if i == 0 { 1 } else { self.m - 1 };
            let ds = (self.s[r] - self.s[i]).abs();
            let v = (0..=self.k)
                .map(|jj| self.known(r, jj))
                .fold(f64::INFINITY, f64::min)
                + ds;
            self.propose(i, 0, v);
            return;
        }
        if self.alive[self.idx(i, j)] {
            return;
        }
        let mut vals = [f64::INFINITY; 8];
        let mut pos = [(0.0, 0.0); 8];
        let mut hit = [false; 8];
        for (q, &(di, dj)) in RING.iter().enumerate() {
            let a = (i as isize + di) as usize;
            let b = j as isize + dj;
            let ds = self.s[a] - self.s[i];
            if self.is_pole(a) {
                vals[q] = self.known(a, 0);
                pos[q] = (ds, 0.0);
                hit[q] = a == src.0;
            } else {
                let bm = self.mirror(b);
                vals[q] = self.known(a, bm);
                pos[q] = (ds, 0.5 * (self.phi[a] + self.phi[i]) * dj as f64 * self.da);
                hit[q] = (a, bm) == src;
            }
        }
        let mut best = self.t[self.idx(i, j)];
        for q in 0..8 {
            if !hit[q] {
                continue;
            }
            best = best.min(vals[q] + pos[q].0.hypot(pos[q].1));
            for r in [(q + 7) % 8, (q + 1) % 8] {
                if vals[r].is_finite() {
                    best = best.min(segment_update(vals[q], vals[r], pos[q], pos[r]));
                }
            }
        }
        self.propose(i, j, best);
    }

    fn run(&mut self) {
        while let Some(Entry { d, i, j }) = self.heap.pop() {
            let id = self.idx(i, j);
            if d > self.t[id] || self.alive[id] {
                continue;
            }
            if self.is_pole(i) {
                for jj in 0..=self.k {
                    let id = self.idx(i, jj);
                    self.alive[id] = true;
                }
                let r = if i == 0 { 1 } else { self.m - 1 };
                for jj in 0..=self.k {
                    self.update(r, jj, (i, 0));
                }
                continue;
            }
            self.alive[id] = true;
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let a = i as isize + di;
                    if a < 0 || a > self.m as isize {
                        continue;
                    }
                    let b = self.mirror(j as isize + dj);
                    self.update(a as usize, b, (i, j));
                }
            }
        }
    }
}

/// Fast-marching distance from the grid node nearest to `center_s` (at `α = 0`).
pub fn solve_distance(p: &Profile, center_s: f64, opts: &DistanceOptions) -> Result<DistanceField> {
    if !(0.0..=p.length()).contains(&center_s) {
        return Err(Error::config(
            "center_s",
            format!("{center_s} is outside [0, {}]", p.length()),
        ));
    }
    let g = p.grid();
    let node = match g.partition_point(|&v| v < center_s) {
        0 => 0,
        q if q > p.cells() => p.cells(),
        q => {
            if center_s - g[q - 1] <= g[q] - center_s {
                q - 1
            } else {
                q
            }
        }
    };
    solve_distance_from_node(p, node, opts)
}

/// Fast-marching distance from meridian node `center` (at `α = 0`).
pub fn solve_distance_from_node(
    p: &Profile,
    center: usize,
    opts: &DistanceOptions,
) -> Result<DistanceField> {
    let m = p.cells();
    let k = opts.alpha_cells.max(2);
    let da = PI / k as f64;
    let s = p.grid();
    let phi = p.warp();
    let mut mr = Marcher {
        s,
        phi,
        m,
        k,
        da,
        t: vec![f64::INFINITY; (m + 1) * (k + 1)],
        alive: vec![false; (m + 1) * (k + 1)],
        heap: BinaryHeap::new(),
    };
    mr.propose(center, 0, 0.0);
    if !mr.is_pole(center) && opts.seed_cells > 0.0 {
        let radius = opts.seed_cells * p.min_spacing();
        for i in 0..=m {
            let ds = s[i] - s[center];
            if ds.abs() > radius {
                continue;
            }
            let w = 4.0 * phi[i] * phi[center];
            for j in 0..=k {
                let half = (0.5 * j as f64 * da).sin();
                let d = (ds * ds + w * half * half).sqrt();
                if d > radius {
                    break;
                }
                mr.propose(i, j, d);
                if mr.is_pole(i) {
                    break;
                }
            }
        }
    }
    mr.run();
    if let Some(pos) = mr.t.iter().position(|v| !v.is_finite()) {
        return Err(Error::Marching {
            i: pos / (k + 1),
            j: pos % (k + 1),
        });
    }
    Ok(DistanceField {
        s: s.to_vec(),
        phi: phi.to_vec(),
        alpha_cells: k,
        center,
        dist: mr.t,
    })
}

impl DistanceField {
    /// Distance at meridian node `i`, angle node `j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.dist[i * (self.alpha_cells + 1) + j]
    }

    pub fn center_node(&self) -> usize {
        self.center
    }

    pub fn center_s(&self) -> f64 {
        self.s[self.center]
    }

    pub fn meridian_cells(&self) -> usize {
        self.s.len() - 1
    }

    pub fn alpha_cells(&self) -> usize {
        self.alpha_cells
    }

    pub fn alpha(&self, j: usize) -> f64 {
        PI * j as f64 / self.alpha_cells as f64
    }

    pub fn s(&self, i: usize) -> f64 {
        self.s[i]
    }

    /// Largest distance and the first node `(i, j)` attaining it in lexicographic order.
    pub fn farthest(&self) -> (f64, usize, usize) {
        let k1 = self.alpha_cells + 1;
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (id, &d) in self.dist.iter().enumerate() {
            if d > best.0 {
                best = (d, id / k1, id % k1);
            }
        }
        best
    }

    /// Writes the `s,alpha,dist` debug CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["s", "alpha", "dist"])?;
        for i in 0..self.s.len() {
            for j in 0..=self.alpha_cells {
                w.write_record([
                    fmt_f64(self.s[i]),
                    fmt_f64(self.alpha(j)),
                    fmt_f64(self.at(i, j)),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Sub-samples per cell side for cells cut by the ball boundary.
const SUB: usize = 6;

/// Cell-based quadrature of balls `{d ≤ r}` for one distance field.
pub struct BallQuadrature<'a> {
    field: &'a DistanceField,
    n: usize,
    /// `|S^{n-2}| ∫ φ^{n-1}` over each meridian cell.
    radial: Vec<f64>,
    /// Same with the integrand multiplied by a nodal field, if any.
    radial_f: Vec<f64>,
    angular: Vec<f64>,
    total: f64,
    max_dist: f64,
}

impl<'a> BallQuadrature<'a> {
    /// Quadrature for volume and for `∫ f dg` over balls, with `f` a nodal field on the meridian.
    pub fn new(p: &Profile, field: &'a DistanceField, f: Option<&[f64]>) -> Self {
        let n = p.n();
        let k = field.alpha_cells;
        let e = n as i32 - 1;
        let area = sphere_area(n - 2);
        let g = p.grid();
        let phi = p.warp();
        let m = p.cells();
        let ones = vec![1.0; m + 1];
        let f = f.unwrap_or(&ones);
        let mut radial = Vec::with_capacity(m);
        let mut radial_f = Vec::with_capacity(m);
        for i in 0..m {
            let h = g[i + 1] - g[i];
            let (a, b) = (phi[i].powi(e), phi[i + 1].powi(e));
            radial.push(area * 0.5 * h * (a + b));
            radial_f.push(area * 0.5 * h * (a * f[i] + b * f[i + 1]));
        }
        let angular = angular_weights(n, k);
        let total = radial.iter().sum::<f64>() * angular.iter().sum::<f64>();
        let max_dist = field.dist.iter().cloned().fold(0.0, f64::max);
        BallQuadrature {
            field,
            n,
            radial,
            radial_f,
            angular,
            total,
            max_dist,
        }
    }

    /// Whole-manifold volume under this quadrature.
    pub fn total(&self) -> f64 {
        self.total
    }

    fn fraction(&self, i: usize, j: usize, r: f64) -> f64 {
        let fd = self.field;
        let d = [
            fd.at(i, j),
            fd.at(i + 1, j),
            fd.at(i, j + 1),
            fd.at(i + 1, j + 1),
        ];
        let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = d.iter().cloned().fold(0.0, f64::max);
        if hi <= r {
            return 1.0;
        }
        if lo > r {
            return 0.0;
        }
        let e = self.n as i32 - 1;
        let (a0, a1) = (fd.alpha(j), fd.alpha(j + 1));
        let (p0, p1) = (fd.phi[i], fd.phi[i + 1]);
        let mut inside = 0.0;
        let mut all = 0.0;
        for a in 0..SUB {
            let u = (a as f64 + 0.5) / SUB as f64;
            let wu = ((1.0 - u) * p0 + u * p1).powi(e);
            for b in 0..SUB {
                let v = (b as f64 + 0.5) / SUB as f64;
                let wv = ((1.0 - v) * a0 + v * a1).sin().powi(self.n as i32 - 2);
                let w = wu * wv;
                let dd = (1.0 - u) * (1.0 - v) * d[0]
                    + u * (1.0 - v) * d[1]
                    + (1.0 - u) * v * d[2]
                    + u * v * d[3];
                all += w;
                if dd <= r {
                    inside += w;
                }
            }
        }
        if all > 0.0 {
            inside / all
        } else {
            0.5
        }
    }

    /// `(|B(x, r)|, ∫_{B(x, r)} f dg)`.
    pub fn ball(&self, r: f64) -> (f64, f64) {
        let m = self.radial.len();
        let k = self.angular.len();
        let mut vol = 0.0;
        let mut int = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..k {
                let fr = self.fraction(i, j, r);
                if fr > 0.0 {
                    row += fr * self.angular[j];
                }
            }
            vol += row * self.radial[i];
            int += row * self.radial_f[i];
        }
        (vol, int)
    }

    /// True when the ball of radius `r` covers the whole grid.
    pub fn covers(&self, r: f64) -> bool {
        r >= self.max_dist
    }
}

/// `∫ sin^{n-2} α` over each `α` cell, normalized so that the cells sum to `|S^{n-1}|/|S^{n-2}|`.
fn angular_weights(n: usize, k: usize) -> Vec<f64> {
    let e = n as i32 - 2;
    let da = PI / k as f64;
    let mut w: Vec<f64> = (0..k)
        .map(|j| {
            // Simpson on 8 panels
            let a = j as f64 * da;
            let h = da / 8.0;
            let mut acc = 0.0;
            for q in 0..=8 {
                let c = if q == 0 || q == 8 {
                    1.0
                } else if q % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += c * (a + q as f64 * h).sin().powi(e);
            }
            acc * h / 3.0
        })
        .collect();
    let target = sphere_area(n - 1) / sphere_area(n - 2);
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v *= target / sum;
    }
    w
}

/// Volume of the geodesic ball and whether it exhausts the manifold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BallVolume {
    pub volume: f64,
    pub whole: bool,
}

/// `|B(x, r)|` for the center of `field`.
pub fn ball_volume(p: &Profile, field: &DistanceField, r: f64) -> BallVolume {
    let q = BallQuadrature::new(p, field, None);
    if q.covers(r) {
        return BallVolume {
            volume: q.total(),
            whole: true,
        };
    }
    BallVolume {
        volume: q.ball(r).0,
        whole: false,
    }
}

/// `|B(x, r)| / rⁿ`.
pub fn volume_ratio_kappa(p: &Profile, field: &DistanceField, r: f64) -> f64 {
    ball_volume(p, field, r).volume / r.powi(p.n() as i32)
}

/// Log-spaced radii from one meridian cell to `r` (`samples` points) followed by `r` itself.
pub fn rho_ladder(cell: f64, r: f64, samples: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(samples + 1);
    if r > cell && samples >= 2 {
        let ratio = (r / cell).ln();
        for q in 0..samples {
            let rho = cell * (ratio * q as f64 / (samples - 1) as f64).exp();
            if rho < r {
                out.push(rho);
            }
        }
    }
    out.push(r);
    out
}

/// `M₂(x, r) = sup_{ρ ≤ r} ρ² ⨍_{B(x,ρ)} R₊` over a log-spaced set of `ρ`.
pub fn maximal_m2(p: &Profile, field: &DistanceField, r: f64, samples: usize) -> Result<f64> {
    Ok(maximal_m2_series(p, field, &[r], samples)?[0])
}

/// `M₂` at several radii. Values are a running supremum over increasing radii, so the series is
/// nondecreasing in `r`.
pub fn maximal_m2_series(
    p: &Profile,
    field: &DistanceField,
    radii: &[f64],
    samples: usize,
) -> Result<Vec<f64>> {
    let rplus: Vec<f64> = geometry::scalar_curvature(p)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let q = BallQuadrature::new(p, field, Some(&rplus));
    let cell = p.min_spacing();
    let mut order: Vec<usize> = (0..radii.len()).collect();
    order.sort_by(|&a, &b| radii[a].total_cmp(&radii[b]));
    let mut out = vec![0.0; radii.len()];
    let mut running = 0.0_f64;
    for &idx in &order {
        let r = radii[idx];
        for rho in rho_ladder(cell, r, samples) {
            let (vol, int) = q.ball(rho);
            if vol > 0.0 {
                running = running.max(rho * rho * int / vol);
            }
        }
        out[idx] = running;
    }
    Ok(out)
}

/// Diameter search controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiameterOptions {
    pub distance: DistanceOptions,
    /// Centers on the meridian in addition to the two poles.
    pub meridian_centers: usize,
}

impl Default for DiameterOptions {
    fn default() -> Self {
        DiameterOptions {
            distance: DistanceOptions::default(),
            meridian_centers: 16,
        }
    }
}

/// Diameter estimate with the achieving pair of grid nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diameter {
    pub value: f64,
    /// Meridian node of the center.
    pub center: usize,
    /// `(s index, α index)` of the farthest node.
    pub far: (usize, usize),
}

/// Meridian nodes used as diameter centers: both poles plus `count` evenly spaced nodes.
pub fn diameter_centers(m: usize, count: usize) -> Vec<usize> {
    let mut c = vec![0, m];
    let parts = count + 1;
    for q in 1..=count {
        c.push((q * m + parts / 2) / parts);
    }
    c.sort_unstable();
    c.dedup();
    c
}

/// Largest distance over all centers in the sample set.
pub fn diameter(p: &Profile, opts: &DiameterOptions) -> Result<Diameter> {
    let centers = diameter_centers(p.cells(), opts.meridian_centers);
    let results: Vec<Result<Diameter>> = centers
        .par_iter()
        .map(|&c| {
            let f = solve_distance_from_node(p, c, &opts.distance)?;
            let (value, i, j) = f.farthest();
            Ok(Diameter {
                value,
                center: c,
                far: (i, j),
            })
        })
        .collect();
    let mut best: Option<Diameter> = None;
    for r in results {
        let d = r?;
        best = match best {
            Some(b) if b.value >= d.value => Some(b),
            _ => Some(d),
        };
    }
    Ok(best.expect("at least two centers"))
}
