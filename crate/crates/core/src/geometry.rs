use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ConewaveError, Result};
use crate::sampling::parallel_sum;

/// Half-aperture of the direction cap S^{n-1} cut out by the sector region:
/// cone directions stay within pi/4 of `e_1`.
pub const CAP_ANGLE: f64 = std::f64::consts::PI / 4.0;

/// An n-dimensional disk at a fixed time, carrying spatial measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: Vec<f64>,
    pub t: f64,
    pub radius: f64,
}

impl Disk {
    pub fn new(center: Vec<f64>, t: f64, radius: f64) -> Result<Disk> {
        if !(radius > 0.0) {
            return Err(ConewaveError::InvalidParameter(format!(
                "disk radius must be positive, got {radius}"
            )));
        }
        Ok(Disk { center, t, radius })
    }

    pub fn spatial_dist(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.spatial_dist(x) <= self.radius
    }

    pub fn scaled(&self, c: f64) -> Disk {
        Disk {
            center: self.center.clone(),
            t: self.t,
            radius: self.radius * c,
        }
    }
}

/// Smooth disk cutoff `(1 + |x - x_D| / r_D)^{-decay_power}`.
pub fn cutoff_disk(disk: &Disk, x: &[f64], decay_power: f64) -> f64 {
    (1.0 + disk.spatial_dist(x) / disk.radius).powf(-decay_power)
}

/// An (n+1)-dimensional axis-parallel spacetime cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub t: f64,
    pub side: f64,
}

impl Cube {
    pub fn new(center: Vec<f64>, t: f64, side: f64) -> Result<Cube> {
        if !(side > 0.0) {
            return Err(ConewaveError::InvalidParameter(format!(
                "cube side must be positive, got {side}"
            )));
        }
        Ok(Cube { center, t, side })
    }

    pub fn dim(&self) -> usize {
        self.center.len() + 1
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim() as i32)
    }

    pub fn lifespan(&self) -> (f64, f64) {
        (self.t - self.side / 2.0, self.t + self.side / 2.0)
    }

    pub fn scaled(&self, c: f64) -> Cube {
        Cube {
            center: self.center.clone(),
            t: self.t,
            side: self.side * c,
        }
    }

    /// Half-open membership: `lo <= coord < hi` per axis, resolving
    /// partition boundary ties.
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        let h = self.side / 2.0;
        for (c, ctr) in x.iter().zip(self.center.iter()) {
            if *c < ctr - h || *c >= ctr + h {
                return false;
            }
        }
        t >= self.t - h && t < self.t + h
    }

    /// Closed membership with a symmetric scale factor, used by interior
    /// sets (`(1-c)q`).
    pub fn contains_closed_scaled(&self, x: &[f64], t: f64, factor: f64) -> bool {
        let h = factor * self.side / 2.0;
        for (c, ctr) in x.iter().zip(self.center.iter()) {
            if (c - ctr).abs() > h {
                return false;
            }
        }
        (t - self.t).abs() <= h
    }

    /// The partition Q_j(Q) into 2^{(n+1)j} half-open subcubes.
    pub fn subcubes(&self, j: u32) -> Vec<Cube> {
        let parts = 1usize << j;
        let sub = self.side / parts as f64;
        let n = self.center.len();
        let total = parts.pow((n + 1) as u32);
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut idx = flat;
            let mut coords = vec![0usize; n + 1];
            for axis in (0..n + 1).rev() {
                coords[axis] = idx % parts;
                idx /= parts;
            }
            let pos = |cell: usize, ctr: f64| -> f64 {
                ctr - self.side / 2.0 + (cell as f64 + 0.5) * sub
            };
            let center: Vec<f64> = (0..n).map(|a| pos(coords[a], self.center[a])).collect();
            let t = pos(coords[n], self.t);
            out.push(Cube {
                center,
                t,
                side: sub,
            });
        }
        out
    }

    /// Flat index into `subcubes(j)` of the subcube containing a point, if
    /// the point is inside Q.
    pub fn subcube_index(&self, j: u32, x: &[f64], t: f64) -> Option<usize> {
        let parts = 1usize << j;
        let sub = self.side / parts as f64;
        let mut flat = 0usize;
        for (c, ctr) in x
            .iter()
            .zip(self.center.iter())
            .map(|(a, b)| (*a, *b))
            .chain(std::iter::once((t, self.t)))
        {
            let rel = (c - (ctr - self.side / 2.0)) / sub;
            if rel < 0.0 || rel >= parts as f64 {
                return None;
            }
            flat = flat * parts + rel as usize;
        }
        Some(flat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeColor {
    Red,
    Blue,
    Purple,
}

/// Thickened light cone restricted to directions in the cap.  Red cones open
/// toward the past (`t0 - r`), blue toward the future.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeNeighbourhood {
    pub vertex_x: Vec<f64>,
    pub vertex_t: f64,
    pub thickness: f64,
    pub color: ConeColor,
}

impl ConeNeighbourhood {
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        cone_surface_distance(self.color, &self.vertex_x, self.vertex_t, x, t) <= self.thickness
    }
}

/// Distance from `(x, t)` to the cone surface of the given color.
pub fn cone_surface_distance(
    color: ConeColor,
    vertex_x: &[f64],
    vertex_t: f64,
    x: &[f64],
    t: f64,
) -> f64 {
    if color == ConeColor::Purple {
        let r = cone_surface_distance(ConeColor::Red, vertex_x, vertex_t, x, t);
        let b = cone_surface_distance(ConeColor::Blue, vertex_x, vertex_t, x, t);
        return r.min(b);
    }
    // Reduce to the plane spanned by e_1 and the perpendicular component of
    // x - x0: coordinates (a, b, tau) with b >= 0.
    let a = x[0] - vertex_x[0];
    let mut b2 = 0.0;
    for i in 1..x.len() {
        let d = x[i] - vertex_x[i];
        b2 += d * d;
    }
    let b = b2.sqrt();
    let tau = t - vertex_t;
    // Cone rays: spacetime direction (cos alpha, sigma sin alpha, dt) with
    // dt = -1 for red, +1 for blue, alpha in [0, pi/4], parameter r in R.
    let dt = match color {
        ConeColor::Red => -1.0,
        ConeColor::Blue => 1.0,
        ConeColor::Purple => unreachable!(),
    };
    let p = [a, b, tau];
    let dist_for = |alpha: f64, sigma: f64| -> f64 {
        let v = [alpha.cos(), sigma * alpha.sin(), dt];
        let vv = 2.0; // |v|^2 = cos^2 + sin^2 + 1
        let pv = p[0] * v[0] + p[1] * v[1] + p[2] * v[2];
        let pp = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        (pp - pv * pv / vv).max(0.0).sqrt()
    };
    let mut best = f64::INFINITY;
    for &sigma in &[1.0f64, -1.0] {
        // coarse scan
        let scan = 64;
        let mut best_alpha = 0.0;
        let mut best_local = f64::INFINITY;
        for i in 0..=scan {
            let alpha = CAP_ANGLE * i as f64 / scan as f64;
            let d = dist_for(alpha, sigma);
            if d < best_local {
                best_local = d;
                best_alpha = alpha;
            }
        }
        // golden section refinement around the coarse minimum
        let width = CAP_ANGLE / scan as f64;
        let (mut lo, mut hi) = (
            (best_alpha - width).max(0.0),
            (best_alpha + width).min(CAP_ANGLE),
        );
        let phi = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if dist_for(m1, sigma) < dist_for(m2, sigma) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best = best.min(dist_for((lo + hi) / 2.0, sigma).min(best_local));
    }
    best
}

/// Spatial carrier of one wave packet: the radius-r neighbourhood of the
/// null ray `t -> x_T + omega_T t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub direction: Vec<f64>,
    pub base: Vec<f64>,
    pub radius: f64,
}

impl Tube {
    pub fn axis_point(&self, t: f64) -> Vec<f64> {
        self.base
            .iter()
            .zip(self.direction.iter())
            .map(|(x, w)| x + w * t)
            .collect()
    }

    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        self.spatial_dist(x, t) <= self.radius
    }

    pub fn spatial_dist(&self, x: &[f64], t: f64) -> f64 {
        let c = self.axis_point(t);
        x.iter()
            .zip(c.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Moving-disk cutoff per the tube weight definition.
    pub fn cutoff(&self, x: &[f64], t: f64, decay_power: f64) -> f64 {
        (1.0 + self.spatial_dist(x, t) / self.radius).powf(-decay_power)
    }

    /// Distance between the tube axis segment over `times` and a cube,
    /// measured between the axis and the cube center minus radii.
    pub fn dist_to_cube(&self, q: &Cube, samples: usize) -> f64 {
        let (t0, t1) = q.lifespan();
        let mut best = f64::INFINITY;
        for i in 0..=samples {
            let t = t0 + (t1 - t0) * i as f64 / samples as f64;
            let c = self.axis_point(t);
            let mut d2 = 0.0;
            for (a, b) in c.iter().zip(q.center.iter()) {
                let d = (a - b).abs() - q.side / 2.0;
                if d > 0.0 {
                    d2 += d * d;
                }
            }
            best = best.min(d2.sqrt());
        }
        (best - self.radius).max(0.0)
    }
}

// --- composite regions ----------------------------------------------------

/// Spacetime regions supporting membership tests and quadrature.  Cone
/// neighbourhoods are unbounded and must be intersected with a cube before
/// quadrature.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    Cube(Cube),
    CubeAnnulus { cube: Cube, inner_side: f64 },
    Cone(ConeNeighbourhood),
    Interior(InteriorSet),
    XSet(XSet),
    Intersection { a: Box<Region>, b: Box<Region> },
    Difference { a: Box<Region>, b: Box<Region> },
}

/// `I^{c,k}(Q)`: union of the (1-c)-shrunk level-k subcubes of Q.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteriorSet {
    pub cube: Cube,
    pub c: f64,
    pub k_levels: u32,
}

/// `X(Q)`: intersection of interiors `I^{c 2^{-(k-j)/N}, j}(Q)` over
/// `j = C0 .. k`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XSet {
    pub cube: Cube,
    pub c: f64,
    pub c0: u32,
    pub k: u32,
    pub n_desk: f64,
}

pub fn interior_set(cube: Cube, c: f64, k_levels: u32) -> Result<InteriorSet> {
    if !(c > 0.0 && c < 0.5) {
        return Err(ConewaveError::InvalidParameter(format!(
            "interior parameter c must lie in (0, 1/2), got {c}"
        )));
    }
    Ok(InteriorSet { cube, c, k_levels })
}

pub fn x_set(cube: Cube, c: f64, c0: u32, k: u32, n_desk: f64) -> Result<XSet> {
    if !(c > 0.0 && c < 0.5) {
        return Err(ConewaveError::InvalidParameter(format!(
            "interior parameter c must lie in (0, 1/2), got {c}"
        )));
    }
    if c0 > k {
        return Err(ConewaveError::InvalidParameter(format!(
            "X(Q) requires C0 <= k, got C0={c0}, k={k}"
        )));
    }
    Ok(XSet {
        cube,
        c,
        c0,
        k,
        n_desk,
    })
}

impl InteriorSet {
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        interior_contains(&self.cube, self.c, self.k_levels, x, t)
    }

    /// |I^{c,k}(Q)| / |Q| is exactly (1-c)^{n+1} for every k.
    pub fn measure_fraction(&self) -> f64 {
        (1.0 - self.c).powi(self.cube.dim() as i32)
    }
}

fn interior_contains(cube: &Cube, c: f64, k: u32, x: &[f64], t: f64) -> bool {
    let parts = 1usize << k;
    let sub = cube.side / parts as f64;
    let factor = 1.0 - c;
    for (coord, ctr) in x
        .iter()
        .zip(cube.center.iter())
        .map(|(a, b)| (*a, *b))
        .chain(std::iter::once((t, cube.t)))
    {
        let rel = (coord - (ctr - cube.side / 2.0)) / sub;
        if rel < 0.0 || rel >= parts as f64 {
            return false;
        }
        let cell = rel.floor();
        let local = (rel - cell - 0.5).abs(); // in units of the subcube side
        if local > factor / 2.0 {
            return false;
        }
    }
    true
}

impl XSet {
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        for j in self.c0..=self.k {
            let cj = self.c * (2.0f64).powf(-((self.k - j) as f64) / self.n_desk);
            if !interior_contains(&self.cube, cj, j, x, t) {
                return false;
            }
        }
        true
    }
}

impl Region {
    pub fn contains(&self, x: &[f64], t: f64) -> bool {
        match self {
            Region::Cube(c) => c.contains(x, t),
            Region::CubeAnnulus { cube, inner_side } => {
                cube.contains(x, t) && {
                    let inner = Cube {
                        center: cube.center.clone(),
                        t: cube.t,
                        side: *inner_side,
                    };
                    !inner.contains(x, t)
                }
            }
            Region::Cone(c) => c.contains(x, t),
            Region::Interior(i) => i.contains(x, t),
            Region::XSet(xs) => xs.contains(x, t),
            Region::Intersection { a, b } => a.contains(x, t) && b.contains(x, t),
            Region::Difference { a, b } => a.contains(x, t) && !b.contains(x, t),
        }
    }

    /// Bounding cube for quadrature, if the region is bounded.
    pub fn bounding_cube(&self) -> Option<Cube> {
        match self {
            Region::Cube(c) => Some(c.clone()),
            Region::CubeAnnulus { cube, .. } => Some(cube.clone()),
            Region::Cone(_) => None,
            Region::Interior(i) => Some(i.cube.clone()),
            Region::XSet(xs) => Some(xs.cube.clone()),
            Region::Intersection { a, b } => a.bounding_cube().or_else(|| b.bounding_cube()),
            Region::Difference { a, .. } => a.bounding_cube(),
        }
    }
}

/// Deterministic tensor-grid quadrature of `integrand` over the region, with
/// `resolution` points per unit length per axis.  Returns the integral and a
/// Richardson-style error estimate from a half-resolution pass.
pub fn region_quadrature<F>(region: &Region, integrand: F, resolution: f64) -> Result<(f64, f64)>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    let coarse = quadrature_pass(region, &integrand, resolution / 2.0)?;
    let fine = quadrature_pass(region, &integrand, resolution)?;
    Ok((fine, (fine - coarse).abs()))
}

pub fn quadrature_pass<F>(region: &Region, integrand: &F, resolution: f64) -> Result<f64>
where
    F: Fn(&[f64], f64) -> f64 + Sync,
{
    let bbox = region.bounding_cube().ok_or(ConewaveError::UnboundedRegion)?;
    let dim = bbox.dim();
    let n = dim - 1;
    let per_axis = ((bbox.side * resolution).ceil() as usize).max(2);
    let step = bbox.side / per_axis as f64;
    let cell = step.powi(dim as i32);
    let total = per_axis.pow(dim as u32);
    let lo: Vec<f64> = bbox
        .center
        .iter()
        .map(|c| c - bbox.side / 2.0)
        .chain(std::iter::once(bbox.t - bbox.side / 2.0))
        .collect();
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = flat;
            let mut point = vec![0.0; dim];
            for axis in (0..dim).rev() {
                point[axis] = lo[axis] + ((idx % per_axis) as f64 + 0.5) * step;
                idx /= per_axis;
            }
            let (x, t) = (&point[..n], point[n]);
            if region.contains(x, t) {
                integrand(x, t)
            } else {
                0.0
            }
        })
        .collect();
    Ok(parallel_sum(&values) * cell)
}
