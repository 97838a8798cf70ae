//! Wave-packet (tube) decomposition, wave tables, quilts, and the energy
//! concentration functional.
//!
//! The decomposition splits a red wave into packets indexed by tubes
//! (direction x base point): atoms are first routed to angular Voronoi
//! cells through a smooth average over small rotations, then localized in
//! space by an exact partition of unity built from the smoothing kernel.
//! Everything is atom-exact, so reconstruction holds to rounding error.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{ConewaveError, Result};
use crate::geometry::{Cube, Tube, CAP_ANGLE};
use crate::localization::{make_eta, torus_dist};
use crate::sampling::{parallel_sum, GridSampler};
use crate::wave::{FrequencyAtom, Wave};

/// Decay power of the tube/disk weight used in packet weight quadrature.
pub const TUBE_DECAY_POWER: f64 = 4.0;

/// A maximal 1/r-separated set of directions on the cap, with nearest-
/// center (Voronoi) cell assignment.
#[derive(Debug, Clone)]
pub struct DirectionNet {
    pub r: f64,
    pub directions: Vec<Vec<f64>>,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl DirectionNet {
    /// Greedy maximal 1/r-separated subset of a dense candidate set on the
    /// cap of aperture pi/4 around e1.
    pub fn build(n: usize, r: f64) -> DirectionNet {
        let sep = 1.0 / r;
        let mut candidates: Vec<Vec<f64>> = Vec::new();
        match n {
            2 => {
                let m = 4096;
                for i in 0..=m {
                    let th = -CAP_ANGLE + 2.0 * CAP_ANGLE * i as f64 / m as f64;
                    candidates.push(vec![th.cos(), th.sin()]);
                }
            }
            _ => {
                // Fibonacci sphere filtered to the cap, densest first axis.
                let m = 65536;
                let golden = (1.0 + 5.0f64.sqrt()) / 2.0;
                for i in 0..m {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
                    let th = 2.0 * PI * i as f64 / golden;
                    let s = (1.0 - z * z).sqrt();
                    let v = vec![z, s * th.cos(), s * th.sin()];
                    if (v[0]).acos() <= CAP_ANGLE && n == 3 {
                        candidates.push(v);
                    }
                }
                if n > 3 {
                    // Low-dimensional quasi-random directions in the cap.
                    let mut state = 0x9e3779b97f4a7c15u64;
                    let mut next = || {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        (state >> 11) as f64 / (1u64 << 53) as f64
                    };
                    candidates.clear();
                    for _ in 0..65536 {
                        let v: Vec<f64> = (0..n).map(|_| next() - 0.5).collect();
                        let v = unit(&v);
                        let v = if v[0] < 0.0 { v.iter().map(|x| -x).collect() } else { v };
                        if v[0].clamp(-1.0, 1.0).acos() <= CAP_ANGLE {
                            candidates.push(v);
                        }
                    }
                }
            }
        }
        let mut directions: Vec<Vec<f64>> = Vec::new();
        for cand in candidates {
            if directions.iter().all(|d| dist2(d, &cand) >= sep * sep) {
                directions.push(cand);
            }
        }
        DirectionNet { r, directions }
    }

    /// Index of the Voronoi cell the direction falls in (nearest center;
    /// ties resolve to the lowest index by scan order).
    pub fn cell_of(&self, dir: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, d) in self.directions.iter().enumerate() {
            let dd = dist2(d, dir);
            if dd < best_d {
                best_d = dd;
                best = i;
            }
        }
        best
    }
}

/// A rotation stored as a dense matrix, with the quadrature weight of the
/// smooth measure on the rotation group it discretizes.
#[derive(Debug, Clone)]
pub struct WeightedRotation {
    pub matrix: Vec<f64>,
    pub weight: f64,
    n: usize,
}

impl WeightedRotation {
    fn planar(n: usize, i: usize, j: usize, angle: f64, weight: f64) -> WeightedRotation {
        let mut m = vec![0.0; n * n];
        for d in 0..n {
            m[d * n + d] = 1.0;
        }
        m[i * n + i] = angle.cos();
        m[j * n + j] = angle.cos();
        m[i * n + j] = -angle.sin();
        m[j * n + i] = angle.sin();
        WeightedRotation { matrix: m, weight, n }
    }

    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        // Rotations are orthogonal: the inverse is the transpose.
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.matrix[i * n + j] * v[i]).sum())
            .collect()
    }
}

/// M rotations within angle 1/(2r) of the identity with smooth normalized
/// weights, discretizing a compactly supported probability measure.
pub fn sample_rotations(n: usize, r: f64, m: usize) -> Vec<WeightedRotation> {
    let delta = 1.0 / (2.0 * r);
    let mut rots = Vec::with_capacity(m);
    let mut total = 0.0;
    for i in 0..m {
        let u = 2.0 * (i as f64 + 0.5) / m as f64 - 1.0; // (-1, 1)
        let w = (-1.0 / (1.0 - u * u)).exp();
        let plane_j = 1 + i % (n - 1);
        rots.push(WeightedRotation::planar(n, 0, plane_j, 0.9 * delta * u, w));
        total += w;
    }
    for r in rots.iter_mut() {
        r.weight /= total;
    }
    rots
}

/// One wave packet: the tube it lives on and its wave.
#[derive(Debug, Clone)]
pub struct Packet {
    pub tube: Tube,
    pub dir_index: usize,
    pub wave: Wave,
}

/// The complete tube decomposition of a wave over a cube.
#[derive(Debug, Clone)]
pub struct PacketDecomposition {
    pub source: Wave,
    pub cube: Cube,
    pub c: f64,
    pub r: f64,
    pub big_r: f64,
    pub net: DirectionNet,
    pub rotations: Vec<WeightedRotation>,
    /// Base-point lattice count per axis (spacing = period / count).
    pub count: usize,
    pub packets: Vec<Packet>,
}

/// Tunables for the decomposition.
#[derive(Debug, Clone, Copy)]
pub struct PacketParams {
    pub rotations: usize,
    /// Grid used for coarseness checks and weight quadrature.
    pub quad_grid: usize,
    pub time_slices: usize,
}

impl Default for PacketParams {
    fn default() -> PacketParams {
        PacketParams {
            rotations: 8,
            quad_grid: 64,
            time_slices: 16,
        }
    }
}

/// The scale r = 2^{-J} R chosen as the power-of-two fraction of R that
/// lands in [sqrt(R), 2 sqrt(R)).
pub fn packet_scale(big_r: f64) -> f64 {
    let mut r = big_r;
    while r >= 2.0 * big_r.sqrt() {
        r /= 2.0;
    }
    r
}

/// Decomposes a red (or blue) wave into tube packets over the cube.
pub fn tube_decompose(
    wave: &Wave,
    cube: &Cube,
    c: f64,
    params: &PacketParams,
) -> Result<PacketDecomposition> {
    if !(c > 0.0 && c <= 0.25) {
        return Err(ConewaveError::InvalidParameter(format!(
            "separation parameter c must lie in (0, 1/4], got {c}"
        )));
    }
    let big_r = cube.side;
    let r = packet_scale(big_r);
    let l = wave.domain.period;
    let two_j = wave.frequency();
    let need = (two_j * big_r).powf(-0.5);
    let margin = wave.margin()?;
    if margin < need {
        return Err(ConewaveError::MarginTooSmall { have: margin, need });
    }
    let step = l / wave.domain.grid_points as f64;
    if r / step < 8.0 {
        return Err(ConewaveError::GridTooCoarse(format!(
            "{} cells across the packet scale r = {r}, need >= 8",
            r / step
        )));
    }
    let net = DirectionNet::build(wave.domain.n, r);
    let rotations = sample_rotations(wave.domain.n, r, params.rotations);

    // Base-point lattice: the nominal spacing c^{-2} r never fits on the
    // torus (it exceeds the period), and a near-period kernel would erase
    // spatial locality altogether, so the spacing is capped at 2r (see the
    // notes ledger).
    let desired = (r / (c * c)).min(2.0 * r);
    let count = ((l / desired).round() as usize).max(4);

    // Per-atom, per-cell routing weights from the rotation average.
    let n = wave.domain.n;
    let n_cells = net.directions.len();
    let mut routing: Vec<Vec<f64>> = vec![vec![0.0; n_cells]; wave.atoms.len()];
    for (ai, atom) in wave.atoms.iter().enumerate() {
        let dir = unit(&atom.xi);
        for rot in &rotations {
            let v = rot.apply_inverse(&dir);
            routing[ai][net.cell_of(&v)] += rot.weight;
        }
    }

    // Spatial partition kernel, rescaled so the periodized lattice sum of
    // shifted copies is exactly one.
    // The root window vanishes at its boundary tap, so a kernel at the
    // spacing scale still has coefficient support strictly inside one
    // lattice cell of the dual grid: the partition of unity stays exact.
    let spacing = l / count as f64;
    let eta = make_eta(&wave.domain, wave.domain.grid_points, spacing)?;
    let scale = l.powi(n as i32) / (count as f64).powi(n as i32);
    let eta_coeffs: Vec<(Vec<i64>, f64)> = eta
        .coeffs
        .iter()
        .map(|(m, v)| (m.clone(), v * scale))
        .collect();

    let bases: Vec<Vec<f64>> = (0..count.pow(n as u32))
        .map(|flat| {
            let mut idx = flat;
            let mut b = vec![0.0; n];
            for axis in (0..n).rev() {
                b[axis] = (idx % count) as f64 * spacing;
                idx /= count;
            }
            b
        })
        .collect();

    let jobs: Vec<(usize, Vec<f64>)> = (0..n_cells)
        .flat_map(|d| bases.iter().map(move |b| (d, b.clone())))
        .collect();
    let packets: Vec<Packet> = jobs
        .into_par_iter()
        .filter_map(|(dir_idx, base)| {
            let mut atoms: Vec<FrequencyAtom> = Vec::new();
            for (ai, atom) in wave.atoms.iter().enumerate() {
                let w = routing[ai][dir_idx];
                if w == 0.0 {
                    continue;
                }
                for (m_eta, v_eta) in &eta_coeffs {
                    let xi: Vec<f64> = atom
                        .xi
                        .iter()
                        .zip(m_eta.iter())
                        .map(|(x, &m)| x + m as f64 / l)
                        .collect();
                    let phase: f64 = -2.0
                        * PI
                        * base
                            .iter()
                            .zip(m_eta.iter())
                            .map(|(b, &m)| b * m as f64 / l)
                            .sum::<f64>();
                    let factor = Complex64::from_polar(w * v_eta, phase);
                    atoms.push(FrequencyAtom {
                        xi,
                        amplitude: atom.amplitude.iter().map(|a| a * factor).collect(),
                    });
                }
            }
            if atoms.is_empty() {
                return None;
            }
            let pw = Wave::assemble(
                wave.domain.clone(),
                wave.color,
                wave.k,
                wave.hilbert_dim,
                atoms,
            )
            .ok()?;
            if pw.energy() == 0.0 {
                return None;
            }
            let tube = Tube {
                direction: net.directions[dir_idx].clone(),
                base,
                radius: r,
            };
            Some(Packet {
                tube,
                dir_index: dir_idx,
                wave: pw,
            })
        })
        .collect();

    Ok(PacketDecomposition {
        source: wave.clone(),
        cube: cube.clone(),
        c,
        r,
        big_r,
        net,
        rotations,
        count,
        packets,
    })
}

impl PacketDecomposition {
    /// Maximum atom-coefficient discrepancy between the packet sum and the
    /// source wave.
    pub fn reconstruction_residual(&self) -> f64 {
        let mut sum = Wave::zero(
            self.source.domain.clone(),
            self.source.color,
            self.source.k,
            self.source.hilbert_dim,
        );
        for p in &self.packets {
            sum = sum.add(&p.wave).expect("packets share the source domain");
        }
        let diff = sum.sub(&self.source).expect("same domain");
        diff.atoms
            .iter()
            .flat_map(|a| a.amplitude.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// Largest angular dispersion over the packets, times r.
    pub fn max_dispersion_times_r(&self) -> f64 {
        self.packets
            .iter()
            .filter_map(|p| p.wave.angular_dispersion().ok())
            .fold(0.0, f64::max)
            * self.r
    }

    /// Worst margin drop margin(phi) - margin(phi_T) over the packets.
    pub fn max_margin_drop(&self) -> f64 {
        let m0 = self.source.margin().unwrap_or(0.0);
        self.packets
            .iter()
            .map(|p| m0 - p.wave.margin().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }

    /// Torus-wrapped distance from a packet's tube to the cube over the
    /// cube's lifespan (spatial axis distance at sampled times).
    pub fn tube_cube_distance(&self, tube: &Tube) -> f64 {
        let l = self.source.domain.period;
        let (t0, t1) = self.cube.lifespan();
        let mut best = f64::INFINITY;
        for i in 0..=32 {
            let t = t0 + (t1 - t0) * i as f64 / 32.0;
            let ax = tube.axis_point(t);
            // Distance from the wrapped axis point to the cube's spatial box.
            let mut d2 = 0.0;
            for (axis, &a) in ax.iter().enumerate() {
                let ctr = self.cube.center[axis];
                let h = self.cube.side / 2.0;
                let mut w = (a - ctr).rem_euclid(l);
                if w > l / 2.0 {
                    w -= l;
                }
                let excess = (w.abs() - h).max(0.0);
                d2 += excess * excess;
            }
            best = best.min(d2.sqrt() - tube.radius);
        }
        best.max(0.0)
    }

    /// Fraction of the packet's L^2 mass (over the cube's lifespan) that
    /// lies outside rho times its tube, for each packet.
    pub fn concentration_ratios(&self, rho: f64, params: &PacketParams) -> Vec<f64> {
        let g = params.quad_grid;
        let slices = params.time_slices;
        let (t0, t1) = self.cube.lifespan();
        let dt = (t1 - t0) / slices as f64;
        let l = self.source.domain.period;
        let n = self.source.domain.n;
        let sampler = GridSampler::new(g);
        let cellvol = sampler.cell_volume(l, n);
        self.packets
            .par_iter()
            .map(|p| {
                let mut outside = 0.0;
                let mut total = 0.0;
                for s in 0..slices {
                    let t = t0 + (s as f64 + 0.5) * dt;
                    let vals = sampler.sample_abs(&p.wave, t);
                    let ax = p.tube.axis_point(t);
                    for (flat, v) in vals.iter().enumerate() {
                        let x = sampler.coords(flat, n, l);
                        let m = v * v * cellvol * dt;
                        total += m;
                        if torus_dist(&x, &ax, l) > rho * p.tube.radius {
                            outside += m;
                        }
                    }
                }
                if total > 0.0 {
                    (outside / total).sqrt()
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Weighted tube norm of the source at time t: the L^2 norm of the
    /// source against the tube's polynomial cutoff.
    pub fn weighted_tube_norm(&self, tube: &Tube, t: f64, g: usize) -> f64 {
        let n = self.source.domain.n;
        let l = self.source.domain.period;
        let sampler = GridSampler::new(g);
        let cellvol = sampler.cell_volume(l, n);
        let vals = sampler.sample_abs(&self.source, t);
        let ax = tube.axis_point(t);
        let terms: Vec<f64> = (0..vals.len())
            .into_par_iter()
            .map(|flat| {
                let x = sampler.coords(flat, n, l);
                let w = (1.0 + torus_dist(&x, &ax, l) / tube.radius).powf(-TUBE_DECAY_POWER);
                let v = vals[flat] * w;
                v * v * cellvol
            })
            .collect();
        parallel_sum(&terms).sqrt()
    }
}

/// Bessel ratio for an assignment m[q0][tube] with unit row sums per tube.
pub fn bessel_check(decomp: &PacketDecomposition, assignment: &[Vec<f64>]) -> Result<f64> {
    let n_t = decomp.packets.len();
    for t in 0..n_t {
        let row: f64 = assignment.iter().map(|r| r[t]).sum();
        if (row - 1.0).abs() > 1e-9 {
            return Err(ConewaveError::RowSumViolation(row));
        }
    }
    let mut total = 0.0;
    for row in assignment {
        let mut merged = Wave::zero(
            decomp.source.domain.clone(),
            decomp.source.color,
            decomp.source.k,
            decomp.source.hilbert_dim,
        );
        for (t, p) in decomp.packets.iter().enumerate() {
            if row[t] != 0.0 {
                merged = merged.add(&p.wave.scaled(Complex64::new(row[t], 0.0)))?;
            }
        }
        total += merged.energy();
    }
    Ok((total / decomp.source.energy()).sqrt())
}

/// A wave table: one (possibly vector-valued) wave per depth-j subcube.
#[derive(Debug, Clone)]
pub struct WaveTable {
    pub cube: Cube,
    pub depth: u32,
    pub components: Vec<Wave>,
}

impl WaveTable {
    /// Table energy under the direct-sum convention.
    pub fn energy(&self) -> f64 {
        self.components.iter().map(|w| w.energy()).sum()
    }

    /// The table summed back into a single wave.
    pub fn as_wave(&self) -> Wave {
        let mut out = Wave::zero(
            self.components[0].domain.clone(),
            self.components[0].color,
            self.components[0].k,
            self.components[0].hilbert_dim,
        );
        for w in &self.components {
            out = out.add(w).expect("components share a domain");
        }
        out
    }
}

/// Weight matrix m[q0][tube]: the blue wave's weighted mass near each tube
/// within each subcube, plus a non-degeneracy floor.
pub fn packet_weights(
    decomp: &PacketDecomposition,
    psi: &Wave,
    depth: u32,
    params: &PacketParams,
) -> Result<Vec<Vec<f64>>> {
    if !decomp.source.domain.compatible(&psi.domain) {
        return Err(ConewaveError::MixedDomains);
    }
    let n = psi.domain.n;
    let l = psi.domain.period;
    let cells = 1usize << ((n as u32 + 1) * depth);
    let n_t = decomp.packets.len();
    let g = params.quad_grid;
    let slices = params.time_slices * (1usize << depth);
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n);
    let (t0, t1) = decomp.cube.lifespan();
    let dt = (t1 - t0) / slices as f64;
    let e_psi = psi.energy();
    // Desk-scale floor: R^{-2n} E(psi). The nominal R^{-10n} floor
    // underflows the weighted-mass scale entirely at desk sizes.
    let floor = decomp.big_r.powi(-2 * n as i32) * e_psi;
    let mut m = vec![vec![floor; n_t]; cells];
    if e_psi == 0.0 {
        return Err(ConewaveError::InvalidParameter(
            "blue weight wave must have positive energy".into(),
        ));
    }
    for s in 0..slices {
        let t = t0 + (s as f64 + 0.5) * dt;
        let vals = sampler.sample_abs(psi, t);
        let axes: Vec<Vec<f64>> = decomp.packets.iter().map(|p| p.tube.axis_point(t)).collect();
        let contribs: Vec<(usize, Vec<f64>)> = (0..vals.len())
            .into_par_iter()
            .filter_map(|flat| {
                let x = sampler.coords(flat, n, l);
                let q = decomp.cube.subcube_index(depth, &x, t)?;
                let v2 = vals[flat] * vals[flat] * cellvol * dt;
                if v2 == 0.0 {
                    return None;
                }
                let row: Vec<f64> = decomp
                    .packets
                    .iter()
                    .enumerate()
                    .map(|(ti, p)| {
                        let w = (1.0 + torus_dist(&x, &axes[ti], l) / p.tube.radius)
                            .powf(-TUBE_DECAY_POWER);
                        v2 * w * w
                    })
                    .collect();
                Some((q, row))
            })
            .collect();
        for (q, row) in contribs {
            for (ti, v) in row.into_iter().enumerate() {
                m[q][ti] += v;
            }
        }
    }
    Ok(m)
}

/// Builds the wave table: each component collects the packets whose blue
/// weighted mass concentrates in its subcube.
pub fn build_wave_table(
    phi: &Wave,
    psi: &Wave,
    cube: &Cube,
    c: f64,
    depth: u32,
    params: &PacketParams,
) -> Result<(WaveTable, PacketDecomposition)> {
    let decomp = tube_decompose(phi, cube, c, params)?;
    let m = packet_weights(&decomp, psi, depth, params)?;
    let cells = m.len();
    let n_t = decomp.packets.len();
    let col_sums: Vec<f64> = (0..n_t).map(|t| m.iter().map(|row| row[t]).sum()).collect();
    let components: Vec<Wave> = (0..cells)
        .into_par_iter()
        .map(|q| {
            let mut out = Wave::zero(
                phi.domain.clone(),
                phi.color,
                phi.k,
                phi.hilbert_dim,
            );
            for (t, p) in decomp.packets.iter().enumerate() {
                let w = m[q][t] / col_sums[t];
                if w != 0.0 {
                    out = out
                        .add(&p.wave.scaled(Complex64::new(w, 0.0)))
                        .expect("same domain");
                }
            }
            out
        })
        .collect();
    Ok((
        WaveTable {
            cube: cube.clone(),
            depth,
            components,
        },
        decomp,
    ))
}

/// Evaluates the j'-quilt of the table at the given spacetime points.
pub fn quilt_eval(table: &WaveTable, j_prime: u32, points: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    if j_prime > table.depth {
        return Err(ConewaveError::InvalidParameter(format!(
            "quilt level {j_prime} exceeds table depth {}",
            table.depth
        )));
    }
    // Component q belongs to the level-j' ancestor obtained by locating the
    // component's subcube center.
    let subs = table.cube.subcubes(table.depth);
    let ancestors: Vec<Option<usize>> = subs
        .iter()
        .map(|q| table.cube.subcube_index(j_prime, &q.center, q.t))
        .collect();
    let out: Vec<f64> = points
        .par_iter()
        .map(|(x, t)| {
            let Some(anc) = table.cube.subcube_index(j_prime, x, *t) else {
                return 0.0;
            };
            let mut sq = 0.0;
            for (ci, comp) in table.components.iter().enumerate() {
                if ancestors[ci] != Some(anc) {
                    continue;
                }
                let vals = comp.evaluate(std::slice::from_ref(&(x.clone(), *t)));
                sq += vals[0].iter().map(|c| c.norm_sqr()).sum::<f64>();
            }
            sq.sqrt()
        })
        .collect();
    Ok(out)
}

/// Spacetime L^2 norm of the j'-quilt over the cube by midpoint quadrature.
pub fn quilt_l2(table: &WaveTable, j_prime: u32, g: usize, slices: usize) -> Result<f64> {
    let domain = &table.components[0].domain;
    let n = domain.n;
    let l = domain.period;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n);
    let (t0, t1) = table.cube.lifespan();
    let dt = (t1 - t0) / slices as f64;
    let subs = table.cube.subcubes(table.depth);
    let ancestors: Vec<Option<usize>> = subs
        .iter()
        .map(|q| table.cube.subcube_index(j_prime, &q.center, q.t))
        .collect();
    let mut total = 0.0;
    for s in 0..slices {
        let t = t0 + (s as f64 + 0.5) * dt;
        // Per-component magnitude-squared fields at this time.
        let fields: Vec<Vec<f64>> = table
            .components
            .par_iter()
            .map(|w| {
                let v = sampler.sample_abs(w, t);
                v.iter().map(|a| a * a).collect()
            })
            .collect();
        let terms: Vec<f64> = (0..g.pow(n as u32))
            .into_par_iter()
            .map(|flat| {
                let x = sampler.coords(flat, n, l);
                let Some(anc) = table.cube.subcube_index(j_prime, &x, t) else {
                    return 0.0;
                };
                let mut sq = 0.0;
                for (ci, f) in fields.iter().enumerate() {
                    if ancestors[ci] == Some(anc) {
                        sq += f[flat];
                    }
                }
                sq * cellvol * dt
            })
            .collect();
        total += parallel_sum(&terms);
    }
    Ok(total.sqrt())
}

/// The energy concentration functional: the larger of half the energy
/// product and the best disk-localized norm product at scale r.
#[derive(Debug, Clone)]
pub struct Concentration {
    pub value: f64,
    pub disk_branch: f64,
    pub argmax_center: Vec<f64>,
    pub argmax_t: f64,
}

pub fn energy_concentration(
    phi: &Wave,
    psi: &Wave,
    r: f64,
    cube: &Cube,
    g: usize,
) -> Result<Concentration> {
    if !(r > 0.0) {
        return Err(ConewaveError::InvalidParameter(format!(
            "concentration radius must be positive, got {r}"
        )));
    }
    if !phi.domain.compatible(&psi.domain) {
        return Err(ConewaveError::MixedDomains);
    }
    let n = phi.domain.n;
    let l = phi.domain.period;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n);
    let (t0, t1) = cube.lifespan();
    let step = r / 4.0;
    let t_steps = (((t1 - t0) / step).ceil() as usize).max(1);
    let base = 0.5 * (phi.energy() * psi.energy()).sqrt();
    let mut best = 0.0f64;
    let mut arg_c = vec![0.0; n];
    let mut arg_t = t0;
    // Disk sums around every grid point at once by circular convolution of
    // the energy density with the disk indicator.
    let cells = g.pow(n as u32);
    let origin = vec![0.0; n];
    let mut mask: Vec<Complex64> = (0..cells)
        .map(|flat| {
            let x = sampler.coords(flat, n, l);
            if torus_dist(&x, &origin, l) <= r {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::ZERO
            }
        })
        .collect();
    crate::sampling::ndfft_forward(&mut mask, g, n);
    for ts in 0..=t_steps {
        let t = t0 + (t1 - t0) * ts as f64 / t_steps.max(1) as f64;
        let a = sampler.sample_abs(phi, t);
        let b = sampler.sample_abs(psi, t);
        let conv = |vals: &[f64]| -> Vec<f64> {
            let mut f: Vec<Complex64> = vals
                .iter()
                .map(|v| Complex64::new(v * v * cellvol, 0.0))
                .collect();
            crate::sampling::ndfft_forward(&mut f, g, n);
            for (fi, mi) in f.iter_mut().zip(mask.iter()) {
                *fi *= mi;
            }
            crate::sampling::ndfft_inverse(&mut f, g, n);
            // Undo the extra 1/N carried by the normalized forward pass.
            f.iter().map(|c| (c.re * cells as f64).max(0.0)).collect()
        };
        let pa = conv(&a);
        let pb = conv(&b);
        for flat in 0..cells {
            let v = (pa[flat] * pb[flat]).sqrt();
            if v > best {
                best = v;
                arg_c = sampler.coords(flat, n, l);
                arg_t = t;
            }
        }
    }
    Ok(Concentration {
        value: base.max(best),
        disk_branch: best,
        argmax_center: arg_c,
        argmax_t: arg_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TorusDomain;
    use crate::wave::{make_wave, Color};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn pdomain() -> TorusDomain {
        TorusDomain::new(2, 32.0, 128).unwrap()
    }

    /// Random wave with atoms snug inside the sector/band patch at level k.
    fn snug(domain: &TorusDomain, seed: u64, m: usize, k: u32) -> Wave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = domain.period;
        let s = (2.0f64).powi(k as i32);
        let mut atoms = Vec::new();
        while atoms.len() < m {
            let m1 = rng.gen_range((1.44 * s * l) as i64..(1.58 * s * l) as i64);
            let m2 = rng.gen_range(-(0.1 * s * l) as i64..(0.1 * s * l) as i64);
            let xi = vec![m1 as f64 / l, m2 as f64 / l];
            let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            if !(1.44 * s..=1.58 * s).contains(&rho) {
                continue;
            }
            atoms.push(FrequencyAtom {
                xi,
                amplitude: vec![Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)],
            });
        }
        make_wave(domain.clone(), Color::Red, k, 1, atoms).unwrap()
    }

    /// Wave phased to bump at `x0` at time 0, snug in the level-k patch.
    fn bump(domain: &TorusDomain, x0: &[f64], k: u32, m_side: i64) -> Wave {
        let l = domain.period;
        let s = (2.0f64).powi(k as i32);
        let base = (1.5 * s * l).round() as i64;
        let mut atoms = Vec::new();
        for da in -m_side..=m_side {
            for db in -m_side..=m_side {
                let xi = vec![(base + da) as f64 / l, db as f64 / l];
                let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                if !(1.44 * s..=1.58 * s).contains(&rho) {
                    continue;
                }
                let gauss =
                    (-((da * da + db * db) as f64) / (m_side as f64).powi(2) * 2.0).exp();
                let phase = -2.0 * PI * (x0[0] * xi[0] + x0[1] * xi[1]);
                atoms.push(FrequencyAtom {
                    xi,
                    amplitude: vec![Complex64::from_polar(gauss, phase)],
                });
            }
        }
        make_wave(domain.clone(), Color::Red, k, 1, atoms).unwrap()
    }

    fn qcube(side: f64) -> Cube {
        Cube::new(vec![16.0, 16.0], 0.0, side).unwrap()
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let ra = rank(a);
        let rb = rank(b);
        let n = a.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..a.len() {
            num += (ra[i] - ma) * (rb[i] - ma);
            da += (ra[i] - ma) * (ra[i] - ma);
            db += (rb[i] - ma) * (rb[i] - ma);
        }
        num / (da * db).sqrt()
    }

    #[test]
    fn packet_scale_lands_between_sqrt_r_and_twice() {
        for big_r in [4.0, 8.0, 16.0, 32.0, 64.0, 100.0] {
            let r = packet_scale(big_r);
            assert!(r >= big_r.sqrt() && r < 2.0 * big_r.sqrt(), "r={r} R={big_r}");
            // A power-of-two fraction of R.
            let ratio = big_r / r;
            assert!((ratio.log2() - ratio.log2().round()).abs() < 1e-12);
        }
    }

    #[test]
    fn direction_net_separated_and_maximal() {
        for n in [2usize, 3] {
            let r = if n == 2 { 4.0 } else { 2.0 };
            let net = DirectionNet::build(n, r);
            let sep = 1.0 / r;
            for i in 0..net.directions.len() {
                for j in (i + 1)..net.directions.len() {
                    let d = dist2(&net.directions[i], &net.directions[j]).sqrt();
                    assert!(d >= sep - 1e-12, "centers {i},{j} at distance {d}");
                }
            }
            // Maximality: a dense sweep of cap directions always lands
            // within 1/r of some center.
            let probe = DirectionNet::build(n, 2.0 * r);
            for d in &probe.directions {
                let nearest = net
                    .directions
                    .iter()
                    .map(|c| dist2(c, d).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest < sep + 1e-12, "gap {nearest}");
            }
        }
    }

    #[test]
    fn rotation_weights_are_a_probability() {
        let rots = sample_rotations(2, 4.0, 8);
        let total: f64 = rots.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for r in &rots {
            assert!(r.weight > 0.0);
            // Orthogonality of the matrix.
            let v = r.apply_inverse(&[0.6, 0.8]);
            let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn packets_reconstruct_the_wave_exactly() {
        let d = pdomain();
        let w = snug(&d, 7, 40, 0).normalized();
        let q = qcube(8.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        assert!(!decomp.packets.is_empty());
        let res = decomp.reconstruction_residual();
        assert!(res <= 1e-10, "reconstruction residual {res}");
    }

    #[test]
    fn decomposition_is_linear() {
        let d = pdomain();
        let a = snug(&d, 11, 25, 0);
        let b = snug(&d, 13, 25, 0);
        let z = Complex64::new(0.0, 2.0);
        let combo = a.add(&b.scaled(z)).unwrap();
        let q = qcube(8.0);
        let params = PacketParams::default();
        let da = tube_decompose(&a, &q, 0.125, &params).unwrap();
        let db = tube_decompose(&b, &q, 0.125, &params).unwrap();
        let dc = tube_decompose(&combo, &q, 0.125, &params).unwrap();
        // Index packets by (direction, base) and compare atom-wise.
        let key = |p: &Packet| {
            let mut k = vec![p.dir_index as i64];
            k.extend(p.tube.base.iter().map(|&x| (x * 64.0).round() as i64));
            k
        };
        let mut sum: std::collections::HashMap<Vec<i64>, Wave> = std::collections::HashMap::new();
        for p in &da.packets {
            sum.insert(key(p), p.wave.clone());
        }
        for p in &db.packets {
            let w = p.wave.scaled(z);
            sum.entry(key(p))
                .and_modify(|e| *e = e.add(&w).unwrap())
                .or_insert(w);
        }
        for p in &dc.packets {
            let expect = sum.remove(&key(p)).expect("combo packet exists in parts");
            let diff = p.wave.sub(&expect).unwrap();
            let worst = diff
                .atoms
                .iter()
                .flat_map(|a| a.amplitude.iter())
                .map(|c| c.norm())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-10, "linearity residual {worst}");
        }
        for (_, w) in sum {
            assert!(w.energy() <= 1e-20, "leftover packet energy {}", w.energy());
        }
    }

    #[test]
    fn packet_margin_drop_is_bounded() {
        let d = pdomain();
        let w = snug(&d, 17, 30, 0);
        let q = qcube(8.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        let drop = decomp.max_margin_drop();
        let budget = 2.0 * decomp.big_r.powf(-0.5);
        assert!(drop <= budget, "margin drop {drop} > {budget}");
    }

    #[test]
    fn packet_dispersion_matches_scale() {
        let d = pdomain();
        let w = snug(&d, 19, 30, 0);
        let q = qcube(8.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        let disp = decomp.max_dispersion_times_r();
        assert!(disp <= 8.0, "dispersion * r = {disp}");
    }

    #[test]
    fn interior_plane_wave_has_no_voronoi_leakage() {
        let d = pdomain();
        let q = qcube(8.0);
        let r = packet_scale(8.0);
        let net = DirectionNet::build(2, r);
        // Find a lattice atom whose direction sits well inside a cell.
        let l = d.period;
        let mut best: Option<(Vec<f64>, f64)> = None;
        for m2 in -7i64..=7 {
            for m1 in 44i64..=50 {
                let xi = vec![m1 as f64 / l, m2 as f64 / l];
                let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                if !(1.44..=1.58).contains(&rho) {
                    continue;
                }
                let dir = unit(&xi);
                let c = net.cell_of(&dir);
                let gap = dist2(&net.directions[c], &dir).sqrt();
                if best.as_ref().map_or(true, |(_, g)| gap < *g) {
                    best = Some((xi, gap));
                }
            }
        }
        let (xi, gap) = best.unwrap();
        assert!(gap < 0.02, "no near-center lattice direction, best gap {gap}");
        let w = make_wave(
            d.clone(),
            Color::Red,
            0,
            1,
            vec![FrequencyAtom {
                xi: xi.clone(),
                amplitude: vec![Complex64::new(1.0, 0.0)],
            }],
        )
        .unwrap();
        let c = 0.125;
        let decomp = tube_decompose(&w, &q, c, &PacketParams::default()).unwrap();
        let home = decomp.net.cell_of(&unit(&xi));
        let total = w.energy();
        let leaked: f64 = decomp
            .packets
            .iter()
            .filter(|p| p.dir_index != home)
            .map(|p| p.wave.energy())
            .sum();
        assert!(leaked <= c * c * total, "leak {} of {total}", leaked);
    }

    #[test]
    fn packets_concentrate_near_their_tubes() {
        let d = pdomain();
        let w = snug(&d, 23, 30, 1);
        let q = qcube(4.0);
        let params = PacketParams::default();
        let decomp = tube_decompose(&w, &q, 0.125, &params).unwrap();
        let ratios = decomp.concentration_ratios(4.0, &params);
        // Packets carrying 95% of the decomposition energy, largest first.
        let mut order: Vec<usize> = (0..decomp.packets.len()).collect();
        order.sort_by(|&i, &j| {
            decomp.packets[j]
                .wave
                .energy()
                .partial_cmp(&decomp.packets[i].wave.energy())
                .unwrap()
        });
        let total: f64 = decomp.packets.iter().map(|p| p.wave.energy()).sum();
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        for &i in &order {
            if acc >= 0.95 * total {
                break;
            }
            acc += decomp.packets[i].wave.energy();
            worst = worst.max(ratios[i]);
        }
        assert!(worst <= 0.5, "mass ratio outside 4T = {worst}");
    }

    #[test]
    fn tube_norms_rank_like_packet_energies() {
        // A wave with genuine spatial structure: bumps of different
        // strengths at different locations, all sharing one direction cell,
        // so tube norms and packet energies must rank the bases alike.
        let d = pdomain();
        let b1 = bump(&d, &[6.0, 16.0], 0, 6);
        let b2 = bump(&d, &[16.0, 16.0], 0, 6).scaled(Complex64::new(0.45, 0.0));
        let b3 = bump(&d, &[26.0, 10.0], 0, 6).scaled(Complex64::new(0.15, 0.0));
        let w = b1.add(&b2).unwrap().add(&b3).unwrap();
        let q = qcube(8.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        // Restrict to the dominant direction cell.
        let mut per_cell = vec![0.0; decomp.net.directions.len()];
        for p in &decomp.packets {
            per_cell[p.dir_index] += p.wave.energy();
        }
        let home = per_cell
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let mut energies = Vec::new();
        let mut norms = Vec::new();
        // Only rank the energy-bearing tubes: empty bases are pure noise.
        let cell_total = per_cell[home];
        for p in decomp.packets.iter().filter(|p| p.dir_index == home) {
            let e = p.wave.energy();
            if e < 1e-3 * cell_total {
                continue;
            }
            energies.push(e);
            norms.push(decomp.weighted_tube_norm(&p.tube, 0.0, 64));
        }
        assert!(energies.len() >= 8, "too few packets ({})", energies.len());
        let rho = spearman(&energies, &norms);
        assert!(rho >= 0.75, "rank correlation {rho}");
        // The strongest tubes must agree exactly: top three by energy and
        // by tube norm are the same set.
        let top = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[j].partial_cmp(&v[i]).unwrap());
            let mut t: Vec<usize> = idx[..3].to_vec();
            t.sort_unstable();
            t
        };
        assert_eq!(top(&energies), top(&norms), "top tubes disagree");
    }

    #[test]
    fn far_tube_packets_are_negligible_on_the_cube() {
        let d = pdomain();
        let w = bump(&d, &[16.0, 16.0], 1, 8);
        let q = qcube(4.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        // Reference peak of the wave on the cube at time 0.
        let pts: Vec<(Vec<f64>, f64)> = (0..400)
            .map(|i| {
                let a = 14.0 + 4.0 * ((i / 20) as f64) / 19.0;
                let b = 14.0 + 4.0 * ((i % 20) as f64) / 19.0;
                (vec![a, b], 0.0)
            })
            .collect();
        let peak = w
            .evaluate(&pts)
            .iter()
            .map(|v| v[0].norm())
            .fold(0.0, f64::max);
        let mut checked = 0;
        for p in &decomp.packets {
            if decomp.tube_cube_distance(&p.tube) < 2.0 * decomp.big_r {
                continue;
            }
            checked += 1;
            let sup = p
                .wave
                .evaluate(&pts)
                .iter()
                .map(|v| v[0].norm())
                .fold(0.0, f64::max);
            assert!(sup <= 1e-3 * peak, "far tube sup {} vs peak {peak}", sup);
        }
        assert!(checked > 0, "no far tubes sampled");
    }

    #[test]
    fn bessel_is_exact_for_a_single_row() {
        let d = pdomain();
        let w = snug(&d, 31, 30, 0);
        let q = qcube(8.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        let assignment = vec![vec![1.0; decomp.packets.len()]];
        let ratio = bessel_check(&decomp, &assignment).unwrap();
        assert!((ratio - 1.0).abs() <= 1e-9, "single-row bessel {ratio}");
    }

    #[test]
    fn bessel_rejects_bad_row_sums() {
        let d = pdomain();
        let w = snug(&d, 31, 20, 0);
        let q = qcube(8.0);
        let decomp = tube_decompose(&w, &q, 0.125, &PacketParams::default()).unwrap();
        let mut assignment = vec![vec![0.5; decomp.packets.len()]; 2];
        assignment[0][0] = 0.7;
        match bessel_check(&decomp, &assignment) {
            Err(ConewaveError::RowSumViolation(s)) => assert!((s - 1.2).abs() < 1e-9),
            other => panic!("expected row-sum violation, got {other:?}"),
        }
    }

    #[test]
    fn bessel_stays_bounded_for_stochastic_assignments() {
        let d = pdomain();
        let w = snug(&d, 37, 30, 0);
        let q = qcube(8.0);
        let c = 0.1;
        let decomp = tube_decompose(&w, &q, c, &PacketParams::default()).unwrap();
        let n_t = decomp.packets.len();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let rows = 4;
            let mut assignment = vec![vec![0.0; n_t]; rows];
            for t in 0..n_t {
                if trial % 2 == 0 {
                    // Indicator assignment: each tube to one random row.
                    assignment[rng.gen_range(0..rows)][t] = 1.0;
                } else {
                    let ws: Vec<f64> = (0..rows).map(|_| rng.gen::<f64>() + 0.01).collect();
                    let s: f64 = ws.iter().sum();
                    for (q0, v) in ws.into_iter().enumerate() {
                        assignment[q0][t] = v / s;
                    }
                }
            }
            let ratio = bessel_check(&decomp, &assignment).unwrap();
            assert!(ratio <= 1.0 + 10.0 * c, "trial {trial}: bessel {ratio}");
        }
    }

    #[test]
    fn table_weights_track_a_concentrated_blue_wave() {
        let d = pdomain();
        let phi = snug(&d, 41, 30, 1);
        // Blue weight riding through one depth-1 subcube of Q: the blue
        // bump travels at speed ~1 along e1, so launch it so that it passes
        // the target's spatial center at the target's mid-lifespan.
        let q = Cube::new(vec![16.0, 16.0], 0.0, 16.0).unwrap();
        let target_center = vec![12.0, 12.0];
        let target_t = 4.0;
        let psi = bump(&d, &[target_center[0] - target_t, target_center[1]], 1, 8)
            .time_reverse();
        let params = PacketParams::default();
        let (table, decomp) = build_wave_table(&phi, &psi, &q, 0.1, 1, &params).unwrap();
        let qi = q
            .subcube_index(1, &target_center, target_t)
            .expect("subcube center is inside the cube");
        let e_total = table.energy();
        let e_target = table.components[qi].energy();
        let max_other = table
            .components
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != qi)
            .map(|(_, w)| w.energy())
            .fold(0.0, f64::max);
        assert!(
            e_target > max_other,
            "target {} not dominant (max other {})",
            e_target,
            max_other
        );
        assert!(
            e_target >= 0.5 * e_total,
            "target share {} of {}",
            e_target,
            e_total
        );
        assert!(e_total <= (1.0 + 10.0 * 0.1) * decomp.source.energy());
    }

    #[test]
    fn table_energy_respects_the_bessel_bound() {
        let d = pdomain();
        let phi = snug(&d, 43, 30, 0);
        let psi = snug(&d, 44, 30, 0).time_reverse();
        let q = qcube(8.0);
        for c in [0.05, 0.1] {
            let (table, _) =
                build_wave_table(&phi, &psi, &q, c, 2, &PacketParams::default()).unwrap();
            let ratio = (table.energy() / phi.energy()).sqrt();
            assert!(ratio <= 1.0 + 10.0 * c, "c={c}: table bessel {ratio}");
        }
    }

    #[test]
    fn table_collapses_to_uniform_floor_for_distant_weight() {
        let d = pdomain();
        let phi = snug(&d, 47, 25, 1);
        let q = Cube::new(vec![8.0, 8.0], 0.0, 4.0).unwrap();
        // Blue wave far from Q (wrapped distance ~ 11 at closest approach).
        let psi = bump(&d, &[24.0, 24.0], 1, 10).time_reverse();
        let (table, _) =
            build_wave_table(&phi, &psi, &q, 0.125, 1, &PacketParams::default()).unwrap();
        let cells = table.components.len() as f64;
        let expect = phi.scaled(Complex64::new(1.0 / cells, 0.0));
        for comp in &table.components {
            let diff = comp.sub(&expect).unwrap();
            let rel = (diff.energy() / expect.energy()).sqrt();
            assert!(rel <= 1e-2, "floor collapse residual {rel}");
        }
    }

    #[test]
    fn table_energy_is_additive_over_components() {
        let d = pdomain();
        let phi = snug(&d, 53, 25, 0);
        let psi = snug(&d, 54, 25, 0).time_reverse();
        let q = qcube(8.0);
        let (table, _) =
            build_wave_table(&phi, &psi, &q, 0.1, 2, &PacketParams::default()).unwrap();
        // Grouping depth-2 components under their depth-1 ancestors and
        // summing energies either way agrees to rounding.
        let subs = q.subcubes(2);
        let mut grouped = vec![0.0; 1usize << 3];
        for (i, comp) in table.components.iter().enumerate() {
            let anc = q.subcube_index(1, &subs[i].center, subs[i].t).unwrap();
            grouped[anc] += comp.energy();
        }
        let total: f64 = grouped.iter().sum();
        let direct = table.energy();
        assert!(
            (total - direct).abs() <= 1e-10 * direct.max(1.0),
            "grouped {total} direct {direct}"
        );
    }

    #[test]
    fn quilt_of_a_trivial_table_is_the_wave_magnitude() {
        let d = pdomain();
        let w = snug(&d, 59, 20, 0);
        let q = qcube(8.0);
        let table = WaveTable {
            cube: q.clone(),
            depth: 0,
            components: vec![w.clone()],
        };
        let pts: Vec<(Vec<f64>, f64)> = (0..50)
            .map(|i| {
                let s = i as f64 / 49.0;
                (vec![12.5 + 7.0 * s, 13.0 + 6.0 * s], -3.5 + 7.0 * s)
            })
            .collect();
        let quilt = quilt_eval(&table, 0, &pts).unwrap();
        let direct = w.evaluate(&pts);
        for (qv, dv) in quilt.iter().zip(direct.iter()) {
            assert!((qv - dv[0].norm()).abs() <= 1e-12);
        }
        // Points outside the cube evaluate to zero.
        let outside = quilt_eval(&table, 0, &[(vec![0.0, 0.0], 0.0)]).unwrap();
        assert_eq!(outside[0], 0.0);
    }

    #[test]
    fn quilt_chain_is_monotone_in_depth() {
        let d = pdomain();
        let phi = snug(&d, 61, 25, 0);
        let psi = snug(&d, 62, 25, 0).time_reverse();
        let q = qcube(8.0);
        let (table, _) =
            build_wave_table(&phi, &psi, &q, 0.1, 2, &PacketParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(Vec<f64>, f64)> = (0..10_000)
            .map(|_| {
                (
                    vec![rng.gen_range(12.0..20.0), rng.gen_range(12.0..20.0)],
                    rng.gen_range(-4.0..4.0),
                )
            })
            .collect();
        let q0 = quilt_eval(&table, 0, &pts).unwrap();
        let q1 = quilt_eval(&table, 1, &pts).unwrap();
        let q2 = quilt_eval(&table, 2, &pts).unwrap();
        for i in 0..pts.len() {
            assert!(q0[i] >= q1[i] - 1e-12, "level 0 < 1 at point {i}");
            assert!(q1[i] >= q2[i] - 1e-12, "level 1 < 2 at point {i}");
        }
    }

    #[test]
    fn quilt_l2_decays_like_sqrt_cell_count() {
        let d = pdomain();
        let phi = snug(&d, 67, 25, 0);
        let psi = snug(&d, 68, 25, 0).time_reverse();
        let q = qcube(8.0);
        let (table, _) =
            build_wave_table(&phi, &psi, &q, 0.1, 3, &PacketParams::default()).unwrap();
        let e = phi.energy();
        let big_r = q.side;
        let n1 = quilt_l2(&table, 1, 64, 24).unwrap();
        let kappa = n1 / ((2.0f64).powf(-0.5) * big_r.sqrt() * e.sqrt());
        for j in [2u32, 3] {
            let nj = quilt_l2(&table, j, 64, 24).unwrap();
            let bound = 1.2 * kappa * (2.0f64).powf(-(j as f64) / 2.0) * big_r.sqrt() * e.sqrt();
            assert!(nj <= bound, "level {j}: {nj} > {bound} (kappa {kappa})");
        }
    }

    #[test]
    fn concentration_floor_wins_at_small_radius() {
        let d = pdomain();
        let phi = snug(&d, 71, 25, 0);
        let psi = snug(&d, 72, 25, 0).time_reverse();
        let q = qcube(8.0);
        let conc = energy_concentration(&phi, &psi, 0.5, &q, 64).unwrap();
        let base = 0.5 * (phi.energy() * psi.energy()).sqrt();
        assert!((conc.value - base).abs() <= 1e-12 * base);
        assert!(conc.disk_branch < base);
    }

    #[test]
    fn concentration_is_monotone_in_radius() {
        let d = pdomain();
        let phi = snug(&d, 73, 25, 0);
        let psi = snug(&d, 74, 25, 0).time_reverse();
        let q = qcube(8.0);
        let c2 = energy_concentration(&phi, &psi, 2.0, &q, 64).unwrap();
        let c4 = energy_concentration(&phi, &psi, 4.0, &q, 64).unwrap();
        assert!(c4.disk_branch >= c2.disk_branch * (1.0 - 1e-9));
        assert!(c4.value >= c2.value * (1.0 - 1e-9));
    }

    #[test]
    fn plane_wave_crossover_radius_matches_area_heuristic() {
        let d = pdomain();
        let l = d.period;
        let mk = |m1: i64, m2: i64, color: Color| {
            let atoms = vec![FrequencyAtom {
                xi: vec![m1 as f64 / l, m2 as f64 / l],
                amplitude: vec![Complex64::new(1.0, 0.0)],
            }];
            make_wave(d.clone(), color, 0, 1, atoms).unwrap()
        };
        let phi = mk(48, 3, Color::Red);
        let psi = mk(48, -3, Color::Blue);
        let q = qcube(8.0);
        // For unit plane waves the disk branch is the disk area and the
        // floor is half the torus area; they cross at r = L / sqrt(2 pi).
        let predicted = l / (2.0 * PI).sqrt();
        let crossed = |r: f64| {
            let c = energy_concentration(&phi, &psi, r, &q, 96).unwrap();
            c.disk_branch >= c.value * (1.0 - 1e-12)
        };
        let (mut lo, mut hi) = (8.0, 16.0);
        assert!(!crossed(lo) && crossed(hi));
        while hi - lo > 0.05 {
            let mid = 0.5 * (lo + hi);
            if crossed(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let found = 0.5 * (lo + hi);
        assert!(
            (found - predicted).abs() <= 0.02 * predicted + 0.3,
            "crossover {found} vs predicted {predicted}"
        );
    }

    #[test]
    fn decompose_rejects_thin_margins_and_coarse_grids() {
        let d = pdomain();
        let params = PacketParams::default();
        // Margin: k=0 atoms near the sector edge fail the (2^j R)^{-1/2} bar.
        let l = d.period;
        let edge = make_wave(
            d.clone(),
            Color::Red,
            0,
            1,
            vec![FrequencyAtom {
                xi: vec![33.0 / l, 13.0 / l],
                amplitude: vec![Complex64::new(1.0, 0.0)],
            }],
        )
        .unwrap();
        match tube_decompose(&edge, &qcube(8.0), 0.125, &params) {
            Err(ConewaveError::MarginTooSmall { .. }) => {}
            other => panic!("expected margin rejection, got {other:?}"),
        }
        // Coarse grid: 32 points across period 32 leaves r under 8 cells.
        let coarse = TorusDomain::new(2, 32.0, 32).unwrap();
        let w = snug(&coarse, 3, 10, 0);
        match tube_decompose(&w, &qcube(8.0), 0.125, &params) {
            Err(ConewaveError::GridTooCoarse(_)) => {}
            other => panic!("expected coarse-grid rejection, got {other:?}"),
        }
    }
}
