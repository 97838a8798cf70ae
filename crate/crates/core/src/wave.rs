use std::collections::BTreeMap;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::TorusDomain;
use crate::error::{ConewaveError, Result};

/// Half-aperture of the admissible frequency sector about `e_1`.
pub const SECTOR_ANGLE: f64 = std::f64::consts::PI / 8.0;
/// Tolerance used when the sector/band invariant is checked.
pub const SECTOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
}

impl Color {
    /// Sign of the temporal frequency: `tau = sign * |xi|`.
    pub fn time_sign(self) -> f64 {
        match self {
            Color::Red => 1.0,
            Color::Blue => -1.0,
        }
    }

    pub fn flip(self) -> Color {
        match self {
            Color::Red => Color::Blue,
            Color::Blue => Color::Red,
        }
    }
}

/// One point mass of the spacetime Fourier measure of a wave.  The temporal
/// frequency is derived from the color and is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyAtom {
    pub xi: Vec<f64>,
    pub amplitude: Vec<Complex64>,
}

impl FrequencyAtom {
    pub fn norm_sq(&self) -> f64 {
        self.amplitude.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Angle between `xi` and the basis vector `e_1`.
    pub fn angle_to_axis(&self) -> f64 {
        let r = self.xi_norm();
        if r == 0.0 {
            return std::f64::consts::PI;
        }
        (self.xi[0] / r).clamp(-1.0, 1.0).acos()
    }
}

/// A red or blue frequency-localized solution of the free wave equation,
/// represented exactly as a finite sum of on-cone frequency atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Wave {
    pub domain: TorusDomain,
    pub color: Color,
    pub k: u32,
    pub hilbert_dim: usize,
    pub atoms: Vec<FrequencyAtom>,
}

/// Validating constructor: every atom must sit on the domain lattice, in the
/// dyadic band `[2^k, 2^{k+1}]`, and within angle pi/8 of `e_1`.
pub fn make_wave(
    domain: TorusDomain,
    color: Color,
    k: u32,
    hilbert_dim: usize,
    atoms: Vec<FrequencyAtom>,
) -> Result<Wave> {
    let lo = (2.0f64).powi(k as i32);
    let hi = 2.0 * lo;
    for atom in &atoms {
        if atom.xi.len() != domain.n {
            return Err(ConewaveError::InvalidParameter(format!(
                "atom frequency has {} components, domain has n={}",
                atom.xi.len(),
                domain.n
            )));
        }
        if atom.amplitude.len() != hilbert_dim {
            return Err(ConewaveError::InvalidParameter(format!(
                "atom amplitude has {} components, hilbert_dim={}",
                atom.amplitude.len(),
                hilbert_dim
            )));
        }
        domain.lattice_index(&atom.xi)?;
        let r = atom.xi_norm();
        if r == 0.0 {
            return Err(ConewaveError::AtomOutsideSector("xi = 0".into()));
        }
        if r < lo * (1.0 - SECTOR_TOL) || r > hi * (1.0 + SECTOR_TOL) {
            return Err(ConewaveError::AtomOutsideSector(format!(
                "|xi| = {r} outside band [{lo}, {hi}]"
            )));
        }
        if atom.angle_to_axis() > SECTOR_ANGLE + SECTOR_TOL {
            return Err(ConewaveError::AtomOutsideSector(format!(
                "angle {} exceeds pi/8",
                atom.angle_to_axis()
            )));
        }
    }
    Ok(Wave {
        atoms: coalesce_atoms(&domain, hilbert_dim, atoms),
        domain,
        color,
        k,
        hilbert_dim,
    })
}

/// Merge atoms sharing a lattice index so each frequency appears once;
/// energy and evaluation are only well defined on coalesced atom lists.
fn coalesce_atoms(
    domain: &TorusDomain,
    hilbert_dim: usize,
    atoms: Vec<FrequencyAtom>,
) -> Vec<FrequencyAtom> {
    let mut merged: std::collections::BTreeMap<Vec<i64>, FrequencyAtom> =
        std::collections::BTreeMap::new();
    for atom in atoms {
        let idx = domain
            .lattice_index(&atom.xi)
            .expect("atoms are lattice-checked before coalescing");
        match merged.entry(idx) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(atom);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                for h in 0..hilbert_dim {
                    e.get_mut().amplitude[h] += atom.amplitude[h];
                }
            }
        }
    }
    merged.into_values().collect()
}

impl Wave {
    /// Assemble a wave without enforcing the sector/band invariant.  Disk
    /// projections produce supports in the slightly wider symbol region; the
    /// margin of such waves is simply reported as a smaller (possibly zero)
    /// number.  Lattice membership is still required.
    pub fn assemble(
        domain: TorusDomain,
        color: Color,
        k: u32,
        hilbert_dim: usize,
        atoms: Vec<FrequencyAtom>,
    ) -> Result<Wave> {
        for atom in &atoms {
            domain.lattice_index(&atom.xi)?;
            if atom.amplitude.len() != hilbert_dim {
                return Err(ConewaveError::InvalidParameter(
                    "amplitude length != hilbert_dim".into(),
                ));
            }
        }
        Ok(Wave {
            atoms: coalesce_atoms(&domain, hilbert_dim, atoms),
            domain,
            color,
            k,
            hilbert_dim,
        })
    }

    pub fn zero(domain: TorusDomain, color: Color, k: u32, hilbert_dim: usize) -> Wave {
        Wave {
            domain,
            color,
            k,
            hilbert_dim,
            atoms: Vec::new(),
        }
    }

    pub fn frequency(&self) -> f64 {
        (2.0f64).powi(self.k as i32)
    }

    /// Temporal frequency of an atom, `tau = +-|xi|` per color.
    pub fn tau(&self, atom: &FrequencyAtom) -> f64 {
        self.color.time_sign() * atom.xi_norm()
    }

    /// Evaluate the wave at spacetime points by exact superposition.
    pub fn evaluate(&self, points: &[(Vec<f64>, f64)]) -> Vec<Vec<Complex64>> {
        let sign = self.color.time_sign();
        points
            .par_iter()
            .map(|(x, t)| {
                let mut value = vec![Complex64::new(0.0, 0.0); self.hilbert_dim];
                for atom in &self.atoms {
                    let mut phase = sign * t * atom.xi_norm();
                    for (xc, fc) in x.iter().zip(atom.xi.iter()) {
                        phase += xc * fc;
                    }
                    let rot = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * phase);
                    for (v, a) in value.iter_mut().zip(atom.amplitude.iter()) {
                        *v += a * rot;
                    }
                }
                value
            })
            .collect()
    }

    /// Conserved energy `E = sum |amplitude|^2 * period^n` (Plancherel on the
    /// torus; equals the spatial L^2 integral at any fixed time).
    pub fn energy(&self) -> f64 {
        let vol = self.domain.period.powi(self.domain.n as i32);
        self.atoms.iter().map(|a| a.norm_sq()).sum::<f64>() * vol
    }

    /// Scale-normalized distance from the frequency support to the part of
    /// the light cone outside the admissible sector/band.
    pub fn margin(&self) -> Result<f64> {
        if self.atoms.is_empty() {
            return Err(ConewaveError::EmptyWave);
        }
        let samples = boundary_samples(self.domain.n);
        let scale = self.frequency();
        let dim = self.domain.n + 1;
        let m = self
            .atoms
            .par_iter()
            .map(|atom| {
                // Work at frequency 1: the margin definition rescales by 2^-k.
                let zeta: Vec<f64> = atom.xi.iter().map(|c| c / scale).collect();
                let r: f64 = zeta.iter().map(|c| c * c).sum::<f64>().sqrt();
                let ang = (zeta[0] / r).clamp(-1.0, 1.0).acos();
                if r < 1.0 || r > 2.0 || ang > SECTOR_ANGLE {
                    return 0.0;
                }
                let mut p = zeta.clone();
                p.push(r);
                let mut best = f64::INFINITY;
                for chunk in samples.chunks_exact(dim) {
                    let mut d2 = 0.0;
                    for (a, b) in p.iter().zip(chunk.iter()) {
                        let diff = a - b;
                        d2 += diff * diff;
                    }
                    if d2 < best {
                        best = d2;
                    }
                }
                best.sqrt()
            })
            .reduce(|| f64::INFINITY, f64::min);
        Ok(m)
    }

    /// Exact diameter of the set of unit directions of the atoms.
    pub fn angular_dispersion(&self) -> Result<f64> {
        if self.atoms.is_empty() {
            return Err(ConewaveError::EmptyWave);
        }
        let dirs: Vec<Vec<f64>> = self
            .atoms
            .iter()
            .map(|a| {
                let r = a.xi_norm();
                a.xi.iter().map(|c| c / r).collect()
            })
            .collect();
        if self.domain.n == 2 {
            // In the plane the diameter is the chord between extreme angles.
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for d in &dirs {
                let a = d[1].atan2(d[0]);
                lo = lo.min(a);
                hi = hi.max(a);
            }
            Ok(2.0 * ((hi - lo) / 2.0).sin())
        } else {
            let mut best: f64 = 0.0;
            for i in 0..dirs.len() {
                for j in (i + 1)..dirs.len() {
                    let d2: f64 = dirs[i]
                        .iter()
                        .zip(dirs[j].iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    best = best.max(d2);
                }
            }
            Ok(best.sqrt())
        }
    }

    /// `D_j phi(x,t) := phi(2^j x, 2^j t)`: frequencies scale by `2^j` and the
    /// period shrinks by the same factor, so lattice membership is preserved.
    pub fn dilate(&self, j: i32) -> Result<Wave> {
        let new_k = self.k as i64 + j as i64;
        if new_k < 0 {
            return Err(ConewaveError::InvalidParameter(format!(
                "dilation would give negative frequency exponent {new_k}"
            )));
        }
        let factor = (2.0f64).powi(j);
        let domain = TorusDomain {
            n: self.domain.n,
            period: self.domain.period / factor,
            grid_points: self.domain.grid_points,
        };
        let atoms = self
            .atoms
            .iter()
            .map(|a| FrequencyAtom {
                xi: a.xi.iter().map(|c| c * factor).collect(),
                amplitude: a.amplitude.clone(),
            })
            .collect();
        Ok(Wave {
            domain,
            color: self.color,
            k: new_k as u32,
            hilbert_dim: self.hilbert_dim,
            atoms,
        })
    }

    /// `T phi(x,t) := phi(x,-t)`: flips color, fixes atoms.
    pub fn time_reverse(&self) -> Wave {
        Wave {
            domain: self.domain,
            color: self.color.flip(),
            k: self.k,
            hilbert_dim: self.hilbert_dim,
            atoms: self.atoms.clone(),
        }
    }

    pub fn scaled(&self, factor: Complex64) -> Wave {
        let mut w = self.clone();
        for a in &mut w.atoms {
            for c in &mut a.amplitude {
                *c *= factor;
            }
        }
        w
    }

    /// Atom-exact sum of two waves of the same color/band, merging atoms by
    /// lattice index.
    pub fn add(&self, other: &Wave) -> Result<Wave> {
        if !self.domain.compatible(&other.domain) {
            return Err(ConewaveError::MixedDomains);
        }
        if self.color != other.color || self.k != other.k || self.hilbert_dim != other.hilbert_dim {
            return Err(ConewaveError::InvalidParameter(
                "cannot add waves of different color, band, or hilbert_dim".into(),
            ));
        }
        let mut map: BTreeMap<Vec<i64>, Vec<Complex64>> = BTreeMap::new();
        for atom in self.atoms.iter().chain(other.atoms.iter()) {
            let idx = self.domain.lattice_index(&atom.xi)?;
            let entry = map
                .entry(idx)
                .or_insert_with(|| vec![Complex64::new(0.0, 0.0); self.hilbert_dim]);
            for (e, a) in entry.iter_mut().zip(atom.amplitude.iter()) {
                *e += a;
            }
        }
        let atoms = map
            .into_iter()
            .map(|(idx, amplitude)| FrequencyAtom {
                xi: self.domain.frequency_of(&idx),
                amplitude,
            })
            .collect();
        Wave::assemble(self.domain, self.color, self.k, self.hilbert_dim, atoms)
    }

    pub fn sub(&self, other: &Wave) -> Result<Wave> {
        self.add(&other.scaled(Complex64::new(-1.0, 0.0)))
    }

    /// Drop atoms whose amplitude is below `rel_tol` times the largest.
    pub fn pruned(&self, rel_tol: f64) -> Wave {
        let max = self
            .atoms
            .iter()
            .map(|a| a.norm_sq())
            .fold(0.0f64, f64::max)
            .sqrt();
        let cut = max * rel_tol;
        let mut w = self.clone();
        w.atoms.retain(|a| a.norm_sq().sqrt() > cut);
        w
    }

    pub fn normalized(&self) -> Wave {
        let e = self.energy();
        if e == 0.0 {
            return self.clone();
        }
        self.scaled(Complex64::new(1.0 / e.sqrt(), 0.0))
    }
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct AtomJson {
    xi: Vec<f64>,
    amp: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct WaveJson {
    n: usize,
    period: f64,
    #[serde(default = "crate::wave::default_grid")]
    grid_points: usize,
    color: Color,
    k: u32,
    hilbert_dim: usize,
    atoms: Vec<AtomJson>,
}

fn default_grid() -> usize {
    256
}

impl Wave {
    pub fn to_json(&self) -> String {
        let doc = WaveJson {
            n: self.domain.n,
            period: self.domain.period,
            grid_points: self.domain.grid_points,
            color: self.color,
            k: self.k,
            hilbert_dim: self.hilbert_dim,
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomJson {
                    xi: a.xi.clone(),
                    amp: a.amplitude.iter().map(|c| [c.re, c.im]).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("wave serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Wave> {
        let doc: WaveJson = serde_json::from_str(text)?;
        let domain = TorusDomain::new(doc.n, doc.period, doc.grid_points)?;
        let atoms = doc
            .atoms
            .into_iter()
            .map(|a| FrequencyAtom {
                xi: a.xi,
                amplitude: a.amp.iter().map(|c| Complex64::new(c[0], c[1])).collect(),
            })
            .collect();
        Wave::assemble(domain, doc.color, doc.k, doc.hilbert_dim, atoms)
    }
}

// --- margin boundary sampling -------------------------------------------

/// Quasi-uniform samples of the edge of the admissible cone patch at
/// frequency 1, flattened with stride n+1.  The nearest point of the
/// complement patch to an interior support point lies on this edge; a coarse
/// sample of the complement itself is appended as a guard.
fn boundary_samples(n: usize) -> &'static Vec<f64> {
    static CACHE: OnceLock<Mutex<std::collections::HashMap<usize, &'static Vec<f64>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(std::collections::HashMap::new()));
    let mut guard = cache.lock().unwrap();
    if let Some(v) = guard.get(&n) {
        return v;
    }
    let v: &'static Vec<f64> = Box::leak(Box::new(build_boundary_samples(n)));
    guard.insert(n, v);
    v
}

fn push_cone_point(out: &mut Vec<f64>, dir: &[f64], rho: f64) {
    for &c in dir {
        out.push(rho * c);
    }
    out.push(rho);
}

/// Directions at a fixed polar angle from e_1, sampled over the azimuth
/// sphere S^{n-2}.
fn ring_directions(n: usize, theta: f64, count: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    if n == 2 {
        for s in [-1.0, 1.0] {
            dirs.push(vec![theta.cos(), s * theta.sin()]);
        }
    } else if n == 3 {
        for i in 0..count {
            let a = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            dirs.push(vec![theta.cos(), theta.sin() * a.cos(), theta.sin() * a.sin()]);
        }
    } else {
        // Low-discrepancy sampling of the azimuth sphere via a Halton-style
        // lattice on angles.
        for i in 0..count {
            let mut d = vec![theta.cos()];
            let mut rem = theta.sin();
            let mut x = (i as f64 + 0.5) / count as f64;
            for axis in 0..(n - 2) {
                let a = std::f64::consts::PI * (2.0 * x - 1.0);
                if axis == n - 3 {
                    d.push(rem * a.cos());
                    d.push(rem * a.sin());
                } else {
                    d.push(rem * a.cos());
                    rem *= a.sin().abs();
                }
                x = (x * 7.13 + 0.37).fract();
            }
            dirs.push(d);
        }
    }
    dirs
}

fn build_boundary_samples(n: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let target = 120_000usize;
    let per_family = target / 4;
    // Angular boundary: angle pi/8 exactly, rho in [1, 2].
    let rho_count = if n == 2 { per_family / 2 } else { 400 };
    let az_count = if n == 2 { 1 } else { per_family / 400 };
    for i in 0..rho_count {
        let rho = 1.0 + (i as f64 + 0.5) / rho_count as f64;
        for dir in ring_directions(n, SECTOR_ANGLE, az_count) {
            push_cone_point(&mut out, &dir, rho);
        }
    }
    // Inner and outer rims: rho in {1, 2}, angle in [0, pi/8].
    let ang_count = if n == 2 { per_family / 2 } else { 400 };
    for &rho in &[1.0, 2.0] {
        for i in 0..ang_count {
            let theta = SECTOR_ANGLE * (i as f64 + 0.5) / ang_count as f64;
            let ring = if n == 2 {
                ring_directions(n, theta, 1)
            } else {
                ring_directions(n, theta, (per_family / 400).max(1))
            };
            for dir in ring {
                push_cone_point(&mut out, &dir, rho);
            }
        }
        if n > 2 {
            break; // azimuth product already fills the budget
        }
    }
    // Guard samples on the complement patch away from the edge.
    for i in 0..200 {
        let rho = 0.05 + 6.0 * i as f64 / 200.0;
        for j in 0..32 {
            let theta = SECTOR_ANGLE + (std::f64::consts::PI - SECTOR_ANGLE) * j as f64 / 32.0;
            for dir in ring_directions(n, theta, 8.min(32)) {
                push_cone_point(&mut out, &dir, rho);
            }
        }
    }
    out
}
