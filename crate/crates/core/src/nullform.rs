//! Multiplier calculus on spacetime-frequency representations of wave
//! products: the symbols D_0, D_+, D_-, |Box|, the conformal rescaling T_L,
//! sector/dyadic decompositions, and the exponent-condition checker for the
//! null-form estimate family.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::TorusDomain;
use crate::error::{ConewaveError, Result};
use crate::geometry::Cube;
use crate::sampling::{parallel_sum, GridSampler};
use crate::wave::Wave;

/// Exact rational scalar used by the exponent checker.
pub type Q = Ratio<i64>;

/// Symbol floor below which negative powers refuse to evaluate.
pub const SYMBOL_FLOOR: f64 = 1e-9;

/// A single spacetime-frequency atom of a product, with a tensor amplitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointAtom {
    pub xi: Vec<f64>,
    pub tau: f64,
    pub amplitude: Vec<Complex64>,
}

impl JointAtom {
    pub fn norm_sq(&self) -> f64 {
        self.amplitude.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// The exact joint spectrum of a product of waves (or of a single wave,
/// lifted to spacetime frequencies).  Frequencies are carried as real
/// vectors rather than lattice indices: the conformal rescaling does not
/// preserve the lattice, and transformed objects are quasi-periodic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductSpectrum {
    pub n: usize,
    pub period: f64,
    pub atoms: Vec<JointAtom>,
}

impl ProductSpectrum {
    /// Direct evaluation at spacetime points, component-wise.
    pub fn evaluate(&self, points: &[(Vec<f64>, f64)]) -> Vec<Vec<Complex64>> {
        let dim = self.atoms.first().map_or(0, |a| a.amplitude.len());
        points
            .par_iter()
            .map(|(x, t)| {
                let mut out = vec![Complex64::new(0.0, 0.0); dim];
                for atom in &self.atoms {
                    let dot: f64 = x.iter().zip(&atom.xi).map(|(a, b)| a * b).sum();
                    let phase = Complex64::from_polar(1.0, 2.0 * PI * (dot + t * atom.tau));
                    for (o, a) in out.iter_mut().zip(&atom.amplitude) {
                        *o += a * phase;
                    }
                }
                out
            })
            .collect()
    }

    /// Plancherel energy of the atom sum.
    pub fn energy(&self) -> f64 {
        let s: f64 = self.atoms.iter().map(|a| a.norm_sq()).sum();
        s * self.period.powi(self.n as i32)
    }

    /// Merge atoms with identical spatial frequency and equal time frequency
    /// (to 1e-12) by amplitude addition.
    pub fn coalesced(mut self) -> Self {
        let key = |a: &JointAtom| {
            let mut k: Vec<u64> = a.xi.iter().map(|v| v.to_bits()).collect();
            k.push(0);
            k
        };
        self.atoms.sort_by(|a, b| {
            key(a)
                .cmp(&key(b))
                .then(a.tau.partial_cmp(&b.tau).unwrap())
        });
        let mut merged: Vec<JointAtom> = Vec::new();
        for atom in self.atoms.into_iter() {
            if let Some(last) = merged.last_mut() {
                if last.xi.iter().zip(&atom.xi).all(|(a, b)| a.to_bits() == b.to_bits())
                    && (last.tau - atom.tau).abs() <= 1e-12
                {
                    for (l, a) in last.amplitude.iter_mut().zip(&atom.amplitude) {
                        *l += a;
                    }
                    continue;
                }
            }
            merged.push(atom);
        }
        merged.retain(|a| a.norm_sq() > 0.0);
        self.atoms = merged;
        self
    }
}

/// Lift a single wave to its spacetime spectrum: tau = +|xi| for red,
/// -|xi| for blue.
pub fn wave_spectrum(w: &Wave) -> ProductSpectrum {
    let sign = w.color.time_sign();
    let atoms = w
        .atoms
        .iter()
        .map(|a| JointAtom {
            xi: a.xi.clone(),
            tau: sign * a.xi_norm(),
            amplitude: a.amplitude.clone(),
        })
        .collect();
    ProductSpectrum {
        n: w.domain.n,
        period: w.domain.period,
        atoms,
    }
}

/// The exact joint spectrum of a tensor product of two waves.  Evaluating
/// the result matches the pointwise product of the factors.
pub fn product_spectrum(phi: &Wave, psi: &Wave) -> Result<ProductSpectrum> {
    if phi.domain.n != psi.domain.n || phi.domain.period != psi.domain.period {
        return Err(ConewaveError::MixedDomains);
    }
    let s1 = phi.color.time_sign();
    let s2 = psi.color.time_sign();
    let mut atoms = Vec::with_capacity(phi.atoms.len() * psi.atoms.len());
    for a in &phi.atoms {
        for b in &psi.atoms {
            let xi: Vec<f64> = a.xi.iter().zip(&b.xi).map(|(u, v)| u + v).collect();
            let tau = s1 * a.xi_norm() + s2 * b.xi_norm();
            let mut amplitude = Vec::with_capacity(a.amplitude.len() * b.amplitude.len());
            for u in &a.amplitude {
                for v in &b.amplitude {
                    amplitude.push(u * v);
                }
            }
            atoms.push(JointAtom { xi, tau, amplitude });
        }
    }
    Ok(ProductSpectrum {
        n: phi.domain.n,
        period: phi.domain.period,
        atoms,
    })
}

/// The four multiplier symbols of the null-form calculus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiplierSymbol {
    D0,
    Dplus,
    Dminus,
    Box,
}

impl MultiplierSymbol {
    /// Symbol value at a spacetime frequency.
    pub fn value(&self, xi: &[f64], tau: f64) -> f64 {
        let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        match self {
            MultiplierSymbol::D0 => r,
            MultiplierSymbol::Dplus => r + tau.abs(),
            MultiplierSymbol::Dminus => (r - tau.abs()).abs(),
            MultiplierSymbol::Box => (r + tau.abs()) * (r - tau.abs()).abs(),
        }
    }
}

/// Scale every joint atom by symbol^beta.  Negative (real-part) powers
/// require the symbol to stay above a hard floor: D_- genuinely vanishes on
/// aligned null interactions, and regularizing would fabricate results.
pub fn apply_multiplier(
    spectrum: &ProductSpectrum,
    symbol: MultiplierSymbol,
    beta: Complex64,
) -> Result<ProductSpectrum> {
    if beta == Complex64::new(0.0, 0.0) {
        return Ok(spectrum.clone());
    }
    let mut atoms = Vec::with_capacity(spectrum.atoms.len());
    for atom in &spectrum.atoms {
        let s = symbol.value(&atom.xi, atom.tau);
        if beta.re < 0.0 && s < SYMBOL_FLOOR {
            return Err(ConewaveError::SingularSymbol {
                value: s,
                floor: SYMBOL_FLOOR,
            });
        }
        let factor = if s == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            (beta * s.ln()).exp()
        };
        atoms.push(JointAtom {
            xi: atom.xi.clone(),
            tau: atom.tau,
            amplitude: atom.amplitude.iter().map(|a| a * factor).collect(),
        });
    }
    Ok(ProductSpectrum {
        n: spectrum.n,
        period: spectrum.period,
        atoms,
    })
}

/// The conformal frequency map L at parameter l, acting on (xi_1, xi', tau).
pub fn lorentz_map(xi: &[f64], tau: f64, l: i64) -> (Vec<f64>, f64) {
    let a = 2.0f64.powi(-2 * l as i32);
    let b = 2.0f64.powi(-(l as i32));
    let plus = (xi[0] + tau) / 2.0;
    let minus = (xi[0] - tau) / 2.0;
    let mut out = vec![plus + a * minus];
    for v in &xi[1..] {
        out.push(b * v);
    }
    (out, plus - a * minus)
}

fn on_cone(xi: &[f64], tau: f64) -> bool {
    let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    (r - tau.abs()).abs() <= 1e-9 * (1.0 + r)
}

/// Jacobian determinant of the spatial cone map xi -> spatial part of
/// L(xi, s|xi|), used to carry amplitude density through the rescaling.
fn cone_jacobian(xi: &[f64], s: f64, l: i64) -> f64 {
    let n = xi.len();
    let a = 2.0f64.powi(-2 * l as i32);
    let b = 2.0f64.powi(-(l as i32));
    let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    // d xi1_new / d xi_j = (delta_1j + s xi_j / r)/2 + a (delta_1j - s xi_j / r)/2;
    // transverse rows are b * identity, so the determinant reduces to the
    // (1,1) entry with a rank-one correction confined to the first row.
    let mut row = vec![0.0; n];
    for (j, item) in row.iter_mut().enumerate() {
        let d = if j == 0 { 1.0 } else { 0.0 };
        let g = s * xi[j] / r;
        *item = (d + g) / 2.0 + a * (d - g) / 2.0;
    }
    // Expanding along the first row of a matrix whose lower rows are
    // b * e_j^T (j >= 2): only the (1,1) cofactor survives.
    row[0] * b.powi((n - 1) as i32)
}

/// Apply T_L to a spectrum: frequencies move by L, amplitudes carry the
/// square-root inverse of the local frequency-volume Jacobian (the cone
/// Jacobian for on-cone atoms, the full spacetime determinant otherwise).
/// Verifies the commutation T_L |Box| = 2^{-2l} |Box| T_L atom-wise, and for
/// spectra supported on the forward cone checks the energy-scaling window
/// E(T_L phi) in [2^{(n-1)l}/4, 4 * 2^{(n-1)l}] E(phi).
pub fn lorentz_rescale(spectrum: &ProductSpectrum, l: i64) -> Result<ProductSpectrum> {
    if l < 0 {
        return Err(ConewaveError::NegativeL);
    }
    let n = spectrum.n;
    let full_det = 2.0f64.powi(-2 * l as i32) * 2.0f64.powi(-((n as i32 - 1) * l as i32));
    let mut atoms = Vec::with_capacity(spectrum.atoms.len());
    for atom in &spectrum.atoms {
        let (xi, tau) = lorentz_map(&atom.xi, atom.tau, l);
        let det = if on_cone(&atom.xi, atom.tau) {
            cone_jacobian(&atom.xi, atom.tau.signum(), l).abs()
        } else {
            full_det
        };
        let scale = det.powf(-0.5);
        atoms.push(JointAtom {
            xi,
            tau,
            amplitude: atom.amplitude.iter().map(|a| a * scale).collect(),
        });
    }
    let out = ProductSpectrum {
        n,
        period: spectrum.period,
        atoms,
    };
    // Commutation: the Box symbol at the image frequency must be exactly
    // 2^{-2l} times the symbol at the source.
    let factor = 2.0f64.powi(-2 * l as i32);
    for (src, dst) in spectrum.atoms.iter().zip(&out.atoms) {
        let s0 = MultiplierSymbol::Box.value(&src.xi, src.tau);
        let s1 = MultiplierSymbol::Box.value(&dst.xi, dst.tau);
        let residual = (s1 - factor * s0).abs() / (1.0 + factor * s0);
        if residual > 1e-10 {
            return Err(ConewaveError::InvalidParameter(format!(
                "conformal commutation residual {residual:e} exceeds 1e-10"
            )));
        }
    }
    if !spectrum.atoms.is_empty() && spectrum.atoms.iter().all(|a| on_cone(&a.xi, a.tau) && a.tau > 0.0)
    {
        let target = 2.0f64.powi((n as i32 - 1) * l as i32);
        let ratio = lorentz_energy_ratio(spectrum, &out);
        if !(target / 4.0..=4.0 * target).contains(&ratio) {
            return Err(ConewaveError::InvalidParameter(format!(
                "energy ratio {ratio} outside window around {target}"
            )));
        }
    }
    Ok(out)
}

/// Energy of the rescaled spectrum over energy of the source.
pub fn lorentz_energy_ratio(before: &ProductSpectrum, after: &ProductSpectrum) -> f64 {
    let e0 = before.energy();
    if e0 == 0.0 {
        return 0.0;
    }
    after.energy() / e0
}

/// Apply T_L to a wave.  The lattice is not preserved for l > 0, so only
/// the identity case is supported on waves; use spectra otherwise.
pub fn lorentz_rescale_wave(wave: &Wave, l: i64) -> Result<Wave> {
    if l < 0 {
        return Err(ConewaveError::NegativeL);
    }
    if l > 0 {
        return Err(ConewaveError::InvalidParameter(
            "conformal rescaling of a lattice wave is only supported at l = 0; lift to a spectrum"
                .into(),
        ));
    }
    Ok(wave.clone())
}

/// Partition the atoms of a wave by dyadic frequency shell and angular
/// sector of width 2^{-l}.  Energies of the parts sum exactly to the whole.
pub fn sector_dyadic_split(wave: &Wave, l: u32) -> Vec<Wave> {
    use std::collections::BTreeMap;
    let width = 2.0f64.powi(-(l as i32));
    // Offset so the admissible cap around e_1 sits inside a single bin at l=0.
    let offset = PI / 8.0;
    let mut cells: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (idx, atom) in wave.atoms.iter().enumerate() {
        let r = atom.xi_norm();
        let shell = r.log2().floor() as i64;
        let mut key = vec![shell];
        let a1 = atom.xi[1].atan2(atom.xi[0]);
        key.push(((a1 + offset) / width).floor() as i64);
        if wave.domain.n >= 3 {
            let h = (atom.xi[0] * atom.xi[0] + atom.xi[1] * atom.xi[1]).sqrt();
            let a2 = atom.xi[2].atan2(h);
            key.push(((a2 + offset) / width).floor() as i64);
        }
        cells.entry(key).or_default().push(idx);
    }
    cells
        .into_values()
        .map(|idxs| {
            let atoms = idxs.into_iter().map(|i| wave.atoms[i].clone()).collect();
            Wave::assemble(
                wave.domain.clone(),
                wave.color,
                wave.k,
                wave.hilbert_dim,
                atoms,
            )
            .unwrap()
        })
        .collect()
}

/// An exponent tuple for the null-form estimate family, over exact
/// rationals so that threshold comparisons carry no rounding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentTuple {
    pub n: i64,
    pub p: Q,
    pub beta0: Q,
    pub beta_plus: Q,
    pub beta_minus: Q,
    pub alpha1: Q,
    pub alpha2: Q,
}

/// Per-condition verdicts for an exponent tuple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub p_in_range: bool,
    pub scaling: bool,
    pub beta_minus: bool,
    pub beta0: bool,
    pub alpha1: bool,
    pub alpha2: bool,
    pub lin: bool,
    pub admissible: bool,
    pub p0: Q,
    pub lin_threshold: Q,
    pub beta_minus_threshold: Q,
    pub beta0_threshold: Q,
    pub alpha_threshold: Q,
}

/// Evaluate the admissibility conditions for the null-form exponent tuple,
/// exactly over the rationals.  Admissibility requires the scaling identity,
/// strict inequalities elsewhere, and the linear lower bound on
/// alpha_1 + alpha_2; when `allow_beta0_equality_at_p0` is set, the beta_0
/// bound may hold with equality at the endpoint exponent p_0.
pub fn check_exponent_conditions(
    t: &ExponentTuple,
    allow_beta0_equality_at_p0: bool,
) -> ConditionReport {
    assert!(t.n >= 2, "checker requires spatial dimension at least 2");
    assert!(*t.p.numer() > 0 && *t.p.denom() > 0, "p must be positive");
    let n = Q::from_integer(t.n);
    let one = Q::from_integer(1);
    let two = Q::from_integer(2);
    let half = one / two;
    let p0 = (n + 3) / (n + 1);
    let inv_p = one / t.p;

    let p_in_range = t.p >= p0 && t.p <= two;
    let scaling_rhs = t.alpha1 + t.alpha2 + (n + 1) * inv_p - n;
    let scaling = t.beta0 + t.beta_plus + t.beta_minus == scaling_rhs;
    let beta_minus_threshold = (n + 1) / (two * t.p) - (n - 1) / two;
    let beta_minus = t.beta_minus > beta_minus_threshold;
    let beta0_threshold = (n + 3) * inv_p - (n + 1);
    let beta0 = if allow_beta0_equality_at_p0 && t.p == p0 {
        t.beta0 >= beta0_threshold
    } else {
        t.beta0 > beta0_threshold
    };
    let alpha_threshold = t.beta_minus + (n - 1) / two + (n + 2) * (half - inv_p);
    let alpha1 = t.alpha1 < alpha_threshold;
    let alpha2 = t.alpha2 < alpha_threshold;
    let lin_threshold = half + (n + 3) / (n - 1) * (inv_p - half);
    let lin = t.alpha1 + t.alpha2 > lin_threshold;
    let admissible = p_in_range && scaling && beta_minus && beta0 && alpha1 && alpha2 && lin;
    ConditionReport {
        p_in_range,
        scaling,
        beta_minus,
        beta0,
        alpha1,
        alpha2,
        lin,
        admissible,
        p0,
        lin_threshold,
        beta_minus_threshold,
        beta0_threshold,
        alpha_threshold,
    }
}

/// L^p norm of a spectrum over a spacetime cube, by direct atom-sum
/// evaluation on a midpoint grid.  Transformed spectra are quasi-periodic,
/// so this is the only honest norm available to them.
pub fn spectrum_lp_norm(spec: &ProductSpectrum, cube: &Cube, p: f64, g: usize, slices: usize) -> f64 {
    let n = spec.n;
    let l = spec.period;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n) * (cube.side / l).powi(n as i32);
    let (t0, t1) = cube.lifespan();
    let dt = (t1 - t0) / slices as f64;
    let mut total = 0.0;
    for s in 0..slices {
        let t = t0 + (s as f64 + 0.5) * dt;
        let points: Vec<(Vec<f64>, f64)> = (0..g.pow(n as u32))
            .map(|flat| {
                let mut x = Vec::with_capacity(n);
                let mut rem = flat;
                for _ in 0..n {
                    let i = rem % g;
                    rem /= g;
                    x.push(cube.center[x.len()] - cube.side / 2.0 + (i as f64 + 0.5) * cube.side / g as f64);
                }
                (x, t)
            })
            .collect();
        let vals = spec.evaluate(&points);
        let terms: Vec<f64> = vals
            .par_iter()
            .map(|v| {
                let mag = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                mag.powf(p) * cellvol * dt
            })
            .collect();
        total += parallel_sum(&terms);
    }
    total.powf(1.0 / p)
}

/// One cell of the frequency-localized multiplier scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyScanRow {
    pub l: u32,
    pub k: u32,
    pub value: f64,
    pub normalizer: f64,
    pub ratio: f64,
}

/// Build the (l, k) family of sector-localized red/blue pairs, apply
/// |Box|^beta to the product, and measure the L^p norm against the
/// predicted normalizer 2^{beta(k-2l)} 2^{l((n+1)/p-(n-1))}
/// 2^{k(1/p-1/2+eps)} E^{1/2} E^{1/2}.
#[allow(clippy::too_many_arguments)]
pub fn toy_scan(
    domain: &TorusDomain,
    l_list: &[u32],
    k_list: &[u32],
    beta: f64,
    p: f64,
    eps: f64,
    g: usize,
    slices: usize,
) -> Result<Vec<ToyScanRow>> {
    let period = domain.period;
    let cube = Cube::new(vec![period / 2.0; domain.n], 0.0, period)?;
    let mut rows = Vec::new();
    for &l in l_list {
        for &k in k_list {
            let phi = sector_slab_wave(domain, crate::wave::Color::Red, 0, l)?;
            let psi = sector_slab_wave(domain, crate::wave::Color::Blue, k, l)?;
            let spec = product_spectrum(&phi, &psi)?.coalesced();
            let boxed = apply_multiplier(&spec, MultiplierSymbol::Box, Complex64::new(beta, 0.0))?;
            let value = spectrum_lp_norm(&boxed, &cube, p, g, slices);
            let n = domain.n as f64;
            let normalizer = 2.0f64.powf(beta * (k as f64 - 2.0 * l as f64))
                * 2.0f64.powf(l as f64 * ((n + 1.0) / p - (n - 1.0)))
                * 2.0f64.powf(k as f64 * (1.0 / p - 0.5 + eps))
                * (phi.energy() * psi.energy()).sqrt();
            rows.push(ToyScanRow {
                l,
                k,
                value,
                normalizer,
                ratio: value / normalizer,
            });
        }
    }
    Ok(rows)
}

/// Atoms with xi_1 in 2^k [1, 2] and transverse frequency of size 2^k 2^{-l}:
/// the sector-slab frequency classes of the localized multiplier bound.
fn sector_slab_wave(
    domain: &TorusDomain,
    color: crate::wave::Color,
    k: u32,
    l: u32,
) -> Result<Wave> {
    use crate::wave::FrequencyAtom;
    let big_l = domain.period;
    let s = 2.0f64.powi(k as i32);
    let w = s * 2.0f64.powi(-(l as i32));
    let mut atoms = Vec::new();
    let m1_lo = (s * big_l).round() as i64;
    let m1_hi = (2.0 * s * big_l).round() as i64;
    let m2_lo = (0.5 * w * big_l).round() as i64;
    let m2_hi = (w * big_l).round() as i64;
    let stride1 = (((m1_hi - m1_lo) / 8).max(1)) as usize;
    let stride2 = (((m2_hi - m2_lo) / 4).max(1)) as usize;
    for m1 in (m1_lo..=m1_hi).step_by(stride1) {
        for m2 in (m2_lo..=m2_hi).step_by(stride2) {
            atoms.push(FrequencyAtom {
                xi: vec![m1 as f64 / big_l, m2 as f64 / big_l],
                amplitude: vec![Complex64::new(1.0, 0.0)],
            });
        }
    }
    Wave::assemble(domain.clone(), color, k, 1, atoms)
}
