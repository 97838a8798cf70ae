//! Disk localization: the smoothing kernel, the evolution symbol, the
//! projections P_D / (1 - P_D), and the diagnostic reports for their
//! energy-localization and finite-propagation behaviour.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::domain::TorusDomain;
use crate::error::{ConewaveError, Result};
use crate::geometry::{ConeColor, ConeNeighbourhood, Cube, Disk};
use crate::sampling::{ndfft_forward, parallel_sum, GridSampler};
use crate::wave::{Color, FrequencyAtom, Wave, SECTOR_ANGLE};

/// Desk-scale smoothing exponent: mollification radius is r^{1 - 1/N_DESK}.
pub const N_DESK: f64 = 4.0;
/// Desk-scale margin constant.
pub const C0_DESK: f64 = 2.0;

/// Infinitely smooth unit step: 0 for t <= 0, 1 for t >= 1, C-infinity
/// throughout.  The smoothness matters — it is what makes the synthesized
/// propagation kernel decay superpolynomially off the light cone.
fn cinf_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let z = libm_erf(3.5 * (2.0 * t - 1.0));
        let lo = libm_erf(-3.5);
        let hi = libm_erf(3.5);
        (z - lo) / (hi - lo)
    }
}

/// erf via Abramowitz-Stegun 7.1.26 rational approximation (|err| < 1.5e-7).
fn libm_erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Frequency-side bump: 1 on the sector/band patch for level `k`, ramping
/// smoothly to 0 over the full slack the enclosing frequency patch allows
/// (half a band in radius below, a doubled band above, and the doubled
/// aperture in angle).
pub fn symbol_a(xi: &[f64], k: u32) -> f64 {
    let rho: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rho == 0.0 {
        return 0.0;
    }
    let band = (2.0f64).powi(k as i32);
    let up = cinf_step((rho - band / 2.0) / (band / 2.0));
    let down = 1.0 - cinf_step((rho - 2.0 * band) / (2.0 * band));
    let theta = (xi[0] / rho).clamp(-1.0, 1.0).acos();
    let ang = 1.0 - cinf_step((theta - SECTOR_ANGLE) / SECTOR_ANGLE);
    (up * down * ang).clamp(0.0, 1.0)
}

/// Outer radius of the support of `symbol_a` at level `k`.
pub fn symbol_support_radius(k: u32) -> f64 {
    4.0 * (2.0f64).powi(k as i32)
}

/// Torus-wrapped Euclidean distance between `x` and `c`.
pub fn torus_dist(x: &[f64], c: &[f64], period: f64) -> f64 {
    x.iter()
        .zip(c.iter())
        .map(|(a, b)| {
            let mut d = (a - b).rem_euclid(period);
            if d > period / 2.0 {
                d = period - d;
            }
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// The nonnegative, mass-one smoothing kernel with lattice Fourier
/// coefficients supported in the ball of radius 1/r.  Built as the square
/// of a real trigonometric polynomial, so positivity is structural.
#[derive(Debug, Clone)]
pub struct EtaKernel {
    pub radius: f64,
    pub domain: TorusDomain,
    /// Lattice Fourier coefficients keyed by lattice index.
    pub coeffs: HashMap<Vec<i64>, f64>,
}

/// Builds the smoothing kernel at scale `r` for use on a `g`-per-axis grid.
pub fn make_eta(domain: &TorusDomain, g: usize, r: f64) -> Result<EtaKernel> {
    let step = domain.period / g as f64;
    if r < 4.0 * step {
        return Err(ConewaveError::DiskTooSmall {
            radius: r,
            min: 4.0 * step,
        });
    }
    let n = domain.n;
    let l = domain.period;
    // Half-support radius of the root polynomial in lattice index units.
    let half = l / (2.0 * r);
    let reach = half.floor() as i64;
    let mut root: HashMap<Vec<i64>, f64> = HashMap::new();
    let mut stack = vec![Vec::<i64>::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == n {
            let rho: f64 = prefix.iter().map(|&m| (m * m) as f64).sum::<f64>().sqrt();
            if rho <= half {
                let u = rho / half;
                root.insert(prefix, (PI * u / 2.0).cos().powi(2));
            }
            continue;
        }
        for m in -reach..=reach {
            let mut p = prefix.clone();
            p.push(m);
            stack.push(p);
        }
    }
    let norm: f64 = root.values().map(|v| v * v).sum::<f64>() * l.powi(n as i32);
    let mut coeffs: HashMap<Vec<i64>, f64> = HashMap::new();
    for (ma, va) in &root {
        for (mb, vb) in &root {
            let key: Vec<i64> = ma.iter().zip(mb.iter()).map(|(a, b)| a + b).collect();
            *coeffs.entry(key).or_insert(0.0) += va * vb / norm;
        }
    }
    Ok(EtaKernel {
        radius: r,
        domain: domain.clone(),
        coeffs,
    })
}

impl EtaKernel {
    /// Lattice coefficient at lattice index `m` (0 outside the support).
    pub fn hat(&self, m: &[i64]) -> f64 {
        self.coeffs.get(m).copied().unwrap_or(0.0)
    }

    /// Kernel values on the g^n grid (real, nonnegative up to rounding).
    pub fn grid_values(&self, g: usize) -> Vec<f64> {
        let n = self.domain.n;
        let mut spec = vec![Complex64::new(0.0, 0.0); g.pow(n as u32)];
        for (m, v) in &self.coeffs {
            let mut flat = 0usize;
            for &mi in m {
                flat = flat * g + mi.rem_euclid(g as i64) as usize;
            }
            spec[flat] += Complex64::new(*v, 0.0);
        }
        crate::sampling::ndfft_inverse(&mut spec, g, n);
        spec.iter().map(|c| c.re).collect()
    }
}

/// The sampled profile of (indicator of D) convolved with the smoothing
/// kernel at scale r^{1 - 1/N}, clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct SmoothCutoff {
    pub disk: Disk,
    pub smoothing_radius: f64,
    pub grid: usize,
    pub values: Vec<f64>,
    /// Minimum over grid cells at distance <= r_minus from the center.
    pub min_inner: f64,
    /// Maximum over grid cells at distance >= r_plus from the center.
    pub max_outer: f64,
}

/// Builds the smooth disk cutoff on a `g`-per-axis grid.  `r_minus` and
/// `r_plus` bound the transition collar for the reported extrema.
pub fn build_cutoff(
    domain: &TorusDomain,
    g: usize,
    disk: &Disk,
    smoothing_radius: f64,
    r_minus: f64,
    r_plus: f64,
) -> Result<SmoothCutoff> {
    let eta = make_eta(domain, g, smoothing_radius)?;
    let n = domain.n;
    let total = g.pow(n as u32);
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(domain.period, n);
    let mut field: Vec<Complex64> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let x = sampler.coords(flat, n, domain.period);
            if torus_dist(&x, &disk.center, domain.period) <= disk.radius {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    ndfft_forward(&mut field, g, n);
    // Multiply lattice coefficients by the kernel transform; everything
    // outside the kernel support radius is zeroed, which also discards the
    // indicator's aliased high tail.
    for flat in 0..total {
        let mut idx = flat;
        let mut m = vec![0i64; n];
        for axis in (0..n).rev() {
            let b = (idx % g) as i64;
            m[axis] = if b < (g as i64 + 1) / 2 { b } else { b - g as i64 };
            idx /= g;
        }
        field[flat] *= eta.hat(&m) * domain.period.powi(n as i32);
    }
    crate::sampling::ndfft_inverse(&mut field, g, n);
    let values: Vec<f64> = field.iter().map(|c| c.re.clamp(0.0, 1.0)).collect();
    let mut min_inner = 1.0f64;
    let mut max_outer = 0.0f64;
    for flat in 0..total {
        let x = sampler.coords(flat, n, domain.period);
        let d = torus_dist(&x, &disk.center, domain.period);
        if d <= r_minus {
            min_inner = min_inner.min(values[flat]);
        } else if d >= r_plus {
            max_outer = max_outer.max(values[flat]);
        }
    }
    let _ = cellvol;
    Ok(SmoothCutoff {
        disk: disk.clone(),
        smoothing_radius,
        grid: g,
        values,
        min_inner,
        max_outer,
    })
}

/// Tunables for disk projection.
#[derive(Debug, Clone, Copy)]
pub struct LocalizeParams {
    pub n_desk: f64,
    pub c0_desk: f64,
    /// Lower bound on grid resolution per axis.
    pub min_grid: usize,
    /// Relative pruning floor for output atoms.
    pub prune_tol: f64,
}

impl Default for LocalizeParams {
    fn default() -> LocalizeParams {
        LocalizeParams {
            n_desk: N_DESK,
            c0_desk: C0_DESK,
            min_grid: 128,
            prune_tol: 1e-13,
        }
    }
}

/// Both halves of the disk projection together with its diagnostics.
#[derive(Debug, Clone)]
pub struct DiskProjection {
    pub projected: Wave,
    pub complement: Wave,
    pub smoothing_radius: f64,
    pub grid: usize,
    pub margin_before: f64,
    pub margin_after: f64,
    pub margin_budget: f64,
    pub cutoff_min_inner: f64,
    pub cutoff_max_outer: f64,
    pub r_minus: f64,
    pub r_plus: f64,
}

fn next_pow2(x: usize) -> usize {
    let mut g = 16;
    while g < x {
        g *= 2;
    }
    g
}

/// Grid resolution that keeps all spectral bins distinct for this wave and
/// the symbol support, puts >= 8 cells across the smoothing radius, and
/// respects the requested floor.
fn projection_grid(wave: &Wave, smoothing: f64, params: &LocalizeParams) -> usize {
    let l = wave.domain.period;
    // The output spectrum lives in (support of the wave) + (kernel ball of
    // radius 1/smoothing); bins must be distinct over that set only.
    let reach = (l / smoothing).ceil() as usize + 2;
    let mut atom_max = 0usize;
    for atom in &wave.atoms {
        if let Ok(idx) = wave.domain.lattice_index(&atom.xi) {
            for &m in &idx {
                atom_max = atom_max.max(m.unsigned_abs() as usize);
            }
        }
    }
    let spectral = 2 * (atom_max + reach) + 4;
    let cells = (8.0 * l / smoothing).ceil() as usize;
    next_pow2(spectral.max(cells).max(params.min_grid))
}

/// Collar radii r(1 +/- (2^k r)^{-1/(2 N)}).
pub fn collar_radii(k: u32, r: f64, n_desk: f64) -> (f64, f64) {
    let s = ((2.0f64).powi(k as i32) * r).powf(-1.0 / (2.0 * n_desk));
    (r * (1.0 - s), r * (1.0 + s))
}

/// The disk projection at time t_D: grid-multiply by the smooth cutoff
/// (or its complement), transform back to lattice coefficients, filter by
/// the evolution symbol, and reassemble as a wave of the same color and
/// frequency band.
pub fn project_disk(wave: &Wave, disk: &Disk, params: &LocalizeParams) -> Result<DiskProjection> {
    let k = wave.k;
    let two_k = (2.0f64).powi(k as i32);
    let r = disk.radius;
    if r < params.c0_desk / two_k {
        return Err(ConewaveError::DiskTooSmall {
            radius: r,
            min: params.c0_desk / two_k,
        });
    }
    let budget = params.c0_desk * (two_k * r).powf(-1.0 + 1.0 / params.n_desk);
    let margin_before = wave.margin()?;
    if margin_before < budget {
        return Err(ConewaveError::MarginTooSmall {
            have: margin_before,
            need: budget,
        });
    }
    let smoothing = r.powf(1.0 - 1.0 / params.n_desk);
    let g = projection_grid(wave, smoothing, params);
    let (r_minus, r_plus) = collar_radii(k, r, params.n_desk);
    let cutoff = build_cutoff(&wave.domain, g, disk, smoothing, r_minus, r_plus)?;
    let t_d = disk.t;
    let n = wave.domain.n;
    let l = wave.domain.period;
    let sampler = GridSampler::new(g);
    let sign = wave.color.time_sign();

    let mut proj_spec: Vec<Vec<Complex64>> = Vec::with_capacity(wave.hilbert_dim);
    let mut comp_spec: Vec<Vec<Complex64>> = Vec::with_capacity(wave.hilbert_dim);
    for h in 0..wave.hilbert_dim {
        let vals = sampler.sample_component(wave, h, t_d);
        let mut p: Vec<Complex64> = vals
            .iter()
            .zip(cutoff.values.iter())
            .map(|(v, c)| v * c)
            .collect();
        let mut q: Vec<Complex64> = vals
            .iter()
            .zip(cutoff.values.iter())
            .map(|(v, c)| v * (1.0 - c))
            .collect();
        ndfft_forward(&mut p, g, n);
        ndfft_forward(&mut q, g, n);
        proj_spec.push(p);
        comp_spec.push(q);
    }

    let collect = |spec: &[Vec<Complex64>]| -> Vec<FrequencyAtom> {
        let total = g.pow(n as u32);
        let mut atoms = Vec::new();
        for flat in 0..total {
            let mut idx = flat;
            let mut m = vec![0i64; n];
            for axis in (0..n).rev() {
                let b = (idx % g) as i64;
                m[axis] = if b < (g as i64 + 1) / 2 { b } else { b - g as i64 };
                idx /= g;
            }
            let xi: Vec<f64> = m.iter().map(|&mi| mi as f64 / l).collect();
            let a = symbol_a(&xi, k);
            if a <= 0.0 {
                continue;
            }
            let rho: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let undo = Complex64::from_polar(1.0, -2.0 * PI * sign * t_d * rho);
            let amp: Vec<Complex64> = spec.iter().map(|s| s[flat] * a * undo).collect();
            if amp.iter().map(|c| c.norm_sqr()).sum::<f64>() > 0.0 {
                atoms.push(FrequencyAtom { xi, amplitude: amp });
            }
        }
        atoms
    };

    let projected = Wave::assemble(
        wave.domain.clone(),
        wave.color,
        k,
        wave.hilbert_dim,
        collect(&proj_spec),
    )?
    .pruned(params.prune_tol);
    let complement = Wave::assemble(
        wave.domain.clone(),
        wave.color,
        k,
        wave.hilbert_dim,
        collect(&comp_spec),
    )?
    .pruned(params.prune_tol);
    let margin_after = match projected.margin() {
        Ok(m) => m,
        Err(_) => 0.0,
    };
    Ok(DiskProjection {
        projected,
        complement,
        smoothing_radius: smoothing,
        grid: g,
        margin_before,
        margin_after,
        margin_budget: budget,
        cutoff_min_inner: cutoff.min_inner,
        cutoff_max_outer: cutoff.max_outer,
        r_minus,
        r_plus,
    })
}

/// L^2 norm squared of a wave at a fixed time over the cells whose centers
/// satisfy `keep(distance to disk center)`.
fn disk_l2_sq<F>(wave: &Wave, g: usize, t: f64, center: &[f64], keep: F) -> f64
where
    F: Fn(f64) -> bool + Sync,
{
    let n = wave.domain.n;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(wave.domain.period, n);
    let mut acc = vec![0.0f64; g.pow(n as u32)];
    for h in 0..wave.hilbert_dim {
        let comp = sampler.sample_component(wave, h, t);
        for (a, c) in acc.iter_mut().zip(comp.iter()) {
            *a += c.norm_sqr();
        }
    }
    let masked: Vec<f64> = (0..acc.len())
        .into_par_iter()
        .map(|flat| {
            let x = sampler.coords(flat, n, wave.domain.period);
            if keep(torus_dist(&x, center, wave.domain.period)) {
                acc[flat] * cellvol
            } else {
                0.0
            }
        })
        .collect();
    parallel_sum(&masked)
}

/// The energy-localization diagnostics of the disk projection.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CutoffReport {
    pub radius: f64,
    pub r_minus: f64,
    pub r_plus: f64,
    pub smoothing_radius: f64,
    pub energy: f64,
    pub energy_projected: f64,
    pub energy_complement: f64,
    /// max(0, E(P_D phi) - |phi|^2 on the enlarged disk).
    pub local_energy_slack: f64,
    /// max(0, E((1-P_D) phi) - |phi|^2 outside the shrunken disk).
    pub nonlocal_energy_slack: f64,
    /// |(1-P_D) phi| on the shrunken disk over sqrt(E).
    pub vanish_ratio: f64,
    /// |P_D phi| outside the enlarged disk over sqrt(E).
    pub concentration_ratio: f64,
    pub energy_minor_ok: bool,
    pub margin_before: f64,
    pub margin_after: f64,
    pub margin_budget: f64,
}

/// Measures every localization quantity of the disk projection.  A zero
/// wave short-circuits to an all-zero report.
pub fn cutoff_report(wave: &Wave, disk: &Disk, params: &LocalizeParams) -> Result<CutoffReport> {
    if wave.atoms.is_empty() {
        return Ok(CutoffReport {
            radius: disk.radius,
            r_minus: 0.0,
            r_plus: 0.0,
            smoothing_radius: 0.0,
            energy: 0.0,
            energy_projected: 0.0,
            energy_complement: 0.0,
            local_energy_slack: 0.0,
            nonlocal_energy_slack: 0.0,
            vanish_ratio: 0.0,
            concentration_ratio: 0.0,
            energy_minor_ok: true,
            margin_before: 0.0,
            margin_after: 0.0,
            margin_budget: 0.0,
        });
    }
    let proj = project_disk(wave, disk, params)?;
    let e = wave.energy();
    let ep = proj.projected.energy();
    let ec = proj.complement.energy();
    let g = proj.grid;
    let t_d = disk.t;
    let c = &disk.center;
    let phi_plus = disk_l2_sq(wave, g, t_d, c, |d| d <= proj.r_plus);
    let phi_minus_ext = disk_l2_sq(wave, g, t_d, c, |d| d > proj.r_minus);
    let comp_inner = disk_l2_sq(&proj.complement, g, t_d, c, |d| d <= proj.r_minus);
    let proj_outer = disk_l2_sq(&proj.projected, g, t_d, c, |d| d > proj.r_plus);
    let sqrt_e = e.sqrt();
    Ok(CutoffReport {
        radius: disk.radius,
        r_minus: proj.r_minus,
        r_plus: proj.r_plus,
        smoothing_radius: proj.smoothing_radius,
        energy: e,
        energy_projected: ep,
        energy_complement: ec,
        local_energy_slack: (ep - phi_plus).max(0.0),
        nonlocal_energy_slack: (ec - phi_minus_ext).max(0.0),
        vanish_ratio: comp_inner.sqrt() / sqrt_e,
        concentration_ratio: proj_outer.sqrt() / sqrt_e,
        energy_minor_ok: ep <= e * (1.0 + 1e-12) && ec <= e * (1.0 + 1e-12),
        margin_before: proj.margin_before,
        margin_after: proj.margin_after,
        margin_budget: proj.margin_budget,
    })
}

/// Spacetime L^2 norm of the pointwise product |phi||psi| over the cells
/// and time slices accepted by `keep`.
fn product_l2_region<F>(
    phi: &Wave,
    psi: &Wave,
    g: usize,
    t_lo: f64,
    t_hi: f64,
    slices: usize,
    keep: F,
) -> f64
where
    F: Fn(&[f64], f64) -> bool + Sync,
{
    let n = phi.domain.n;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(phi.domain.period, n);
    let dt = (t_hi - t_lo) / slices as f64;
    let mut total = 0.0;
    for s in 0..slices {
        let t = t_lo + (s as f64 + 0.5) * dt;
        let a = sampler.sample_abs(phi, t);
        let b = sampler.sample_abs(psi, t);
        let masked: Vec<f64> = (0..a.len())
            .into_par_iter()
            .map(|flat| {
                let x = sampler.coords(flat, n, phi.domain.period);
                if keep(&x, t) {
                    let v = a[flat] * b[flat];
                    v * v * cellvol * dt
                } else {
                    0.0
                }
            })
            .collect();
        total += parallel_sum(&masked);
    }
    total.sqrt()
}

/// Finite-propagation and Huygens diagnostics for a disk projection of a
/// red wave against a blue wave, normalized by sqrt(E(phi) E(psi)).
#[derive(Debug, Clone, serde::Serialize)]
pub struct HuygensReport {
    pub r: f64,
    pub big_r: f64,
    pub inflation: f64,
    /// |((1-P_D)phi) psi| on the small central cube.
    pub finite_prop_ratio: f64,
    /// |(P_D phi) psi| on the R-cube minus the inflated cone.
    pub huygens_ratio: f64,
    /// |(P_D phi)(P_D psi)| on the cube annulus outside the inflated core.
    pub redblue_ratio: f64,
}

/// Measures the three finite-speed/Huygens ratios at q = 2 on a grid of
/// `g` cells per axis with `slices` midpoint time slices.
#[allow(clippy::too_many_arguments)]
pub fn huygens_report(
    phi: &Wave,
    psi: &Wave,
    disk: &Disk,
    big_r: f64,
    inflation: f64,
    g: usize,
    slices: usize,
    params: &LocalizeParams,
) -> Result<HuygensReport> {
    if !phi.domain.compatible(&psi.domain) {
        return Err(ConewaveError::MixedDomains);
    }
    let r = disk.radius;
    if big_r > phi.domain.period {
        return Err(ConewaveError::RegionExceedsTorus(format!(
            "R = {big_r} exceeds the period {}",
            phi.domain.period
        )));
    }
    let e_product = (phi.energy() * psi.energy()).sqrt();
    if e_product == 0.0 {
        return Ok(HuygensReport {
            r,
            big_r,
            inflation,
            finite_prop_ratio: 0.0,
            huygens_ratio: 0.0,
            redblue_ratio: 0.0,
        });
    }
    let proj_phi = project_disk(phi, disk, params)?;
    let proj_psi = project_disk(psi, disk, params)?;
    let thickness = inflation * r + big_r.powf(1.0 / params.n_desk);
    let cone = ConeNeighbourhood {
        vertex_x: disk.center.clone(),
        vertex_t: disk.t,
        thickness,
        color: match phi.color {
            Color::Red => ConeColor::Red,
            Color::Blue => ConeColor::Blue,
        },
    };
    let small = Cube::new(disk.center.clone(), disk.t, r / inflation)?;
    let big = Cube::new(disk.center.clone(), disk.t, big_r)?;
    let inner = Cube::new(disk.center.clone(), disk.t, (inflation * r + inflation * big_r.powf(1.0 / params.n_desk)).min(big_r * 0.999))?;

    let (s_lo, s_hi) = small.lifespan();
    let finite_prop = product_l2_region(&proj_phi.complement, psi, g, s_lo, s_hi, slices, |x, t| {
        small.contains(x, t)
    });
    let (b_lo, b_hi) = big.lifespan();
    let huygens = product_l2_region(&proj_phi.projected, psi, g, b_lo, b_hi, slices, |x, t| {
        big.contains(x, t) && !cone.contains(x, t)
    });
    let redblue = product_l2_region(
        &proj_phi.projected,
        &proj_psi.projected,
        g,
        b_lo,
        b_hi,
        slices,
        |x, t| big.contains(x, t) && !inner.contains(x, t),
    );
    Ok(HuygensReport {
        r,
        big_r,
        inflation,
        finite_prop_ratio: finite_prop / e_product,
        huygens_ratio: huygens / e_product,
        redblue_ratio: redblue / e_product,
    })
}

/// Peak magnitude of the synthesized propagation kernel over grid points
/// whose cone-surface distance lies in [lo, hi].
pub fn kernel_peak_at_distance(
    domain: &TorusDomain,
    k: u32,
    t: f64,
    g: usize,
    lo: f64,
    hi: f64,
) -> f64 {
    let n = domain.n;
    let l = domain.period;
    let reach = (symbol_support_radius(k) * l).ceil() as i64;
    let mut atoms = Vec::new();
    let mut stack = vec![Vec::<i64>::new()];
    while let Some(prefix) = stack.pop() {
        if prefix.len() == n {
            let xi: Vec<f64> = prefix.iter().map(|&m| m as f64 / l).collect();
            let a = symbol_a(&xi, k);
            if a > 0.0 {
                atoms.push(FrequencyAtom {
                    xi,
                    amplitude: vec![Complex64::new(a / l.powi(n as i32), 0.0)],
                });
            }
            continue;
        }
        for m in -reach..=reach {
            let mut p = prefix.clone();
            p.push(m);
            stack.push(p);
        }
    }
    let wave = Wave::assemble(domain.clone(), Color::Red, k, 1, atoms).unwrap();
    let sampler = GridSampler::new(g);
    let vals = sampler.sample_abs(&wave, t);
    let origin = vec![0.0; n];
    (0..vals.len())
        .into_par_iter()
        .map(|flat| {
            let mut x = sampler.coords(flat, n, l);
            for c in x.iter_mut() {
                if *c > l / 2.0 {
                    *c -= l;
                }
            }
            let d = crate::geometry::cone_surface_distance(ConeColor::Red, &origin, 0.0, &x, t);
            if d >= lo && d <= hi {
                vals[flat]
            } else {
                0.0
            }
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wave::make_wave;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_domain() -> TorusDomain {
        TorusDomain::new(2, 32.0, 128).unwrap()
    }

    /// Random red wave with atoms kept well inside the sector/band patch so
    /// the margin stays above the projection budget for moderate radii.
    fn snug_wave(domain: &TorusDomain, seed: u64, m: usize) -> Wave {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = domain.period;
        let mut atoms = Vec::new();
        while atoms.len() < m {
            let m1 = rng.gen_range((1.44 * l) as i64..(1.58 * l) as i64);
            let m2 = rng.gen_range(-(0.1 * l) as i64..(0.1 * l) as i64);
            let xi = vec![m1 as f64 / l, m2 as f64 / l];
            let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            if !(1.44..=1.58).contains(&rho) {
                continue;
            }
            atoms.push(FrequencyAtom {
                xi,
                amplitude: vec![Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)],
            });
        }
        make_wave(domain.clone(), Color::Red, 0, 1, atoms).unwrap()
    }

    /// Wave whose amplitudes are phased to form a bump at `x0`.
    fn concentrated_wave(domain: &TorusDomain, x0: &[f64], m_side: i64) -> Wave {
        let l = domain.period;
        let mut atoms = Vec::new();
        let base = (1.45 * l) as i64;
        for da in -m_side..=m_side {
            for db in -m_side..=m_side {
                let xi = vec![(base + da) as f64 / l, db as f64 / l];
                let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                if !(1.3..=1.7).contains(&rho) {
                    continue;
                }
                let gauss = (-((da * da + db * db) as f64) / (m_side as f64).powi(2)).exp();
                let phase = -2.0 * PI * (x0[0] * xi[0] + x0[1] * xi[1]);
                atoms.push(FrequencyAtom {
                    xi,
                    amplitude: vec![Complex64::from_polar(gauss, phase)],
                });
            }
        }
        make_wave(domain.clone(), Color::Red, 0, 1, atoms).unwrap()
    }

    #[test]
    fn eta_mass_and_positivity() {
        let d = test_domain();
        let eta = make_eta(&d, 128, 4.0).unwrap();
        let vals = eta.grid_values(128);
        let cellvol = (d.period / 128.0).powi(2);
        let mass: f64 = vals.iter().map(|v| v * cellvol).sum();
        assert!((mass - 1.0).abs() <= 1e-6, "mass {mass}");
        assert!(vals.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn eta_fourier_support_via_grid_transform() {
        let d = test_domain();
        let r = 4.0;
        let g = 128usize;
        let eta = make_eta(&d, g, r).unwrap();
        let vals = eta.grid_values(g);
        let mut field: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        ndfft_forward(&mut field, g, 2);
        for flat in 0..field.len() {
            let b0 = (flat / g) as i64;
            let b1 = (flat % g) as i64;
            let m0 = if b0 < g as i64 / 2 { b0 } else { b0 - g as i64 };
            let m1 = if b1 < g as i64 / 2 { b1 } else { b1 - g as i64 };
            let freq = (((m0 * m0 + m1 * m1) as f64).sqrt()) / d.period;
            if freq > 1.0 / r {
                assert!(field[flat].norm() <= 1e-10, "leak at freq {freq}");
            }
        }
    }

    #[test]
    fn symbol_is_one_on_patch_and_vanishes_outside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let rho = rng.gen_range(1.0..2.0);
            let th = rng.gen_range(-SECTOR_ANGLE..SECTOR_ANGLE);
            let xi = [rho * th.cos(), rho * th.sin()];
            assert_eq!(symbol_a(&xi, 0), 1.0);
        }
        assert_eq!(symbol_a(&[0.5, 0.0], 0), 0.0);
        assert_eq!(symbol_a(&[4.0, 0.0], 0), 0.0);
        assert_eq!(symbol_a(&[0.0, 1.5], 0), 0.0);
        for _ in 0..500 {
            let xi = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let a = symbol_a(&xi, 0);
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn full_torus_disk_keeps_energy() {
        let d = test_domain();
        let w = snug_wave(&d, 11, 10);
        let disk = Disk::new(vec![16.0, 16.0], 0.0, d.period * 2.0).unwrap();
        let proj = project_disk(&w, &disk, &LocalizeParams::default()).unwrap();
        let ratio = proj.projected.energy() / w.energy();
        assert!(ratio >= 0.999, "ratio {ratio}");
    }

    #[test]
    fn energy_minor_holds_exactly() {
        let d = test_domain();
        let w = snug_wave(&d, 5, 14);
        let disk = Disk::new(vec![14.0, 18.0], 0.5, 8.0).unwrap();
        let proj = project_disk(&w, &disk, &LocalizeParams::default()).unwrap();
        let e = w.energy();
        assert!(proj.projected.energy() <= e * (1.0 + 1e-12));
        assert!(proj.complement.energy() <= e * (1.0 + 1e-12));
    }

    #[test]
    fn complementarity_reconstructs_wave() {
        let d = test_domain();
        let w = snug_wave(&d, 9, 12);
        let disk = Disk::new(vec![16.0, 16.0], 0.0, 8.0).unwrap();
        let proj = project_disk(&w, &disk, &LocalizeParams::default()).unwrap();
        let sum = proj.projected.add(&proj.complement).unwrap();
        let resid = sum.sub(&w).unwrap();
        assert!(resid.energy() <= 1e-24 * w.energy(), "residual {}", resid.energy());
    }

    #[test]
    fn local_energy_slack_small() {
        let d = test_domain();
        let w = snug_wave(&d, 2, 12);
        let disk = Disk::new(vec![16.0, 16.0], 0.0, 8.0).unwrap();
        let rep = cutoff_report(&w, &disk, &LocalizeParams::default()).unwrap();
        assert!(rep.local_energy_slack <= 1e-3 * rep.energy, "slack {}", rep.local_energy_slack);
        assert!(rep.energy_minor_ok);
    }

    #[test]
    fn concentrated_wave_vanish_ratio() {
        let d = test_domain();
        let x0 = [16.0, 16.0];
        let w = concentrated_wave(&d, &x0, 5);
        let disk = Disk::new(x0.to_vec(), 0.0, 16.0).unwrap();
        let rep = cutoff_report(&w, &disk, &LocalizeParams::default()).unwrap();
        assert!(rep.vanish_ratio <= 1e-2, "vanish ratio {}", rep.vanish_ratio);
    }

    #[test]
    fn plane_wave_energy_fraction_matches_disk_area() {
        let d = TorusDomain::new(2, 64.0, 256).unwrap();
        let atom = FrequencyAtom {
            xi: vec![1.5, 0.0],
            amplitude: vec![Complex64::new(1.0, 0.0)],
        };
        let w = make_wave(d.clone(), Color::Red, 0, 1, vec![atom]).unwrap();
        let disk = Disk::new(vec![32.0, 32.0], 0.0, 24.0).unwrap();
        // A sharper mollification exponent keeps the transition collar thin
        // relative to the disk, which is what the area comparison needs.
        let params = LocalizeParams {
            n_desk: 2.0,
            c0_desk: 1.5,
            ..LocalizeParams::default()
        };
        let proj = project_disk(&w, &disk, &params).unwrap();
        let expected = PI * disk.radius * disk.radius / d.period.powi(2);
        let got = proj.projected.energy() / w.energy();
        assert!(got / expected <= 1.2 && expected / got <= 1.2, "got {got} expected {expected}");
    }

    #[test]
    fn zero_wave_report_is_zero() {
        let d = test_domain();
        let w = Wave::zero(d, Color::Red, 0, 1);
        let disk = Disk::new(vec![16.0, 16.0], 0.0, 8.0).unwrap();
        let rep = cutoff_report(&w, &disk, &LocalizeParams::default()).unwrap();
        assert_eq!(rep.energy, 0.0);
        assert_eq!(rep.vanish_ratio, 0.0);
        assert_eq!(rep.concentration_ratio, 0.0);
    }

    #[test]
    fn margin_drop_within_budget() {
        let d = test_domain();
        let w = snug_wave(&d, 21, 10);
        let disk = Disk::new(vec![16.0, 16.0], 0.0, 8.0).unwrap();
        let proj = project_disk(&w, &disk, &LocalizeParams::default()).unwrap();
        assert!(
            proj.margin_after >= proj.margin_before - proj.margin_budget - 1e-9,
            "before {} after {} budget {}",
            proj.margin_before,
            proj.margin_after,
            proj.margin_budget
        );
    }

    #[test]
    fn huygens_zero_blue_wave() {
        let d = test_domain();
        let phi = snug_wave(&d, 4, 8);
        let psi = Wave::zero(d, Color::Blue, 0, 1);
        let disk = Disk::new(vec![16.0, 16.0], 0.0, 8.0).unwrap();
        let rep = huygens_report(&phi, &psi, &disk, 24.0, 2.0, 64, 9, &LocalizeParams::default())
            .unwrap();
        assert_eq!(rep.finite_prop_ratio, 0.0);
        assert_eq!(rep.huygens_ratio, 0.0);
        assert_eq!(rep.redblue_ratio, 0.0);
    }

    #[test]
    fn huygens_concentrated_finite_prop() {
        let d = test_domain();
        let x0 = [16.0, 16.0];
        let phi = concentrated_wave(&d, &x0, 5);
        let psi = snug_wave(&d, 8, 6).time_reverse();
        let disk = Disk::new(x0.to_vec(), 0.0, 16.0).unwrap();
        let rep = huygens_report(&phi, &psi, &disk, 24.0, 2.0, 64, 9, &LocalizeParams::default())
            .unwrap();
        assert!(rep.finite_prop_ratio <= 0.05, "ratio {}", rep.finite_prop_ratio);
    }

    #[test]
    fn kernel_decays_off_the_cone() {
        let d = TorusDomain::new(2, 64.0, 256).unwrap();
        for &t in &[8.0, 16.0] {
            let peak = kernel_peak_at_distance(&d, 0, t, 256, 0.0, 0.5);
            let far = kernel_peak_at_distance(&d, 0, t, 256, 7.5, 8.5);
            assert!(peak / far >= 1e3, "t {t}: peak {peak} far {far}");
        }
    }
}
