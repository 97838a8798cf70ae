//! Bilinear L^p norms of red-blue products over spacetime regions, the
//! cone-energy and low-dispersion checks with their surface-measure oracle,
//! and the k-scaling extremizer experiment.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::TorusDomain;
use crate::error::{ConewaveError, Result};
use crate::geometry::{region_quadrature, ConeColor, ConeNeighbourhood, Cube, Region};
use crate::packets::WaveTable;
use crate::sampling::{parallel_sum, GridSampler};
use crate::wave::{make_wave, Color, FrequencyAtom, Wave, SECTOR_ANGLE};

/// A measured norm with the region it was taken over and a Richardson-style
/// error estimate from the half-resolution pass.
#[derive(Debug, Clone, Serialize)]
pub struct NormReport {
    pub region: Region,
    pub p: f64,
    pub value: f64,
    pub resolution: f64,
    pub err_est: f64,
}

/// A least-squares line through (log x, log y) points.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub log_x: Vec<f64>,
    pub log_y: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    /// Set when the input is degenerate (zero norms) and no fit was made.
    pub skipped: bool,
}

pub fn fit_slope(log_x: &[f64], log_y: &[f64]) -> Result<SlopeFit> {
    if log_x.len() != log_y.len() || log_x.len() < 3 {
        return Err(ConewaveError::InvalidParameter(format!(
            "slope fit needs >= 3 matched points, got {} and {}",
            log_x.len(),
            log_y.len()
        )));
    }
    let n = log_x.len() as f64;
    let mx = log_x.iter().sum::<f64>() / n;
    let my = log_y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in log_x.iter().zip(log_y.iter()) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = log_x
        .iter()
        .zip(log_y.iter())
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    Ok(SlopeFit {
        log_x: log_x.to_vec(),
        log_y: log_y.to_vec(),
        slope,
        intercept,
        residual: (rss / n).sqrt(),
        skipped: false,
    })
}

fn skipped_fit() -> SlopeFit {
    SlopeFit {
        log_x: Vec::new(),
        log_y: Vec::new(),
        slope: 0.0,
        intercept: 0.0,
        residual: 0.0,
        skipped: true,
    }
}

/// L^p norm of |phi||psi| over the region by pointwise quadrature.  The
/// pointwise Hilbert-Schmidt magnitude of the tensor product is the plain
/// product of the two Hilbert magnitudes.
pub fn product_lp_norm(
    phi: &Wave,
    psi: &Wave,
    region: &Region,
    p: f64,
    resolution: f64,
) -> Result<NormReport> {
    if !(1.0..=2.0).contains(&p) {
        return Err(ConewaveError::InvalidParameter(format!(
            "exponent p must lie in [1, 2], got {p}"
        )));
    }
    if !phi.domain.compatible(&psi.domain) {
        return Err(ConewaveError::MixedDomains);
    }
    if let Some(b) = region.bounding_cube() {
        if b.side > phi.domain.period + 1e-9 {
            return Err(ConewaveError::RegionExceedsTorus(format!(
                "region bounding side {} exceeds period {}",
                b.side, phi.domain.period
            )));
        }
    }
    let integrand = |x: &[f64], t: f64| {
        let pt = [(x.to_vec(), t)];
        let a: f64 = phi.evaluate(&pt)[0]
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        let b: f64 = psi.evaluate(&pt)[0]
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        (a * b).powf(p)
    };
    let (integral, int_err) = region_quadrature(region, integrand, resolution)?;
    let value = integral.max(0.0).powf(1.0 / p);
    let err_est = if integral > 0.0 {
        int_err / p * integral.powf(1.0 / p - 1.0)
    } else {
        int_err.powf(1.0 / p)
    };
    Ok(NormReport {
        region: region.clone(),
        p,
        value,
        resolution,
        err_est,
    })
}

/// Fast L^p product norm over a cube via exact grid sampling and midpoint
/// time slices.
pub fn product_lp_grid(
    phi: &Wave,
    psi: &Wave,
    cube: &Cube,
    p: f64,
    g: usize,
    slices: usize,
) -> f64 {
    let n = phi.domain.n;
    let l = phi.domain.period;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n);
    let (t0, t1) = cube.lifespan();
    let dt = (t1 - t0) / slices as f64;
    let full_space = cube.side >= l - 1e-9;
    let mut total = 0.0;
    for s in 0..slices {
        let t = t0 + (s as f64 + 0.5) * dt;
        let a = sampler.sample_abs(phi, t);
        let b = sampler.sample_abs(psi, t);
        let terms: Vec<f64> = (0..a.len())
            .into_par_iter()
            .map(|flat| {
                if !full_space {
                    let x = sampler.coords(flat, n, l);
                    if !cube.contains(&x, t) {
                        return 0.0;
                    }
                }
                (a[flat] * b[flat]).powf(p) * cellvol * dt
            })
            .collect();
        total += parallel_sum(&terms);
    }
    total.powf(1.0 / p)
}

/// L^2 mass of a red wave on blue cones of growing thickness about the
/// vertex, fitted against the thickness.
pub fn cone_energy_check(
    phi: &Wave,
    vertex_x: &[f64],
    vertex_t: f64,
    r_list: &[f64],
    resolution: f64,
) -> Result<SlopeFit> {
    let l = phi.domain.period;
    let r_max = r_list.iter().cloned().fold(0.0, f64::max);
    if r_max > l {
        return Err(ConewaveError::RegionExceedsTorus(format!(
            "cone thickness {r_max} exceeds period {l}"
        )));
    }
    if phi.atoms.is_empty() {
        return Ok(skipped_fit());
    }
    let side = (8.0 * r_max).min(l);
    let cube = Cube::new(vertex_x.to_vec(), vertex_t, side)?;
    let mut log_x = Vec::new();
    let mut log_y = Vec::new();
    for &r in r_list {
        let region = Region::Intersection {
            a: Box::new(Region::Cone(ConeNeighbourhood {
                vertex_x: vertex_x.to_vec(),
                vertex_t,
                thickness: r,
                color: ConeColor::Blue,
            })),
            b: Box::new(Region::Cube(cube.clone())),
        };
        let integrand = |x: &[f64], t: f64| {
            let pt = [(x.to_vec(), t)];
            phi.evaluate(&pt)[0].iter().map(|c| c.norm_sqr()).sum()
        };
        let (sq, _) = region_quadrature(&region, integrand, resolution)?;
        if sq <= 0.0 {
            return Ok(skipped_fit());
        }
        log_x.push(r.ln());
        log_y.push(sq.sqrt().ln());
    }
    fit_slope(&log_x, &log_y)
}

/// L^2 of the product on the double (purple) cone of thickness r inside Q,
/// and its ratio against r^{1/2} R^{1/2} E(phi)^{1/2} E(psi)^{1/2}.
pub fn doublecone_l1_check(
    phi: &Wave,
    psi: &Wave,
    vertex_x: &[f64],
    vertex_t: f64,
    r: f64,
    q: &Cube,
    resolution: f64,
) -> Result<(NormReport, f64)> {
    let region = Region::Intersection {
        a: Box::new(Region::Cone(ConeNeighbourhood {
            vertex_x: vertex_x.to_vec(),
            vertex_t,
            thickness: r,
            color: ConeColor::Purple,
        })),
        b: Box::new(Region::Cube(q.clone())),
    };
    let report = product_lp_norm(phi, psi, &region, 2.0, resolution)?;
    let scale = r.sqrt() * q.side.sqrt() * (phi.energy() * psi.energy()).sqrt();
    let ratio = if scale > 0.0 { report.value / scale } else { 0.0 };
    Ok((report, ratio))
}

/// A random red wave whose atoms fit in an angular window of width 1/r.
pub fn narrow_red_wave(domain: &TorusDomain, k: u32, r: f64, m: usize, rng: &mut ChaCha8Rng) -> Wave {
    let l = domain.period;
    let s = (2.0f64).powi(k as i32);
    let half = 1.0 / (2.0 * r);
    let theta_c = rng.gen_range(-(SECTOR_ANGLE - half) + 0.01..(SECTOR_ANGLE - half) - 0.01);
    let mut atoms = Vec::new();
    let mut guard = 0;
    while atoms.len() < m {
        guard += 1;
        assert!(guard < 100_000, "rejection sampling stalled");
        let m1 = rng.gen_range((1.1 * s * l) as i64..(1.9 * s * l) as i64);
        let m2 = rng.gen_range(-(0.9 * s * l) as i64..(0.9 * s * l) as i64);
        let xi = vec![m1 as f64 / l, m2 as f64 / l];
        let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        if !(1.1 * s..=1.9 * s).contains(&rho) {
            continue;
        }
        let theta = xi[1].atan2(xi[0]);
        if (theta - theta_c).abs() > half {
            continue;
        }
        atoms.push(FrequencyAtom {
            xi,
            amplitude: vec![Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)],
        });
    }
    make_wave(domain.clone(), Color::Red, k, 1, atoms).unwrap()
}

#[cfg(test)]
fn random_blue_wave(domain: &TorusDomain, k: u32, m: usize, rng: &mut ChaCha8Rng) -> Wave {
    let l = domain.period;
    let s = (2.0f64).powi(k as i32);
    let mut atoms = Vec::new();
    let mut guard = 0;
    while atoms.len() < m {
        guard += 1;
        assert!(guard < 100_000, "rejection sampling stalled");
        let m1 = rng.gen_range((1.1 * s * l) as i64..(1.9 * s * l) as i64);
        let m2 = rng.gen_range(-(0.7 * s * l) as i64..(0.7 * s * l) as i64);
        let xi = vec![m1 as f64 / l, m2 as f64 / l];
        let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        if !(1.1 * s..=1.9 * s).contains(&rho) {
            continue;
        }
        if xi[1].atan2(xi[0]).abs() > SECTOR_ANGLE - 1e-3 {
            continue;
        }
        atoms.push(FrequencyAtom {
            xi,
            amplitude: vec![Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)],
        });
    }
    make_wave(domain.clone(), Color::Blue, k, 1, atoms).unwrap()
}

/// Every lattice mode of the unit band inside an angular window, with unit
/// amplitudes.  Dense spectra are what make the beam profile form: a sparse
/// random subset leaves the incoherent diagonal term in charge of the norm.
fn dense_window_wave(domain: &TorusDomain, color: Color, theta_c: f64, half: f64) -> Wave {
    let l = domain.period;
    let lim = (2.0 * l) as i64;
    let mut atoms = Vec::new();
    for m1 in 1..=lim {
        for m2 in -lim..=lim {
            let xi = vec![m1 as f64 / l, m2 as f64 / l];
            let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
            if !(1.1..=1.9).contains(&rho) {
                continue;
            }
            let theta = xi[1].atan2(xi[0]);
            if (theta - theta_c).abs() > half || theta.abs() > SECTOR_ANGLE - 1e-9 {
                continue;
            }
            atoms.push(FrequencyAtom {
                xi,
                amplitude: vec![Complex64::new(1.0, 0.0)],
            });
        }
    }
    make_wave(domain.clone(), color, 0, 1, atoms).unwrap()
}

/// Re-phase every atom so the wave peaks coherently at `x0` at time zero.
fn focus_at(w: &Wave, x0: &[f64]) -> Wave {
    let atoms = w
        .atoms
        .iter()
        .map(|a| {
            let dot: f64 = x0.iter().zip(&a.xi).map(|(x, xi)| x * xi).sum();
            FrequencyAtom {
                xi: a.xi.clone(),
                amplitude: vec![Complex64::from_polar(1.0, -2.0 * PI * dot)],
            }
        })
        .collect();
    Wave::assemble(w.domain.clone(), w.color, w.k, 1, atoms).unwrap()
}

/// Worst-case normalized L^2 product norm of a narrow red wave against a
/// generic blue wave, per angular scale r, with the localized variant's
/// ratios on side-r cubes.  Trial waves are focused at a common point:
/// incoherent amplitudes wash the angular-scale dependence out entirely,
/// while focused pairs approach the extremal profile.
#[allow(clippy::too_many_arguments)]
pub fn low_dispersion_l2_check(
    domain: &TorusDomain,
    r_list: &[f64],
    trials: usize,
    seed: u64,
    g: usize,
    slices: usize,
) -> Result<(SlopeFit, Vec<f64>)> {
    let l = domain.period;
    let mut log_x = Vec::new();
    let mut log_y = Vec::new();
    let mut local_ratios = Vec::new();
    for (ri, &r) in r_list.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut worst_pair: Option<(Wave, Wave)> = None;
        for trial in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (ri as u64).wrapping_mul(0x9e37) ^ (trial as u64).wrapping_mul(0x85eb),
            );
            // Away from the torus boundary so the focal window never wraps.
            let x0: Vec<f64> = (0..domain.n)
                .map(|_| l / 4.0 + rng.gen::<f64>() * l / 2.0)
                .collect();
            let half = 1.0 / (2.0 * r);
            let theta_c = rng.gen_range(-(SECTOR_ANGLE - half) + 0.01..(SECTOR_ANGLE - half) - 0.01);
            let phi = focus_at(&dense_window_wave(domain, Color::Red, theta_c, half), &x0);
            let psi = focus_at(&dense_window_wave(domain, Color::Blue, 0.0, SECTOR_ANGLE), &x0);
            // A window around the focal interaction: integrating the whole
            // box instead lets the flat incoherent background mask the
            // angular-scale dependence of the coherent part.
            let window = Cube::new(x0.clone(), 0.0, (l / 4.0).min(8.0))?;
            let v = product_lp_grid(&phi, &psi, &window, 2.0, g, slices)
                / (phi.energy() * psi.energy()).sqrt();
            if v > worst {
                worst = v;
                worst_pair = Some((phi, psi));
            }
        }
        log_x.push(r.ln());
        log_y.push(worst.ln());
        // Localized variant on a side-r cube around the box center.
        if let Some((phi, psi)) = worst_pair {
            let q = Cube::new(vec![l / 2.0; domain.n], 0.0, r)?;
            let cq = q.scaled(2.0_f64.min(l / r));
            let num = product_lp_grid(&phi, &psi, &q, 2.0, g, slices.max(8));
            let pa = l2_on_cube(&phi, &cq, g, slices.max(8));
            let pb = l2_on_cube(&psi, &cq, g, slices.max(8));
            let scale = r.powf(-((domain.n + 1) as f64) / 2.0) * pa * pb;
            if scale > 0.0 {
                local_ratios.push(num / scale);
            }
        }
    }
    Ok((fit_slope(&log_x, &log_y)?, local_ratios))
}

/// Spacetime L^2 norm of a wave over a cube.
pub fn l2_on_cube(w: &Wave, cube: &Cube, g: usize, slices: usize) -> f64 {
    let n = w.domain.n;
    let l = w.domain.period;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n);
    let (t0, t1) = cube.lifespan();
    let dt = (t1 - t0) / slices as f64;
    let mut total = 0.0;
    for s in 0..slices {
        let t = t0 + (s as f64 + 0.5) * dt;
        let a = sampler.sample_abs(w, t);
        let terms: Vec<f64> = (0..a.len())
            .into_par_iter()
            .map(|flat| {
                let x = sampler.coords(flat, n, l);
                if cube.contains(&x, t) {
                    a[flat] * a[flat] * cellvol * dt
                } else {
                    0.0
                }
            })
            .collect();
        total += parallel_sum(&terms);
    }
    total.sqrt()
}

/// Brute-force sup of the convolution of the red-sector surface measure
/// (angular width 1/r, unit band) with the blue band-2^k surface measure,
/// over a spacetime frequency binning.  `radial_shift` displaces the blue
/// measure radially; a large shift pushes every sum off the window.
pub fn surface_convolution_oracle(r: f64, k: u32, radial_shift: f64) -> f64 {
    let s = (2.0f64).powi(k as i32);
    // Discretized measures: (point, weight) with weights summing to the
    // surface areas.
    let na1 = 24usize;
    let nr1 = 96usize;
    let dth1 = (1.0 / r) / na1 as f64;
    let dr1 = 1.0 / nr1 as f64;
    let mut sigma1 = Vec::with_capacity(na1 * nr1);
    for ia in 0..na1 {
        let th = (ia as f64 + 0.5) * dth1;
        for ir in 0..nr1 {
            let rho = 1.0 + (ir as f64 + 0.5) * dr1;
            sigma1.push(([rho * th.cos(), rho * th.sin(), rho], rho * dth1 * dr1));
        }
    }
    let na2 = 220usize;
    let nr2 = 72usize;
    let dth2 = (PI / 2.0) / na2 as f64;
    let dr2 = s / nr2 as f64;
    let mut sigma2 = Vec::with_capacity(na2 * nr2);
    for ia in 0..na2 {
        let th = -PI / 4.0 + (ia as f64 + 0.5) * dth2;
        for ir in 0..nr2 {
            let rho = s + (ir as f64 + 0.5) * dr2 + radial_shift;
            sigma2.push(([rho * th.cos(), rho * th.sin(), -rho], rho * dth2 * dr2));
        }
    }
    // Window: the natural support of the unshifted sum.
    let xi_max = 3.0 * s + 3.0;
    let tau_max = 2.0 * s + 2.0;
    let h = 0.25f64;
    let bins: Vec<HashMap<(i64, i64, i64), f64>> = sigma1
        .par_iter()
        .map(|(p1, w1)| {
            let mut local: HashMap<(i64, i64, i64), f64> = HashMap::new();
            for (p2, w2) in &sigma2 {
                let sx = p1[0] + p2[0];
                let sy = p1[1] + p2[1];
                let st = p1[2] + p2[2];
                if sx.abs() > xi_max || sy.abs() > xi_max || st.abs() > tau_max {
                    continue;
                }
                let key = (
                    (sx / h).floor() as i64,
                    (sy / h).floor() as i64,
                    (st / h).floor() as i64,
                );
                *local.entry(key).or_insert(0.0) += w1 * w2;
            }
            local
        })
        .collect();
    let mut merged: HashMap<(i64, i64, i64), f64> = HashMap::new();
    for local in bins {
        for (k, v) in local {
            *merged.entry(k).or_insert(0.0) += v;
        }
    }
    merged.values().cloned().fold(0.0, f64::max) / (h * h * h)
}

/// Empirical lower bound for the best bilinear constant on normalized
/// families: the maximum product norm over the declared pairs.  This is a
/// lower bound by construction and never an upper bound.
pub fn empirical_a_ratio(
    family: &[(Wave, Wave)],
    q: &Cube,
    p: f64,
    g: usize,
    slices: usize,
) -> Result<f64> {
    for (phi, psi) in family {
        for w in [phi, psi] {
            let e = w.energy();
            if (e - 1.0).abs() > 1e-6 {
                return Err(ConewaveError::EnergyNotNormalized(e));
            }
        }
    }
    Ok(family
        .iter()
        .map(|(phi, psi)| product_lp_grid(phi, psi, q, p, g, slices))
        .fold(0.0, f64::max))
}

/// The k-scaling extremizer experiment: a blue wave with unit-cube spectrum
/// in the 2^k band against a vector red wave of 2^k bumps along the blue
/// null tube; fits log norm against k log 2.
pub fn k_scaling_experiment(
    domain: &TorusDomain,
    k_list: &[u32],
    p: f64,
    g: usize,
    slices: usize,
) -> Result<SlopeFit> {
    for &k in k_list {
        if k > 4 {
            return Err(ConewaveError::GridTooCoarse(format!(
                "k = {k} pushes the band past the spectral grid; max 4"
            )));
        }
    }
    let l = domain.period;
    let n = domain.n;
    let center: Vec<f64> = vec![l / 2.0; n];
    let q = Cube::new(center.clone(), 0.0, l)?;
    let mut log_x = Vec::new();
    let mut log_y = Vec::new();
    for &k in k_list {
        let s = (2.0f64).powi(k as i32);
        // Blue: dense atoms in a unit frequency cube centered on the band.
        let c1 = (1.5 * s * l).round() as i64;
        let mut blue_atoms = Vec::new();
        let half = (0.5 * l) as i64;
        for da in -half..=half {
            for db in -half..=half {
                let xi = vec![(c1 + da) as f64 / l, db as f64 / l];
                let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                if rho < s || rho > 2.0 * s {
                    continue;
                }
                // The unit cube is clipped by the sector at small k.
                if xi[1].atan2(xi[0]).abs() > SECTOR_ANGLE - 1e-9 {
                    continue;
                }
                // Focus the bump on the cube center so it actually crosses
                // the red train instead of riding the torus origin line.
                let phase = -2.0 * PI * (center[0] * xi[0] + center[1] * xi[1]);
                blue_atoms.push(FrequencyAtom {
                    xi,
                    amplitude: vec![Complex64::from_polar(1.0, phase)],
                });
            }
        }
        let psi = make_wave(domain.clone(), Color::Blue, k, 1, blue_atoms)?.normalized();
        // Red: hilbert_dim 2^k, component i a unit bump at distance i along
        // the blue travel direction e1.
        let dim = 1usize << k;
        let base1 = (1.5 * l).round() as i64;
        let mut red_atoms = Vec::new();
        for da in -6i64..=6 {
            for db in -6i64..=6 {
                let xi = vec![(base1 + da) as f64 / l, db as f64 / l];
                let rho = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                if !(1.3..=1.7).contains(&rho) {
                    continue;
                }
                let gauss = (-((da * da + db * db) as f64) / 18.0).exp();
                let amplitude: Vec<Complex64> = (0..dim)
                    .map(|i| {
                        let x0 = [center[0] + i as f64 - dim as f64 / 2.0, center[1]];
                        let phase = -2.0 * PI * (x0[0] * xi[0] + x0[1] * xi[1]);
                        Complex64::from_polar(gauss, phase)
                    })
                    .collect();
                red_atoms.push(FrequencyAtom { xi, amplitude });
            }
        }
        let phi = make_wave(domain.clone(), Color::Red, 0, dim, red_atoms)?.normalized();
        let v = product_lp_grid(&phi, &psi, &q, p, g, slices);
        log_x.push(s.ln());
        log_y.push(v.ln());
    }
    fit_slope(&log_x, &log_y)
}

/// L^1 norm of the level-j quilt of a table against |psi| over the table's
/// cube, by midpoint quadrature on the given grid.
pub fn quilt_bilinear_l1(
    table: &WaveTable,
    psi: &Wave,
    j: u32,
    g: usize,
    slices: usize,
) -> Result<f64> {
    let domain = &psi.domain;
    let n = domain.n;
    let l = domain.period;
    let sampler = GridSampler::new(g);
    let cellvol = sampler.cell_volume(l, n);
    let (t0, t1) = table.cube.lifespan();
    let dt = (t1 - t0) / slices as f64;
    if j > table.depth {
        return Err(ConewaveError::InvalidParameter(format!(
            "quilt level {j} exceeds table depth {}",
            table.depth
        )));
    }
    let subs = table.cube.subcubes(table.depth);
    let ancestors: Vec<Option<usize>> = subs
        .iter()
        .map(|q| table.cube.subcube_index(j, &q.center, q.t))
        .collect();
    let mut total = 0.0;
    for s in 0..slices {
        let t = t0 + (s as f64 + 0.5) * dt;
        let b = sampler.sample_abs(psi, t);
        let fields: Vec<Vec<f64>> = table
            .components
            .par_iter()
            .map(|w| {
                let v = sampler.sample_abs(w, t);
                v.iter().map(|a| a * a).collect()
            })
            .collect();
        let terms: Vec<f64> = (0..b.len())
            .into_par_iter()
            .map(|flat| {
                let x = sampler.coords(flat, n, l);
                let Some(anc) = table.cube.subcube_index(j, &x, t) else {
                    return 0.0;
                };
                let mut sq = 0.0;
                for (ci, f) in fields.iter().enumerate() {
                    if ancestors[ci] == Some(anc) {
                        sq += f[flat];
                    }
                }
                sq.sqrt() * b[flat] * cellvol * dt
            })
            .collect();
        total += parallel_sum(&terms);
    }
    Ok(total)
}
