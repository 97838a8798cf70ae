//! The acceptance suite: ten property and slope-window checks over the
//! whole toolkit, shared by the `acceptance` integration test target and
//! the `conewave accept` subcommand.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bilinear::{
    cone_energy_check, k_scaling_experiment, low_dispersion_l2_check, surface_convolution_oracle,
};
use crate::domain::TorusDomain;
use crate::error::Result;
use crate::experiment::{random_wave_family, FamilySpec};
use crate::geometry::{interior_set, x_set, Cube, Disk};
use crate::localization::{cutoff_report, huygens_report, LocalizeParams};
use crate::nullform::{
    apply_multiplier, check_exponent_conditions, lorentz_rescale, product_spectrum, toy_scan,
    ExponentTuple, MultiplierSymbol, Q,
};
use crate::packets::{bessel_check, tube_decompose, PacketParams};
use crate::sampling::GridSampler;
use crate::wave::{make_wave, Color, FrequencyAtom, Wave};

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run<F>(index: usize, name: &'static str, body: F) -> Criterion
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let start = Instant::now();
    let (passed, detail) = match body() {
        Ok(pair) => pair,
        Err(e) => (false, format!("error: {e}")),
    };
    Criterion {
        index,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn base_domain() -> TorusDomain {
    TorusDomain::new(2, 32.0, 128).unwrap()
}

fn snug_wave(domain: &TorusDomain, seed: u64, m: usize, k: u32) -> Wave {
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

fn concentrated_wave(domain: &TorusDomain, x0: &[f64], m_side: i64) -> Wave {
    use std::f64::consts::PI;
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

/// 1. Quadrature energy at random times equals the frequency-sum energy.
pub fn criterion_energy_conservation() -> Criterion {
    run(1, "energy conservation", || {
        let spec = FamilySpec {
            n: 2,
            period: 32.0,
            grid_points: 128,
            color: Color::Red,
            k: 0,
            count: 200,
            atoms: 6,
            min_margin: 0.0,
            max_dispersion: None,
            normalize: false,
        };
        let family = random_wave_family(&spec, 20260826)?;
        let domain = base_domain();
        let g = 128usize;
        let sampler = GridSampler::new(g);
        let cellvol = sampler.cell_volume(domain.period, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for w in &family {
            let e = w.energy();
            for _ in 0..3 {
                let t = rng.gen::<f64>() * 64.0 - 32.0;
                let a = sampler.sample_abs(w, t);
                let quad: f64 = a.iter().map(|v| v * v * cellvol).sum();
                worst = worst.max((quad - e).abs() / e);
            }
        }
        Ok((worst <= 1e-10, format!("max relative energy error {worst:.3e}")))
    })
}

/// 2. Packet decompositions reconstruct the wave to machine precision.
pub fn criterion_packet_reconstruction() -> Criterion {
    run(2, "packet reconstruction", || {
        let domain = base_domain();
        let mut worst = 0.0f64;
        for (&c, seed) in [0.05, 0.1, 0.2].iter().zip(40u64..) {
            for &side in &[4.0, 8.0, 16.0] {
                let w = snug_wave(&domain, seed, 25, 1);
                let q = Cube::new(vec![16.0, 16.0], 0.0, side)?;
                let decomp = tube_decompose(&w, &q, c, &PacketParams::default())?;
                worst = worst.max(decomp.reconstruction_residual());
            }
        }
        Ok((worst <= 1e-10, format!("max reconstruction residual {worst:.3e}")))
    })
}

/// 3. Bessel ratios stay below 1 + 10c for stochastic assignments.
pub fn criterion_bessel() -> Criterion {
    run(3, "bessel constant", || {
        let domain = base_domain();
        let mut detail = String::new();
        let mut ok = true;
        for &c in &[0.05, 0.1] {
            let w = snug_wave(&domain, 51, 30, 0);
            let q = Cube::new(vec![16.0, 16.0], 0.0, 8.0)?;
            let decomp = tube_decompose(&w, &q, c, &PacketParams::default())?;
            let n_t = decomp.packets.len();
            let mut rng = ChaCha8Rng::seed_from_u64(52);
            let mut worst = 0.0f64;
            for trial in 0..50 {
                let rows = 4;
                let mut assignment = vec![vec![0.0; n_t]; rows];
                for t in 0..n_t {
                    if trial % 2 == 0 {
                        assignment[rng.gen_range(0..rows)][t] = 1.0;
                    } else {
                        let ws: Vec<f64> = (0..rows).map(|_| rng.gen::<f64>() + 0.01).collect();
                        let total: f64 = ws.iter().sum();
                        for (r, v) in ws.iter().enumerate() {
                            assignment[r][t] = v / total;
                        }
                    }
                }
                worst = worst.max(bessel_check(&decomp, &assignment)?);
            }
            ok &= worst <= 1.0 + 10.0 * c;
            detail.push_str(&format!("c={c}: worst ratio {worst:.4} (cap {}); ", 1.0 + 10.0 * c));
        }
        Ok((ok, detail))
    })
}

/// 4. Low-dispersion bilinear L^2 slope window and surface-measure oracle.
pub fn criterion_mock_slope() -> Criterion {
    run(4, "low-dispersion bilinear slope", || {
        let domain = base_domain();
        let r_list = [4.0, 8.0, 16.0, 32.0];
        let (fit, _) = low_dispersion_l2_check(&domain, &r_list, 20, 424242, 64, 24)?;
        let slope_ok = (-0.8..=-0.2).contains(&fit.slope);
        let scaled: Vec<f64> = r_list
            .iter()
            .map(|&r| surface_convolution_oracle(r, 0, 0.0) * r)
            .collect();
        let hi = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let lo = scaled.iter().cloned().fold(f64::MAX, f64::min);
        let oracle_ok = hi / lo <= 4.0;
        Ok((
            slope_ok && oracle_ok,
            format!(
                "wave slope {:.3} (window [-0.8,-0.2]); oracle constancy spread {:.2} (cap 4)",
                fit.slope,
                hi / lo
            ),
        ))
    })
}

/// 5. Blue-cone energy growth slope stays below 0.8.
pub fn criterion_bluecone() -> Criterion {
    run(5, "cone energy slope", || {
        let spec = FamilySpec {
            n: 2,
            period: 64.0,
            grid_points: 256,
            color: Color::Red,
            k: 0,
            count: 20,
            atoms: 8,
            min_margin: 0.0,
            max_dispersion: None,
            normalize: true,
        };
        let family = random_wave_family(&spec, 6001)?;
        let mut worst = f64::MIN;
        for w in &family {
            // resolution = sample points per unit length; 1.0 keeps the
            // 64-side bounding cube affordable at still 8 cells across the
            // thinnest cone shell.
            let fit = cone_energy_check(w, &[32.0, 32.0], 0.0, &[8.0, 16.0, 32.0], 1.0)?;
            if !fit.skipped {
                worst = worst.max(fit.slope);
            }
        }
        Ok((worst <= 0.8, format!("max slope {worst:.3} (cap 0.8, target 0.5)")))
    })
}

/// 6. Extremizer k-scaling at the endpoint and at p = 2.
pub fn criterion_k_scaling() -> Criterion {
    run(6, "k-scaling slopes", || {
        let domain = base_domain();
        let p0 = 5.0 / 3.0;
        let eps = 0.1;
        let fit0 = k_scaling_experiment(&domain, &[0, 1, 2, 3, 4], p0, 128, 64)?;
        // Slope of log2(norm / 2^{k(1/p - 1/2 + eps)}) against k.
        let ratio_slope = fit0.slope - (1.0 / p0 - 0.5 + eps);
        let p0_ok = (ratio_slope + 0.1).abs() <= 0.15;
        let fit2 = k_scaling_experiment(&domain, &[1, 2, 3, 4], 2.0, 128, 64)?;
        let p2_ok = fit2.slope.abs() <= 0.08;
        Ok((
            p0_ok && p2_ok,
            format!(
                "p0 ratio slope {ratio_slope:.3} (window -0.1 +/- 0.15); p2 slope {:.3} (cap 0.08)",
                fit2.slope
            ),
        ))
    })
}

/// 7. Interior and X(Q) measure fractions.
pub fn criterion_averaging_geometry() -> Criterion {
    run(7, "averaging-lemma geometry", || {
        let n_desk = crate::localization::N_DESK;
        let cube = Cube::new(vec![16.0, 16.0], 0.0, 16.0)?;
        let samples = 100_000usize;
        let mut ok = true;
        let mut detail = String::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7007);
        for &c in &[0.02, 0.04, 0.06] {
            for &k in &[2u32, 3] {
                let xs = x_set(cube.clone(), c, 2, k, n_desk)?;
                let mut hits = 0usize;
                for _ in 0..samples {
                    let x = vec![
                        8.0 + rng.gen::<f64>() * 16.0,
                        8.0 + rng.gen::<f64>() * 16.0,
                    ];
                    let t = -8.0 + rng.gen::<f64>() * 16.0;
                    if xs.contains(&x, t) {
                        hits += 1;
                    }
                }
                let frac = hits as f64 / samples as f64;
                let floor = 1.0 - 4.0 * n_desk * c;
                ok &= frac >= floor;
                detail.push_str(&format!("X(c={c},k={k}): {frac:.4}>={floor:.3}; "));
            }
        }
        // Interior measure identity, exact and Monte-Carlo.
        let c = 0.1;
        let interior = interior_set(cube.clone(), c, 2)?;
        let exact = interior.measure_fraction();
        let formula = (1.0 - c).powi(3);
        ok &= (exact - formula).abs() < 1e-15;
        let mut hits = 0usize;
        for _ in 0..samples {
            let x = vec![8.0 + rng.gen::<f64>() * 16.0, 8.0 + rng.gen::<f64>() * 16.0];
            let t = -8.0 + rng.gen::<f64>() * 16.0;
            if interior.contains(&x, t) {
                hits += 1;
            }
        }
        let mc = hits as f64 / samples as f64;
        ok &= (mc - formula).abs() <= 0.01;
        detail.push_str(&format!("interior exact {exact:.6} vs (1-c)^3 {formula:.6}, MC {mc:.4}"));
        Ok((ok, detail))
    })
}

/// 8. Null-form operator algebra and the exponent checker arithmetic.
pub fn criterion_nullform_algebra() -> Criterion {
    run(8, "null-form algebra", || {
        let domain = base_domain();
        let mut ok = true;
        let mut detail = String::new();
        // |Box| = D+ D- atom-wise.
        let spec = product_spectrum(
            &snug_wave(&domain, 81, 8, 0),
            &snug_wave(&domain, 82, 8, 0).time_reverse(),
        )?;
        let one = Complex64::new(1.0, 0.0);
        let via_box = apply_multiplier(&spec, MultiplierSymbol::Box, one)?;
        let via_pair = apply_multiplier(
            &apply_multiplier(&spec, MultiplierSymbol::Dplus, one)?,
            MultiplierSymbol::Dminus,
            one,
        )?;
        let mut worst = 0.0f64;
        for (a, b) in via_box.atoms.iter().zip(&via_pair.atoms) {
            for (u, v) in a.amplitude.iter().zip(&b.amplitude) {
                worst = worst.max((u - v).norm() / (1.0 + u.norm()));
            }
        }
        ok &= worst <= 1e-12;
        detail.push_str(&format!("factorization residual {worst:.2e}; "));
        // Conformal commutation.
        let mut comm_worst = 0.0f64;
        for l in [1i64, 2] {
            let boxed = apply_multiplier(&spec, MultiplierSymbol::Box, one)?;
            let lhs = lorentz_rescale(&boxed, l)?;
            let rhs = apply_multiplier(&lorentz_rescale(&spec, l)?, MultiplierSymbol::Box, one)?;
            let factor = 2.0f64.powi(2 * l as i32);
            for (a, b) in lhs.atoms.iter().zip(&rhs.atoms) {
                for (u, v) in a.amplitude.iter().zip(&b.amplitude) {
                    comm_worst = comm_worst.max((u - factor * v).norm() / (1.0 + u.norm()));
                }
            }
        }
        ok &= comm_worst <= 1e-10;
        detail.push_str(&format!("commutation residual {comm_worst:.2e}; "));
        // Hand-computed exponent verdicts.
        let q = Q::new;
        let t1 = ExponentTuple {
            n: 2,
            p: q(5, 3),
            beta0: q(0, 1),
            beta_plus: q(1, 2),
            beta_minus: q(1, 2),
            alpha1: q(1, 2),
            alpha2: q(1, 2),
        };
        let r1 = check_exponent_conditions(&t1, true);
        ok &= r1.lin_threshold == q(1, 1) && !r1.lin;
        let t2 = ExponentTuple {
            n: 2,
            p: q(2, 1),
            beta0: q(0, 1),
            beta_plus: q(1, 2),
            beta_minus: q(1, 2),
            alpha1: q(3, 4),
            alpha2: q(3, 4),
        };
        let r2 = check_exponent_conditions(&t2, true);
        ok &= r2.lin_threshold == q(1, 2) && r2.beta_minus_threshold == q(1, 4) && r2.admissible;
        let mut t3 = t2.clone();
        t3.beta_plus = t3.beta_plus + Q::new(1, 1_000_000_000_000);
        ok &= !check_exponent_conditions(&t3, true).scaling;
        detail.push_str("exponent verdicts match hand arithmetic");
        Ok((ok, detail))
    })
}

/// 9. Frequency-localized multiplier scan stays bounded.
pub fn criterion_toy_scan() -> Criterion {
    run(9, "multiplier scan bound", || {
        let domain = base_domain();
        let rows = toy_scan(&domain, &[0, 1, 2], &[0, 1, 2], 0.5, 5.0 / 3.0, 0.1, 24, 6)?;
        let base = rows
            .iter()
            .find(|r| r.l == 0 && r.k == 0)
            .map(|r| r.ratio)
            .unwrap_or(f64::NAN);
        let worst = rows.iter().map(|r| r.ratio).fold(f64::MIN, f64::max);
        Ok((
            worst <= 8.0 * base,
            format!("worst ratio {worst:.3} vs 8x base {:.3}", 8.0 * base),
        ))
    })
}

/// 10. Disk localization and Huygens ratios.
pub fn criterion_localization() -> Criterion {
    run(10, "disk localization", || {
        let domain = base_domain();
        let params = LocalizeParams::default();
        let mut ok = true;
        let mut detail = String::new();
        for (&r, seed) in [8.0, 12.0].iter().zip(91u64..) {
            let w = snug_wave(&domain, seed, 20, 0);
            let disk = Disk::new(vec![16.0, 16.0], 0.0, r)?;
            let rep = cutoff_report(&w, &disk, &params)?;
            ok &= rep.energy_minor_ok;
            ok &= rep.local_energy_slack <= 1e-3 * rep.energy;
            detail.push_str(&format!(
                "r={r}: slack {:.2e} (cap {:.2e}); ",
                rep.local_energy_slack,
                1e-3 * rep.energy
            ));
        }
        let x0 = [16.0, 16.0];
        let phi = concentrated_wave(&domain, &x0, 5);
        let psi = snug_wave(&domain, 8, 6, 0).time_reverse();
        let disk = Disk::new(x0.to_vec(), 0.0, 16.0)?;
        let rep = huygens_report(&phi, &psi, &disk, 24.0, 2.0, 64, 9, &params)?;
        ok &= rep.finite_prop_ratio <= 0.05;
        ok &= rep.huygens_ratio <= 0.05;
        ok &= rep.redblue_ratio <= 0.05;
        detail.push_str(&format!(
            "huygens ratios {:.3}/{:.3}/{:.3} (cap 0.05)",
            rep.finite_prop_ratio, rep.huygens_ratio, rep.redblue_ratio
        ));
        Ok((ok, detail))
    })
}

/// Run all ten criteria in order.
pub fn run_all() -> Vec<Criterion> {
    vec![
        criterion_energy_conservation(),
        criterion_packet_reconstruction(),
        criterion_bessel(),
        criterion_mock_slope(),
        criterion_bluecone(),
        criterion_k_scaling(),
        criterion_averaging_geometry(),
        criterion_nullform_algebra(),
        criterion_toy_scan(),
        criterion_localization(),
    ]
}
