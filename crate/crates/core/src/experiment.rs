//! Deterministic random wave families and experiment plumbing shared by the
//! command-line runner and the acceptance suite.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::TorusDomain;
use crate::error::{ConewaveError, Result};
use crate::wave::{make_wave, Color, FrequencyAtom, Wave, SECTOR_ANGLE};

/// Declarative description of a random wave family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub n: usize,
    pub period: f64,
    pub grid_points: usize,
    pub color: Color,
    pub k: u32,
    /// Number of waves in the family.
    pub count: usize,
    /// Atoms per wave.
    pub atoms: usize,
    /// Scale-normalized margin floor.
    #[serde(default)]
    pub min_margin: f64,
    /// Optional cap on angular dispersion.
    #[serde(default)]
    pub max_dispersion: Option<f64>,
    /// Normalize each wave to unit energy.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_true() -> bool {
    true
}

/// Counter-based generator keyed by (seed, experiment, cell): parallel
/// determinism without shared state.
pub fn cell_rng(seed: u64, experiment: &str, cell: u64) -> ChaCha8Rng {
    let mut h = 0xcbf29ce484222325u64;
    for b in experiment.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h ^ cell.wrapping_mul(0x9e3779b97f4a7c15))
}

/// Draw a family of waves satisfying the declared sector, band, margin,
/// dispersion, and normalization constraints, deterministically per seed.
pub fn random_wave_family(spec: &FamilySpec, seed: u64) -> Result<Vec<Wave>> {
    let domain = TorusDomain::new(spec.n, spec.period, spec.grid_points)?;
    let s = 2.0f64.powi(spec.k as i32);
    let m = spec.min_margin;
    if m >= 0.45 {
        return Err(ConewaveError::InfeasibleSpec(format!(
            "margin floor {m} leaves no admissible band"
        )));
    }
    // Sampling windows that guarantee the margin by construction.
    let rho_lo = 1.0 + 1.1 * m + 0.05;
    let rho_hi = 2.0 - 1.1 * m - 0.05;
    let max_angle = SECTOR_ANGLE - 1.1 * m - 1e-3;
    if rho_lo >= rho_hi || max_angle <= 0.0 {
        return Err(ConewaveError::InfeasibleSpec(format!(
            "margin floor {m} is not realizable in the sector"
        )));
    }
    // Lattice angular resolution at the inner band edge.
    let angular_step = 1.0 / (s * spec.period);
    let disp_window = match spec.max_dispersion {
        Some(d) => {
            if d < 4.0 * angular_step {
                return Err(ConewaveError::InfeasibleSpec(format!(
                    "dispersion target {d} below lattice angular resolution {angular_step}"
                )));
            }
            d
        }
        None => 2.0 * max_angle,
    };
    let mut out = Vec::with_capacity(spec.count);
    for w_idx in 0..spec.count {
        let mut rng = cell_rng(seed, "family", w_idx as u64);
        let half = (disp_window / 2.0).min(max_angle);
        let theta_c = if half >= max_angle {
            0.0
        } else {
            rng.gen_range(-(max_angle - half)..(max_angle - half))
        };
        let mut atoms = Vec::new();
        let mut guard = 0usize;
        while atoms.len() < spec.atoms {
            guard += 1;
            if guard > 200_000 {
                return Err(ConewaveError::InfeasibleSpec(
                    "rejection sampling stalled; widen the band or loosen constraints".into(),
                ));
            }
            let lo = (rho_lo * s * spec.period) as i64;
            let hi = (rho_hi * s * spec.period) as i64 + 1;
            let m1 = rng.gen_range(lo..hi);
            let spread = (rho_hi * s * spec.period * max_angle.sin()) as i64 + 1;
            let m2 = rng.gen_range(-spread..=spread);
            let xi: Vec<f64> = if spec.n == 2 {
                vec![m1 as f64 / spec.period, m2 as f64 / spec.period]
            } else {
                let m3 = rng.gen_range(-spread..=spread);
                vec![
                    m1 as f64 / spec.period,
                    m2 as f64 / spec.period,
                    m3 as f64 / spec.period,
                ]
            };
            let rho = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(rho_lo * s..=rho_hi * s).contains(&rho) {
                continue;
            }
            let axis_angle = (xi[0] / rho).clamp(-1.0, 1.0).acos();
            if axis_angle > max_angle {
                continue;
            }
            if spec.n == 2 {
                let theta = xi[1].atan2(xi[0]);
                if (theta - theta_c).abs() > half {
                    continue;
                }
            } else if axis_angle > half {
                continue;
            }
            atoms.push(FrequencyAtom {
                xi,
                amplitude: vec![Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)],
            });
        }
        let wave = make_wave(domain.clone(), spec.color, spec.k, 1, atoms)?;
        let wave = if spec.normalize { wave.normalized() } else { wave };
        let have = wave.margin()?;
        if have < m - 1e-3 {
            return Err(ConewaveError::InfeasibleSpec(format!(
                "sampled wave margin {have} below floor {m}",
            )));
        }
        out.push(wave);
    }
    Ok(out)
}

/// One emitted experiment row: every row carries enough parameters to
/// recompute it in isolation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub params: Vec<(String, String)>,
    pub value: f64,
    pub err_est: f64,
    pub seed: u64,
}

impl ResultRow {
    /// CSV header shared by every experiment: parameters are flattened into
    /// a single `params` column of `key=value` pairs separated by spaces.
    pub fn csv_header() -> &'static str {
        "experiment,params,value,err_est,seed"
    }

    pub fn csv_line(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "{},{},{:.17e},{:.17e},{}",
            self.experiment, params, self.value, self.err_est, self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec() -> FamilySpec {
        FamilySpec {
            n: 2,
            period: 32.0,
            grid_points: 128,
            color: Color::Red,
            k: 0,
            count: 4,
            atoms: 8,
            min_margin: 0.0,
            max_dispersion: None,
            normalize: true,
        }
    }

    #[test]
    fn family_respects_the_margin_floor() {
        let mut spec = base_spec();
        spec.min_margin = 0.2;
        let family = random_wave_family(&spec, 7).unwrap();
        assert_eq!(family.len(), 4);
        for w in &family {
            assert!(w.margin().unwrap() >= 0.2 - 1e-3, "margin {}", w.margin().unwrap());
        }
    }

    #[test]
    fn family_is_energy_normalized() {
        let family = random_wave_family(&base_spec(), 8).unwrap();
        for w in &family {
            assert!((w.energy() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn family_is_deterministic_per_seed() {
        let a = random_wave_family(&base_spec(), 9).unwrap();
        let b = random_wave_family(&base_spec(), 9).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u.atoms.len(), v.atoms.len());
            for (p, q) in u.atoms.iter().zip(&v.atoms) {
                assert_eq!(p.xi, q.xi);
                assert_eq!(p.amplitude, q.amplitude);
            }
        }
        let c = random_wave_family(&base_spec(), 10).unwrap();
        assert!(a[0].atoms[0].xi != c[0].atoms[0].xi || a[0].atoms[0].amplitude != c[0].atoms[0].amplitude);
    }

    #[test]
    fn family_respects_a_dispersion_cap() {
        let mut spec = base_spec();
        spec.max_dispersion = Some(0.3);
        let family = random_wave_family(&spec, 11).unwrap();
        for w in &family {
            assert!(
                w.angular_dispersion().unwrap() <= 0.3 + 1e-9,
                "dispersion {}",
                w.angular_dispersion().unwrap()
            );
        }
    }

    #[test]
    fn infeasible_dispersion_is_rejected() {
        let mut spec = base_spec();
        spec.max_dispersion = Some(1e-4);
        match random_wave_family(&spec, 12) {
            Err(ConewaveError::InfeasibleSpec(_)) => {}
            other => panic!("expected InfeasibleSpec, got {other:?}"),
        }
    }

    #[test]
    fn cell_rng_separates_experiments_and_cells() {
        let mut a = cell_rng(5, "mock", 0);
        let mut b = cell_rng(5, "mock", 1);
        let mut c = cell_rng(5, "bluecone", 0);
        let (x, y, z): (u64, u64, u64) = (a.gen(), b.gen(), c.gen());
        assert!(x != y && x != z && y != z);
        let mut a2 = cell_rng(5, "mock", 0);
        assert_eq!(x, a2.gen::<u64>());
    }
}
