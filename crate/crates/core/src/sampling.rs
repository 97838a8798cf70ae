use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use crate::wave::Wave;

/// Neumaier compensated sum; partition-independent to ~1e-16 relative when
/// combined with the fixed chunking below.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Deterministic parallel sum: fixed-size chunks are compensated-summed in
/// parallel and the chunk results combined in index order.
pub fn parallel_sum(values: &[f64]) -> f64 {
    const CHUNK: usize = 1 << 14;
    if values.len() <= CHUNK {
        return compensated_sum(values);
    }
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(compensated_sum)
        .collect();
    compensated_sum(&partials)
}

/// Unnormalized inverse DFT along every axis of a g^n array:
/// `out[j] = sum_m data[m] e^{2 pi i j.m / g}`.
pub fn ndfft_inverse(data: &mut [Complex64], g: usize, n: usize) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_inverse(g);
    let total = data.len();
    debug_assert_eq!(total, g.pow(n as u32));
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..n {
        let stride = g.pow((n - 1 - axis) as u32);
        if stride == 1 {
            for line in data.chunks_exact_mut(g) {
                fft.process_with_scratch(line, &mut scratch);
            }
        } else {
            let mut line = vec![Complex64::new(0.0, 0.0); g];
            let block = stride * g;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    for j in 0..g {
                        line[j] = data[base + off + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for j in 0..g {
                        data[base + off + j * stride] = line[j];
                    }
                }
            }
        }
    }
}

/// Forward DFT along every axis, normalized so that it inverts
/// `ndfft_inverse`: `out[m] = g^-n sum_j data[j] e^{-2 pi i j.m / g}`.
pub fn ndfft_forward(data: &mut [Complex64], g: usize, n: usize) {
    for v in data.iter_mut() {
        *v = v.conj();
    }
    ndfft_inverse(data, g, n);
    let scale = 1.0 / (g.pow(n as u32) as f64);
    for v in data.iter_mut() {
        *v = v.conj() * scale;
    }
}

/// Samples lattice waves on uniform spatial grids.  Placing atom index `m`
/// in bin `m mod g` gives exact values at the grid points for any `g`.
#[derive(Debug, Clone, Copy)]
pub struct GridSampler {
    pub g: usize,
}

impl GridSampler {
    pub fn new(g: usize) -> GridSampler {
        GridSampler { g }
    }

    pub fn cell_volume(&self, wave_period: f64, n: usize) -> f64 {
        (wave_period / self.g as f64).powi(n as i32)
    }

    /// Spatial coordinate of flat grid index along each axis.
    pub fn coords(&self, flat: usize, n: usize, period: f64) -> Vec<f64> {
        let mut idx = flat;
        let mut out = vec![0.0; n];
        for axis in (0..n).rev() {
            out[axis] = (idx % self.g) as f64 * period / self.g as f64;
            idx /= self.g;
        }
        out
    }

    /// Exact samples of one Hilbert component at a fixed time over the grid
    /// {j period / g}.
    pub fn sample_component(&self, wave: &Wave, component: usize, t: f64) -> Vec<Complex64> {
        let g = self.g;
        let n = wave.domain.n;
        let mut spec = vec![Complex64::new(0.0, 0.0); g.pow(n as u32)];
        let sign = wave.color.time_sign();
        for atom in &wave.atoms {
            let idx = wave
                .domain
                .lattice_index(&atom.xi)
                .expect("wave atoms are lattice-constrained");
            let mut flat = 0usize;
            for &m in &idx {
                let b = m.rem_euclid(g as i64) as usize;
                flat = flat * g + b;
            }
            let phase = 2.0 * std::f64::consts::PI * sign * t * atom.xi_norm();
            spec[flat] += atom.amplitude[component] * Complex64::from_polar(1.0, phase);
        }
        ndfft_inverse(&mut spec, g, n);
        spec
    }

    /// Pointwise Hilbert-space magnitude |phi(x, t)| over the grid.
    pub fn sample_abs(&self, wave: &Wave, t: f64) -> Vec<f64> {
        let g = self.g;
        let n = wave.domain.n;
        let mut acc = vec![0.0f64; g.pow(n as u32)];
        for h in 0..wave.hilbert_dim {
            let comp = self.sample_component(wave, h, t);
            for (a, c) in acc.iter_mut().zip(comp.iter()) {
                *a += c.norm_sqr();
            }
        }
        for a in &mut acc {
            *a = a.sqrt();
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TorusDomain;
    use crate::wave::{make_wave, Color, FrequencyAtom};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_samples_match_direct_evaluation() {
        let d = TorusDomain::new(2, 16.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut atoms = Vec::new();
        for _ in 0..12 {
            loop {
                let m1 = rng.gen_range(16..32);
                let m2 = rng.gen_range(-6..6);
                let xi = vec![m1 as f64 / 16.0, m2 as f64 / 16.0];
                let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
                if (1.0..=2.0).contains(&r) && (xi[0] / r).acos() <= std::f64::consts::PI / 8.0 {
                    atoms.push(FrequencyAtom {
                        xi,
                        amplitude: vec![Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)],
                    });
                    break;
                }
            }
        }
        let w = make_wave(d, Color::Red, 0, 1, atoms).unwrap();
        let s = GridSampler::new(32);
        let t = 1.3;
        let grid = s.sample_component(&w, 0, t);
        let pts: Vec<(Vec<f64>, f64)> = (0..grid.len())
            .map(|flat| (s.coords(flat, 2, 16.0), t))
            .collect();
        let direct = w.evaluate(&pts);
        for (a, b) in grid.iter().zip(direct.iter()) {
            assert!((a - b[0]).norm() < 1e-10);
        }
    }

    #[test]
    fn compensated_sum_partition_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..100_000)
            .map(|_| (rng.gen::<f64>() - 0.5) * 1e6)
            .collect();
        let a = parallel_sum(&values);
        let b = compensated_sum(&values);
        assert!((a - b).abs() <= 1e-13 * b.abs().max(1.0));
    }
}
