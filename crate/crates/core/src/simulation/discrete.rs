//! Brute-force conditional expectations on a finite joint law, used to check
//! that the restricted components `P_s f` sum back to `f`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::PatternMask;

/// Strictly positive pmf over a grid of `sizes[0] × … × sizes[M−1]` points,
/// with variable 0 varying slowest.
#[derive(Debug, Clone)]
pub struct DiscreteLaw {
    sizes: Vec<usize>,
    pmf: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(sizes: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        let n: usize = sizes.iter().product();
        if sizes.is_empty() || n == 0 || pmf.len() != n {
            return Err(Error::InvalidConfig(format!("pmf has {} cells for sizes {sizes:?}", pmf.len())));
        }
        if pmf.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidConfig("pmf entries must be positive".into()));
        }
        let total: f64 = pmf.iter().sum();
        Ok(Self { sizes, pmf: pmf.into_iter().map(|p| p / total).collect() })
    }

    /// Random law with `2..=max_support` points per variable.
    pub fn random<R: Rng>(width: usize, max_support: usize, rng: &mut R) -> Result<Self> {
        let sizes: Vec<usize> = (0..width).map(|_| rng.random_range(2..=max_support.max(2))).collect();
        let n: usize = sizes.iter().product();
        let pmf = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
        Self::new(sizes, pmf)
    }

    pub fn width(&self) -> usize {
        self.sizes.len()
    }

    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.sizes.len()];
        for (k, &n) in self.sizes.iter().enumerate().rev() {
            c[k] = idx % n;
            idx /= n;
        }
        c
    }

    /// `E[f | Z_s]` at every grid point. The empty pattern maps to zero.
    pub fn conditional_expectation(&self, f: &[f64], s: PatternMask) -> Vec<f64> {
        if s.bits() == 0 {
            return vec![0.0; f.len()];
        }
        let key = |i: usize| -> Vec<usize> {
            let c = self.coords(i);
            s.modalities().map(|m| c[m]).collect()
        };
        let mut groups: std::collections::HashMap<Vec<usize>, (f64, f64)> = std::collections::HashMap::new();
        for i in 0..self.len() {
            let g = groups.entry(key(i)).or_default();
            g.0 += self.pmf[i] * f[i];
            g.1 += self.pmf[i];
        }
        (0..self.len())
            .map(|i| {
                let (num, den) = groups[&key(i)];
                num / den
            })
            .collect()
    }
}

/// `P_s f = Σ_{r∈Q, r⊆s} (−1)^{|s|−|r|} A_r f` for every nonempty `s`.
pub fn ray_components(law: &DiscreteLaw, f: &[f64], q: &[PatternMask]) -> Result<Vec<(PatternMask, Vec<f64>)>> {
    let w = law.width();
    let full = PatternMask::full(w)?;
    if !q.contains(&full) {
        return Err(Error::MissingFullPattern);
    }
    let projected: Vec<(PatternMask, Vec<f64>)> = q.iter().map(|&r| (r, law.conditional_expectation(f, r))).collect();
    (1..(1u16 << w))
        .map(|b| {
            let s = PatternMask::new(b, w)?;
            let mut out = vec![0.0; f.len()];
            for (r, a) in &projected {
                if r.is_subset_of(s) {
                    let sg = if (s.count() - r.count()) % 2 == 0 { 1.0 } else { -1.0 };
                    for (o, v) in out.iter_mut().zip(a) {
                        *o += sg * v;
                    }
                }
            }
            Ok((s, out))
        })
        .collect()
}

/// `max_z |Σ_s P_s f(z) − f(z)|`.
pub fn decomposition_error(law: &DiscreteLaw, f: &[f64], q: &[PatternMask]) -> Result<f64> {
    let comps = ray_components(law, f, q)?;
    Ok((0..f.len())
        .map(|i| (comps.iter().map(|(_, c)| c[i]).sum::<f64>() - f[i]).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn conditional_expectation_by_hand() {
        // Two binary variables, pmf [[.1, .3], [.2, .4]].
        let law = DiscreteLaw::new(vec![2, 2], vec![0.1, 0.3, 0.2, 0.4]).unwrap();
        let f = [1.0, 2.0, 3.0, 4.0];
        let e = law.conditional_expectation(&f, "10".parse().unwrap());
        assert!((e[0] - 1.75).abs() < 1e-15 && (e[1] - 1.75).abs() < 1e-15);
        assert!((e[2] - 11.0 / 3.0).abs() < 1e-15);
        let e = law.conditional_expectation(&f, "11".parse().unwrap());
        assert!(e.iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn components_sum_to_f() {
        let mut rng = seed::rng(3, &[]);
        let law = DiscreteLaw::random(3, 4, &mut rng).unwrap();
        let q: Vec<PatternMask> = ["111", "110", "011", "100"].iter().map(|s| s.parse().unwrap()).collect();
        let f: Vec<f64> = (0..law.len()).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        assert!(decomposition_error(&law, &f, &q).unwrap() < 1e-12);
    }

    #[test]
    fn full_pattern_is_required() {
        let law = DiscreteLaw::new(vec![2, 2], vec![1.0; 4]).unwrap();
        let q = vec!["10".parse().unwrap()];
        assert!(matches!(decomposition_error(&law, &[0.0; 4], &q), Err(Error::MissingFullPattern)));
    }
}
