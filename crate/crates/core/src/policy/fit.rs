//! Least-squares fit of the deviation curve E = beta1 exp(-E_cp / beta2).

use serde::{Deserialize, Serialize};

use super::UtilityParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    /// Compute energy spent in the round, J.
    pub compute_energy: f64,
    /// Deviation factor observed after aggregation.
    pub deviation: f64,
}

/// How the fitted curve is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Always the least-squares exponential.
    LeastSquares,
    /// The exponential only if it beats the flat curve (beta2 at its upper
    /// bound) on the Bayesian information criterion.
    #[default]
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub beta1: (f64, f64),
    pub beta2: (f64, f64),
    pub selection: Selection,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            beta1: (1e-6, 1.0),
            beta2: (1e-4, 1e3),
            selection: Selection::Bic,
        }
    }
}

impl FitConfig {
    fn clamp(&self, beta1: f64, beta2: f64) -> (f64, f64) {
        (beta1.clamp(self.beta1.0, self.beta1.1), beta2.clamp(self.beta2.0, self.beta2.1))
    }
}

const USABLE_DEVIATION: f64 = 1e-6;
const LM_ITERATIONS: usize = 100;

fn sse(samples: &[FitSample], beta1: f64, r: f64) -> f64 {
    samples
        .iter()
        .map(|s| {
            let e = s.deviation - beta1 * (-r * s.compute_energy).exp();
            e * e
        })
        .sum()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Fit (beta1, beta2) to the history, keeping `varrho` as given.
///
/// Starts from a log-linear regression on samples with non-negligible
/// deviation, then refines with Levenberg-Marquardt in (beta1, 1 / beta2) on
/// the squared error of all samples. With fewer than two usable samples, or
/// no spread in energy, falls back to beta1 = 1 and beta2 = median energy.
/// Under [`Selection::Bic`] a flat curve replaces the exponential when the
/// decay does not pay for its extra parameter.
pub fn fit_betas(samples: &[FitSample], varrho: f64, bounds: &FitConfig) -> UtilityParams {
    let finish = |b1: f64, b2: f64| {
        let (beta1, beta2) = bounds.clamp(b1, b2);
        UtilityParams { beta1, beta2, varrho }
    };
    let fallback = || {
        let med = median(samples.iter().map(|s| s.compute_energy).collect()).unwrap_or(1.0);
        finish(1.0, if med > 0.0 { med } else { 1.0 })
    };

    let usable: Vec<&FitSample> = samples
        .iter()
        .filter(|s| s.deviation > USABLE_DEVIATION && s.compute_energy.is_finite())
        .collect();
    if usable.len() < 2 {
        return fallback();
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|s| s.compute_energy).sum::<f64>() / n;
    let my = usable.iter().map(|s| s.deviation.ln()).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|s| (s.compute_energy - mx).powi(2)).sum();
    if !(sxx > 1e-24 * (1.0 + mx * mx)) {
        return fallback();
    }
    let sxy: f64 = usable
        .iter()
        .map(|s| (s.compute_energy - mx) * (s.deviation.ln() - my))
        .sum();
    let slope = sxy / sxx;
    let (b1_0, b2_0) = bounds.clamp((my - slope * mx).exp(), if slope < 0.0 { -1.0 / slope } else { bounds.beta2.1 });

    let (r_lo, r_hi) = (1.0 / bounds.beta2.1, 1.0 / bounds.beta2.0);
    let mut b1 = b1_0;
    let mut r = 1.0 / b2_0;
    let mut cost = sse(samples, b1, r);
    let mut lambda = 1e-3;
    for _ in 0..LM_ITERATIONS {
        // normal equations of the linearized residuals
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in samples {
            let ex = (-r * s.compute_energy).exp();
            let res = s.deviation - b1 * ex;
            let j1 = ex;
            let j2 = -b1 * s.compute_energy * ex;
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * res;
            g2 += j2 * res;
        }
        let mut improved = false;
        for _ in 0..20 {
            let d11 = a11 * (1.0 + lambda) + 1e-300;
            let d22 = a22 * (1.0 + lambda) + 1e-300;
            let det = d11 * d22 - a12 * a12;
            if !(det.abs() > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let step1 = (d22 * g1 - a12 * g2) / det;
            let step2 = (d11 * g2 - a12 * g1) / det;
            let nb1 = (b1 + step1).clamp(bounds.beta1.0, bounds.beta1.1);
            let nr = (r + step2).clamp(r_lo, r_hi);
            let nc = sse(samples, nb1, nr);
            if nc < cost {
                let rel = (cost - nc) / cost.max(f64::MIN_POSITIVE);
                b1 = nb1;
                r = nr;
                cost = nc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if bounds.selection == Selection::Bic {
        // flat curve: beta2 pinned at its upper bound, beta1 by least squares
        let r_flat = r_lo;
        let (num, den) = samples.iter().fold((0.0, 0.0), |(a, b), s| {
            let ex = (-r_flat * s.compute_energy).exp();
            (a + s.deviation * ex, b + ex * ex)
        });
        let b1_flat = (num / den).clamp(bounds.beta1.0, bounds.beta1.1);
        let n = samples.len() as f64;
        let bic = |sse: f64, k: f64| n * (sse / n).max(1e-300).ln() + k * n.ln();
        if bic(sse(samples, b1_flat, r_flat), 1.0) <= bic(cost, 2.0) {
            return finish(b1_flat, 1.0 / r_flat);
        }
    }
    finish(b1, 1.0 / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn synth(beta1: f64, beta2: f64, energies: &[f64]) -> Vec<FitSample> {
        energies
            .iter()
            .map(|&e| FitSample {
                compute_energy: e,
                deviation: beta1 * (-e / beta2).exp(),
            })
            .collect()
    }

    #[test]
    fn recovers_exact_curve() {
        let s = synth(0.8, 0.05, &[0.01, 0.03, 0.05, 0.08, 0.12]);
        let p = fit_betas(&s, 0.5, &FitConfig::default());
        assert_relative_eq!(p.beta1, 0.8, max_relative = 1e-6);
        assert_relative_eq!(p.beta2, 0.05, max_relative = 1e-6);
        assert_eq!(p.varrho, 0.5);
    }

    #[test]
    fn refinement_does_not_worsen_log_fit() {
        // noisy data with one tiny deviation that the log fit overweights
        let s = vec![
            FitSample { compute_energy: 0.02, deviation: 0.6 },
            FitSample { compute_energy: 0.04, deviation: 0.45 },
            FitSample { compute_energy: 0.06, deviation: 0.20 },
            FitSample { compute_energy: 0.08, deviation: 0.002 },
        ];
        let ls = FitConfig {
            selection: Selection::LeastSquares,
            beta1: (1e-6, 10.0),
            ..FitConfig::default()
        };
        let p = fit_betas(&s, 0.5, &ls);
        let fitted = sse(&s, p.beta1, 1.0 / p.beta2);
        // grid search as an independent check on the optimum
        let mut best = f64::INFINITY;
        for i in 1..=400 {
            for k in 1..=400 {
                let b1 = 2.0 * i as f64 / 400.0;
                let b2 = 0.2 * k as f64 / 400.0;
                best = best.min(sse(&s, b1, 1.0 / b2));
            }
        }
        assert!(fitted <= best * (1.0 + 1e-6) + 1e-12, "{fitted} vs grid {best}");
    }

    #[test]
    fn bic_prefers_flat_curve_for_noise() {
        // deviation unrelated to energy: the decay is not worth a parameter
        let dev = [0.31, 0.29, 0.30, 0.32, 0.28, 0.30, 0.31, 0.29];
        let s: Vec<FitSample> = dev
            .iter()
            .enumerate()
            .map(|(i, &d)| FitSample { compute_energy: 0.043 + 0.0017 * i as f64, deviation: d })
            .collect();
        let p = fit_betas(&s, 0.5, &FitConfig::default());
        assert_eq!(p.beta2, 1e3);
        assert_relative_eq!(p.beta1, 0.3, max_relative = 1e-3);
        // a real decay survives selection
        let q = fit_betas(&synth(0.8, 0.05, &[0.01, 0.03, 0.05, 0.08, 0.12]), 0.5, &FitConfig::default());
        assert_relative_eq!(q.beta2, 0.05, max_relative = 1e-6);
    }

    #[test]
    fn too_few_samples_fall_back() {
        let b = FitConfig::default();
        let empty = fit_betas(&[], 0.5, &b);
        assert_eq!((empty.beta1, empty.beta2), (1.0, 1.0));
        let one = fit_betas(&synth(0.5, 0.1, &[0.04]), 0.5, &b);
        assert_eq!((one.beta1, one.beta2), (1.0, 0.04));
        let same = fit_betas(&synth(0.5, 0.1, &[0.04, 0.04, 0.04]), 0.5, &b);
        assert_eq!((same.beta1, same.beta2), (1.0, 0.04));
    }

    #[test]
    fn zero_deviations_are_not_usable() {
        let s = vec![
            FitSample { compute_energy: 0.02, deviation: 0.0 },
            FitSample { compute_energy: 0.05, deviation: 0.3 },
        ];
        let p = fit_betas(&s, 0.5, &FitConfig::default());
        assert_eq!(p.beta1, 1.0);
        assert_relative_eq!(p.beta2, 0.035);
    }

    #[test]
    fn results_stay_in_bounds() {
        let bounds = FitConfig {
            beta1: (0.1, 2.0),
            beta2: (0.01, 0.1),
            selection: Selection::LeastSquares,
        };
        // increasing deviation would need a negative beta2
        let s = vec![
            FitSample { compute_energy: 0.01, deviation: 0.1 },
            FitSample { compute_energy: 0.02, deviation: 0.5 },
            FitSample { compute_energy: 0.03, deviation: 0.9 },
        ];
        let p = fit_betas(&s, 0.5, &bounds);
        assert!((0.1..=2.0).contains(&p.beta1));
        assert!((0.01..=0.1).contains(&p.beta2));
    }
}
