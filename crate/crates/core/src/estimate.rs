//! Fitting the two-group model from observed z-scores.
//!
//! A penalized normal-mixture EM supplies the components; components are
//! then split into null and alternative groups and renormalized into a
//! [`MarginalMixture`]. Also here: the Storey null-fraction estimator,
//! clamping of extreme p-values to z-scores, and Fisher's combination of a
//! discovery and a validation z-score.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{OmtError, Result};
use crate::locfdr::marginal_locfdr;
use crate::model::{std_normal_cdf, LN_SQRT_2PI, MarginalMixture, NormalComponent};
use crate::stream::{labels, StreamFactory};

/// Smallest component sd, relative to the sample sd.
const SD_FLOOR: f64 = 0.1;

/// Statistics beyond this magnitude are replaced by draws around it.
pub const Z_CLAMP: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub n_components: usize,
    /// Dirichlet pseudo-counts on the component weights. Defaults to one on
    /// the first (null) component and zero elsewhere.
    pub dirichlet_prior: Option<Vec<f64>>,
    pub max_iter: usize,
    /// Relative change in penalized log-likelihood that ends a run.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Keep the first component fixed at N(0, 1).
    pub pin_null: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_components: 2,
            dirichlet_prior: None,
            max_iter: 2000,
            tol: 1e-9,
            n_restarts: 5,
            seed: 0,
            pin_null: true,
        }
    }
}

impl EmConfig {
    pub fn with_components(n_components: usize) -> Self {
        Self {
            n_components,
            ..Self::default()
        }
    }

    /// Unpenalized fit.
    pub fn unpenalized(n_components: usize) -> Self {
        Self {
            dirichlet_prior: Some(vec![0.0; n_components]),
            ..Self::with_components(n_components)
        }
    }

    /// Pseudo-counts added to the weight update.
    pub fn pseudo_counts(&self) -> Vec<f64> {
        self.dirichlet_prior.clone().unwrap_or_else(|| {
            let mut p = vec![0.0; self.n_components];
            p[0] = 1.0;
            p
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.n_components < 2 {
            return Err(OmtError::InvalidInput("at least two mixture components are required".into()));
        }
        if n < 10 * self.n_components {
            return Err(OmtError::InvalidInput(format!(
                "{n} observations are too few for {} components",
                self.n_components
            )));
        }
        let prior = self.pseudo_counts();
        if prior.len() != self.n_components || prior.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(OmtError::InvalidInput(
                "Dirichlet pseudo-counts must be nonnegative, one per component".into(),
            ));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.n_restarts == 0 {
            return Err(OmtError::InvalidInput("invalid EM iteration settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMixture {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// `true` for components counted as null.
    pub null_assignment: Vec<bool>,
    pub pi_hat: f64,
    pub log_likelihood: f64,
    pub penalized_log_likelihood: f64,
    pub iterations: usize,
    pub degenerate_restarts: usize,
}

impl FittedMixture {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Null and alternative sub-mixtures, each renormalized.
    pub fn to_mixture(&self) -> Result<MarginalMixture> {
        let group = |null: bool| -> Vec<NormalComponent> {
            let idx: Vec<usize> = (0..self.weights.len())
                .filter(|&j| self.null_assignment[j] == null)
                .collect();
            let total: f64 = idx.iter().map(|&j| self.weights[j]).sum();
            idx.iter()
                .map(|&j| NormalComponent {
                    weight: if total > 0.0 {
                        self.weights[j] / total
                    } else {
                        1.0 / idx.len() as f64
                    },
                    mean: self.means[j],
                    sd: self.sds[j],
                })
                .collect()
        };
        let alt = group(false);
        if alt.is_empty() {
            return Err(OmtError::NoAlternative);
        }
        let null = group(true);
        if null.is_empty() {
            return Err(OmtError::FitFailed("no null components".into()));
        }
        MarginalMixture::new(self.pi_hat.clamp(0.0, 1.0), fix_weights(null), fix_weights(alt))
    }
}

/// Renormalizes so the weights sum to one to machine precision.
fn fix_weights(mut comps: Vec<NormalComponent>) -> Vec<NormalComponent> {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    let rest: f64 = comps[1..].iter().map(|c| c.weight).sum();
    comps[0].weight = 1.0 - rest;
    comps
}

struct Params {
    w: Vec<f64>,
    m: Vec<f64>,
    s: Vec<f64>,
}

struct RunResult {
    params: Params,
    ll: f64,
    pll: f64,
    iterations: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn penalty(w: &[f64], prior: &[f64]) -> f64 {
    w.iter()
        .zip(prior)
        .map(|(&wj, &a)| if a == 0.0 { 0.0 } else { a * wj.ln() })
        .sum()
}

/// One EM run; `None` when a component degenerates.
fn em_run(z: &[f64], init: Params, cfg: &EmConfig, prior: &[f64], scale: f64) -> Option<RunResult> {
    let n = z.len() as f64;
    let j_count = init.w.len();
    let prior_total: f64 = prior.iter().sum();
    let free_start = usize::from(cfg.pin_null);
    let mut p = init;
    let mut resp = vec![0.0; z.len() * j_count];
    let mut prev_pll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut pll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        // E-step, which also yields the log-likelihood of the current parameters
        let offset: Vec<f64> = (0..j_count)
            .map(|j| p.w[j].ln() - p.s[j].ln() - LN_SQRT_2PI)
            .collect();
        let inv_s: Vec<f64> = p.s.iter().map(|s| 1.0 / s).collect();
        ll = 0.0;
        for (i, &zi) in z.iter().enumerate() {
            let row = &mut resp[i * j_count..(i + 1) * j_count];
            let mut max = f64::NEG_INFINITY;
            for j in 0..j_count {
                let u = (zi - p.m[j]) * inv_s[j];
                row[j] = offset[j] - 0.5 * u * u;
                max = max.max(row[j]);
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
            ll += max + total.ln();
        }
        pll = ll + penalty(&p.w, prior);
        if !pll.is_finite() {
            return None;
        }
        if pll < prev_pll - 1e-9 * prev_pll.abs().max(1.0) {
            // EM cannot decrease the penalized likelihood; treat as numerical breakdown
            return None;
        }
        if it > 0 && (pll - prev_pll).abs() <= cfg.tol * pll.abs().max(1.0) {
            break;
        }
        prev_pll = pll;

        // M-step
        let mut mass = vec![0.0; j_count];
        let mut sum_z = vec![0.0; j_count];
        for (i, &zi) in z.iter().enumerate() {
            let row = &resp[i * j_count..(i + 1) * j_count];
            for j in 0..j_count {
                mass[j] += row[j];
                sum_z[j] += row[j] * zi;
            }
        }
        for j in 0..j_count {
            p.w[j] = (mass[j] + prior[j]) / (n + prior_total);
        }
        // a component with vanishing mass keeps its last location
        let active: Vec<bool> = mass.iter().map(|&m| m >= 1e-8 * n).collect();
        for j in free_start..j_count {
            if active[j] {
                p.m[j] = sum_z[j] / mass[j];
            }
        }
        let mut sum_sq = vec![0.0; j_count];
        for (i, &zi) in z.iter().enumerate() {
            let row = &resp[i * j_count..(i + 1) * j_count];
            for j in free_start..j_count {
                let d = zi - p.m[j];
                sum_sq[j] += row[j] * d * d;
            }
        }
        // clipping at the floor is the exact constrained maximizer, so EM stays monotone
        for j in (free_start..j_count).filter(|&j| active[j]) {
            let s = (sum_sq[j] / mass[j]).sqrt();
            if s.is_nan() {
                return None;
            }
            p.s[j] = s.max(SD_FLOOR * scale);
        }
    }
    Some(RunResult {
        params: p,
        ll,
        pll,
        iterations,
    })
}

/// Penalized maximum-likelihood normal mixture by EM with restarts.
pub fn fit_mixture(z: &[f64], cfg: &EmConfig) -> Result<FittedMixture> {
    cfg.validate(z.len())?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(OmtError::InvalidInput("z-scores must be finite".into()));
    }
    let prior = cfg.pseudo_counts();
    let j_count = cfg.n_components;
    let mut sorted = z.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-6);

    // the first component carries the null pseudo-counts, pinned or not
    let n_alt = j_count - 1;
    let base_means: Vec<f64> = (0..n_alt)
        .map(|j| quantile(&sorted, (j as f64 + 0.5) / n_alt as f64))
        .collect();
    let median = quantile(&sorted, 0.5);
    let robust_sd = ((quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.349).max(1e-3 * sd);
    let streams = StreamFactory::new(cfg.seed).derive(labels::RESTARTS);

    let runs: Vec<Option<RunResult>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.stream(r as u64);
            let mut m = Vec::with_capacity(j_count);
            let mut s = Vec::with_capacity(j_count);
            if cfg.pin_null {
                m.push(0.0);
                s.push(1.0);
            } else {
                m.push(median);
                s.push(robust_sd);
            }
            for &bm in &base_means {
                let (dm, ds): (f64, f64) = if r == 0 {
                    (0.0, 0.0)
                } else {
                    (rng.sample(StandardNormal), rng.sample(StandardNormal))
                };
                m.push(bm + 0.5 * sd * dm);
                s.push(sd * (0.2 * ds).exp());
            }
            // restarts also vary the initial non-null mass, since with a weak
            // prior EM creeps along flat directions of the likelihood
            let alt_mass = 0.5 * 0.2f64.powi((r % 4) as i32);
            let mut w = vec![alt_mass / n_alt as f64; j_count];
            w[0] = 1.0 - alt_mass;
            let init = Params {
                w,
                m,
                s,
            };
            em_run(z, init, cfg, &prior, sd)
        })
        .collect();

    let degenerate = runs.iter().filter(|r| r.is_none()).count();
    let best = runs
        .into_iter()
        .flatten()
        .fold(None::<RunResult>, |acc, r| match acc {
            Some(a) if a.pll >= r.pll => Some(a),
            _ => Some(r),
        })
        .ok_or_else(|| OmtError::FitFailed(format!("all {} EM restarts degenerated", cfg.n_restarts)))?;

    let p = best.params;
    let mut null_assignment: Vec<bool> = p.m.iter().map(|&m| m >= 0.0).collect();
    null_assignment[0] = true;
    let pi_hat = (0..j_count)
        .filter(|&j| !null_assignment[j])
        .fold(0.0, |acc, j| acc + p.w[j]);
    Ok(FittedMixture {
        weights: p.w,
        means: p.m,
        sds: p.s,
        null_assignment,
        pi_hat,
        log_likelihood: best.ll,
        penalized_log_likelihood: best.pll,
        iterations: best.iterations,
        degenerate_restarts: degenerate,
    })
}

/// Marginal locFDR under the fitted null and alternative sub-mixtures.
pub fn composite_locfdr(fit: &FittedMixture, z: f64) -> Result<f64> {
    marginal_locfdr(&fit.to_mixture()?, z)
}

/// Storey signal fraction `1 - #{p > lambda} / ((1 - lambda) K)`, clamped.
pub fn storey_pi(pvalues: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(OmtError::InvalidInput(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    if pvalues.is_empty() {
        return Err(OmtError::InvalidInput("no p-values".into()));
    }
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(OmtError::InvalidInput(format!("p-value {bad} outside [0, 1]")));
    }
    let above = pvalues.iter().filter(|&&p| p > lambda).count() as f64;
    let pi0 = (above / ((1.0 - lambda) * pvalues.len() as f64)).clamp(0.0, 1.0);
    Ok(1.0 - pi0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClampedZ {
    pub z: Vec<f64>,
    pub clamped: Vec<bool>,
}

impl ClampedZ {
    pub fn n_clamped(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }
}

/// `z = Phi^{-1}(p)`, except that p-values whose quantile lies beyond
/// `+-6` are replaced by draws from `N(+-6, 1)`.
pub fn clamp_zscores<R: Rng + ?Sized>(pvalues: &[f64], rng: &mut R) -> Result<ClampedZ> {
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(OmtError::InvalidInput(format!("p-value {bad} outside [0, 1]")));
    }
    let normal = Normal::standard();
    let lo = std_normal_cdf(-Z_CLAMP);
    let hi = std_normal_cdf(Z_CLAMP);
    let mut z = Vec::with_capacity(pvalues.len());
    let mut clamped = Vec::with_capacity(pvalues.len());
    for &p in pvalues {
        if p < lo || p > hi {
            let e: f64 = rng.sample(StandardNormal);
            z.push(if p < lo { -Z_CLAMP } else { Z_CLAMP } + e);
            clamped.push(true);
        } else {
            z.push(normal.inverse_cdf(p));
            clamped.push(false);
        }
    }
    Ok(ClampedZ { z, clamped })
}

/// Upper-tail chi-square(4) probability of `-2 ln Phi(zd) - 2 ln Phi(zv)`.
pub fn fisher_combine(z_discovery: f64, z_validation: f64) -> f64 {
    let pd = std_normal_cdf(z_discovery);
    let pv = std_normal_cdf(z_validation);
    if pd <= 0.0 || pv <= 0.0 {
        return 0.0;
    }
    let x = -2.0 * pd.ln() - 2.0 * pv.ln();
    // chi-square with 4 degrees of freedom: P(X > x) = exp(-x/2) (1 + x/2)
    ((-0.5 * x).exp() * (1.0 + 0.5 * x)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{State, TwoGroupModel};

    fn draw(pi: f64, theta: f64, n: usize, seed: u64) -> Vec<f64> {
        let model = TwoGroupModel::independent(n, MarginalMixture::standard(pi, theta).unwrap()).unwrap();
        model.sample(&mut StreamFactory::new(seed).stream(0)).z
    }

    #[test]
    fn storey_examples() {
        let mut p = vec![0.5; 97];
        p.extend([0.01, 0.02, 0.03]);
        assert_eq!(storey_pi(&p, 0.05).unwrap(), 0.0);
        assert_eq!(storey_pi(&[0.0; 10], 0.05).unwrap(), 1.0);
        let mut rng = StreamFactory::new(1).stream(0);
        let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        assert!(storey_pi(&u, 0.05).unwrap() < 0.02);
    }

    #[test]
    fn storey_duplication_invariant() {
        let p = [0.01, 0.3, 0.04, 0.7, 0.9, 0.02, 0.5];
        let doubled: Vec<f64> = p.iter().chain(p.iter()).copied().collect();
        assert_eq!(storey_pi(&p, 0.05).unwrap(), storey_pi(&doubled, 0.05).unwrap());
    }

    #[test]
    fn clamp_examples() {
        let mut rng = StreamFactory::new(2).stream(0);
        let c = clamp_zscores(&[0.5, 0.975, 1e-300, 0.0, 1.0], &mut rng).unwrap();
        assert!(c.z[0].abs() < 1e-12);
        assert!((c.z[1] - 1.959_963_985).abs() < 1e-6);
        assert_eq!(c.clamped, vec![false, false, true, true, true]);
        assert!(c.z[2] < -1.0 && c.z[3] < -1.0 && c.z[4] > 1.0);
        assert_eq!(c.n_clamped(), 3);
    }

    #[test]
    fn fisher_examples() {
        assert!((fisher_combine(0.0, 0.0) - 0.5966).abs() < 1e-4);
        assert_eq!(fisher_combine(-40.0, 0.3), 0.0);
        assert!(fisher_combine(-8.0, 0.0) < 1e-12);
        assert_eq!(fisher_combine(-1.2, 0.7), fisher_combine(0.7, -1.2));
    }

    #[test]
    fn em_recovers_two_group() {
        let z = draw(0.3, -2.0, 100_000, 3);
        let fit = fit_mixture(&z, &EmConfig::default()).unwrap();
        assert!((fit.pi_hat - 0.3).abs() < 0.02, "pi_hat {}", fit.pi_hat);
        assert!((fit.means[1] + 2.0).abs() < 0.05, "theta {}", fit.means[1]);
        assert_eq!(fit.null_assignment, vec![true, false]);
    }

    #[test]
    fn heavier_null_prior_shrinks_pi() {
        let z = draw(0.3, -2.0, 5_000, 7);
        let light = fit_mixture(&z, &EmConfig::default()).unwrap();
        let heavy = EmConfig {
            dirichlet_prior: Some(vec![1_000.0, 0.0]),
            ..EmConfig::default()
        };
        assert!(fit_mixture(&z, &heavy).unwrap().pi_hat < light.pi_hat);
        assert_eq!(EmConfig::default().pseudo_counts(), vec![1.0, 0.0]);
    }

    #[test]
    fn em_null_data_gives_small_pi() {
        for seed in [4, 5, 6] {
            let z = draw(0.0, -2.0, 100_000, seed);
            let fit = fit_mixture(&z, &EmConfig::default()).unwrap();
            assert!(fit.pi_hat < 0.02, "pi_hat {}", fit.pi_hat);
        }
    }

    #[test]
    fn em_is_order_free() {
        let z = draw(0.3, -2.0, 2_000, 5);
        let mut rev = z.clone();
        rev.reverse();
        let a = fit_mixture(&z, &EmConfig::default()).unwrap();
        let b = fit_mixture(&rev, &EmConfig::default()).unwrap();
        assert!((a.pi_hat - b.pi_hat).abs() < 1e-6);
        assert!((a.means[1] - b.means[1]).abs() < 1e-5);
    }

    #[test]
    fn em_rejects_tiny_inputs() {
        assert!(fit_mixture(&[0.1; 5], &EmConfig::default()).is_err());
    }

    #[test]
    fn composite_posterior_mean_identity() {
        let z = draw(0.2, -2.5, 5_000, 6);
        let fit = fit_mixture(&z, &EmConfig::with_components(3)).unwrap();
        let mix = fit.to_mixture().unwrap();
        let (lo, hi, n) = (-20.0, 20.0, 400_001);
        let h = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let x = lo + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * h * mix.ln_density(x, State::Mixed).exp() * composite_locfdr(&fit, x).unwrap();
        }
        assert!((total - (1.0 - fit.pi_hat)).abs() < 1e-6);
    }

    #[test]
    fn composite_edge_cases() {
        let fit = FittedMixture {
            weights: vec![0.8, 0.2],
            means: vec![0.0, -3.0],
            sds: vec![1.0, 1.0],
            null_assignment: vec![true, false],
            pi_hat: 0.2,
            log_likelihood: 0.0,
            penalized_log_likelihood: 0.0,
            iterations: 0,
            degenerate_restarts: 0,
        };
        assert!(composite_locfdr(&fit, -6.0).unwrap() < 0.5);
        let zero = FittedMixture {
            weights: vec![1.0, 0.0],
            pi_hat: 0.0,
            ..fit.clone()
        };
        assert_eq!(composite_locfdr(&zero, -3.0).unwrap(), 1.0);
        let none = FittedMixture {
            null_assignment: vec![true, true],
            ..fit
        };
        assert!(matches!(composite_locfdr(&none, 0.0), Err(OmtError::NoAlternative)));
    }
}
