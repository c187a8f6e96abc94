//! OMT decision rules and baseline procedures.
//!
//! FDR and pFDR policies are step-down rules in sorted-locFDR order driven
//! by a scalar `mu`; mFDR policies threshold each locFDR at a common cutoff.
//! Both scalars are calibrated by Monte Carlo on a fixed set of model draws,
//! except for the mFDR cutoff under independence, which is found by
//! quadrature on the marginal law.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OmtError, Result};
use crate::locfdr::{locfdr_with_limit, marginal_locfdr, LocFdrVector, DEFAULT_MAX_BLOCK_SIZE};
use crate::model::{MarginalMixture, State, TwoGroupModel};
use crate::stream::StreamFactory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Fdr,
    Pfdr,
    Mfdr,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Fdr, Criterion::Pfdr, Criterion::Mfdr];

    /// Right-hand side of the linearized constraint.
    pub fn c_err(self, alpha: f64) -> f64 {
        match self {
            Criterion::Fdr => alpha,
            Criterion::Pfdr | Criterion::Mfdr => 0.0,
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Fdr => "FDR",
            Criterion::Pfdr => "pFDR",
            Criterion::Mfdr => "mFDR",
        })
    }
}

impl FromStr for Criterion {
    type Err = OmtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fdr" => Ok(Criterion::Fdr),
            "pfdr" => Ok(Criterion::Pfdr),
            "mfdr" => Ok(Criterion::Mfdr),
            _ => Err(OmtError::InvalidInput(format!("unknown criterion `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c_err: f64,
}

fn check_sorted(t_sorted: &[f64]) -> Result<()> {
    if let Some(i) = t_sorted.windows(2).position(|w| w[1] < w[0]) {
        return Err(OmtError::Unsorted(i + 1));
    }
    Ok(())
}

/// Fills `r` with `R_k = a_k - mu b_k`; shared by every step-down path so
/// that all of them agree bit for bit.
fn fill_scores(t_sorted: &[f64], mu: f64, alpha: f64, criterion: Criterion, r: &mut Vec<f64>) {
    r.clear();
    let mut sum = 0.0;
    for (idx, &t) in t_sorted.iter().enumerate() {
        let b = coefficient_b(idx, t, sum, alpha, criterion);
        r.push((1.0 - t) - mu * b);
        sum += t;
    }
}

#[inline]
fn coefficient_b(idx: usize, t: f64, prefix_sum: f64, alpha: f64, criterion: Criterion) -> f64 {
    if idx == 0 {
        match criterion {
            Criterion::Pfdr => t - alpha,
            _ => t,
        }
    } else {
        let k = (idx + 1) as f64;
        (t - prefix_sum / idx as f64) / k
    }
}

pub fn coefficients(t_sorted: &[f64], criterion: Criterion, alpha: f64) -> Result<CriterionCoefficients> {
    if criterion == Criterion::Mfdr {
        return Err(OmtError::InvalidInput(
            "mFDR policies are single-step and have no step-down coefficients".into(),
        ));
    }
    check_sorted(t_sorted)?;
    let mut b = Vec::with_capacity(t_sorted.len());
    let mut sum = 0.0;
    for (idx, &t) in t_sorted.iter().enumerate() {
        b.push(coefficient_b(idx, t, sum, alpha, criterion));
        sum += t;
    }
    Ok(CriterionCoefficients {
        a: t_sorted.iter().map(|t| 1.0 - t).collect(),
        b,
        c_err: criterion.c_err(alpha),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDownTrace {
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub d_sorted: Vec<bool>,
    pub d: Vec<bool>,
}

impl StepDownTrace {
    pub fn rejections(&self) -> usize {
        self.d_sorted.iter().take_while(|&&x| x).count()
    }
}

/// Number of leading rejections given the scores `R_k`.
fn stop_index(r: &[f64]) -> usize {
    let mut m = 0.0f64;
    let mut first_zero = r.len();
    for k in (0..r.len()).rev() {
        m = (m + r[k]).max(0.0);
        if m <= 0.0 {
            first_zero = k;
        }
    }
    first_zero
}

fn check_step_down(criterion: Criterion) {
    assert!(criterion != Criterion::Mfdr, "step-down rules apply to FDR and pFDR only");
}

/// O(K) step-down rule for a fixed `mu`.
pub fn step_down_decide(t: &LocFdrVector, mu: f64, alpha: f64, criterion: Criterion) -> StepDownTrace {
    check_step_down(criterion);
    let t_sorted = t.sorted();
    let k = t_sorted.len();
    let mut r = Vec::with_capacity(k);
    fill_scores(&t_sorted, mu, alpha, criterion, &mut r);
    let mut m = vec![0.0; k];
    let mut acc = 0.0f64;
    for j in (0..k).rev() {
        acc = (acc + r[j]).max(0.0);
        m[j] = acc;
    }
    let mut d_sorted = vec![false; k];
    for j in 0..k {
        if m[j] > 0.0 && (j == 0 || d_sorted[j - 1]) {
            d_sorted[j] = true;
        } else {
            break;
        }
    }
    let d = t.unsort(&d_sorted);
    StepDownTrace { r, m, d_sorted, d }
}

/// Literal O(K^2) evaluation of the rule: `D_i` requires `D_{i-1}` and some
/// partial sum `R_i + ... + R_l` to be positive.
pub fn step_down_decide_naive(t: &LocFdrVector, mu: f64, alpha: f64, criterion: Criterion) -> StepDownTrace {
    check_step_down(criterion);
    let t_sorted = t.sorted();
    let k = t_sorted.len();
    let coef = coefficients(&t_sorted, criterion, alpha).expect("sorted by construction");
    let r: Vec<f64> = coef.a.iter().zip(&coef.b).map(|(a, b)| a - mu * b).collect();
    let mut m = vec![0.0; k];
    let mut d_sorted = vec![false; k];
    for i in 0..k {
        let mut best = 0.0f64;
        let mut partial = 0.0;
        let mut any = false;
        for &x in &r[i..] {
            partial += x;
            if partial > 0.0 {
                any = true;
            }
            best = best.max(partial);
        }
        m[i] = best;
        d_sorted[i] = any && (i == 0 || d_sorted[i - 1]);
    }
    let d = t.unsort(&d_sorted);
    StepDownTrace { r, m, d_sorted, d }
}

/// Single-sample constraint integrand `sum_k D_k b_k`.
pub fn constraint_value(t_sorted: &[f64], d_sorted: &[bool], criterion: Criterion, alpha: f64) -> Result<f64> {
    check_sorted(t_sorted)?;
    if d_sorted.len() != t_sorted.len() {
        return Err(OmtError::LengthMismatch {
            expected: t_sorted.len(),
            got: d_sorted.len(),
        });
    }
    if let Some(i) = d_sorted.windows(2).position(|w| w[1] && !w[0]) {
        return Err(OmtError::InvalidInput(format!(
            "sorted decisions must be nonincreasing, violation at position {}",
            i + 1
        )));
    }
    let mut total = 0.0;
    let mut sum = 0.0;
    for (idx, (&t, &d)) in t_sorted.iter().zip(d_sorted).enumerate() {
        if !d {
            break;
        }
        total += coefficient_b(idx, t, sum, alpha, criterion);
        sum += t;
    }
    Ok(total)
}

/// Sorted locFDR vectors of model draws, reused across every candidate
/// scalar during calibration.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    sorted: Vec<Vec<f64>>,
    seed: Option<u64>,
}

impl CalibrationSet {
    /// Draws `n` samples from `sampling_model` (sample `j` on stream `j` of
    /// `streams`) and stores the sorted output of `statistic`.
    pub fn draw<F>(sampling_model: &TwoGroupModel, statistic: F, n: usize, streams: &StreamFactory) -> Result<Self>
    where
        F: Fn(&[f64]) -> Result<LocFdrVector> + Sync,
    {
        let sorted = (0..n)
            .into_par_iter()
            .map(|j| {
                let mut rng = streams.stream(j as u64);
                let s = sampling_model.sample(&mut rng);
                let mut t = statistic(&s.z)?.into_vec();
                t.sort_by(f64::total_cmp);
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sorted,
            seed: Some(streams.key()),
        })
    }

    /// Full locFDR of the model itself.
    pub fn for_model(model: &TwoGroupModel, opts: &CalibrationOptions) -> Result<Self> {
        let limit = opts.max_block_size;
        Self::draw(model, |z| locfdr_with_limit(model, z, limit), opts.n_cal, &StreamFactory::new(opts.seed))
    }

    pub fn from_sorted(sorted: Vec<Vec<f64>>) -> Result<Self> {
        for s in &sorted {
            check_sorted(s)?;
        }
        Ok(Self { sorted, seed: None })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.sorted
    }

    fn mean_se(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return (mean, 0.0);
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    /// Per-sample constraint values at `mu` (fixed sample order).
    fn step_down_values(&self, mu: f64, alpha: f64, criterion: Criterion) -> Vec<f64> {
        self.sorted
            .par_iter()
            .map_init(Vec::new, |r, t| {
                fill_scores(t, mu, alpha, criterion, r);
                let n = stop_index(r);
                if n == 0 {
                    return 0.0;
                }
                let mean = t[..n].iter().sum::<f64>() / n as f64;
                match criterion {
                    Criterion::Pfdr => mean - alpha,
                    _ => mean,
                }
            })
            .collect()
    }

    /// `(G(mu), se)`: Monte-Carlo mean of the constraint integrand.
    pub fn constraint_at(&self, mu: f64, alpha: f64, criterion: Criterion) -> (f64, f64) {
        Self::mean_se(&self.step_down_values(mu, alpha, criterion))
    }

    /// Per-sample `sum_{T_i <= t} (T_i - alpha)`.
    fn threshold_values(&self, t: f64, alpha: f64) -> Vec<f64> {
        self.sorted
            .par_iter()
            .map(|s| s.iter().take_while(|&&x| x <= t).map(|x| x - alpha).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub n_cal: usize,
    pub tol: f64,
    pub seed: u64,
    pub max_block_size: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            n_cal: 10_000,
            tol: 1e-4,
            seed: 0,
            max_block_size: DEFAULT_MAX_BLOCK_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    MonteCarlo,
    Quadrature,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    pub method: CalibrationMethod,
    /// Estimated constraint value at the returned scalar.
    pub constraint_value: f64,
    pub constraint_se: f64,
    pub n_cal: usize,
    pub bracket_width: f64,
    pub seed: Option<u64>,
    pub evaluations: usize,
    pub mu_max: Option<f64>,
    /// Whether the recorded constraint values were nonincreasing in `mu`
    /// up to Monte-Carlo noise.
    pub monotone: bool,
    pub grid_fallback: bool,
    /// `reject_none` or `reject_all` when the mFDR root does not exist.
    pub degenerate: Option<String>,
    /// `mu` matching an mFDR cutoff `t` through `t = (1 + mu alpha) / (1 + mu)`.
    pub implied_mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedPolicy {
    pub criterion: Criterion,
    pub alpha: f64,
    /// `mu` for FDR/pFDR, locFDR cutoff for mFDR.
    pub scalar: f64,
    pub diagnostics: Option<CalibrationDiagnostics>,
}

impl CalibratedPolicy {
    /// A policy with a given scalar and no calibration record.
    pub fn fixed(criterion: Criterion, alpha: f64, scalar: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(scalar >= 0.0) || (criterion == Criterion::Mfdr && scalar > 1.0) {
            return Err(OmtError::InvalidInput(format!("invalid policy scalar {scalar}")));
        }
        Ok(Self {
            criterion,
            alpha,
            scalar,
            diagnostics: None,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(OmtError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// `t = (1 + mu alpha) / (1 + mu)`.
pub fn mfdr_threshold(mu: f64, alpha: f64) -> f64 {
    if mu.is_infinite() {
        alpha
    } else {
        (1.0 + mu * alpha) / (1.0 + mu)
    }
}

const MU_CAP: f64 = 1e15;
const GRID_POINTS: usize = 200;

/// Calibrates `mu` for an FDR or pFDR policy from fresh model draws.
pub fn calibrate_mu(
    model: &TwoGroupModel,
    alpha: f64,
    criterion: Criterion,
    opts: &CalibrationOptions,
) -> Result<CalibratedPolicy> {
    check_alpha(alpha)?;
    let set = CalibrationSet::for_model(model, opts)?;
    calibrate_mu_on(&set, alpha, criterion, opts.tol)
}

/// Bisection for the smallest `mu` with `G(mu) <= c_err`, returning the
/// upper end of the final bracket.
pub fn calibrate_mu_on(set: &CalibrationSet, alpha: f64, criterion: Criterion, tol: f64) -> Result<CalibratedPolicy> {
    check_alpha(alpha)?;
    if criterion == Criterion::Mfdr {
        return Err(OmtError::InvalidInput("use mfdr_policy for mFDR".into()));
    }
    if set.is_empty() {
        return Err(OmtError::InvalidInput("empty calibration set".into()));
    }
    if !(tol > 0.0) {
        return Err(OmtError::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let c = criterion.c_err(alpha);
    let mut evals: Vec<(f64, f64, f64)> = Vec::new();
    let mut eval = |mu: f64| {
        let (g, se) = set.constraint_at(mu, alpha, criterion);
        evals.push((mu, g, se));
        (g, se)
    };

    let (g0, se0) = eval(0.0);
    let mut diag = CalibrationDiagnostics {
        method: CalibrationMethod::MonteCarlo,
        constraint_value: g0,
        constraint_se: se0,
        n_cal: set.len(),
        bracket_width: 0.0,
        seed: set.seed,
        evaluations: 1,
        mu_max: None,
        monotone: true,
        grid_fallback: false,
        degenerate: None,
        implied_mu: None,
    };
    if g0 <= c {
        return Ok(CalibratedPolicy {
            criterion,
            alpha,
            scalar: 0.0,
            diagnostics: Some(diag),
        });
    }

    let mut hi = 1.0;
    let (mut g_hi, mut se_hi) = eval(hi);
    while g_hi > c {
        if hi >= MU_CAP {
            return Err(OmtError::BracketFailure {
                mu_max: hi,
                value: g_hi,
                target: c,
            });
        }
        hi *= 2.0;
        (g_hi, se_hi) = eval(hi);
    }
    let mu_max = hi;
    let mut lo = if hi > 1.0 { hi / 2.0 } else { 0.0 };
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let (g, se) = eval(mid);
        if g <= c {
            hi = mid;
            g_hi = g;
            se_hi = se;
        } else {
            lo = mid;
        }
    }
    diag.bracket_width = hi - lo;
    diag.mu_max = Some(mu_max);

    let mut sorted_evals = evals.clone();
    sorted_evals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted_evals.windows(2).all(|w| w[1].1 <= w[0].1 + 3.0 * w[0].2.max(w[1].2));
    let mut scalar = hi;
    if !monotone {
        // bisection is unreliable here: take the smallest grid point beyond
        // which every grid value satisfies the constraint
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|i| mu_max * (i as f64 / (GRID_POINTS - 1) as f64))
            .collect();
        let values: Vec<(f64, f64)> = grid.iter().map(|&mu| set.constraint_at(mu, alpha, criterion)).collect();
        let mut pick = GRID_POINTS - 1;
        for i in (0..GRID_POINTS).rev() {
            if values[i].0 <= c {
                pick = i;
            } else {
                break;
            }
        }
        scalar = scalar.max(grid[pick]).min(mu_max);
        let (g, se) = set.constraint_at(scalar, alpha, criterion);
        g_hi = g;
        se_hi = se;
        diag.grid_fallback = true;
        diag.evaluations += GRID_POINTS;
    }
    diag.monotone = monotone;
    diag.evaluations += evals.len() - 1;
    diag.constraint_value = g_hi;
    diag.constraint_se = se_hi;
    Ok(CalibratedPolicy {
        criterion,
        alpha,
        scalar,
        diagnostics: Some(diag),
    })
}

/// Grid size for the mFDR quadrature.
const QUADRATURE_POINTS: usize = 200_001;

/// mFDR-optimal cutoff. Under independence the root is found by quadrature
/// on the marginal law; otherwise by Monte Carlo on model draws.
pub fn mfdr_policy(model: &TwoGroupModel, alpha: f64, opts: &CalibrationOptions) -> Result<CalibratedPolicy> {
    check_alpha(alpha)?;
    if model.is_independent() {
        return mfdr_policy_quadrature(model.mixture(), alpha);
    }
    let set = CalibrationSet::for_model(model, opts)?;
    mfdr_policy_on(&set, alpha, opts.tol)
}

fn implied_mu(t: f64, alpha: f64) -> Option<f64> {
    (t > alpha).then(|| (1.0 - t) / (t - alpha))
}

/// Largest `t` with `E[(T - alpha) 1{T <= t}] <= 0` for `T = T_marg(Z)`.
pub fn mfdr_policy_quadrature(mixture: &MarginalMixture, alpha: f64) -> Result<CalibratedPolicy> {
    check_alpha(alpha)?;
    let comps = mixture.null_components.iter().chain(&mixture.alt_components);
    let lo = comps.clone().map(|c| c.mean - 12.0 * c.sd).fold(f64::INFINITY, f64::min);
    let hi = comps.map(|c| c.mean + 12.0 * c.sd).fold(f64::NEG_INFINITY, f64::max);
    let step = (hi - lo) / (QUADRATURE_POINTS - 1) as f64;
    let mut points: Vec<(f64, f64)> = (0..QUADRATURE_POINTS)
        .map(|i| {
            let z = lo + step * i as f64;
            let w = mixture.ln_density(z, State::Mixed).exp() * step;
            Ok((marginal_locfdr(mixture, z)?, w))
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    let mut last_ok: Option<usize> = None;
    for (i, &(t, w)) in points.iter().enumerate() {
        acc += w * (t - alpha);
        if acc <= 0.0 {
            last_ok = Some(i);
        }
    }
    let mut degenerate = None;
    let t_alpha = match last_ok {
        None => {
            degenerate = Some("reject_none".to_string());
            0.0
        }
        Some(i) if i == points.len() - 1 => {
            degenerate = Some("reject_all".to_string());
            1.0
        }
        Some(i) => points[i].0,
    };
    let value: f64 = points
        .iter()
        .take_while(|p| p.0 <= t_alpha)
        .map(|&(t, w)| w * (t - alpha))
        .sum();
    Ok(CalibratedPolicy {
        criterion: Criterion::Mfdr,
        alpha,
        scalar: t_alpha,
        diagnostics: Some(CalibrationDiagnostics {
            method: CalibrationMethod::Quadrature,
            constraint_value: value,
            constraint_se: 0.0,
            n_cal: QUADRATURE_POINTS,
            bracket_width: step,
            seed: None,
            evaluations: 1,
            mu_max: None,
            monotone: true,
            grid_fallback: false,
            degenerate,
            implied_mu: implied_mu(t_alpha, alpha),
        }),
    })
}

/// Monte-Carlo mFDR cutoff by bisection on `[alpha, 1]`; the per-sample sum
/// `sum_{T_i <= t} (T_i - alpha)` is nondecreasing in `t` there.
pub fn mfdr_policy_on(set: &CalibrationSet, alpha: f64, tol: f64) -> Result<CalibratedPolicy> {
    check_alpha(alpha)?;
    if set.is_empty() {
        return Err(OmtError::InvalidInput("empty calibration set".into()));
    }
    let eval = |t: f64| CalibrationSet::mean_se(&set.threshold_values(t, alpha));
    let mut evaluations = 1;
    let (g_all, se_all) = eval(1.0);
    let mut diag = CalibrationDiagnostics {
        method: CalibrationMethod::MonteCarlo,
        constraint_value: g_all,
        constraint_se: se_all,
        n_cal: set.len(),
        bracket_width: 0.0,
        seed: set.seed,
        evaluations,
        mu_max: None,
        monotone: true,
        grid_fallback: false,
        degenerate: None,
        implied_mu: None,
    };
    if g_all <= 0.0 {
        diag.degenerate = Some("reject_all".into());
        diag.implied_mu = Some(0.0);
        return Ok(CalibratedPolicy {
            criterion: Criterion::Mfdr,
            alpha,
            scalar: 1.0,
            diagnostics: Some(diag),
        });
    }
    let (mut lo, mut hi) = (alpha, 1.0);
    let (mut g_lo, mut se_lo) = eval(lo);
    evaluations += 1;
    while hi - lo > tol.min(1e-6) {
        let mid = 0.5 * (lo + hi);
        let (g, se) = eval(mid);
        evaluations += 1;
        if g <= 0.0 {
            lo = mid;
            g_lo = g;
            se_lo = se;
        } else {
            hi = mid;
        }
    }
    let min_t = set
        .samples()
        .iter()
        .filter_map(|s| s.first().copied())
        .fold(f64::INFINITY, f64::min);
    if lo < min_t && min_t > alpha {
        diag.degenerate = Some("reject_none".into());
    }
    diag.constraint_value = g_lo;
    diag.constraint_se = se_lo;
    diag.bracket_width = hi - lo;
    diag.evaluations = evaluations;
    diag.implied_mu = implied_mu(lo, alpha);
    Ok(CalibratedPolicy {
        criterion: Criterion::Mfdr,
        alpha,
        scalar: lo,
        diagnostics: Some(diag),
    })
}

/// Calibrates the policy for any criterion.
pub fn calibrate(
    model: &TwoGroupModel,
    alpha: f64,
    criterion: Criterion,
    opts: &CalibrationOptions,
) -> Result<CalibratedPolicy> {
    match criterion {
        Criterion::Mfdr => mfdr_policy(model, alpha, opts),
        _ => calibrate_mu(model, alpha, criterion, opts),
    }
}

/// Applies a calibrated policy to a locFDR vector.
pub fn decide(policy: &CalibratedPolicy, t: &LocFdrVector) -> Vec<bool> {
    match policy.criterion {
        Criterion::Mfdr => {
            let cut = policy.scalar;
            t.t().iter().map(|&x| cut > 0.0 && x <= cut).collect()
        }
        c => step_down_decide(t, policy.scalar, policy.alpha, c).d,
    }
}

fn ascending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    idx
}

/// Benjamini-Hochberg step-up. With `pi0_adjust = Some(1 - pi)` the
/// thresholds become `i alpha / (K (1 - pi))`.
pub fn bh(pvalues: &[f64], alpha: f64, pi0_adjust: Option<f64>) -> Result<Vec<bool>> {
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(OmtError::InvalidInput(format!("p-value {bad} outside [0, 1]")));
    }
    let pi0 = pi0_adjust.unwrap_or(1.0);
    if !(pi0 > 0.0 && pi0 <= 1.0) {
        return Err(OmtError::InvalidInput(format!("null proportion must lie in (0, 1], got {pi0}")));
    }
    let k = pvalues.len() as f64;
    let order = ascending(pvalues);
    let n = order
        .iter()
        .enumerate()
        .rev()
        .find(|(rank, &i)| pvalues[i] <= (*rank + 1) as f64 * alpha / (k * pi0))
        .map_or(0, |(rank, _)| rank + 1);
    let mut d = vec![false; pvalues.len()];
    for &i in &order[..n] {
        d[i] = true;
    }
    Ok(d)
}

/// Rejects the `k` smallest locFDRs with the largest `k` whose running mean
/// is at most `alpha`.
pub fn est_mfdr_stepup(t_marg: &[f64], alpha: f64) -> Result<Vec<bool>> {
    if let Some(bad) = t_marg.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(OmtError::InvalidInput(format!("locFDR value {bad} outside [0, 1]")));
    }
    let order = ascending(t_marg);
    let mut sum = 0.0;
    let mut n = 0;
    for (rank, &i) in order.iter().enumerate() {
        sum += t_marg[i];
        let count = (rank + 1) as f64;
        // slack absorbs rounding when the mean equals alpha exactly
        if sum <= alpha * count + 4.0 * f64::EPSILON * count {
            n = rank + 1;
        }
    }
    let mut d = vec![false; t_marg.len()];
    for &i in &order[..n] {
        d[i] = true;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(t: &[f64]) -> LocFdrVector {
        LocFdrVector::new(t.to_vec()).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let c = coefficients(&[0.1, 0.4], Criterion::Fdr, 0.05).unwrap();
        assert!((c.a[0] - 0.9).abs() < 1e-15 && (c.a[1] - 0.6).abs() < 1e-15);
        assert!((c.b[0] - 0.1).abs() < 1e-15 && (c.b[1] - 0.15).abs() < 1e-15);
        assert_eq!(c.c_err, 0.05);

        let p = coefficients(&[0.05, 0.2], Criterion::Pfdr, 0.05).unwrap();
        assert_eq!(p.b[0], 0.0);
        assert_eq!(p.c_err, 0.0);

        let flat = coefficients(&[0.3; 5], Criterion::Fdr, 0.05).unwrap();
        assert!(flat.b[1..].iter().all(|&b| b == 0.0));

        assert!(matches!(coefficients(&[0.4, 0.1], Criterion::Fdr, 0.05), Err(OmtError::Unsorted(1))));
    }

    #[test]
    fn step_down_examples() {
        let tr = step_down_decide(&lv(&[0.4, 0.1]), 3.0, 0.05, Criterion::Fdr);
        assert!((tr.r[0] - 0.6).abs() < 1e-12 && (tr.r[1] - 0.15).abs() < 1e-12);
        assert!((tr.m[0] - 0.75).abs() < 1e-12 && (tr.m[1] - 0.15).abs() < 1e-12);
        assert_eq!(tr.d_sorted, vec![true, true]);
        assert_eq!(tr.d, vec![true, true]);

        let tr = step_down_decide(&lv(&[0.3, 0.9]), 3.0, 0.05, Criterion::Fdr);
        assert!((tr.r[0] + 0.2).abs() < 1e-12 && (tr.r[1] + 0.8).abs() < 1e-12);
        assert_eq!(tr.m, vec![0.0, 0.0]);
        assert_eq!(tr.d_sorted, vec![false, false]);

        let tr = step_down_decide(&lv(&[0.9, 0.2, 0.99]), 0.0, 0.05, Criterion::Fdr);
        assert!(tr.d.iter().all(|&x| x));
    }

    #[test]
    fn step_down_pulls_back_through_permutation() {
        let t = lv(&[0.9, 0.01, 0.5, 0.02]);
        let tr = step_down_decide(&t, 20.0, 0.05, Criterion::Fdr);
        assert_eq!(tr.rejections(), 2);
        assert_eq!(tr.d, vec![false, true, false, true]);
    }

    #[test]
    fn naive_single_coordinate() {
        for &t in &[0.01, 0.3, 0.95] {
            for &mu in &[0.0, 1.0, 50.0] {
                let tr = step_down_decide_naive(&lv(&[t]), mu, 0.05, Criterion::Pfdr);
                assert_eq!(tr.d_sorted[0], tr.r[0] > 0.0);
            }
        }
    }

    #[test]
    fn constraint_examples() {
        assert_eq!(constraint_value(&[0.1, 0.4], &[false, false], Criterion::Fdr, 0.05).unwrap(), 0.0);
        assert!((constraint_value(&[0.1, 0.4], &[true, false], Criterion::Fdr, 0.05).unwrap() - 0.1).abs() < 1e-15);
        let all = constraint_value(&[0.1, 0.4, 0.7], &[true; 3], Criterion::Pfdr, 0.05).unwrap();
        assert!((all - (0.4 - 0.05)).abs() < 1e-15);
        assert!(constraint_value(&[0.1, 0.4], &[false, true], Criterion::Fdr, 0.05).is_err());
    }

    #[test]
    fn bh_examples() {
        assert_eq!(bh(&[0.01, 0.02, 0.2], 0.05, None).unwrap(), vec![true, true, false]);
        assert_eq!(bh(&[0.2, 0.01, 0.02], 0.05, None).unwrap(), vec![false, true, true]);
        assert!(bh(&[1.0; 4], 0.05, None).unwrap().iter().all(|&x| !x));
        let p = [0.001, 0.02, 0.03, 0.04, 0.5];
        let plain = bh(&p, 0.05, None).unwrap().iter().filter(|&&x| x).count();
        let adj = bh(&p, 0.05, Some(0.5)).unwrap().iter().filter(|&&x| x).count();
        assert!(adj >= plain);
    }

    #[test]
    fn est_mfdr_examples() {
        let d = est_mfdr_stepup(&[0.30, 0.01, 0.10, 0.05], 0.05).unwrap();
        assert_eq!(d, vec![false, true, false, true]);
        assert!(est_mfdr_stepup(&[0.2, 0.3], 0.05).unwrap().iter().all(|&x| !x));
        assert!(est_mfdr_stepup(&[0.05; 7], 0.05).unwrap().iter().all(|&x| x));
    }

    #[test]
    fn mfdr_threshold_limits() {
        assert_eq!(mfdr_threshold(0.0, 0.05), 1.0);
        assert_eq!(mfdr_threshold(f64::INFINITY, 0.05), 0.05);
        assert!((mfdr_threshold(1e12, 0.05) - 0.05).abs() < 1e-11);
    }

    #[test]
    fn mfdr_without_signal_rejects_nothing() {
        let set = CalibrationSet::from_sorted(vec![vec![0.2, 0.5, 0.9], vec![0.3, 0.3, 0.8]]).unwrap();
        let p = mfdr_policy_on(&set, 0.05, 1e-6).unwrap();
        assert!(p.scalar < 0.2);
        assert!(decide(&p, &lv(&[0.2, 0.3, 0.9])).iter().all(|&x| !x));
        assert_eq!(p.diagnostics.unwrap().degenerate.as_deref(), Some("reject_none"));
    }

    #[test]
    fn mfdr_slack_rejects_everything() {
        let set = CalibrationSet::from_sorted(vec![vec![0.0, 0.01, 0.02]]).unwrap();
        let p = mfdr_policy_on(&set, 0.05, 1e-6).unwrap();
        assert_eq!(p.scalar, 1.0);
    }

    #[test]
    fn slack_fdr_constraint_gives_zero_mu() {
        let set = CalibrationSet::from_sorted(vec![vec![0.1, 0.2, 0.3], vec![0.05, 0.4, 0.6]]).unwrap();
        let p = calibrate_mu_on(&set, 0.95, Criterion::Fdr, 1e-4).unwrap();
        assert_eq!(p.scalar, 0.0);
    }

    #[test]
    fn decide_mfdr_is_single_step() {
        let p = CalibratedPolicy::fixed(Criterion::Mfdr, 0.05, 0.3).unwrap();
        assert_eq!(decide(&p, &lv(&[0.31, 0.29, 0.3, 0.9])), vec![false, true, true, false]);
        let none = CalibratedPolicy::fixed(Criterion::Mfdr, 0.05, 0.0).unwrap();
        assert!(decide(&none, &lv(&[0.0, 0.1])).iter().all(|&x| !x));
    }

    #[test]
    fn criterion_names() {
        assert_eq!("pfdr".parse::<Criterion>().unwrap(), Criterion::Pfdr);
        assert_eq!(Criterion::Mfdr.to_string(), "mFDR");
        assert_eq!(serde_json::to_string(&Criterion::Fdr).unwrap(), "\"fdr\"");
    }
}
