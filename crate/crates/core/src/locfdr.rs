//! Exact locFDR values `T_i(z) = Pr(h_i = 0 | z)`.
//!
//! One engine per dependence structure plus a brute-force enumeration used
//! as a test oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{OmtError, Result};
use crate::model::{
    ln_add_exp, log_sum_exp, mask_to_states, xlogy, DependenceSpec, EquicorrSpec, MarginalMixture,
    TwoGroupModel,
};

/// Default cap on block sizes for the enumeration engine.
pub const DEFAULT_MAX_BLOCK_SIZE: usize = 20;

/// Hard cap on `K` for [`locfdr_bruteforce`].
pub const BRUTEFORCE_MAX_K: usize = 20;

/// locFDR values with their ascending sort permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocFdrVector {
    t: Vec<f64>,
    sort_perm: Vec<usize>,
}

impl LocFdrVector {
    /// Validates entries and computes the sort permutation (ties by index).
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if let Some(bad) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(OmtError::InvalidInput(format!("locFDR value {bad} outside [0, 1]")));
        }
        let mut sort_perm: Vec<usize> = (0..t.len()).collect();
        sort_perm.sort_by(|&i, &j| t[i].total_cmp(&t[j]));
        Ok(Self { t, sort_perm })
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn sort_perm(&self) -> &[usize] {
        &self.sort_perm
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// `T_(1) <= ... <= T_(K)`.
    pub fn sorted(&self) -> Vec<f64> {
        self.sort_perm.iter().map(|&i| self.t[i]).collect()
    }

    /// Maps a decision vector in sorted order back to original indices.
    pub fn unsort(&self, d_sorted: &[bool]) -> Vec<bool> {
        let mut d = vec![false; self.t.len()];
        for (&i, &v) in self.sort_perm.iter().zip(d_sorted) {
            d[i] = v;
        }
        d
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.t
    }
}

fn posterior_null(ln_null: f64, ln_alt: f64) -> Result<f64> {
    if ln_null == f64::NEG_INFINITY && ln_alt == f64::NEG_INFINITY {
        return Err(OmtError::UndefinedPosterior(f64::NAN));
    }
    if ln_alt == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    // 1 / (1 + exp(ln_alt - ln_null)), well defined when ln_null = -inf too
    Ok((1.0 / (1.0 + (ln_alt - ln_null).exp())).clamp(0.0, 1.0))
}

/// Marginal locFDR `(1-pi) g0(z) / ((1-pi) g0(z) + pi g1(z))`.
pub fn marginal_locfdr(mixture: &MarginalMixture, z: f64) -> Result<f64> {
    let ln_null = xlogy(1.0, 1.0 - mixture.pi) + mixture.ln_null_density(z);
    let ln_alt = xlogy(1.0, mixture.pi) + mixture.ln_alt_density(z);
    posterior_null(ln_null, ln_alt).map_err(|_| OmtError::UndefinedPosterior(z))
}

fn check_len(model: &TwoGroupModel, z: &[f64]) -> Result<()> {
    if z.len() != model.k() {
        return Err(OmtError::LengthMismatch {
            expected: model.k(),
            got: z.len(),
        });
    }
    Ok(())
}

/// Marginal locFDR applied coordinatewise.
pub fn locfdr_marginal(mixture: &MarginalMixture, z: &[f64]) -> Result<LocFdrVector> {
    let t = z
        .iter()
        .map(|&zi| marginal_locfdr(mixture, zi))
        .collect::<Result<Vec<_>>>()?;
    LocFdrVector::new(t)
}

pub fn locfdr_independent(model: &TwoGroupModel, z: &[f64]) -> Result<LocFdrVector> {
    if !model.is_independent() {
        return Err(OmtError::WrongDependence { expected: "independent" });
    }
    check_len(model, z)?;
    locfdr_marginal(model.mixture(), z)
}

/// Work counters from the block engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockStats {
    pub density_evals: usize,
}

pub fn locfdr_block(model: &TwoGroupModel, z: &[f64], max_block_size: usize) -> Result<LocFdrVector> {
    locfdr_block_counted(model, z, max_block_size).map(|(t, _)| t)
}

/// Block engine returning the number of multivariate density evaluations.
pub fn locfdr_block_counted(
    model: &TwoGroupModel,
    z: &[f64],
    max_block_size: usize,
) -> Result<(LocFdrVector, BlockStats)> {
    let spec = match model.dependence() {
        DependenceSpec::Blocks(b) => b,
        _ => return Err(OmtError::WrongDependence { expected: "blocks" }),
    };
    check_len(model, z)?;
    let layout = model.layout().expect("block models carry a layout");
    for (b, kernel) in layout.kernels.iter().enumerate() {
        if kernel.size() > max_block_size {
            return Err(OmtError::BlockTooLarge {
                block: b,
                size: kernel.size(),
                limit: max_block_size,
            });
        }
    }
    let mut stats = BlockStats::default();
    let mut t = vec![0.0; model.k()];
    let mut vals = Vec::new();
    for (b, kernel) in layout.kernels.iter().enumerate() {
        let start = layout.starts[b];
        let s = kernel.size();
        let zb = &z[start..start + s];
        vals.clear();
        for mask in 0..1usize << s {
            let ones = mask.count_ones() as f64;
            let lw = xlogy(ones, model.pi()) + xlogy(s as f64 - ones, 1.0 - model.pi());
            let v = if lw == f64::NEG_INFINITY {
                lw
            } else {
                stats.density_evals += 1;
                lw + kernel.ln_density(spec, mask, zb)
            };
            vals.push(v);
        }
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(OmtError::UndefinedPosterior(zb[0]));
        }
        let mut total = 0.0;
        let mut null_mass = vec![0.0; s];
        for (mask, &v) in vals.iter().enumerate() {
            let w = (v - max).exp();
            total += w;
            for (j, acc) in null_mass.iter_mut().enumerate() {
                if mask >> j & 1 == 0 {
                    *acc += w;
                }
            }
        }
        for j in 0..s {
            t[start + j] = (null_mass[j] / total).clamp(0.0, 1.0);
        }
    }
    // configurations with zero prior weight are never evaluated, so the count
    // is 2^s per block whenever 0 < pi < 1
    Ok((LocFdrVector::new(t)?, stats))
}

/// Precision-matrix quantities for the equi-correlated engine.
#[derive(Debug, Clone, PartialEq)]
pub struct EquicorrParams {
    /// Diagonal entry of the precision matrix.
    pub a: f64,
    /// Off-diagonal entry of the precision matrix.
    pub b: f64,
    pub delta: f64,
    /// Sum of the statistics.
    pub s_z: f64,
    /// `s_k = h' Q h` for any `h` with `k` ones, `k = 0..=K`.
    pub s_k_table: Vec<f64>,
}

impl EquicorrParams {
    pub fn new(spec: &EquicorrSpec, k: usize, z: &[f64]) -> Self {
        let rho = spec.rho;
        let kf = k as f64;
        let denom = spec.sigma2 * (rho * (kf - 1.0) + 1.0) * (rho - 1.0);
        let a = (-1.0 - rho * (kf - 2.0)) / denom;
        let b = rho / denom;
        let s_k_table = (0..=k)
            .map(|n| {
                let n = n as f64;
                a * n + b * n * (n - 1.0)
            })
            .collect();
        Self {
            a,
            b,
            delta: spec.delta,
            s_z: z.iter().sum(),
            s_k_table,
        }
    }

    /// `ln w_L = delta (b S_Z + (a - b) z_L)`.
    pub fn ln_weight(&self, z_l: f64) -> f64 {
        self.delta * (self.b * self.s_z + (self.a - self.b) * z_l)
    }
}

/// Scratch space for the equi-correlated engine, reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct EquicorrWorkspace {
    /// Row `L` holds `ln S(L, k)` for `k = 0..=L`, stored contiguously.
    log_s_table: Vec<f64>,
    row: Vec<f64>,
    ln_w: Vec<f64>,
    ln_c: Vec<f64>,
}

fn row_offset(l: usize) -> usize {
    l * (l + 1) / 2
}

impl EquicorrWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// `ln S(L, k)` from the last computation, `-inf` for `k > L`.
    pub fn log_s(&self, l: usize, k: usize) -> f64 {
        if k > l {
            f64::NEG_INFINITY
        } else {
            self.log_s_table[row_offset(l) + k]
        }
    }
}

/// Work counters from the equi-correlated engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EquicorrStats {
    /// Cell updates building the `S(L, k)` table.
    pub denominator_updates: u64,
    /// Cell updates across all `K` numerator families.
    pub numerator_updates: u64,
}

impl EquicorrStats {
    pub fn total(&self) -> u64 {
        self.denominator_updates + self.numerator_updates
    }
}

pub fn locfdr_equicorrelated(model: &TwoGroupModel, z: &[f64]) -> Result<LocFdrVector> {
    let mut ws = EquicorrWorkspace::new();
    locfdr_equicorrelated_with(model, z, &mut ws).map(|(t, _)| t)
}

/// Equi-correlated engine on caller-owned scratch, returning work counters.
///
/// `Pr(z | h)` depends on `h` only through `k = 1'h` and the product of
/// per-coordinate weights over the non-null set, so the sum over all `h` is
/// `sum_k c_k e_k(w)` with `e_k` the elementary symmetric polynomials built
/// by the `S(L, k)` recursion. The numerator for coordinate `i` repeats the
/// recursion with `w_i` left out.
pub fn locfdr_equicorrelated_with(
    model: &TwoGroupModel,
    z: &[f64],
    ws: &mut EquicorrWorkspace,
) -> Result<(LocFdrVector, EquicorrStats)> {
    let spec = match model.dependence() {
        DependenceSpec::Equicorrelated(e) => *e,
        _ => return Err(OmtError::WrongDependence { expected: "equicorrelated" }),
    };
    check_len(model, z)?;
    let k = model.k();
    let pi = model.pi();
    let params = EquicorrParams::new(&spec, k, z);
    let mut stats = EquicorrStats::default();

    ws.ln_w.clear();
    ws.ln_w.extend(z.iter().map(|&zl| params.ln_weight(zl)));
    ws.ln_c.clear();
    ws.ln_c.extend((0..=k).map(|n| {
        -0.5 * params.delta * params.delta * params.s_k_table[n]
            + xlogy(n as f64, pi)
            + xlogy((k - n) as f64, 1.0 - pi)
    }));

    ws.log_s_table.clear();
    ws.log_s_table.resize(row_offset(k + 1), f64::NEG_INFINITY);
    ws.log_s_table[0] = 0.0;
    for l in 1..=k {
        let (prev, cur) = ws.log_s_table.split_at_mut(row_offset(l));
        let prev = &prev[row_offset(l - 1)..];
        let cur = &mut cur[..=l];
        let lw = ws.ln_w[l - 1];
        cur[0] = 0.0;
        for n in 1..=l {
            let keep = if n < l { prev[n] } else { f64::NEG_INFINITY };
            cur[n] = ln_add_exp(keep, prev[n - 1] + lw);
        }
        stats.denominator_updates += l as u64;
    }

    let last = &ws.log_s_table[row_offset(k)..row_offset(k) + k + 1];
    let terms: Vec<f64> = (0..=k).map(|n| ws.ln_c[n] + last[n]).collect();
    let ln_den = log_sum_exp(&terms);
    if !ln_den.is_finite() {
        return Err(OmtError::UndefinedPosterior(params.s_z));
    }

    let mut t = vec![0.0; k];
    ws.row.resize(k + 1, f64::NEG_INFINITY);
    let mut num_terms = Vec::with_capacity(k);
    for i in 1..=k {
        // S^(i)(i, .) = S(i-1, .), then continue the recursion past i
        let row = &mut ws.row;
        row.fill(f64::NEG_INFINITY);
        row[..i].copy_from_slice(&ws.log_s_table[row_offset(i - 1)..row_offset(i - 1) + i]);
        for l in i + 1..=k {
            let lw = ws.ln_w[l - 1];
            let items = l - 1;
            for n in (1..=items).rev() {
                row[n] = ln_add_exp(row[n], row[n - 1] + lw);
            }
            stats.numerator_updates += items as u64;
        }
        num_terms.clear();
        num_terms.extend((0..k).map(|n| ws.ln_c[n] + row[n]));
        let ln_num = log_sum_exp(&num_terms);
        t[i - 1] = (ln_num - ln_den).exp().clamp(0.0, 1.0);
    }
    Ok((LocFdrVector::new(t)?, stats))
}

/// Exact locFDR by enumerating all `2^K` state vectors.
///
/// The joint density is evaluated from the full `K x K` covariance, without
/// any of the structure the fast engines exploit.
pub fn locfdr_bruteforce(model: &TwoGroupModel, z: &[f64]) -> Result<LocFdrVector> {
    check_len(model, z)?;
    let k = model.k();
    if k > BRUTEFORCE_MAX_K {
        return Err(OmtError::TooManyHypotheses {
            k,
            cap: BRUTEFORCE_MAX_K,
        });
    }
    let pi = model.pi();
    let zv = DVector::from_column_slice(z);
    let joint: Box<dyn Fn(&[bool]) -> f64> = match model.dependence() {
        DependenceSpec::Independent => {
            let m = model.mixture().clone();
            Box::new(move |h: &[bool]| {
                h.iter()
                    .zip(z)
                    .map(|(&a, &zi)| if a { m.ln_alt_density(zi) } else { m.ln_null_density(zi) })
                    .sum()
            })
        }
        DependenceSpec::Blocks(spec) => {
            let spec = spec.clone();
            let zv = zv.clone();
            Box::new(move |h: &[bool]| {
                let mut cov = DMatrix::zeros(k, k);
                let mut mean = DVector::zeros(k);
                let mut start = 0;
                for (b, &s) in spec.sizes.iter().enumerate() {
                    let hb = &h[start..start + s];
                    cov.view_mut((start, start), (s, s)).copy_from(&spec.covariance(b, hb));
                    mean.rows_mut(start, s).copy_from(&spec.mean(hb));
                    start += s;
                }
                mvn_ln_pdf(&zv, &mean, cov)
            })
        }
        DependenceSpec::Equicorrelated(e) => {
            let e = *e;
            let cov = DMatrix::from_fn(k, k, |i, j| if i == j { e.sigma2 } else { e.rho * e.sigma2 });
            let zv = zv.clone();
            Box::new(move |h: &[bool]| {
                let mean = DVector::from_iterator(k, h.iter().map(|&a| if a { e.delta } else { 0.0 }));
                mvn_ln_pdf(&zv, &mean, cov.clone())
            })
        }
    };
    let mut vals = Vec::with_capacity(1 << k);
    for mask in 0..1usize << k {
        let h = mask_to_states(mask, k);
        let ones = mask.count_ones() as f64;
        let lw = xlogy(ones, pi) + xlogy(k as f64 - ones, 1.0 - pi);
        vals.push(if lw == f64::NEG_INFINITY { lw } else { lw + joint(&h) });
    }
    let ln_total = log_sum_exp(&vals);
    if !ln_total.is_finite() {
        return Err(OmtError::UndefinedPosterior(z[0]));
    }
    let t = (0..k)
        .map(|i| {
            let null: Vec<f64> = vals
                .iter()
                .enumerate()
                .filter(|(mask, _)| mask >> i & 1 == 0)
                .map(|(_, &v)| v)
                .collect();
            (log_sum_exp(&null) - ln_total).exp().clamp(0.0, 1.0)
        })
        .collect();
    LocFdrVector::new(t)
}

fn mvn_ln_pdf(z: &DVector<f64>, mean: &DVector<f64>, cov: DMatrix<f64>) -> f64 {
    let k = z.len() as f64;
    let chol = cov.cholesky().expect("covariance validated at model construction");
    let diff = z - mean;
    let sol = chol.solve(&diff);
    let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * diff.dot(&sol) - 0.5 * ln_det - 0.5 * k * (2.0 * std::f64::consts::PI).ln()
}

/// Dispatches to the engine matching the model's dependence structure.
pub fn locfdr(model: &TwoGroupModel, z: &[f64]) -> Result<LocFdrVector> {
    locfdr_with_limit(model, z, DEFAULT_MAX_BLOCK_SIZE)
}

pub fn locfdr_with_limit(model: &TwoGroupModel, z: &[f64], max_block_size: usize) -> Result<LocFdrVector> {
    match model.dependence() {
        DependenceSpec::Independent => locfdr_independent(model, z),
        DependenceSpec::Blocks(_) => locfdr_block(model, z, max_block_size),
        DependenceSpec::Equicorrelated(_) => locfdr_equicorrelated(model, z),
    }
}
