//! The general two-group model.
//!
//! Hypothesis states are iid Bernoulli(pi). Given the states, the test
//! statistics are independent draws from per-state normal mixtures, or
//! multivariate normal within blocks, or equi-correlated normal across all
//! coordinates. Densities are evaluated in log space throughout; the public
//! density functions exponentiate at the end.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{OmtError, Result};

/// Tolerance for component weights summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Blocks up to this size keep a per-configuration Cholesky cache.
const KERNEL_CACHE_MAX_SIZE: usize = 12;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub(crate) fn ln_normal_pdf(z: f64, mean: f64, sd: f64) -> f64 {
    let u = (z - mean) / sd;
    -0.5 * u * u - sd.ln() - LN_SQRT_2PI
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub(crate) fn ln_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `k * ln(p)` with the convention `0 * ln(0) = 0`.
#[inline]
pub(crate) fn xlogy(k: f64, p: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        k * p.ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

impl NormalComponent {
    pub fn new(weight: f64, mean: f64, sd: f64) -> Result<Self> {
        let c = Self { weight, mean, sd };
        c.validate()?;
        Ok(c)
    }

    pub fn standard() -> Self {
        Self {
            weight: 1.0,
            mean: 0.0,
            sd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0 && self.sd.is_finite()) {
            return Err(OmtError::InvalidModel(format!(
                "component sd must be positive, got {}",
                self.sd
            )));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(OmtError::InvalidModel(format!(
                "component weight must lie in [0, 1], got {}",
                self.weight
            )));
        }
        if !self.mean.is_finite() {
            return Err(OmtError::InvalidModel("component mean must be finite".into()));
        }
        Ok(())
    }

    /// Log density of the (unweighted) normal component.
    pub fn ln_pdf(&self, z: f64) -> f64 {
        ln_normal_pdf(z, self.mean, self.sd)
    }
}

/// Which part of the two-group marginal to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum State {
    Null,
    Alt,
    Mixed,
}

/// Marginal law of one statistic: `(1 - pi) g(z | h=0) + pi g(z | h=1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMixture {
    pub pi: f64,
    pub null_components: Vec<NormalComponent>,
    pub alt_components: Vec<NormalComponent>,
}

fn validate_components(name: &str, comps: &[NormalComponent]) -> Result<()> {
    if comps.is_empty() {
        return Err(OmtError::InvalidModel(format!("{name} mixture has no components")));
    }
    for c in comps {
        c.validate()?;
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(OmtError::InvalidModel(format!(
            "{name} component weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

fn ln_mixture_pdf(comps: &[NormalComponent], z: f64) -> f64 {
    if let [c] = comps {
        return c.ln_pdf(z);
    }
    comps
        .iter()
        .filter(|c| c.weight > 0.0)
        .map(|c| c.weight.ln() + c.ln_pdf(z))
        .fold(f64::NEG_INFINITY, ln_add_exp)
}

fn sample_mixture<R: Rng + ?Sized>(comps: &[NormalComponent], rng: &mut R) -> f64 {
    let c = if comps.len() == 1 {
        &comps[0]
    } else {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = &comps[comps.len() - 1];
        for c in comps {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        chosen
    };
    let e: f64 = rng.sample(StandardNormal);
    c.mean + c.sd * e
}

impl MarginalMixture {
    pub fn new(
        pi: f64,
        null_components: Vec<NormalComponent>,
        alt_components: Vec<NormalComponent>,
    ) -> Result<Self> {
        let m = Self {
            pi,
            null_components,
            alt_components,
        };
        m.validate()?;
        Ok(m)
    }

    /// Single-normal null and alternative.
    pub fn normal(pi: f64, null_mean: f64, null_sd: f64, alt_mean: f64, alt_sd: f64) -> Result<Self> {
        Self::new(
            pi,
            vec![NormalComponent::new(1.0, null_mean, null_sd)?],
            vec![NormalComponent::new(1.0, alt_mean, alt_sd)?],
        )
    }

    /// `(1 - pi) N(0, 1) + pi N(theta, 1)`.
    pub fn standard(pi: f64, theta: f64) -> Result<Self> {
        Self::normal(pi, 0.0, 1.0, theta, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(OmtError::InvalidModel(format!("pi must lie in [0, 1], got {}", self.pi)));
        }
        validate_components("null", &self.null_components)?;
        validate_components("alternative", &self.alt_components)
    }

    pub fn ln_null_density(&self, z: f64) -> f64 {
        ln_mixture_pdf(&self.null_components, z)
    }

    pub fn ln_alt_density(&self, z: f64) -> f64 {
        ln_mixture_pdf(&self.alt_components, z)
    }

    pub fn ln_density(&self, z: f64, state: State) -> f64 {
        match state {
            State::Null => self.ln_null_density(z),
            State::Alt => self.ln_alt_density(z),
            State::Mixed => {
                let a = xlogy(1.0, 1.0 - self.pi) + self.ln_null_density(z);
                let b = xlogy(1.0, self.pi) + self.ln_alt_density(z);
                ln_add_exp(a, b)
            }
        }
    }

    /// Left-tail probability under the null mixture (one-sided p-value).
    pub fn null_cdf(&self, z: f64) -> f64 {
        self.null_components
            .iter()
            .map(|c| c.weight * std_normal_cdf((z - c.mean) / c.sd))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn sample_given_state<R: Rng + ?Sized>(&self, alt: bool, rng: &mut R) -> f64 {
        if alt {
            sample_mixture(&self.alt_components, rng)
        } else {
            sample_mixture(&self.null_components, rng)
        }
    }
}

/// Density of the marginal mixture at `z`, in linear space.
pub fn marginal_density(mixture: &MarginalMixture, z: f64, state: State) -> f64 {
    mixture.ln_density(z, state).exp()
}

fn default_unit() -> f64 {
    1.0
}

/// Block-diagonal dependence with exchangeable within-block covariance.
///
/// For block `b` with hypothesis states `h`, the covariance has diagonal
/// entries `null_variance + alt_variance_shift * h_i` and off-diagonal
/// entries `rho_b`; the mean is `delta * h`.
///
/// When deserializing, `sizes` may be replaced by `n_blocks` and
/// `block_size`, and `rho` may be a single number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockSpecWire")]
pub struct BlockSpec {
    pub sizes: Vec<usize>,
    /// One value per block, or a single value shared by all blocks.
    pub rho: Vec<f64>,
    pub null_variance: f64,
    pub alt_variance_shift: f64,
    pub delta: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockSpecWire {
    sizes: Option<Vec<usize>>,
    n_blocks: Option<usize>,
    block_size: Option<usize>,
    rho: OneOrMany,
    #[serde(default = "default_unit")]
    null_variance: f64,
    #[serde(default)]
    alt_variance_shift: f64,
    delta: f64,
}

impl TryFrom<BlockSpecWire> for BlockSpec {
    type Error = String;

    fn try_from(w: BlockSpecWire) -> std::result::Result<Self, String> {
        let sizes = match (w.sizes, w.n_blocks, w.block_size) {
            (Some(s), None, None) => s,
            (None, Some(n), Some(b)) => vec![b; n],
            _ => return Err("give either `sizes` or both `n_blocks` and `block_size`".into()),
        };
        let rho = match w.rho {
            OneOrMany::One(r) => vec![r],
            OneOrMany::Many(r) => r,
        };
        Ok(Self {
            sizes,
            rho,
            null_variance: w.null_variance,
            alt_variance_shift: w.alt_variance_shift,
            delta: w.delta,
        })
    }
}

impl BlockSpec {
    /// `n_blocks` blocks of equal size sharing one correlation.
    pub fn uniform(n_blocks: usize, size: usize, rho: f64, delta: f64) -> Self {
        Self {
            sizes: vec![size; n_blocks],
            rho: vec![rho],
            null_variance: 1.0,
            alt_variance_shift: 0.0,
            delta,
        }
    }

    pub fn rho_for(&self, block: usize) -> f64 {
        if self.rho.len() == 1 {
            self.rho[0]
        } else {
            self.rho[block]
        }
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Covariance of block `block` given its hypothesis states.
    pub fn covariance(&self, block: usize, h: &[bool]) -> DMatrix<f64> {
        let s = h.len();
        let rho = self.rho_for(block);
        DMatrix::from_fn(s, s, |i, j| {
            if i == j {
                self.null_variance + if h[i] { self.alt_variance_shift } else { 0.0 }
            } else {
                rho
            }
        })
    }

    pub fn mean(&self, h: &[bool]) -> DVector<f64> {
        DVector::from_iterator(h.len(), h.iter().map(|&a| if a { self.delta } else { 0.0 }))
    }

    fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&s| s == 0) {
            return Err(OmtError::InvalidModel("block sizes must be positive".into()));
        }
        if !(self.rho.len() == 1 || self.rho.len() == self.sizes.len()) {
            return Err(OmtError::InvalidModel(format!(
                "expected 1 or {} block correlations, got {}",
                self.sizes.len(),
                self.rho.len()
            )));
        }
        if !(self.null_variance > 0.0) || !(self.null_variance + self.alt_variance_shift > 0.0) {
            return Err(OmtError::InvalidModel("block variances must be positive".into()));
        }
        if !self.delta.is_finite() || self.rho.iter().any(|r| !r.is_finite()) {
            return Err(OmtError::InvalidModel("block parameters must be finite".into()));
        }
        Ok(())
    }
}

/// All coordinates share variance `sigma2` and pairwise correlation `rho`;
/// non-null coordinates are shifted by `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquicorrSpec {
    pub rho: f64,
    pub sigma2: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DependenceSpec {
    #[default]
    Independent,
    Blocks(BlockSpec),
    Equicorrelated(EquicorrSpec),
}

/// Serializable description of a [`TwoGroupModel`].
///
/// Under block or equi-correlated dependence the marginal components are
/// implied by the dependence parameters and may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub k: usize,
    pub pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null: Option<Vec<NormalComponent>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt: Option<Vec<NormalComponent>>,
    #[serde(default)]
    pub dependence: DependenceSpec,
}

/// Cholesky factor and normalizer for one block configuration.
#[derive(Debug, Clone)]
pub(crate) struct ConfigKernel {
    chol: DMatrix<f64>,
    ln_norm: f64,
    mean: DVector<f64>,
}

impl ConfigKernel {
    fn build(cov: DMatrix<f64>, mean: DVector<f64>) -> Option<Self> {
        let s = cov.nrows();
        let chol = cov.cholesky()?.unpack();
        let ln_det: f64 = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Some(Self {
            chol,
            ln_norm: -0.5 * ln_det - 0.5 * s as f64 * (2.0 * PI).ln(),
            mean,
        })
    }

    pub(crate) fn ln_density(&self, z: &[f64]) -> f64 {
        // forward substitution L y = z - mean
        let s = z.len();
        let mut y = [0.0f64; 64];
        let mut heap;
        let y: &mut [f64] = if s <= 64 {
            &mut y[..s]
        } else {
            heap = vec![0.0; s];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..s {
            let mut acc = z[i] - self.mean[i];
            for j in 0..i {
                acc -= self.chol[(i, j)] * y[j];
            }
            y[i] = acc / self.chol[(i, i)];
            quad += y[i] * y[i];
        }
        self.ln_norm - 0.5 * quad
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let s = out.len();
        let e: Vec<f64> = (0..s).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..s {
            let mut acc = self.mean[i];
            for j in 0..=i {
                acc += self.chol[(i, j)] * e[j];
            }
            out[i] = acc;
        }
    }
}

pub(crate) fn mask_to_states(mask: usize, s: usize) -> Vec<bool> {
    (0..s).map(|j| mask >> j & 1 == 1).collect()
}

/// Per-configuration kernels for one block shape, cached when small.
#[derive(Debug)]
pub(crate) struct BlockKernel {
    block: usize,
    size: usize,
    cached: Option<Vec<ConfigKernel>>,
}

impl BlockKernel {
    fn build(spec: &BlockSpec, block: usize, size: usize) -> Result<Self> {
        let build_one = |h: &[bool]| {
            ConfigKernel::build(spec.covariance(block, h), spec.mean(h)).ok_or_else(|| {
                OmtError::NotPositiveDefinite(format!(
                    "block {block} (size {size}, rho {}) at states {:?}",
                    spec.rho_for(block),
                    h.iter().map(|&b| b as u8).collect::<Vec<_>>()
                ))
            })
        };
        if size <= KERNEL_CACHE_MAX_SIZE {
            let cached = (0..1usize << size)
                .map(|mask| build_one(&mask_to_states(mask, size)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Self {
                block,
                size,
                cached: Some(cached),
            })
        } else {
            // the extreme diagonals bracket every configuration
            build_one(&vec![false; size])?;
            build_one(&vec![true; size])?;
            Ok(Self {
                block,
                size,
                cached: None,
            })
        }
    }

    pub(crate) fn size(&self) -> usize {
        self.size
    }

    fn with_kernel<T>(&self, spec: &BlockSpec, mask: usize, f: impl FnOnce(&ConfigKernel) -> T) -> T {
        match &self.cached {
            Some(c) => f(&c[mask]),
            None => {
                let h = mask_to_states(mask, self.size);
                let k = ConfigKernel::build(spec.covariance(self.block, &h), spec.mean(&h))
                    .expect("covariance validated at construction");
                f(&k)
            }
        }
    }

    /// `ln g(z_block | h_block)` for the configuration encoded in `mask`.
    pub(crate) fn ln_density(&self, spec: &BlockSpec, mask: usize, z: &[f64]) -> f64 {
        self.with_kernel(spec, mask, |k| k.ln_density(z))
    }
}

#[derive(Debug)]
pub(crate) struct BlockLayout {
    pub(crate) starts: Vec<usize>,
    pub(crate) kernels: Vec<Arc<BlockKernel>>,
}

/// A validated two-group model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelSpec", into = "ModelSpec")]
pub struct TwoGroupModel {
    k: usize,
    mixture: MarginalMixture,
    dependence: DependenceSpec,
    layout: Option<Arc<BlockLayout>>,
}

impl PartialEq for TwoGroupModel {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.mixture == other.mixture && self.dependence == other.dependence
    }
}

/// One draw `(h, z)` from a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub h: Vec<bool>,
    pub z: Vec<f64>,
}

impl Sample {
    /// `(V, R)`: false and total rejections of a decision vector.
    pub fn error_counts(&self, decisions: &[bool]) -> (usize, usize) {
        let mut v = 0;
        let mut r = 0;
        for (&d, &h) in decisions.iter().zip(&self.h) {
            if d {
                r += 1;
                if !h {
                    v += 1;
                }
            }
        }
        (v, r)
    }
}

fn implied_mixture(pi: f64, dependence: &DependenceSpec) -> Result<Option<MarginalMixture>> {
    match dependence {
        DependenceSpec::Independent => Ok(None),
        DependenceSpec::Blocks(b) => Ok(Some(MarginalMixture::normal(
            pi,
            0.0,
            b.null_variance.sqrt(),
            b.delta,
            (b.null_variance + b.alt_variance_shift).sqrt(),
        )?)),
        DependenceSpec::Equicorrelated(e) => {
            if !(e.sigma2 > 0.0) {
                return Err(OmtError::InvalidModel(format!("sigma2 must be positive, got {}", e.sigma2)));
            }
            Ok(Some(MarginalMixture::normal(pi, 0.0, e.sigma2.sqrt(), e.delta, e.sigma2.sqrt())?))
        }
    }
}

fn components_match(a: &[NormalComponent], b: &[NormalComponent]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            (x.weight - y.weight).abs() <= 1e-12 && (x.mean - y.mean).abs() <= 1e-12 && (x.sd - y.sd).abs() <= 1e-12
        })
}

impl TwoGroupModel {
    pub fn independent(k: usize, mixture: MarginalMixture) -> Result<Self> {
        Self::build(k, mixture, DependenceSpec::Independent)
    }

    /// Block model; `K` is the sum of the block sizes.
    pub fn blocks(pi: f64, spec: BlockSpec) -> Result<Self> {
        let k = spec.total_size();
        let dep = DependenceSpec::Blocks(spec);
        let mixture = implied_mixture(pi, &dep)?.expect("blocks imply a mixture");
        Self::build(k, mixture, dep)
    }

    pub fn equicorrelated(k: usize, pi: f64, spec: EquicorrSpec) -> Result<Self> {
        let dep = DependenceSpec::Equicorrelated(spec);
        let mixture = implied_mixture(pi, &dep)?.expect("equicorrelation implies a mixture");
        Self::build(k, mixture, dep)
    }

    fn build(k: usize, mixture: MarginalMixture, dependence: DependenceSpec) -> Result<Self> {
        if k == 0 {
            return Err(OmtError::InvalidModel("K must be at least 1".into()));
        }
        mixture.validate()?;
        let mut layout = None;
        match &dependence {
            DependenceSpec::Independent => {}
            DependenceSpec::Blocks(spec) => {
                spec.validate()?;
                if spec.total_size() != k {
                    return Err(OmtError::InvalidModel(format!(
                        "block sizes sum to {}, expected K = {k}",
                        spec.total_size()
                    )));
                }
                let mut cache: HashMap<(usize, u64), Arc<BlockKernel>> = HashMap::new();
                let mut starts = Vec::with_capacity(spec.sizes.len());
                let mut kernels = Vec::with_capacity(spec.sizes.len());
                let mut start = 0;
                for (b, &size) in spec.sizes.iter().enumerate() {
                    let key = (size, spec.rho_for(b).to_bits());
                    let kernel = match cache.get(&key) {
                        Some(k) => Arc::clone(k),
                        None => {
                            let k = Arc::new(BlockKernel::build(spec, b, size)?);
                            cache.insert(key, Arc::clone(&k));
                            k
                        }
                    };
                    starts.push(start);
                    kernels.push(kernel);
                    start += size;
                }
                layout = Some(Arc::new(BlockLayout { starts, kernels }));
            }
            DependenceSpec::Equicorrelated(e) => {
                let lower = if k > 1 { -1.0 / (k as f64 - 1.0) } else { f64::NEG_INFINITY };
                if !(e.rho < 1.0 && e.rho > lower) {
                    return Err(OmtError::NotPositiveDefinite(format!(
                        "equicorrelation rho = {} outside ({lower}, 1) for K = {k}",
                        e.rho
                    )));
                }
                if !(e.sigma2 > 0.0) || !e.delta.is_finite() {
                    return Err(OmtError::InvalidModel("equicorrelated sigma2 must be positive".into()));
                }
            }
        }
        Ok(Self {
            k,
            mixture,
            dependence,
            layout,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pi(&self) -> f64 {
        self.mixture.pi
    }

    pub fn mixture(&self) -> &MarginalMixture {
        &self.mixture
    }

    pub fn dependence(&self) -> &DependenceSpec {
        &self.dependence
    }

    pub fn is_independent(&self) -> bool {
        matches!(self.dependence, DependenceSpec::Independent)
    }

    pub(crate) fn layout(&self) -> Option<&BlockLayout> {
        self.layout.as_deref()
    }

    /// Largest block, or 1 without block structure.
    pub fn max_block_size(&self) -> usize {
        match &self.dependence {
            DependenceSpec::Blocks(b) => b.sizes.iter().copied().max().unwrap_or(1),
            DependenceSpec::Equicorrelated(_) => self.k,
            DependenceSpec::Independent => 1,
        }
    }

    /// Fails when a block is too large to enumerate under `limit`.
    pub fn check_block_limit(&self, limit: usize) -> Result<()> {
        if let DependenceSpec::Blocks(b) = &self.dependence {
            if let Some((block, &size)) = b.sizes.iter().enumerate().find(|(_, &s)| s > limit) {
                return Err(OmtError::BlockTooLarge { block, size, limit });
            }
        }
        Ok(())
    }

    /// Same marginals, independence assumed.
    pub fn with_independence(&self) -> Self {
        Self {
            k: self.k,
            mixture: self.mixture.clone(),
            dependence: DependenceSpec::Independent,
            layout: None,
        }
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        match &self.dependence {
            DependenceSpec::Blocks(_) => Err(OmtError::InvalidModel(
                "K of a block model is fixed by its block sizes".into(),
            )),
            _ => Self::build(k, self.mixture.clone(), self.dependence.clone()),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            k: self.k,
            pi: self.mixture.pi,
            null: Some(self.mixture.null_components.clone()),
            alt: Some(self.mixture.alt_components.clone()),
            dependence: self.dependence.clone(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let pi = self.mixture.pi;
        let h: Vec<bool> = (0..self.k).map(|_| rng.random::<f64>() < pi).collect();
        let z = self.sample_given_h(&h, rng);
        Sample { h, z }
    }

    /// Draw `z` from `g(z | h)`.
    pub fn sample_given_h<R: Rng + ?Sized>(&self, h: &[bool], rng: &mut R) -> Vec<f64> {
        assert_eq!(h.len(), self.k, "state vector length must equal K");
        match &self.dependence {
            DependenceSpec::Independent => h
                .iter()
                .map(|&a| self.mixture.sample_given_state(a, rng))
                .collect(),
            DependenceSpec::Blocks(spec) => {
                let layout = self.layout.as_ref().expect("block layout");
                let mut z = vec![0.0; self.k];
                for (b, kernel) in layout.kernels.iter().enumerate() {
                    let start = layout.starts[b];
                    let s = kernel.size();
                    let mask = h[start..start + s]
                        .iter()
                        .enumerate()
                        .fold(0usize, |m, (j, &a)| m | (a as usize) << j);
                    kernel.with_kernel(spec, mask, |k| k.draw(rng, &mut z[start..start + s]));
                }
                z
            }
            DependenceSpec::Equicorrelated(e) => {
                // x = sqrt(1-rho) eps + c (1'eps) 1 has covariance (1-rho) I + rho 11'
                let k = self.k as f64;
                let root = (1.0 - e.rho).sqrt();
                let c = ((1.0 - e.rho + k * e.rho).sqrt() - root) / k;
                let eps: Vec<f64> = (0..self.k).map(|_| rng.sample(StandardNormal)).collect();
                let total: f64 = eps.iter().sum();
                let sd = e.sigma2.sqrt();
                h.iter()
                    .zip(&eps)
                    .map(|(&a, &x)| (if a { e.delta } else { 0.0 }) + sd * (root * x + c * total))
                    .collect()
            }
        }
    }
}

impl TryFrom<ModelSpec> for TwoGroupModel {
    type Error = OmtError;

    fn try_from(spec: ModelSpec) -> Result<Self> {
        let implied = implied_mixture(spec.pi, &spec.dependence)?;
        let mixture = match implied {
            None => {
                let null = spec
                    .null
                    .ok_or_else(|| OmtError::InvalidModel("independent model requires `null` components".into()))?;
                let alt = spec
                    .alt
                    .ok_or_else(|| OmtError::InvalidModel("independent model requires `alt` components".into()))?;
                MarginalMixture::new(spec.pi, null, alt)?
            }
            Some(m) => {
                if let Some(null) = &spec.null {
                    if !components_match(null, &m.null_components) {
                        return Err(OmtError::InvalidModel(
                            "`null` components disagree with the dependence parameters".into(),
                        ));
                    }
                }
                if let Some(alt) = &spec.alt {
                    if !components_match(alt, &m.alt_components) {
                        return Err(OmtError::InvalidModel(
                            "`alt` components disagree with the dependence parameters".into(),
                        ));
                    }
                }
                m
            }
        };
        Self::build(spec.k, mixture, spec.dependence)
    }
}

impl From<TwoGroupModel> for ModelSpec {
    fn from(m: TwoGroupModel) -> Self {
        m.spec()
    }
}
