//! Monte-Carlo comparison of procedures on a known model.
//!
//! Every variant is calibrated once on its own calibration draws, then all
//! variants are evaluated on the same replications, so paired comparisons
//! share their random numbers.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OmtError, Result};
use crate::estimate::{composite_locfdr, fit_mixture, storey_pi, EmConfig};
use crate::locfdr::{locfdr_marginal, locfdr_with_limit, LocFdrVector, DEFAULT_MAX_BLOCK_SIZE};
use crate::model::TwoGroupModel;
use crate::policy::{
    bh, calibrate_mu_on, decide, est_mfdr_stepup, mfdr_policy_on, mfdr_policy_quadrature, CalibratedPolicy,
    CalibrationSet, Criterion,
};
use crate::stream::{labels, StreamFactory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    /// Full locFDR, calibrated on the true model.
    Omt,
    /// Marginal locFDR, calibrated on the true model.
    Marg,
    /// Marginal locFDR, calibrated as if the statistics were independent.
    Ind,
    /// Fitted mixture per replication, OMT policy calibrated on the fit.
    Est,
    AdaptiveBh,
    Bh,
    OracleBh,
    /// Step-up on fitted marginal locFDRs.
    EstMfdr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Statistic {
    FullLocfdr,
    MarginalLocfdr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CalibrationModel {
    TrueModel,
    IndependenceAssumed,
}

/// A procedure together with its error criterion where one applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProcedureVariant {
    pub procedure: Procedure,
    pub criterion: Option<Criterion>,
}

impl ProcedureVariant {
    pub fn new(procedure: Procedure, criterion: Criterion) -> Self {
        Self {
            procedure,
            criterion: Some(criterion),
        }
    }

    pub fn baseline(procedure: Procedure) -> Self {
        Self {
            procedure,
            criterion: None,
        }
    }

    pub fn omt(criterion: Criterion) -> Self {
        Self::new(Procedure::Omt, criterion)
    }

    fn is_calibrated(&self) -> bool {
        matches!(self.procedure, Procedure::Omt | Procedure::Marg | Procedure::Ind)
    }

    pub fn statistic(&self) -> Option<Statistic> {
        match self.procedure {
            Procedure::Omt => Some(Statistic::FullLocfdr),
            Procedure::Marg | Procedure::Ind | Procedure::Est | Procedure::EstMfdr => Some(Statistic::MarginalLocfdr),
            _ => None,
        }
    }

    pub fn calibration_model(&self) -> Option<CalibrationModel> {
        match self.procedure {
            Procedure::Omt | Procedure::Marg => Some(CalibrationModel::TrueModel),
            Procedure::Ind => Some(CalibrationModel::IndependenceAssumed),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let needs = matches!(
            self.procedure,
            Procedure::Omt | Procedure::Marg | Procedure::Ind | Procedure::Est
        );
        if needs != self.criterion.is_some() {
            return Err(OmtError::InvalidInput(format!("invalid procedure variant {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for ProcedureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.criterion.map(|c| c.to_string()).unwrap_or_default();
        match self.procedure {
            Procedure::Omt => write!(f, "OMT-{c}"),
            Procedure::Marg => write!(f, "marg-{c}"),
            Procedure::Ind => write!(f, "ind-{c}"),
            Procedure::Est => write!(f, "est-OMT-{c}"),
            Procedure::AdaptiveBh => f.write_str("adaptive-BH"),
            Procedure::Bh => f.write_str("BH"),
            Procedure::OracleBh => f.write_str("oracle-BH"),
            Procedure::EstMfdr => f.write_str("est-mFDR"),
        }
    }
}

impl FromStr for ProcedureVariant {
    type Err = OmtError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let baseline = match lower.as_str() {
            "bh" => Some(Procedure::Bh),
            "adaptive-bh" | "adaptive_bh" => Some(Procedure::AdaptiveBh),
            "oracle-bh" | "oracle_bh" => Some(Procedure::OracleBh),
            "est-mfdr" | "est_mfdr" => Some(Procedure::EstMfdr),
            _ => None,
        };
        if let Some(p) = baseline {
            return Ok(Self::baseline(p));
        }
        let (procedure, rest) = if let Some(r) = lower.strip_prefix("est-omt-") {
            (Procedure::Est, r)
        } else if let Some(r) = lower.strip_prefix("omt-") {
            (Procedure::Omt, r)
        } else if let Some(r) = lower.strip_prefix("marg-") {
            (Procedure::Marg, r)
        } else if let Some(r) = lower.strip_prefix("ind-") {
            (Procedure::Ind, r)
        } else {
            return Err(OmtError::InvalidInput(format!("unknown procedure `{s}`")));
        };
        Ok(Self::new(procedure, rest.parse()?))
    }
}

impl TryFrom<String> for ProcedureVariant {
    type Error = OmtError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ProcedureVariant> for String {
    fn from(v: ProcedureVariant) -> Self {
        v.to_string()
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_reps() -> usize {
    1000
}
fn default_cal() -> usize {
    10_000
}
fn default_est_cal() -> usize {
    1_000
}
fn default_lambda() -> f64 {
    0.05
}
/// Source of the signal fraction plugged into adaptive BH.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveEstimator {
    /// Non-null weight of the fitted mixture.
    #[default]
    Fit,
    /// Storey plug-in at `storey_lambda`.
    Storey,
}

fn default_tol() -> f64 {
    1e-4
}
fn default_block() -> usize {
    DEFAULT_MAX_BLOCK_SIZE
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: TwoGroupModel,
    pub variants: Vec<ProcedureVariant>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default = "default_cal")]
    pub n_cal: usize,
    #[serde(default)]
    pub seed: u64,
    /// Calibration draws per replication for estimated policies.
    #[serde(default = "default_est_cal")]
    pub est_n_cal: usize,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub adaptive_estimator: AdaptiveEstimator,
    #[serde(default = "default_lambda")]
    pub storey_lambda: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_block")]
    pub max_block_size: usize,
}

impl ExperimentConfig {
    pub fn new(model: TwoGroupModel, variants: Vec<ProcedureVariant>) -> Self {
        Self {
            model,
            variants,
            alpha: default_alpha(),
            n_reps: default_reps(),
            n_cal: default_cal(),
            seed: 0,
            est_n_cal: default_est_cal(),
            em: EmConfig::default(),
            adaptive_estimator: AdaptiveEstimator::default(),
            storey_lambda: default_lambda(),
            tol: default_tol(),
            max_block_size: default_block(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(OmtError::InvalidInput(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n_reps == 0 || self.n_cal == 0 || self.est_n_cal == 0 {
            return Err(OmtError::InvalidInput("replication and calibration counts must be positive".into()));
        }
        if self.variants.is_empty() {
            return Err(OmtError::InvalidInput("no procedures requested".into()));
        }
        for v in &self.variants {
            v.validate()?;
        }
        self.model.check_block_limit(self.max_block_size)
    }
}

/// Monte-Carlo error rates and power of one procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_reps: usize,
    pub tp: f64,
    pub tp_se: f64,
    pub fdr: f64,
    pub fdr_se: f64,
    /// Undefined when no replication rejects.
    pub pfdr: Option<f64>,
    pub pfdr_se: Option<f64>,
    /// Undefined when no replication rejects.
    pub mfdr: Option<f64>,
    pub mfdr_se: Option<f64>,
    pub prob_no_rejection: f64,
    pub prob_no_rejection_se: f64,
}

fn mean_se(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl Metrics {
    /// Gap in the identity `FDR = pFDR (1 - Pr(R=0))`.
    pub fn identity_gap(&self) -> f64 {
        let pfdr = self.pfdr.unwrap_or(0.0);
        (self.fdr - pfdr * (1.0 - self.prob_no_rejection)).abs()
    }
}

/// Error rates from per-replication `(V, R)` counts.
pub fn metrics_from_replications(records: &[(usize, usize)]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(OmtError::InvalidInput("no replications".into()));
    }
    if let Some(&(v, r)) = records.iter().find(|(v, r)| v > r) {
        return Err(OmtError::InvalidInput(format!("V = {v} exceeds R = {r}")));
    }
    let n = records.len();
    let (tp, tp_se) = mean_se(records.iter().map(|&(v, r)| (r - v) as f64));
    let (fdr, fdr_se) = mean_se(records.iter().map(|&(v, r)| v as f64 / r.max(1) as f64));
    let (pr0, pr0_se) = mean_se(records.iter().map(|&(_, r)| f64::from(u8::from(r == 0))));
    let positive = records.iter().filter(|(_, r)| *r > 0);
    let (pfdr, pfdr_se) = if positive.clone().count() == 0 {
        (None, None)
    } else {
        let (m, se) = mean_se(positive.map(|&(v, r)| v as f64 / r as f64));
        (Some(m), Some(se))
    };
    let sum_v: f64 = records.iter().map(|&(v, _)| v as f64).sum();
    let sum_r: f64 = records.iter().map(|&(_, r)| r as f64).sum();
    let (mfdr, mfdr_se) = if sum_r == 0.0 {
        (None, None)
    } else {
        let ratio = sum_v / sum_r;
        let mean_r = sum_r / n as f64;
        // delta method for a ratio of means
        let se = if n < 2 {
            0.0
        } else {
            let ss: f64 = records
                .iter()
                .map(|&(v, r)| (v as f64 - ratio * r as f64).powi(2))
                .sum();
            (ss / (n as f64 * (n as f64 - 1.0))).sqrt() / mean_r
        };
        (Some(ratio), Some(se))
    };
    Ok(Metrics {
        n_reps: n,
        tp,
        tp_se,
        fdr,
        fdr_se,
        pfdr,
        pfdr_se,
        mfdr,
        mfdr_se,
        prob_no_rejection: pr0,
        prob_no_rejection_se: pr0_se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: ProcedureVariant,
    pub metrics: Metrics,
    /// The calibrated policy, for variants calibrated once up front.
    pub policy: Option<CalibratedPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rows: Vec<VariantReport>,
    pub alpha: f64,
    pub n_reps: usize,
    pub seed: u64,
    pub wall_time_secs: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl SimulationReport {
    pub fn row(&self, variant: ProcedureVariant) -> Option<&VariantReport> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn metrics(&self, name: &str) -> Option<&Metrics> {
        let v: ProcedureVariant = name.parse().ok()?;
        self.row(v).map(|r| &r.metrics)
    }

    /// Largest gap in `FDR = pFDR (1 - Pr(R=0))` across rows.
    pub fn max_identity_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.metrics.identity_gap()).fold(0.0, f64::max)
    }

    pub const CSV_HEADER: &'static str = "procedure,TP,TP_se,FDR,FDR_se,pFDR,pFDR_se,mFDR,mFDR_se,PrR0,PrR0_se";

    /// One row per variant; undefined rates are written as `-`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{},{},{},{},{:.6},{:.6}\n",
                r.variant,
                m.tp,
                m.tp_se,
                m.fdr,
                m.fdr_se,
                fmt_opt(m.pfdr),
                fmt_opt(m.pfdr_se),
                fmt_opt(m.mfdr),
                fmt_opt(m.mfdr_se),
                m.prob_no_rejection,
                m.prob_no_rejection_se
            ));
        }
        out
    }
}

fn group_key(v: &ProcedureVariant) -> u64 {
    match (v.statistic(), v.calibration_model()) {
        (Some(Statistic::FullLocfdr), _) => 0,
        (_, Some(CalibrationModel::TrueModel)) => 1,
        _ => 2,
    }
}

fn attach(variant: &ProcedureVariant, e: OmtError) -> OmtError {
    OmtError::Variant {
        variant: variant.to_string(),
        source: Box::new(e),
    }
}

/// Calibrates every up-front variant, one calibration draw per group of
/// variants sharing a statistic and calibration model.
fn calibrate_variants(cfg: &ExperimentConfig, streams: &StreamFactory) -> Result<Vec<Option<CalibratedPolicy>>> {
    let model = &cfg.model;
    let mut policies: Vec<Option<CalibratedPolicy>> = vec![None; cfg.variants.len()];
    for key in 0..3u64 {
        let members: Vec<usize> = (0..cfg.variants.len())
            .filter(|&i| cfg.variants[i].is_calibrated() && group_key(&cfg.variants[i]) == key)
            .collect();
        if members.is_empty() {
            continue;
        }
        let sampling = if key == 2 {
            model.with_independence()
        } else {
            model.clone()
        };
        // the mFDR cutoff for independent sampling comes from quadrature
        let needs_set = members.iter().any(|&i| {
            cfg.variants[i].criterion != Some(Criterion::Mfdr) || !sampling.is_independent()
        });
        let set = if needs_set {
            let sub = streams.derive(key);
            let limit = cfg.max_block_size;
            let set = if key == 0 {
                CalibrationSet::draw(&sampling, |z| locfdr_with_limit(&sampling, z, limit), cfg.n_cal, &sub)
            } else {
                CalibrationSet::draw(&sampling, |z| locfdr_marginal(sampling.mixture(), z), cfg.n_cal, &sub)
            };
            Some(set.map_err(|e| attach(&cfg.variants[members[0]], e))?)
        } else {
            None
        };
        for &i in &members {
            let v = &cfg.variants[i];
            let criterion = v.criterion.expect("validated");
            let policy = match (criterion, &set) {
                (Criterion::Mfdr, _) if sampling.is_independent() => {
                    mfdr_policy_quadrature(sampling.mixture(), cfg.alpha)
                }
                (Criterion::Mfdr, Some(s)) => mfdr_policy_on(s, cfg.alpha, cfg.tol),
                (c, Some(s)) => calibrate_mu_on(s, cfg.alpha, c, cfg.tol),
                _ => unreachable!("a calibration set exists for every non-quadrature variant"),
            }
            .map_err(|e| attach(v, e))?;
            policies[i] = Some(policy);
        }
    }
    Ok(policies)
}

struct EstimatedRep {
    t: LocFdrVector,
    pi_hat: f64,
    model: TwoGroupModel,
}

fn estimate_rep(cfg: &ExperimentConfig, z: &[f64], streams: &StreamFactory) -> Result<EstimatedRep> {
    let em = EmConfig {
        seed: streams.key(),
        ..cfg.em.clone()
    };
    let fit = fit_mixture(z, &em)?;
    let mixture = fit.to_mixture()?;
    let t = z
        .iter()
        .map(|&zi| composite_locfdr(&fit, zi))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimatedRep {
        t: LocFdrVector::new(t)?,
        pi_hat: fit.pi_hat,
        model: TwoGroupModel::independent(z.len(), mixture)?,
    })
}

/// Runs the experiment: calibration, then `n_reps` shared replications.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let root = StreamFactory::new(cfg.seed);
    let policies = calibrate_variants(cfg, &root.derive(labels::CALIBRATION))?;
    let eval = root.derive(labels::EVALUATION);
    let est = root.derive(labels::ESTIMATION);
    let model = &cfg.model;
    let k = model.k();

    let wants = |pred: fn(&ProcedureVariant) -> bool| cfg.variants.iter().any(pred);
    let need_full = wants(|v| v.procedure == Procedure::Omt);
    let need_marg = wants(|v| matches!(v.procedure, Procedure::Marg | Procedure::Ind));
    let need_p = wants(|v| matches!(v.procedure, Procedure::Bh | Procedure::AdaptiveBh | Procedure::OracleBh));
    let fit_adaptive = cfg.adaptive_estimator == AdaptiveEstimator::Fit;
    let need_fit = wants(|v| matches!(v.procedure, Procedure::Est | Procedure::EstMfdr))
        || (fit_adaptive && wants(|v| v.procedure == Procedure::AdaptiveBh));

    let per_rep: Vec<Vec<(usize, usize)>> = (0..cfg.n_reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<(usize, usize)>> {
            let mut rng = eval.stream(r as u64);
            let sample = model.sample(&mut rng);
            let full = if need_full {
                Some(locfdr_with_limit(model, &sample.z, cfg.max_block_size)?)
            } else {
                None
            };
            let marg = if need_marg {
                Some(locfdr_marginal(model.mixture(), &sample.z)?)
            } else {
                None
            };
            let pvalues: Option<Vec<f64>> =
                need_p.then(|| sample.z.iter().map(|&z| model.mixture().null_cdf(z)).collect());
            let rep_streams = est.derive(r as u64);
            let fitted = if need_fit {
                Some(estimate_rep(cfg, &sample.z, &rep_streams.derive(labels::RESTARTS)))
            } else {
                None
            };

            let mut out = Vec::with_capacity(cfg.variants.len());
            for (i, v) in cfg.variants.iter().enumerate() {
                let d = match v.procedure {
                    Procedure::Omt => decide(policies[i].as_ref().expect("calibrated"), full.as_ref().expect("full")),
                    Procedure::Marg | Procedure::Ind => {
                        decide(policies[i].as_ref().expect("calibrated"), marg.as_ref().expect("marginal"))
                    }
                    Procedure::Bh => bh(pvalues.as_ref().expect("p"), cfg.alpha, None)?,
                    Procedure::OracleBh => bh(pvalues.as_ref().expect("p"), cfg.alpha, Some(1.0 - model.pi()))?,
                    Procedure::AdaptiveBh => {
                        let p = pvalues.as_ref().expect("p");
                        let pi_hat = if fit_adaptive {
                            fitted.as_ref().expect("fit").as_ref().map_err(|e| attach(v, e.clone()))?.pi_hat
                        } else {
                            storey_pi(p, cfg.storey_lambda)?
                        };
                        bh(p, cfg.alpha, Some((1.0 - pi_hat).max(1.0 / k as f64)))?
                    }
                    Procedure::EstMfdr => {
                        let f = fitted.as_ref().expect("fit").as_ref().map_err(|e| attach(v, e.clone()))?;
                        est_mfdr_stepup(f.t.t(), cfg.alpha)?
                    }
                    Procedure::Est => {
                        let f = fitted.as_ref().expect("fit").as_ref().map_err(|e| attach(v, e.clone()))?;
                        let criterion = v.criterion.expect("validated");
                        let policy = match criterion {
                            Criterion::Mfdr => mfdr_policy_quadrature(f.model.mixture(), cfg.alpha),
                            c => {
                                let sub = rep_streams.derive(labels::CALIBRATION);
                                let set = CalibrationSet::draw(
                                    &f.model,
                                    |z| locfdr_marginal(f.model.mixture(), z),
                                    cfg.est_n_cal,
                                    &sub,
                                )?;
                                calibrate_mu_on(&set, cfg.alpha, c, cfg.tol)
                            }
                        }
                        .map_err(|e| attach(v, e))?;
                        decide(&policy, &f.t)
                    }
                };
                out.push(sample.error_counts(&d));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let rows = cfg
        .variants
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let records: Vec<(usize, usize)> = per_rep.iter().map(|rep| rep[i]).collect();
            Ok(VariantReport {
                variant: *v,
                metrics: metrics_from_replications(&records)?,
                policy: policies[i].clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        rows,
        alpha: cfg.alpha,
        n_reps: cfg.n_reps,
        seed: cfg.seed,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MarginalMixture;

    #[test]
    fn metrics_examples() {
        let m = metrics_from_replications(&[(1, 2), (0, 0)]).unwrap();
        assert!((m.fdr - 0.25).abs() < 1e-15);
        assert_eq!(m.pfdr, Some(0.5));
        assert_eq!(m.prob_no_rejection, 0.5);
        assert!(m.identity_gap() < 1e-15);

        let single = metrics_from_replications(&[(0, 0)]).unwrap();
        assert_eq!(single.fdr, 0.0);
        assert_eq!(single.pfdr, None);
        assert_eq!(single.mfdr, None);

        let clean = metrics_from_replications(&[(0, 3), (0, 1), (0, 0)]).unwrap();
        assert_eq!((clean.fdr, clean.pfdr, clean.mfdr), (0.0, Some(0.0), Some(0.0)));
        assert!(metrics_from_replications(&[]).is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for name in [
            "OMT-FDR", "OMT-pFDR", "OMT-mFDR", "marg-FDR", "ind-mFDR", "est-OMT-FDR", "est-mFDR", "BH",
            "adaptive-BH", "oracle-BH",
        ] {
            let v: ProcedureVariant = name.parse().unwrap();
            assert_eq!(v.to_string(), name);
        }
        assert!("OMT".parse::<ProcedureVariant>().is_err());
        let json = serde_json::to_string(&ProcedureVariant::omt(Criterion::Pfdr)).unwrap();
        assert_eq!(json, "\"OMT-pFDR\"");
    }

    #[test]
    fn csv_renders_missing_as_dash() {
        let report = SimulationReport {
            rows: vec![VariantReport {
                variant: ProcedureVariant::baseline(Procedure::Bh),
                metrics: metrics_from_replications(&[(0, 0)]).unwrap(),
                policy: None,
            }],
            alpha: 0.05,
            n_reps: 1,
            seed: 0,
            wall_time_secs: 0.0,
        };
        let csv = report.to_csv();
        assert!(csv.starts_with(SimulationReport::CSV_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("BH,0.000000,0.000000,0.000000,0.000000,-,-,-,-,1.000000"));
    }

    #[test]
    fn small_experiment_is_deterministic() {
        let model = TwoGroupModel::independent(200, MarginalMixture::standard(0.2, -2.5).unwrap()).unwrap();
        let variants = ["OMT-FDR", "OMT-pFDR", "OMT-mFDR", "BH", "oracle-BH", "adaptive-BH"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let mut cfg = ExperimentConfig::new(model, variants);
        cfg.n_reps = 200;
        cfg.n_cal = 1000;
        cfg.seed = 17;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.max_identity_gap() < 1e-12);
        let fdr = a.metrics("OMT-FDR").unwrap();
        assert!(fdr.fdr < 0.05 + 4.0 * fdr.fdr_se + 0.01);
    }
}
