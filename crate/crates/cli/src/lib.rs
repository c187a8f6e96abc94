//! Command-line front end for `omt-core`.
//!
//! Every subcommand writes its outputs plus a `manifest.json` into
//! `--out-dir`. Exit codes: 0 success, 2 configuration error, 3 calibration
//! failure, 4 input-data error.

mod io;
mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use omt_core::estimate::{clamp_zscores, fit_mixture, EmConfig, FittedMixture};
use omt_core::locfdr::{locfdr_marginal, locfdr_with_limit, DEFAULT_MAX_BLOCK_SIZE};
use omt_core::model::std_normal_cdf;
use omt_core::policy::{bh, calibrate, decide, est_mfdr_stepup, CalibrationOptions};
use omt_core::{
    run_experiment, CalibratedPolicy, Criterion, ExperimentConfig, LocFdrVector, OmtError, StreamFactory,
    TwoGroupModel,
};
use serde::Serialize;

pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CALIBRATION: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    /// Library error raised while reading configuration (`data = false`) or
    /// while processing data (`data = true`).
    fn core(e: OmtError, data: bool) -> Self {
        let code = if e.is_calibration_failure() {
            EXIT_CALIBRATION
        } else {
            match root(&e) {
                OmtError::BlockTooLarge { .. }
                | OmtError::InvalidModel(_)
                | OmtError::NotPositiveDefinite(_)
                | OmtError::WrongDependence { .. }
                | OmtError::TooManyHypotheses { .. } => EXIT_CONFIG,
                _ if data => EXIT_INPUT,
                _ => EXIT_CONFIG,
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn root(e: &OmtError) -> &OmtError {
    match e {
        OmtError::Variant { source, .. } => root(source),
        other => other,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "omt", version, about = "Optimal multiple testing with FDR, pFDR and mFDR control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// Model or experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; drawn from the system and recorded when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel work.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Monte-Carlo replications (simulate).
    #[arg(long, global = true)]
    reps: Option<usize>,
    /// Calibration draws.
    #[arg(long = "cal-samples", global = true)]
    cal_samples: Option<usize>,
    /// Target error level [default: 0.05]
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// fdr, pfdr or mfdr [default: fdr]
    #[arg(long, global = true)]
    criterion: Option<Criterion>,
    /// Largest block handled by exact enumeration.
    #[arg(long = "max-block-size", global = true)]
    max_block_size: Option<usize>,
    /// Directory for outputs and manifest.json
    #[arg(long = "out-dir", global = true, default_value = "omt-out")]
    out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// locFDR of every statistic under the configured model.
    Locfdr {
        /// One-column CSV with header `z` or `p`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Calibrates a policy for the configured model.
    Calibrate,
    /// Applies a calibrated policy to a vector of statistics.
    Decide {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Monte-Carlo comparison of procedures.
    Simulate,
    /// Penalized normal-mixture fit.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        em: EmArgs,
    },
    /// Fit, then apply the estimated policies and the BH baselines.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        em: EmArgs,
    },
}

#[derive(Debug, Args)]
struct EmArgs {
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Estimate the null component instead of pinning it to N(0, 1).
    #[arg(long = "free-null")]
    free_null: bool,
    /// Pseudo-count on the null component.
    #[arg(long = "null-prior", default_value_t = 1.0)]
    null_prior: f64,
}

impl EmArgs {
    fn config(&self, seed: u64) -> EmConfig {
        let mut prior = vec![0.0; self.components.max(1)];
        prior[0] = self.null_prior;
        EmConfig {
            n_components: self.components,
            dirichlet_prior: Some(prior),
            pin_null: !self.free_null,
            seed,
            ..EmConfig::default()
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let name = cli.command.name();
    let mut run = Run::start(name, &cli.common);
    let outcome = run.execute(&cli);
    match outcome {
        Ok(()) => match run.finish(None) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {}", e.message);
                e.code
            }
        },
        Err(e) => {
            eprintln!("error: {}", e.message);
            let _ = run.finish(Some(&e));
            e.code
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Locfdr { .. } => "locfdr",
            Command::Calibrate => "calibrate",
            Command::Decide { .. } => "decide",
            Command::Simulate => "simulate",
            Command::Fit { .. } => "fit",
            Command::Analyze { .. } => "analyze",
        }
    }
}

struct Run {
    manifest: RunManifest,
    out_dir: PathBuf,
    dir_ready: bool,
}

impl Run {
    fn start(command: &str, common: &Common) -> Self {
        let seed = common.seed.unwrap_or_else(rand::random);
        Self {
            manifest: RunManifest::new(command, seed),
            out_dir: common.out_dir.clone(),
            dir_ready: false,
        }
    }

    fn seed(&self) -> u64 {
        self.manifest.seed
    }

    fn execute(&mut self, cli: &Cli) -> CliResult<()> {
        let c = &cli.common;
        if let Some(w) = c.workers {
            if w == 0 {
                return Err(CliError::config("--workers must be at least 1"));
            }
            // a pool already installed by an earlier call in this process is kept
            let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
        }
        if let Some(a) = c.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(CliError::config(format!("--alpha must lie in (0, 1), got {a}")));
            }
        }
        match &cli.command {
            Command::Locfdr { input } => self.locfdr(c, input),
            Command::Calibrate => self.calibrate(c),
            Command::Decide { policy, input } => self.decide(c, policy, input),
            Command::Simulate => self.simulate(c),
            Command::Fit { input, em } => self.fit(input, em),
            Command::Analyze { input, em } => self.analyze(c, input, em),
        }
    }

    fn prepare_dir(&mut self) -> CliResult<()> {
        if !self.dir_ready {
            std::fs::create_dir_all(&self.out_dir).map_err(|e| {
                CliError::config(format!("cannot create output directory {}: {e}", self.out_dir.display()))
            })?;
            self.dir_ready = true;
        }
        Ok(())
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        self.prepare_dir()?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable output");
        text.push('\n');
        self.write(name, &text)
    }

    fn finish(mut self, error: Option<&CliError>) -> CliResult<()> {
        if error.is_some() && !self.dir_ready && !self.out_dir.is_dir() {
            return Ok(());
        }
        self.manifest.finish(error.map(|e| e.message.clone()));
        self.prepare_dir()?;
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest).expect("serializable manifest") + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
    }

    fn load_config(&mut self, common: &Common) -> CliResult<serde_json::Value> {
        let path = common
            .config
            .as_ref()
            .ok_or_else(|| CliError::config("--config is required for this command"))?;
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        self.manifest.set_config(path, &bytes);
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::config(format!("cannot parse config {}: {e}", path.display())))
    }

    /// The model of a model or experiment configuration.
    fn load_model(&mut self, common: &Common) -> CliResult<TwoGroupModel> {
        let mut value = self.load_config(common)?;
        if let Some(m) = value.get_mut("model") {
            value = m.take();
        }
        let model: TwoGroupModel =
            serde_json::from_value(value).map_err(|e| CliError::config(format!("invalid model: {e}")))?;
        let cap = common.max_block_size.unwrap_or(DEFAULT_MAX_BLOCK_SIZE);
        model.check_block_limit(cap).map_err(|e| CliError::core(e, false))?;
        Ok(model)
    }

    fn read_z(&mut self, path: &Path) -> CliResult<Vec<f64>> {
        let (kind, values) = io::read_vector(path)?;
        match kind {
            io::Kind::Z => Ok(values),
            io::Kind::P => {
                let mut rng = StreamFactory::new(self.seed()).derive(CLAMP_LABEL).stream(0);
                let c = clamp_zscores(&values, &mut rng).map_err(|e| CliError::core(e, true))?;
                let n = c.n_clamped();
                if n > 0 {
                    self.manifest
                        .warnings
                        .push(format!("{n} extreme p-values clamped to |z| = 6 plus noise"));
                }
                Ok(c.z)
            }
        }
    }

    fn locfdr(&mut self, c: &Common, input: &Path) -> CliResult<()> {
        let model = self.load_model(c)?;
        let z = self.read_z(input)?;
        let cap = c.max_block_size.unwrap_or(DEFAULT_MAX_BLOCK_SIZE);
        let t = locfdr_with_limit(&model, &z, cap).map_err(|e| CliError::core(e, true))?;
        let csv = io::columns_csv(&[("z", Col::F(&z)), ("locfdr", Col::F(t.t()))]);
        self.write("locfdr.csv", &csv)
    }

    fn calibrate(&mut self, c: &Common) -> CliResult<()> {
        let model = self.load_model(c)?;
        let opts = CalibrationOptions {
            n_cal: c.cal_samples.unwrap_or(CalibrationOptions::default().n_cal),
            seed: self.seed(),
            max_block_size: c.max_block_size.unwrap_or(DEFAULT_MAX_BLOCK_SIZE),
            ..CalibrationOptions::default()
        };
        let criterion = c.criterion.unwrap_or(Criterion::Fdr);
        let policy = calibrate(&model, c.alpha.unwrap_or(0.05), criterion, &opts)
            .map_err(|e| CliError::core(e, false))?;
        self.note_policy(&policy);
        self.write_json("policy.json", &policy)
    }

    fn note_policy(&mut self, policy: &CalibratedPolicy) {
        if let Some(d) = &policy.diagnostics {
            if d.grid_fallback {
                self.manifest
                    .warnings
                    .push("constraint was not monotone in mu; calibration fell back to grid search".into());
            }
            if let Some(kind) = &d.degenerate {
                self.manifest.warnings.push(format!("degenerate mFDR policy: {kind}"));
            }
        }
    }

    fn decide(&mut self, c: &Common, policy_path: &Path, input: &Path) -> CliResult<()> {
        let model = self.load_model(c)?;
        let text = std::fs::read_to_string(policy_path)
            .map_err(|e| CliError::config(format!("cannot read policy {}: {e}", policy_path.display())))?;
        let policy: CalibratedPolicy = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("cannot parse policy {}: {e}", policy_path.display())))?;
        let z = self.read_z(input)?;
        let cap = c.max_block_size.unwrap_or(DEFAULT_MAX_BLOCK_SIZE);
        let t = locfdr_with_limit(&model, &z, cap).map_err(|e| CliError::core(e, true))?;
        let d = decide(&policy, &t);
        self.write("decisions.csv", &io::columns_csv(&[("decision", Col::B(&d))]))
    }

    fn simulate(&mut self, c: &Common) -> CliResult<()> {
        let value = self.load_config(c)?;
        let mut cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| CliError::config(format!("invalid experiment config: {e}")))?;
        cfg.seed = self.seed();
        if let Some(r) = c.reps {
            cfg.n_reps = r;
        }
        if let Some(n) = c.cal_samples {
            cfg.n_cal = n;
        }
        if let Some(a) = c.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = c.max_block_size {
            cfg.max_block_size = b;
        }
        cfg.em.seed = cfg.seed;
        cfg.validate().map_err(|e| CliError::core(e, false))?;
        let report = run_experiment(&cfg).map_err(|e| CliError::core(e, false))?;
        for row in &report.rows {
            if let Some(p) = &row.policy {
                if p.diagnostics.as_ref().is_some_and(|d| d.grid_fallback) {
                    self.manifest
                        .warnings
                        .push(format!("{}: calibration fell back to grid search", row.variant));
                }
            }
        }
        self.write("report.csv", &report.to_csv())?;
        self.write_json("report.json", &report)
    }

    fn fit_input(&mut self, input: &Path, em: &EmArgs) -> CliResult<(Vec<f64>, FittedMixture)> {
        let z = self.read_z(input)?;
        let fit = fit_mixture(&z, &em.config(self.seed())).map_err(|e| CliError::core(e, true))?;
        if fit.degenerate_restarts > 0 {
            self.manifest
                .warnings
                .push(format!("{} EM restarts degenerated", fit.degenerate_restarts));
        }
        Ok((z, fit))
    }

    fn fit(&mut self, input: &Path, em: &EmArgs) -> CliResult<()> {
        let (_, fit) = self.fit_input(input, em)?;
        let mixture = fit.to_mixture().ok();
        self.write_json("mixture.json", &FitOutput { fit: &fit, mixture })
    }

    fn analyze(&mut self, c: &Common, input: &Path, em: &EmArgs) -> CliResult<()> {
        let alpha = c.alpha.unwrap_or(0.05);
        let criterion = c.criterion.unwrap_or(Criterion::Fdr);
        let (z, fit) = self.fit_input(input, em)?;
        let k = z.len();
        let mixture = fit.to_mixture().map_err(|e| CliError::core(e, true))?;
        let model = TwoGroupModel::independent(k, mixture.clone()).map_err(|e| CliError::core(e, true))?;
        let t: LocFdrVector = locfdr_marginal(&mixture, &z).map_err(|e| CliError::core(e, true))?;
        let opts = CalibrationOptions {
            n_cal: c.cal_samples.unwrap_or(CalibrationOptions::default().n_cal),
            seed: self.seed(),
            ..CalibrationOptions::default()
        };
        let policy = calibrate(&model, alpha, criterion, &opts).map_err(|e| CliError::core(e, true))?;
        self.note_policy(&policy);
        let est_omt = decide(&policy, &t);
        let est_mfdr = est_mfdr_stepup(t.t(), alpha).map_err(|e| CliError::core(e, true))?;
        let p: Vec<f64> = z.iter().map(|&v| std_normal_cdf(v)).collect();
        let plain = bh(&p, alpha, None).map_err(|e| CliError::core(e, true))?;
        let adaptive =
            bh(&p, alpha, Some((1.0 - fit.pi_hat).max(1.0 / k as f64))).map_err(|e| CliError::core(e, true))?;

        let omt_name = format!("est_omt_{}", criterion.to_string().to_ascii_lowercase());
        let csv = io::columns_csv(&[
            ("z", Col::F(&z)),
            ("locfdr", Col::F(t.t())),
            (&omt_name, Col::B(&est_omt)),
            ("est_mfdr", Col::B(&est_mfdr)),
            ("bh", Col::B(&plain)),
            ("adaptive_bh", Col::B(&adaptive)),
        ]);
        self.write("analysis.csv", &csv)?;
        let count = |d: &[bool]| d.iter().filter(|&&x| x).count();
        let summary = AnalysisSummary {
            k,
            alpha,
            pi_hat: fit.pi_hat,
            policy: &policy,
            rejections: vec![
                (omt_name.clone(), count(&est_omt)),
                ("est_mfdr".into(), count(&est_mfdr)),
                ("bh".into(), count(&plain)),
                ("adaptive_bh".into(), count(&adaptive)),
            ],
            fit: &fit,
        };
        self.write_json("summary.json", &summary)
    }
}

const CLAMP_LABEL: u64 = 0x636c_616d;

pub(crate) enum Col<'a> {
    F(&'a [f64]),
    B(&'a [bool]),
}

#[derive(Serialize)]
struct FitOutput<'a> {
    fit: &'a FittedMixture,
    mixture: Option<omt_core::MarginalMixture>,
}

#[derive(Serialize)]
struct AnalysisSummary<'a> {
    k: usize,
    alpha: f64,
    pi_hat: f64,
    policy: &'a CalibratedPolicy,
    rejections: Vec<(String, usize)>,
    fit: &'a FittedMixture,
}
