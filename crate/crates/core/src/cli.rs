//! Config-driven batch runner behind the `salem-lab` binary.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{self, EpsLModel, ThresholdInputs, VolumeRule};
use crate::error::{Result, SalemError};
use crate::mitigation::chain::{run_estimator, write_rows, ChainModel, Protocol};
use crate::mitigation::{
    baseline_curves, cg_overhead, ext_lem_overhead, fg_inputs, missing_mass_scan, ml_missing_flip, BaselineInputs, EstimatorSpec, Method,
    MissingScan, SubsetAction,
};
use crate::p2lc::{logical_inverse_norm, z_flip_rate, Conditioning, JointTable, P2lc};
use crate::steane::SteaneCycle;
use crate::surface::{self, DecodingGraph, SurfaceDecoder, SurfaceLayout, SyndromeBasis};

#[derive(Debug, Parser)]
#[command(name = "salem-lab", version, about = "Syndrome-aware logical error mitigation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (default: config `out`, then `./salem-out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Joint-table directory for `estimate` (default: `<out>/table`).
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// Worker threads; falls back to SALEM_LAB_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build the joint table and write the channel report.
    Characterize,
    /// Run the Monte Carlo estimators on a stored table.
    Estimate,
    /// Write the closed-form scan CSVs.
    Analytics,
    /// Quick internal consistency checks.
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Code {
    Steane,
    SurfaceD3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Lut,
    Mwpm,
    Ml,
}

fn default_max_weight() -> usize {
    2
}

fn default_tau() -> f64 {
    0.2
}

fn default_v_ec() -> f64 {
    75.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub code: Code,
    /// Physical error rate.
    pub eps: f64,
    #[serde(default = "default_max_weight")]
    pub max_weight: usize,
    /// Decoder used for the headline numbers; both decoders of the code are always reported.
    pub decoder: Option<DecoderKind>,
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub characterize: CharacterizeConfig,
    pub estimate: Option<EstimateConfig>,
    pub analytics: Option<AnalyticsConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CharacterizeConfig {
    /// Partition thresholds: `S1 = {s : eps_L|s > tau}` (Steane) or `{s : gap <= tau}` (surface).
    pub tau_grid: Vec<f64>,
    /// Partition used for EC+PS and the baseline inputs.
    pub tau: f64,
    /// `eps_L|missing` values of the missing-mass scan.
    pub missing_grid: Vec<f64>,
    /// Normalized volume `V eps_L` for mid-shot rates.
    pub midshot_v: f64,
    pub v_ec: f64,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        CharacterizeConfig {
            tau_grid: (0..=20).map(|i| i as f64 * 0.025).collect(),
            tau: default_tau(),
            missing_grid: (0..=10).map(|i| i as f64 * 0.1).collect(),
            midshot_v: 1.0,
            v_ec: default_v_ec(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Labels such as `ec`, `ext_lem`, `cg_salem:inv0_rej1`.
    pub methods: Vec<String>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    pub volumes: Vec<u32>,
    pub shots: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticsConfig {
    pub methods: Vec<Method>,
    /// Explicit baseline inputs; otherwise read from the first report.
    pub baseline: Option<BaselineInputs>,
    /// Characterization reports; their `(eps, eps_L)` pairs feed the power-law fit.
    pub reports: Vec<PathBuf>,
    pub eps_l_model: Option<EpsLModel>,
    pub eps_l_points: Vec<(f64, f64)>,
    /// Error-corrected shots per error-free shot.
    pub budget_factor: f64,
    /// Accuracy of the fig2a panel.
    pub delta: f64,
    pub volumes: Vec<f64>,
    pub deltas: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// `V = fig2c_v / eps` in the error-vs-eps panel.
    pub fig2c_v: f64,
    pub lambda: f64,
    pub rule: VolumeRule,
    pub threshold_v: Vec<f64>,
    pub msrej_aspects: Vec<f64>,
    pub msrej_v: Vec<f64>,
    pub msrej_eps_l: f64,
    pub msrej_p_rej_given_l: f64,
    pub msrej_eps_l_rej: f64,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            methods: crate::mitigation::BASELINE_METHODS.to_vec(),
            baseline: None,
            reports: Vec::new(),
            eps_l_model: None,
            eps_l_points: Vec::new(),
            budget_factor: 100.0,
            delta: 0.01,
            volumes: analytics::log_grid(10.0, 1e6, 41),
            deltas: analytics::log_grid(1e-3, 0.3, 21),
            eps_grid: analytics::log_grid(1e-4, 3e-2, 31),
            fig2c_v: 2.5,
            lambda: 4.0,
            rule: VolumeRule::Logical,
            threshold_v: analytics::log_grid(0.1, 100.0, 31),
            msrej_aspects: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0],
            msrej_v: analytics::log_grid(0.01, 100.0, 41),
            msrej_eps_l: 1e-6,
            msrej_p_rej_given_l: 0.5,
            msrej_eps_l_rej: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| SalemError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.75).contains(&self.eps) {
            return Err(SalemError::Config(format!("eps = {} outside [0, 0.75)", self.eps)));
        }
        match (self.code, self.decoder) {
            (Code::Steane, Some(DecoderKind::Mwpm)) | (Code::SurfaceD3, Some(DecoderKind::Lut)) => {
                return Err(SalemError::Config(format!("decoder {:?} does not apply to {:?}", self.decoder.unwrap(), self.code)));
            }
            _ => {}
        }
        if self.max_weight == 0 {
            return Err(SalemError::Config("max_weight must be >= 1".into()));
        }
        let c = &self.characterize;
        if c.missing_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(SalemError::Config("missing_grid values must lie in [0, 1]".into()));
        }
        if let Some(e) = &self.estimate {
            for m in &e.methods {
                EstimatorSpec::parse(m).and_then(|s| s.validate()).map_err(|err| SalemError::Config(err.to_string()))?;
            }
            if e.volumes.contains(&0) {
                return Err(SalemError::Config("volumes must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of the config text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Resolved run context.
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub seed: u64,
    pub out: PathBuf,
    pub table: PathBuf,
}

impl Run {
    pub fn new(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_ref().ok_or_else(|| SalemError::Config("--config is required".into()))?;
        let text = fs::read_to_string(path).map_err(|e| SalemError::Config(format!("{}: {e}", path.display())))?;
        Self::from_text(&text, cli)
    }

    pub fn from_text(text: &str, cli: &Cli) -> Result<Self> {
        let config = ExperimentConfig::from_toml(text)?;
        let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("salem-out"));
        let table = cli.table.clone().unwrap_or_else(|| out.join("table"));
        Ok(Run { seed: cli.seed.unwrap_or(config.seed), hash: config_hash(text), config, out, table })
    }

    fn create(&self, name: &str) -> Result<BufWriter<fs::File>> {
        fs::create_dir_all(&self.out)?;
        Ok(BufWriter::new(fs::File::create(self.out.join(name))?))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }
}

/// Thread count from the flag, then SALEM_LAB_THREADS, then the config.
pub fn thread_count(cli: &Cli, config_threads: Option<usize>) -> Option<usize> {
    cli.threads.or_else(|| std::env::var("SALEM_LAB_THREADS").ok().and_then(|v| v.parse().ok())).or(config_threads)
}

#[derive(Clone, Debug, Serialize)]
pub struct LambdaSummary {
    /// With the missing mass treated as a coin flip.
    pub mid: f64,
    pub min: f64,
    pub max: f64,
    pub scan_width: f64,
}

impl From<&MissingScan> for LambdaSummary {
    fn from(s: &MissingScan) -> Self {
        LambdaSummary { mid: s.mid, min: s.min, max: s.max, scan_width: s.width() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TauRow {
    pub tau: f64,
    pub p_s1: f64,
    pub eps_l0: f64,
    pub eps_l1: f64,
    pub p1_given_l: f64,
    pub lambda_rej: Option<f64>,
    pub lambda_inv: Option<f64>,
    pub lambda_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecoderReport {
    pub decoder: DecoderKind,
    pub eps_l: f64,
    pub lambda_fg: LambdaSummary,
    pub tau_scan: Vec<TauRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CharacterizeReport {
    pub config_hash: String,
    pub code: Code,
    pub eps: f64,
    pub max_weight: usize,
    /// Headline decoder (LUT / MWPM unless configured otherwise).
    pub decoder: DecoderKind,
    pub eps_l: f64,
    pub missing: f64,
    pub num_syndromes: usize,
    pub lambda_ext_lem: f64,
    pub decoders: Vec<DecoderReport>,
    pub optimum: Option<TauRow>,
    pub baseline: BaselineInputs,
}

fn best_row(rows: &[TauRow]) -> Option<TauRow> {
    rows.iter()
        .filter(|r| r.lambda_rej.is_some_and(f64::is_finite))
        .min_by(|a, b| a.lambda_rej.unwrap().total_cmp(&b.lambda_rej.unwrap()))
        .cloned()
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn steane_report(run: &Run, table: &JointTable, cycle: &SteaneCycle) -> Result<CharacterizeReport> {
    let cfg = &run.config;
    let cc = &cfg.characterize;
    let p2lc = P2lc::new(cycle, table);
    let cond = Conditioning::default();
    let mut decoders = Vec::new();
    let mut headline = None;
    for dec in [DecoderKind::Lut, DecoderKind::Ml] {
        let ch = if dec == DecoderKind::Ml { p2lc.characterize(cond).ml_corrected() } else { p2lc.characterize(cond) };
        let grid: Vec<f64> =
            if dec == DecoderKind::Ml { cc.missing_grid.iter().map(|&e| ml_missing_flip(e)).collect() } else { cc.missing_grid.clone() };
        let scan = missing_mass_scan(&fg_inputs(&ch), ch.eps_l, ch.missing, &grid)?;
        let mut rows = Vec::new();
        if dec == DecoderKind::Lut {
            for &tau in &cc.tau_grid {
                let part = ch.partition(tau);
                let stats = ch.subset_stats(&part);
                let acc = p2lc.accepted_channel(&part, cond).ok();
                let rej =
                    acc.as_ref().and_then(|a| cg_overhead(&stats, ch.eps_l, SubsetAction::Reject, Some((&a.channel, a.p_accept))).ok());
                let inv = cg_overhead(&stats, ch.eps_l, SubsetAction::Invert, None).ok();
                let ms = acc.as_ref().and_then(|a| {
                    analytics::midshot_lambda(logical_inverse_norm(&a.channel).powi(2), a.p_accept, ch.eps_l, cc.midshot_v).ok()
                });
                rows.push(TauRow {
                    tau,
                    p_s1: stats.p_s1,
                    eps_l0: stats.eps_l0,
                    eps_l1: stats.eps_l1,
                    p1_given_l: stats.p1_given_l,
                    lambda_rej: rej.and_then(|r| finite(r.lambda)),
                    lambda_inv: inv.and_then(|r| finite(r.lambda)),
                    lambda_ms: ms.and_then(finite),
                });
            }
        }
        if cfg.decoder.unwrap_or(DecoderKind::Lut) == dec {
            headline = Some(ch.clone());
        }
        decoders.push(DecoderReport { decoder: dec, eps_l: ch.eps_l, lambda_fg: (&scan).into(), tau_scan: rows });
    }
    let ch = headline.expect("decoder validated");
    let lut = p2lc.characterize(cond);
    let part = lut.partition(cc.tau);
    let acc = p2lc.accepted_channel(&part, cond)?;
    let stats = lut.subset_stats(&part);
    let lambda_salem = cg_overhead(&stats, lut.eps_l, SubsetAction::Reject, Some((&acc.channel, acc.p_accept)))?.lambda;
    let lambda_ext_lem = ext_lem_overhead(&lut.channel).lambda;
    let baseline = BaselineInputs {
        eps: cfg.eps,
        eps_l: lut.eps_l,
        flip_ec: z_flip_rate(&lut.channel),
        flip_ecps: z_flip_rate(&acc.channel),
        p_reject: 1.0 - acc.p_accept,
        lambda_ext: lambda_ext_lem,
        lambda_salem,
        v_ec: cc.v_ec,
    };
    Ok(CharacterizeReport {
        config_hash: run.hash.clone(),
        code: cfg.code,
        eps: cfg.eps,
        max_weight: cfg.max_weight,
        decoder: cfg.decoder.unwrap_or(DecoderKind::Lut),
        eps_l: ch.eps_l,
        missing: ch.missing,
        num_syndromes: table.num_keys(),
        lambda_ext_lem,
        optimum: best_row(&decoders[0].tau_scan),
        decoders,
        baseline,
    })
}

/// Binary partition of surface syndromes by matching gap: `S1 = {gap <= g}`.
fn surface_gap_row(c: &surface::SurfaceCharacterization, g: f64, midshot_v: f64) -> TauRow {
    let (mut p1, mut e1, mut p0, mut e0) = (0.0, 0.0, 0.0, 0.0);
    for &(_, p, e, gap) in &c.entries {
        if gap <= g {
            p1 += p;
            e1 += p * e;
        } else {
            p0 += p;
            e0 += p * e;
        }
    }
    let eps_l0 = if p0 > 0.0 { e0 / p0 } else { 0.0 };
    let eps_l1 = if p1 > 0.0 { e1 / p1 } else { 0.0 };
    let w0_sq = (1.0 - 2.0 * eps_l0).powi(-2);
    let w1_sq = (1.0 - 2.0 * eps_l1).powi(-2);
    let lambda_rej = (p0 > 0.0).then(|| (w0_sq / p0).ln() / c.eps_l);
    let lambda_inv = Some(crate::mitigation::harmonic_mean(&[p0, p1], &[w0_sq, w1_sq]).ln() / c.eps_l);
    let lambda_ms = (p0 > 0.0).then(|| analytics::midshot_lambda(w0_sq, p0, c.eps_l, midshot_v).ok()).flatten();
    TauRow {
        tau: g,
        p_s1: p1,
        eps_l0,
        eps_l1,
        p1_given_l: if c.eps_l > 0.0 { e1 / c.eps_l } else { 0.0 },
        lambda_rej: lambda_rej.and_then(finite),
        lambda_inv: lambda_inv.and_then(finite),
        lambda_ms: lambda_ms.and_then(finite),
    }
}

fn surface_report(run: &Run) -> Result<CharacterizeReport> {
    let cfg = &run.config;
    let cc = &cfg.characterize;
    let layout = SurfaceLayout::new(3, cfg.eps, SyndromeBasis::Full)?;
    let graph = DecodingGraph::from_layout(&layout);
    fs::create_dir_all(&run.out)?;
    fs::write(run.out.join("graph.json"), graph.to_json()? + "\n")?;
    let dist = layout.syndrome_distribution(cfg.max_weight);
    let mut decoders = Vec::new();
    let mut headline = None;
    for (kind, dec) in [(DecoderKind::Mwpm, SurfaceDecoder::Mwpm), (DecoderKind::Ml, SurfaceDecoder::MaximumLikelihood)] {
        let c = surface::characterize(&layout, &graph, &dist, dec);
        let grid: Vec<f64> =
            if kind == DecoderKind::Ml { cc.missing_grid.iter().map(|&e| ml_missing_flip(e)).collect() } else { cc.missing_grid.clone() };
        let scan = missing_mass_scan(&c.fg_inputs(), c.eps_l, c.missing, &grid)?;
        let rows = if kind == DecoderKind::Mwpm {
            cc.tau_grid.iter().map(|&g| surface_gap_row(&c, g, cc.midshot_v)).collect()
        } else {
            Vec::new()
        };
        decoders.push(DecoderReport { decoder: kind, eps_l: c.eps_l, lambda_fg: (&scan).into(), tau_scan: rows });
        if cfg.decoder.unwrap_or(DecoderKind::Mwpm) == kind {
            headline = Some(c);
        }
    }
    let c = headline.expect("decoder validated");
    let mwpm = &decoders[0];
    let lambda_ext_lem = (1.0 - 2.0 * mwpm.eps_l).powi(-2).ln() / mwpm.eps_l;
    let row = surface_gap_row(&surface::characterize(&layout, &graph, &dist, SurfaceDecoder::Mwpm), cc.tau, cc.midshot_v);
    let baseline = BaselineInputs {
        eps: cfg.eps,
        eps_l: mwpm.eps_l,
        flip_ec: mwpm.eps_l,
        flip_ecps: row.eps_l0,
        p_reject: row.p_s1,
        lambda_ext: lambda_ext_lem,
        lambda_salem: row.lambda_rej.unwrap_or(f64::INFINITY),
        v_ec: cc.v_ec,
    };
    Ok(CharacterizeReport {
        config_hash: run.hash.clone(),
        code: cfg.code,
        eps: cfg.eps,
        max_weight: cfg.max_weight,
        decoder: cfg.decoder.unwrap_or(DecoderKind::Mwpm),
        eps_l: c.eps_l,
        missing: c.missing,
        num_syndromes: c.entries.len(),
        lambda_ext_lem,
        optimum: best_row(&mwpm.tau_scan),
        decoders,
        baseline,
    })
}

pub fn cmd_characterize(run: &Run) -> Result<CharacterizeReport> {
    let cfg = &run.config;
    if cfg.max_weight > 4 {
        warn!("max_weight = {} enumerates a very large number of fault paths", cfg.max_weight);
    }
    let report = match cfg.code {
        Code::Steane => {
            let cycle = SteaneCycle::new(cfg.eps)?;
            let table = JointTable::build(&cycle, cfg.max_weight)?;
            table.save(&run.table, &run.hash)?;
            cycle.write_lut_csv(run.create("lut.csv")?)?;
            steane_report(run, &table, &cycle)?
        }
        Code::SurfaceD3 => surface_report(run)?,
    };
    run.write_json("report.json", &report)?;
    info!("eps_L = {:.4e} over {} syndromes", report.eps_l, report.num_syndromes);
    Ok(report)
}

/// Load the table or fail with [`SalemError::MissingTable`].
pub fn load_table(dir: &Path) -> Result<JointTable> {
    if !dir.join("table.json").exists() {
        return Err(SalemError::MissingTable(dir.display().to_string()));
    }
    JointTable::load(dir)
}

pub fn cmd_estimate(run: &Run) -> Result<usize> {
    let cfg = &run.config;
    let est = cfg.estimate.as_ref().ok_or_else(|| SalemError::Config("missing [estimate] section".into()))?;
    if cfg.code != Code::Steane {
        return Err(SalemError::Config("estimation runs on the steane joint table".into()));
    }
    let table = load_table(&run.table)?;
    let specs = est.methods.iter().map(|m| EstimatorSpec::parse(m)).collect::<Result<Vec<_>>>()?;
    if est.shots == 0 {
        warn!("shots = 0: writing header-only results");
    }
    let records = if est.shots == 0 || specs.is_empty() {
        Vec::new()
    } else {
        let cycle = SteaneCycle::new(table.eps_ph)?;
        let p2lc = P2lc::new(&cycle, &table);
        let proto = Protocol::new(&p2lc, est.tau)?;
        let chain = ChainModel::new(&table)?;
        run_estimator(&chain, &proto, &specs, &est.volumes, est.shots, run.seed)?
    };
    write_rows(&records, run.create("estimate.csv")?, &run.hash)?;
    run.write_json("estimate.json", &records)?;
    Ok(records.len())
}

fn read_report(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| SalemError::MissingFit(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Baseline inputs and `eps_L(eps)` model of an analytics run.
pub fn analytics_inputs(cfg: &AnalyticsConfig) -> Result<(BaselineInputs, EpsLModel)> {
    let reports = cfg.reports.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    let baseline = match (&cfg.baseline, reports.first()) {
        (Some(b), _) => *b,
        (None, Some(r)) => {
            serde_json::from_value(r["baseline"].clone()).map_err(|e| SalemError::MissingFit(format!("report baseline: {e}")))?
        }
        (None, None) => return Err(SalemError::MissingFit("no baseline inputs and no characterization report".into())),
    };
    let model = match &cfg.eps_l_model {
        Some(m) => m.clone(),
        None => {
            let mut pts = cfg.eps_l_points.clone();
            for r in &reports {
                if let (Some(e), Some(l)) = (r["eps"].as_f64(), r["eps_l"].as_f64()) {
                    pts.push((e, l));
                }
            }
            EpsLModel::fit_power_law(&pts)?
        }
    };
    model.validate()?;
    Ok((baseline, model))
}

pub fn cmd_analytics(run: &Run) -> Result<()> {
    let cfg = run.config.analytics.clone().unwrap_or_default();
    let (base, model) = analytics_inputs(&cfg)?;
    let h = &run.hash;
    let n = analytics::shot_budget(cfg.budget_factor, cfg.delta);
    let mut curves = baseline_curves(&base, &cfg.volumes, n);
    curves.retain(|p| cfg.methods.contains(&p.method));
    analytics::write_fig2a(&curves, run.create("fig2a.csv")?, h)?;
    let cvb = analytics::cvb_scan(&base, &cfg.methods, &cfg.deltas, cfg.budget_factor);
    analytics::write_fig2b(&cvb, run.create("fig2b.csv")?, h)?;
    let errs = analytics::error_vs_eps(&base, &model, &cfg.methods, &cfg.eps_grid, cfg.fig2c_v, n);
    analytics::write_fig2c(&errs, run.create("fig2c.csv")?, h)?;
    let ms = analytics::msrej_scan(&cfg.msrej_aspects, &cfg.msrej_v, cfg.msrej_eps_l, cfg.msrej_p_rej_given_l, cfg.msrej_eps_l_rej)?;
    analytics::write_msrej(&ms, run.create("msrej.csv")?, h)?;
    let inp = ThresholdInputs { lambda: cfg.lambda, lambda_salem: base.lambda_salem, v_ec: base.v_ec, model, rule: cfg.rule };
    let mut rows = Vec::new();
    for &v in &cfg.threshold_v {
        match analytics::solve_thresholds(&inp, v) {
            Ok(t) => rows.push(t),
            Err(SalemError::NoRoot { lo, hi }) => warn!("no threshold at v = {v} in [{lo:e}, {hi:e}]"),
            Err(e) => return Err(e),
        }
    }
    analytics::write_thresholds(&rows, inp.v0(), run.create("thresholds.csv")?, h)?;
    Ok(())
}

/// Cheap checks that exercise every layer; returns the failures.
pub fn cmd_selftest() -> Result<Vec<String>> {
    use crate::pauli::{invert_channel, PauliChannel};
    let mut fails = Vec::new();
    let mut check = |name: &str, ok: bool| {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            fails.push(name.to_string());
        }
    };
    let ch = PauliChannel::depolarizing(1, 0.05);
    let qp = invert_channel(&ch)?;
    let f = 1.0 - 4.0 * 0.05 / 3.0;
    check("depolarizing inverse norm", (qp.norm - (3.0 / f - 1.0) / 2.0).abs() < 1e-12);
    let cycle = SteaneCycle::new(0.0)?;
    let table = JointTable::build(&cycle, 1)?;
    let p2lc = P2lc::new(&cycle, &table);
    check("noiseless steane cycle has eps_L = 0", p2lc.characterize(Conditioning::default()).eps_l == 0.0);
    let proto = Protocol::new(&p2lc, 0.2)?;
    let chain = ChainModel::new(&table)?;
    let specs = [EstimatorSpec::new(Method::Ec), EstimatorSpec::new(Method::ExtLem), EstimatorSpec::cg(SubsetAction::Reject)];
    let rows = run_estimator(&chain, &proto, &specs, &[64], 256, 1)?;
    check("noiseless estimators return 1", rows.iter().all(|r| r.row.estimate == 1.0 && r.sigma_empirical == 0.0));
    let m = analytics::TimingModel::new(10.0, 1.0, 0.9)?;
    check("depth-one mid-shot equals rejection", (m.gamma_ms() - m.gamma_rej()).abs() < 1e-12);
    Ok(fails)
}

/// Process exit code of an error.
pub fn exit_code(e: &SalemError) -> i32 {
    match e {
        SalemError::Config(_) => 2,
        SalemError::MissingTable(_) => 3,
        SalemError::MissingFit(_) => 4,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.command == Command::Selftest {
        let fails = cmd_selftest()?;
        if !fails.is_empty() {
            return Err(SalemError::InvalidInput(format!("{} selftest checks failed", fails.len())));
        }
        return Ok(());
    }
    let run = Run::new(cli)?;
    if let Some(n) = thread_count(cli, run.config.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already set up: {e}");
        }
    }
    match cli.command {
        Command::Characterize => {
            cmd_characterize(&run)?;
        }
        Command::Estimate => {
            cmd_estimate(&run)?;
        }
        Command::Analytics => cmd_analytics(&run)?,
        Command::Selftest => unreachable!(),
    }
    Ok(())
}
