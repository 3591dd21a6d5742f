//! End-to-end analysis: ingest, fit, influence diagnostics, bootstrap
//! calibration, and the report tables written as TSV and JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bootstrap::{self, BootstrapConfig, LooBootstrap, LrtBootstrap, StatisticId};
use crate::diagnostics::{DiagnosticsConfig, InfluenceAnalysis, PsiRatio, TemporaryReference};
use crate::error::{Context, Error, Result};
use crate::ingest::{self, Dataset, ParseConfig, PrepConfig, TreatmentId, Trial};
use crate::model::{Method, Model, ModelFit};

/// Normal critical value for two-sided 5% residual tests and Wald intervals.
pub const Z_975: f64 = 1.959_963_984_540_054;
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum OutputFormat {
    Tsv,
    Json,
}

/// How the per-criterion flags are combined into the flagged-trial list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlagRule {
    /// Flagged by any criterion.
    Union,
    /// Flagged by at least this many criteria (capped at the number evaluated).
    AtLeast(usize),
}

impl Default for FlagRule {
    fn default() -> Self {
        FlagRule::AtLeast(2)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub reference: String,
    pub method: Method,
    /// `None` disables the bootstrap; normal and chi-square criteria are used.
    pub bootstrap: Option<BootstrapConfig>,
    pub exclusions: Vec<u32>,
    pub out_dir: Option<PathBuf>,
    pub formats: Vec<OutputFormat>,
    pub temporary_reference: TemporaryReference,
    pub flag_rule: FlagRule,
    pub prep: PrepConfig,
    pub parallel: bool,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            reference: "Placebo".into(),
            method: Method::Reml,
            bootstrap: Some(BootstrapConfig::default()),
            exclusions: Vec::new(),
            out_dir: None,
            formats: vec![OutputFormat::Tsv, OutputFormat::Json],
            temporary_reference: TemporaryReference::default(),
            flag_rule: FlagRule::default(),
            prep: PrepConfig::default(),
            parallel: true,
        }
    }

    fn parse_config(&self) -> ParseConfig {
        ParseConfig {
            reference: self.reference.clone(),
            ..ParseConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OddsRatio {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

impl OddsRatio {
    /// Wald interval on the log scale.
    pub fn from_log(est: f64, var: f64) -> Self {
        let se = var.max(0.0).sqrt();
        Self {
            estimate: est.exp(),
            lower: (est - Z_975 * se).exp(),
            upper: (est + Z_975 * se).exp(),
        }
    }
}

/// Odds ratios of row treatment against column treatment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeagueTable {
    pub treatments: Vec<String>,
    /// `cells[a][b]` is the odds ratio of `a` relative to `b`; `None` when
    /// either treatment is not estimable.
    pub cells: Vec<Vec<Option<OddsRatio>>>,
    pub heterogeneity_sd: f64,
    pub trials: usize,
    pub participants: f64,
}

impl LeagueTable {
    pub fn from_fit(fit: &ModelFit, dataset: &Dataset) -> Self {
        let n = dataset.treatments.len();
        let cells = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| {
                        fit.contrast(TreatmentId(a), TreatmentId(b))
                            .map(|(est, var)| OddsRatio::from_log(est, var))
                    })
                    .collect()
            })
            .collect();
        Self {
            treatments: dataset.treatments.iter().map(|t| t.label).collect(),
            cells,
            heterogeneity_sd: fit.tau(),
            trials: dataset.trials.len(),
            participants: dataset.trials.iter().map(Trial::participants).sum(),
        }
    }

    pub fn cell(&self, a: &str, b: &str) -> Option<OddsRatio> {
        let ia = self.treatments.iter().position(|t| t == a)?;
        let ib = self.treatments.iter().position(|t| t == b)?;
        self.cells[ia][ib]
    }

    /// Treatments against the reference, ascending by odds ratio.
    pub fn forest(&self) -> Vec<ForestRow> {
        let mut rows: Vec<ForestRow> = self
            .cells
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(a, row)| {
                row[0].map(|or| ForestRow {
                    rank: 0,
                    treatment: self.treatments[a].clone(),
                    odds_ratio: or,
                })
            })
            .collect();
        rows.sort_by(|x, y| x.odds_ratio.estimate.total_cmp(&y.odds_ratio.estimate));
        for (i, r) in rows.iter_mut().enumerate() {
            r.rank = i + 1;
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForestRow {
    pub rank: usize,
    pub treatment: String,
    pub odds_ratio: OddsRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub method: Method,
    pub reference: String,
    pub tau: f64,
    pub tau2: f64,
    pub loglik: f64,
    pub trials: usize,
    pub participants: f64,
    pub treatments: Vec<String>,
    pub excluded: Vec<u32>,
    pub bootstrap_replicates: usize,
    pub bootstrap_seed: Option<u64>,
    pub bootstrap_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub trial_id: u32,
    pub study: String,
    /// Residuals refer to the log odds ratio of `treatment` relative to
    /// `reference`.
    pub treatment: String,
    pub reference: String,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
    pub boot_lo: Option<f64>,
    pub boot_hi: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureRow {
    pub trial_id: u32,
    pub study: String,
    pub value: Option<f64>,
    /// Why `value` is missing, if it is.
    pub note: Option<String>,
    pub boot_p5: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrtRow {
    pub trial_id: u32,
    pub study: String,
    pub statistic: f64,
    pub df: usize,
    pub chi2_p: f64,
    pub boot_p95: Option<f64>,
    pub boot_p: Option<f64>,
    pub flagged: bool,
}

/// Per-trial outcome of each criterion; `None` when it was not evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlagRow {
    pub trial_id: u32,
    pub study: String,
    pub residual: Option<bool>,
    pub covratio: Option<bool>,
    pub psiratio: Option<bool>,
    pub lrt: Option<bool>,
    pub count: usize,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sensitivity {
    pub excluded: Vec<u32>,
    pub before: LeagueTable,
    pub after: LeagueTable,
    pub forest_before: Vec<ForestRow>,
    pub forest_after: Vec<ForestRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub summary: ModelSummary,
    pub league: LeagueTable,
    pub forest: Vec<ForestRow>,
    /// Sorted by decreasing `|psi|`.
    pub residuals: Vec<ResidualRow>,
    /// Sorted ascending.
    pub covratio: Vec<MeasureRow>,
    /// Sorted ascending.
    pub psiratio: Vec<MeasureRow>,
    /// Sorted by bootstrap p-value, or the chi-square p-value without bootstrap.
    pub lrt: Vec<LrtRow>,
    pub flags: Vec<FlagRow>,
    pub flag_rule: FlagRule,
    /// Study names of flagged trials, in trial order.
    pub flagged: Vec<String>,
    /// Re-analysis without the flagged trials; `None` when nothing is flagged.
    pub sensitivity: Option<Sensitivity>,
    /// Set when the sensitivity re-analysis could not be run.
    pub sensitivity_note: Option<String>,
}

/// Study label, with the year appended when another trial shares the label.
pub fn study_name(dataset: &Dataset, trial: &Trial) -> String {
    let shared = dataset.trials.iter().filter(|t| t.label == trial.label).count() > 1;
    match (shared, trial.year) {
        (true, Some(y)) => format!("{} ({y})", trial.label),
        _ => trial.label.clone(),
    }
}

/// Contrasts of a validated dataset.
fn prepare(dataset: &Dataset, prep: &PrepConfig) -> Result<Vec<ingest::ContrastData>> {
    ingest::validate_network(&dataset.trials, &dataset.treatments)?;
    ingest::build_contrasts(&dataset.trials, prep)
}

fn fit_table(dataset: &Dataset, prep: &PrepConfig, method: Method) -> Result<(ModelFit, LeagueTable)> {
    let contrasts = prepare(dataset, prep)?;
    let model = Model::new(dataset.treatments.p());
    let fit = model.fit(&contrasts, method)?;
    let table = LeagueTable::from_fit(&fit, dataset);
    Ok((fit, table))
}

/// League tables and forest data with and without `exclusions`.
pub fn sensitivity_analysis(
    dataset: &Dataset,
    prep: &PrepConfig,
    method: Method,
    exclusions: &[u32],
) -> Result<Sensitivity> {
    let (_, before) = fit_table(dataset, prep, method).context(|| "model fit")?;
    let reduced = dataset.excluding(exclusions)?;
    let (_, after) = fit_table(&reduced, prep, method)
        .context(|| format!("model fit without trials {exclusions:?}"))?;
    Ok(Sensitivity {
        excluded: exclusions.to_vec(),
        forest_before: before.forest(),
        forest_after: after.forest(),
        before,
        after,
    })
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let full = ingest::read_trials(&config.input, &config.parse_config())
        .context(|| format!("reading {}", config.input.display()))?;
    full.excluding(&config.exclusions)
}

pub fn run_analysis(config: &RunConfig) -> Result<Report> {
    let dataset = load_dataset(config)?;
    analyze(&dataset, config)
}

/// [`run_analysis`] on an already loaded dataset (exclusions already applied).
pub fn analyze(dataset: &Dataset, config: &RunConfig) -> Result<Report> {
    let contrasts = prepare(dataset, &config.prep).context(|| "data preparation")?;
    let model = Model::new(dataset.treatments.p());
    let rule = config.temporary_reference;

    let fit = model.fit(&contrasts, config.method).context(|| "model fit")?;
    let league = LeagueTable::from_fit(&fit, dataset);

    let diag_config = DiagnosticsConfig {
        temporary_reference: rule,
        parallel: config.parallel,
    };
    let analysis =
        InfluenceAnalysis::compute(&model, &contrasts, &diag_config).context(|| "diagnostics")?;

    let boot = match &config.bootstrap {
        Some(b) => {
            let b = BootstrapConfig {
                parallel: config.parallel,
                ..b.clone()
            };
            let loo = bootstrap::bootstrap_loo(&model, &contrasts, &analysis.reml_fit, rule, &b)
                .context(|| "bootstrap of leave-one-out measures")?;
            let lrt = bootstrap::bootstrap_lrt_all(&model, &contrasts, rule, &b)
                .context(|| "bootstrap of likelihood ratio statistics")?;
            Some((b, loo, lrt))
        }
        None => None,
    };

    let name = |id: u32| {
        dataset
            .trial(id)
            .map(|t| study_name(dataset, t))
            .unwrap_or_else(|| id.to_string())
    };
    let label = |t: TreatmentId| dataset.treatments.label(t).to_string();
    let loo_boot: Option<&LooBootstrap> = boot.as_ref().map(|(_, l, _)| l);

    let mut residuals: Vec<ResidualRow> = analysis
        .residuals
        .iter()
        .map(|r| {
            let interval = loo_boot.and_then(|lb| {
                let d = lb.residuals.get(&StatisticId::Psi {
                    trial_id: r.trial_id,
                    treatment: r.treatment,
                    reference: r.reference,
                })?;
                Some((d.percentile(0.025).ok()?, d.percentile(0.975).ok()?))
            });
            let flagged = match (r.psi, loo_boot, interval) {
                (Some(psi), Some(_), Some((lo, hi))) => psi < lo || psi > hi,
                (Some(_), Some(_), None) => false,
                (Some(psi), None, _) => psi.abs() > Z_975,
                (None, ..) => false,
            };
            ResidualRow {
                trial_id: r.trial_id,
                study: name(r.trial_id),
                treatment: label(r.treatment),
                reference: label(r.reference),
                phi: r.phi,
                psi: r.psi,
                boot_lo: interval.map(|i| i.0),
                boot_hi: interval.map(|i| i.1),
                flagged,
            }
        })
        .collect();
    residuals.sort_by(|a, b| {
        let key = |r: &ResidualRow| r.psi.map(f64::abs).unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then(a.trial_id.cmp(&b.trial_id))
    });

    let p5 = |d: Option<&bootstrap::BootstrapDistribution>| d.and_then(|d| d.percentile(0.05).ok());
    let mut covratio = Vec::new();
    let mut psiratio = Vec::new();
    for t in &analysis.trials {
        let cp5 = p5(loo_boot.and_then(|lb| lb.covratio.get(&t.trial_id)));
        covratio.push(MeasureRow {
            trial_id: t.trial_id,
            study: name(t.trial_id),
            value: t.covratio,
            note: t.covratio.is_none().then(|| "not estimable without this trial".to_string()),
            boot_p5: cp5,
            flagged: matches!((t.covratio, cp5), (Some(v), Some(c)) if v < c),
        });
        let value = t.psiratio.and_then(PsiRatio::value);
        let note = match t.psiratio {
            Some(PsiRatio::ZeroHeterogeneity) => Some("undefined: zero heterogeneity".to_string()),
            None => Some("not estimable without this trial".to_string()),
            Some(PsiRatio::Value(_)) => None,
        };
        let pp5 = p5(loo_boot.and_then(|lb| lb.psiratio.get(&t.trial_id)));
        psiratio.push(MeasureRow {
            trial_id: t.trial_id,
            study: name(t.trial_id),
            value,
            note,
            boot_p5: pp5,
            flagged: matches!((value, pp5), (Some(v), Some(c)) if v < c),
        });
    }
    let ascending = |a: &MeasureRow, b: &MeasureRow| {
        let key = |r: &MeasureRow| r.value.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.trial_id.cmp(&b.trial_id))
    };
    covratio.sort_by(ascending);
    psiratio.sort_by(ascending);

    let lrt_boot = boot.as_ref().map(|(_, _, l)| l);
    let mut lrt: Vec<LrtRow> = analysis
        .lrt
        .iter()
        .map(|t| {
            let b: Option<&LrtBootstrap> = lrt_boot.and_then(|m| m.get(&t.trial_id));
            let boot_p = b.map(|b| b.p_value);
            LrtRow {
                trial_id: t.trial_id,
                study: name(t.trial_id),
                statistic: t.statistic,
                df: t.df,
                chi2_p: t.chi2_p,
                boot_p95: b.and_then(|b| b.distribution.percentile(0.95).ok()),
                boot_p,
                flagged: boot_p.unwrap_or(t.chi2_p) < ALPHA,
            }
        })
        .collect();
    lrt.sort_by(|a, b| {
        let key = |r: &LrtRow| r.boot_p.unwrap_or(r.chi2_p);
        key(a)
            .total_cmp(&key(b))
            .then(b.statistic.total_cmp(&a.statistic))
            .then(a.trial_id.cmp(&b.trial_id))
    });

    let bootstrapped = boot.is_some();
    let flags: Vec<FlagRow> = dataset
        .trials
        .iter()
        .map(|trial| {
            let id = trial.id;
            let residual = Some(residuals.iter().any(|r| r.trial_id == id && r.flagged));
            let measure = |rows: &[MeasureRow]| {
                let row = rows.iter().find(|r| r.trial_id == id)?;
                (bootstrapped && row.value.is_some() && row.boot_p5.is_some()).then_some(row.flagged)
            };
            let covratio = measure(&covratio);
            let psiratio = measure(&psiratio);
            let lrt = lrt.iter().find(|r| r.trial_id == id).map(|r| r.flagged);
            let evaluated = [residual, covratio, psiratio, lrt];
            let count = evaluated.iter().filter(|f| **f == Some(true)).count();
            let available = evaluated.iter().filter(|f| f.is_some()).count();
            let flagged = match config.flag_rule {
                FlagRule::Union => count > 0,
                FlagRule::AtLeast(k) => count > 0 && count >= k.min(available),
            };
            FlagRow {
                trial_id: id,
                study: name(id),
                residual,
                covratio,
                psiratio,
                lrt,
                count,
                flagged,
            }
        })
        .collect();
    let flagged: Vec<String> = flags.iter().filter(|f| f.flagged).map(|f| f.study.clone()).collect();
    let flagged_ids: Vec<u32> = flags.iter().filter(|f| f.flagged).map(|f| f.trial_id).collect();

    let (sensitivity, sensitivity_note) = if flagged_ids.is_empty() {
        (None, None)
    } else {
        match sensitivity_analysis(dataset, &config.prep, config.method, &flagged_ids) {
            Ok(s) => (Some(s), None),
            Err(e @ Error::Disconnected { .. }) => (None, Some(e.to_string())),
            Err(e) if !e.is_numerical() => {
                return Err(e).context(|| "sensitivity analysis");
            }
            Err(e) => (None, Some(e.to_string())),
        }
    };

    let summary = ModelSummary {
        method: config.method,
        reference: dataset.treatments.reference().label,
        tau: fit.tau(),
        tau2: fit.tau2,
        loglik: fit.loglik,
        trials: dataset.trials.len(),
        participants: league.participants,
        treatments: league.treatments.clone(),
        excluded: config.exclusions.clone(),
        bootstrap_replicates: boot.as_ref().map_or(0, |(b, ..)| b.replicates),
        bootstrap_seed: boot.as_ref().map(|(b, ..)| b.seed),
        bootstrap_failures: boot.as_ref().map_or(0, |(_, l, _)| l.failures),
    };

    Ok(Report {
        summary,
        forest: league.forest(),
        league,
        residuals,
        covratio,
        psiratio,
        lrt,
        flags,
        flag_rule: config.flag_rule,
        flagged,
        sensitivity,
        sensitivity_note,
    })
}

/// `%g`-style formatting with six significant digits.
pub fn format_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        trim_zeros(&format!("{x:.*}", (5 - exp) as usize)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_g6).unwrap_or_else(|| "NA".into())
}

fn opt_bool(x: Option<bool>) -> &'static str {
    match x {
        Some(true) => "yes",
        Some(false) => "no",
        None => "NA",
    }
}

fn yes_no(x: bool) -> &'static str {
    if x {
        "yes"
    } else {
        "no"
    }
}

fn league_tsv(table: &LeagueTable) -> String {
    let mut s = String::from("treatment\tversus\tor\tlower\tupper\n");
    for (a, row) in table.cells.iter().enumerate() {
        for (b, cell) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                table.treatments[a],
                table.treatments[b],
                opt(cell.map(|c| c.estimate)),
                opt(cell.map(|c| c.lower)),
                opt(cell.map(|c| c.upper)),
            );
        }
    }
    s
}

fn forest_tsv(rows: &[ForestRow], reference: &str) -> String {
    let mut s = String::from("rank\ttreatment\tversus\tor\tlower\tupper\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.rank,
            r.treatment,
            reference,
            format_g6(r.odds_ratio.estimate),
            format_g6(r.odds_ratio.lower),
            format_g6(r.odds_ratio.upper),
        );
    }
    s
}

impl Report {
    /// TSV files keyed by file name.
    pub fn tsv_files(&self) -> Vec<(&'static str, String)> {
        let sm = &self.summary;
        let mut summary = String::from("key\tvalue\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(summary, "{k}\t{v}");
        };
        kv("method", sm.method.to_string());
        kv("reference", sm.reference.clone());
        kv("tau", format_g6(sm.tau));
        kv("tau2", format_g6(sm.tau2));
        kv("loglik", format_g6(sm.loglik));
        kv("trials", sm.trials.to_string());
        kv("participants", format_g6(sm.participants));
        kv("treatments", sm.treatments.join(","));
        kv(
            "excluded",
            sm.excluded.iter().map(u32::to_string).collect::<Vec<_>>().join(","),
        );
        kv("bootstrap_replicates", sm.bootstrap_replicates.to_string());
        kv("bootstrap_seed", sm.bootstrap_seed.map_or("NA".into(), |s| s.to_string()));
        kv("bootstrap_failures", sm.bootstrap_failures.to_string());
        kv("flagged", self.flagged.join(","));

        let mut residuals =
            String::from("trial_id\tstudy\ttreatment\treference\tphi\tpsi\tboot_lo\tboot_hi\tflagged\n");
        for r in &self.residuals {
            let _ = writeln!(
                residuals,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.trial_id,
                r.study,
                r.treatment,
                r.reference,
                opt(r.phi),
                opt(r.psi),
                opt(r.boot_lo),
                opt(r.boot_hi),
                yes_no(r.flagged),
            );
        }

        let measure = |rows: &[MeasureRow], name: &str| {
            let mut s = format!("trial_id\tstudy\t{name}\tboot_p5\tflagged\tnote\n");
            for r in rows {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.trial_id,
                    r.study,
                    opt(r.value),
                    opt(r.boot_p5),
                    yes_no(r.flagged),
                    r.note.as_deref().unwrap_or(""),
                );
            }
            s
        };

        let mut lrt = String::from("trial_id\tstudy\tstatistic\tdf\tchi2_p\tboot_p95\tboot_p\tflagged\n");
        for r in &self.lrt {
            let _ = writeln!(
                lrt,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.trial_id,
                r.study,
                format_g6(r.statistic),
                r.df,
                format_g6(r.chi2_p),
                opt(r.boot_p95),
                opt(r.boot_p),
                yes_no(r.flagged),
            );
        }

        let mut flags = String::from("trial_id\tstudy\tresidual\tcovratio\tpsiratio\tlrt\tcount\tflagged\n");
        for f in &self.flags {
            let _ = writeln!(
                flags,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                f.trial_id,
                f.study,
                opt_bool(f.residual),
                opt_bool(f.covratio),
                opt_bool(f.psiratio),
                opt_bool(f.lrt),
                f.count,
                yes_no(f.flagged),
            );
        }

        let mut files = vec![
            ("summary.tsv", summary),
            ("league.tsv", league_tsv(&self.league)),
            ("forest.tsv", forest_tsv(&self.forest, &self.summary.reference)),
            ("residuals.tsv", residuals),
            ("covratio.tsv", measure(&self.covratio, "covratio")),
            ("psiratio.tsv", measure(&self.psiratio, "psiratio")),
            ("lrt.tsv", lrt),
            ("flags.tsv", flags),
        ];
        if let Some(s) = &self.sensitivity {
            files.push(("sensitivity_league.tsv", league_tsv(&s.after)));
            files.push(("sensitivity_forest.tsv", forest_tsv(&s.forest_after, &self.summary.reference)));
        }
        files
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the requested formats into `dir`, creating it if needed.
    /// Returns the written paths.
    pub fn write(&self, dir: &Path, formats: &[OutputFormat]) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if formats.contains(&OutputFormat::Tsv) {
            for (name, body) in self.tsv_files() {
                let path = dir.join(name);
                fs::write(&path, body)?;
                written.push(path);
            }
        }
        if formats.contains(&OutputFormat::Json) {
            let path = dir.join("report.json");
            fs::write(&path, self.to_json()?)?;
            written.push(path);
        }
        Ok(written)
    }
}
