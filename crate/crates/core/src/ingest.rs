//! Arm-level trial data, network validation and log odds ratio contrasts.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical treatment index. Index 0 is the global reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TreatmentId(pub usize);

impl TreatmentId {
    pub const REFERENCE: TreatmentId = TreatmentId(0);

    pub fn is_reference(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Treatment {
    pub id: TreatmentId,
    pub label: String,
}

/// Dense registry of treatment labels; position is the canonical index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentSet {
    labels: Vec<String>,
}

impl TreatmentSet {
    /// Registers `labels` in the given order. The first label is the reference.
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Config("treatment list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Config(format!("treatment {l:?} registered twice")));
            }
        }
        Ok(Self { labels })
    }

    /// Reference first, remaining labels in alphabetical order.
    pub fn canonical<'a, I>(reference: &str, others: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let rest: BTreeSet<&str> = others.into_iter().filter(|l| *l != reference).collect();
        let mut labels = vec![reference.to_string()];
        labels.extend(rest.into_iter().map(String::from));
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of non-reference treatments.
    pub fn p(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn label(&self, id: TreatmentId) -> &str {
        &self.labels[id.0]
    }

    pub fn id(&self, label: &str) -> Option<TreatmentId> {
        self.labels.iter().position(|l| l == label).map(TreatmentId)
    }

    pub fn reference(&self) -> Treatment {
        Treatment {
            id: TreatmentId::REFERENCE,
            label: self.labels[0].clone(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Treatment> + '_ {
        self.labels.iter().enumerate().map(|(i, l)| Treatment {
            id: TreatmentId(i),
            label: l.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialArm {
    pub treatment: TreatmentId,
    pub events: f64,
    pub size: f64,
    /// Synthetic reference arm added by [`augment_reference`].
    pub pseudo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trial {
    pub id: u32,
    pub label: String,
    pub year: Option<i32>,
    pub arms: Vec<TrialArm>,
    pub augmented: bool,
}

impl Trial {
    pub fn new(id: u32, label: impl Into<String>, arms: Vec<TrialArm>) -> Result<Self> {
        let label = label.into();
        if arms.len() < 2 {
            return Err(Error::InvalidArm {
                study: label,
                message: "a trial needs at least two arms".into(),
            });
        }
        let mut seen = BTreeSet::new();
        for arm in &arms {
            if !seen.insert(arm.treatment) {
                return Err(Error::DuplicateArm {
                    study: label,
                    treatment: format!("#{}", arm.treatment.0),
                });
            }
            if !(arm.size > 0.0) || arm.events < 0.0 || arm.events > arm.size {
                return Err(Error::InvalidArm {
                    study: label,
                    message: format!(
                        "events {} / size {} violates 0 <= events <= size, size > 0",
                        arm.events, arm.size
                    ),
                });
            }
        }
        let augmented = arms.iter().any(|a| a.pseudo);
        Ok(Self {
            id,
            label,
            year: None,
            arms,
            augmented,
        })
    }

    pub fn with_year(mut self, year: i32) -> Self {
        self.year = Some(year);
        self
    }

    pub fn has(&self, t: TreatmentId) -> bool {
        self.arms.iter().any(|a| a.treatment == t)
    }

    pub fn real_arms(&self) -> impl Iterator<Item = &TrialArm> {
        self.arms.iter().filter(|a| !a.pseudo)
    }

    pub fn arm(&self, t: TreatmentId) -> Option<&TrialArm> {
        self.arms.iter().find(|a| a.treatment == t)
    }

    pub fn participants(&self) -> f64 {
        self.real_arms().map(|a| a.size).sum()
    }
}

/// Parsed input: the treatment registry plus trials in input order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub treatments: TreatmentSet,
    pub trials: Vec<Trial>,
}

impl Dataset {
    pub fn trial(&self, id: u32) -> Option<&Trial> {
        self.trials.iter().find(|t| t.id == id)
    }

    /// Copy of the dataset without the listed trial ids.
    pub fn excluding(&self, ids: &[u32]) -> Result<Dataset> {
        for id in ids {
            if self.trial(*id).is_none() {
                return Err(Error::UnknownTrial(*id));
            }
        }
        Ok(Dataset {
            treatments: self.treatments.clone(),
            trials: self
                .trials
                .iter()
                .filter(|t| !ids.contains(&t.id))
                .cloned()
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ParseConfig {
    /// Field delimiter; `None` means comma.
    pub delimiter: Option<u8>,
    /// Label of the global reference treatment.
    pub reference: String,
    /// Registered treatment order (reference first). When set, labels outside
    /// the list are rejected; otherwise the canonical order is reference then
    /// alphabetical.
    pub treatments: Option<Vec<String>>,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            delimiter: None,
            reference: "Placebo".into(),
            treatments: None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    study: String,
    year: i32,
    treatment: String,
    events: f64,
    size: f64,
}

/// Reads long-format arm rows (`study, year, treatment, events, size`).
///
/// Rows are grouped into trials by `(study, year)` in order of first
/// appearance and numbered from 1, so a study reported twice in different
/// years stays two trials.
pub fn parse_trials<R: Read>(source: R, config: &ParseConfig) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(config.delimiter.unwrap_or(b','))
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            return Err(Error::Parse {
                line: 1,
                message: e.to_string(),
            })
        }
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        if !(row.size > 0.0) || row.events < 0.0 || row.events > row.size {
            return Err(Error::Parse {
                line,
                message: format!(
                    "study {:?}: events {} / size {} violates 0 <= events <= size, size > 0",
                    row.study, row.events, row.size
                ),
            });
        }
        rows.push((line, row));
    }

    let treatments = match &config.treatments {
        Some(order) => {
            let set = TreatmentSet::new(order.iter().cloned())?;
            if set.label(TreatmentId::REFERENCE) != config.reference {
                return Err(Error::Config(format!(
                    "registered order must start with the reference {:?}",
                    config.reference
                )));
            }
            set
        }
        None => TreatmentSet::canonical(
            &config.reference,
            rows.iter().map(|(_, r)| r.treatment.as_str()),
        ),
    };
    if !rows.is_empty() && !rows.iter().any(|(_, r)| r.treatment == config.reference) {
        return Err(Error::Config(format!(
            "reference treatment {:?} does not occur in the data",
            config.reference
        )));
    }

    let mut order: Vec<(String, i32)> = Vec::new();
    let mut groups: HashMap<(String, i32), Vec<TrialArm>> = HashMap::new();
    for (line, row) in rows {
        let id = treatments
            .id(&row.treatment)
            .ok_or_else(|| Error::UnknownTreatment(row.treatment.clone()))?;
        let key = (row.study.clone(), row.year);
        let arms = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        if arms.iter().any(|a| a.treatment == id) {
            return Err(Error::Parse {
                line,
                message: format!(
                    "duplicate arm: study {:?} lists {:?} twice",
                    row.study, row.treatment
                ),
            });
        }
        arms.push(TrialArm {
            treatment: id,
            events: row.events,
            size: row.size,
            pseudo: false,
        });
    }

    let trials = order
        .into_iter()
        .enumerate()
        .map(|(i, key)| {
            let arms = groups.remove(&key).unwrap_or_default();
            Trial::new(i as u32 + 1, key.0, arms).map(|t| t.with_year(key.1))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset { treatments, trials })
}

/// Opens `path` and parses it; `.tsv` / `.tab` files are tab-delimited.
pub fn read_trials(path: &Path, config: &ParseConfig) -> Result<Dataset> {
    let mut config = config.clone();
    if config.delimiter.is_none() {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("tsv") || ext.eq_ignore_ascii_case("tab") {
            config.delimiter = Some(b'\t');
        }
    }
    let file = std::fs::File::open(path)?;
    parse_trials(std::io::BufReader::new(file), &config)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkEdge {
    pub a: TreatmentId,
    pub b: TreatmentId,
    pub trials: usize,
}

/// Treatment comparison graph of the direct (non-augmented) evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkSummary {
    pub nodes: Vec<TreatmentId>,
    pub edges: Vec<NetworkEdge>,
}

impl NetworkSummary {
    pub fn build(trials: &[Trial]) -> Self {
        let mut nodes = BTreeSet::new();
        let mut edges: BTreeMap<(TreatmentId, TreatmentId), usize> = BTreeMap::new();
        for trial in trials {
            let arms: Vec<TreatmentId> = trial.real_arms().map(|a| a.treatment).collect();
            nodes.extend(arms.iter().copied());
            for (i, a) in arms.iter().enumerate() {
                for b in &arms[i + 1..] {
                    *edges.entry(((*a).min(*b), (*a).max(*b))).or_default() += 1;
                }
            }
        }
        Self {
            nodes: nodes.into_iter().collect(),
            edges: edges
                .into_iter()
                .map(|((a, b), trials)| NetworkEdge { a, b, trials })
                .collect(),
        }
    }

    /// Connected components, each sorted, ordered by their smallest node.
    pub fn components(&self) -> Vec<Vec<TreatmentId>> {
        let index: HashMap<TreatmentId, usize> =
            self.nodes.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[index[&e.a]].push(index[&e.b]);
            adj[index[&e.b]].push(index[&e.a]);
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(v) = stack.pop() {
                comp.push(self.nodes[v]);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }
}

pub fn validate_network(trials: &[Trial], treatments: &TreatmentSet) -> Result<NetworkSummary> {
    if trials.is_empty() {
        return Err(Error::Config("no trials to analyse".into()));
    }
    let summary = NetworkSummary::build(trials);
    let components = summary.components();
    if components.len() > 1 {
        return Err(Error::Disconnected {
            components: components
                .into_iter()
                .map(|c| c.into_iter().map(|t| treatments.label(t).to_string()).collect())
                .collect(),
        });
    }
    Ok(summary)
}

/// Adds `increment` to the events and twice that to the size of every real
/// arm when any real arm has zero events or zero non-events.
pub fn apply_continuity_correction(trial: &Trial, increment: f64) -> Trial {
    assert!(increment > 0.0, "continuity increment must be positive");
    let needs = trial
        .real_arms()
        .any(|a| a.events == 0.0 || a.events == a.size);
    let mut out = trial.clone();
    if needs {
        for arm in out.arms.iter_mut().filter(|a| !a.pseudo) {
            arm.events += increment;
            arm.size += 2.0 * increment;
        }
    }
    out
}

/// Appends a tiny pseudo reference arm (`d0` events out of `n0`) to trials
/// that do not contain the global reference.
pub fn augment_reference(trial: &Trial, d0: f64, n0: f64) -> Result<Trial> {
    if !(d0 > 0.0) || !(n0 > d0) {
        return Err(Error::Config(format!(
            "augmentation needs 0 < d0 < n0, got d0 = {d0}, n0 = {n0}"
        )));
    }
    let mut out = trial.clone();
    if !trial.has(TreatmentId::REFERENCE) {
        out.arms.push(TrialArm {
            treatment: TreatmentId::REFERENCE,
            events: d0,
            size: n0,
            pseudo: true,
        });
        out.augmented = true;
    }
    Ok(out)
}

/// Observed log odds ratio contrasts of one trial against a single reference
/// arm, with their within-trial covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastData {
    pub trial_id: u32,
    /// Real arms in input order.
    pub arms: Vec<TreatmentId>,
    /// Arm the contrasts are taken against.
    pub reference: TreatmentId,
    /// The reference arm is a pseudo-arm from augmentation.
    pub augmented: bool,
    /// Observed components, ascending by treatment id.
    pub treatments: Vec<TreatmentId>,
    pub y: DVector<f64>,
    pub s: DMatrix<f64>,
}

impl ContrastData {
    /// `p_i`: number of observed components.
    pub fn observed_count(&self) -> usize {
        self.treatments.len()
    }

    /// `q_i`: number of head-to-head contrasts among the real arms.
    pub fn informative_count(&self) -> usize {
        self.arms.len() - 1
    }

    pub fn component(&self, t: TreatmentId) -> Option<usize> {
        self.treatments.iter().position(|&c| c == t)
    }

    /// Length-`p` observed mask over the non-reference treatments `1..=p`.
    pub fn mask(&self, p: usize) -> Vec<bool> {
        (1..=p)
            .map(|t| self.component(TreatmentId(t)).is_some())
            .collect()
    }

    /// Contrasts against another real arm of the trial, obtained by the
    /// linear map `y' = C y`, `S' = C S C^T`. Any pseudo reference is dropped.
    pub fn rebased(&self, new_reference: TreatmentId) -> Result<ContrastData> {
        if !self.arms.contains(&new_reference) {
            return Err(Error::NotInTrial {
                trial_id: self.trial_id,
                treatment: format!("#{}", new_reference.0),
            });
        }
        if new_reference == self.reference {
            return Ok(self.clone());
        }
        let mut targets: Vec<TreatmentId> = self
            .arms
            .iter()
            .copied()
            .filter(|&t| t != new_reference)
            .collect();
        targets.sort();
        let q = self.treatments.len();
        let mut c = DMatrix::zeros(targets.len(), q);
        let pivot = self.component(new_reference);
        for (row, t) in targets.iter().enumerate() {
            if let Some(k) = self.component(*t) {
                c[(row, k)] += 1.0;
            }
            if let Some(k) = pivot {
                c[(row, k)] -= 1.0;
            }
        }
        let y = &c * &self.y;
        let s = crate::linalg::symmetrize(&c * &self.s * c.transpose());
        Ok(ContrastData {
            trial_id: self.trial_id,
            arms: self.arms.clone(),
            reference: new_reference,
            augmented: false,
            treatments: targets,
            y,
            s,
        })
    }

    /// Same design, new observed vector.
    pub fn with_y(&self, y: DVector<f64>) -> ContrastData {
        debug_assert_eq!(y.len(), self.y.len());
        ContrastData { y, ..self.clone() }
    }
}

fn logit(events: f64, size: f64) -> f64 {
    (events / (size - events)).ln()
}

fn logit_variance(events: f64, size: f64) -> f64 {
    1.0 / events + 1.0 / (size - events)
}

pub fn compute_contrasts(trial: &Trial, reference: TreatmentId) -> Result<ContrastData> {
    let ref_arm = trial.arm(reference).ok_or_else(|| Error::NotInTrial {
        trial_id: trial.id,
        treatment: format!("#{}", reference.0),
    })?;
    let used: Vec<&TrialArm> = trial
        .arms
        .iter()
        .filter(|a| !a.pseudo || a.treatment == reference)
        .collect();
    if used
        .iter()
        .any(|a| !(a.events > 0.0) || !(a.size - a.events > 0.0))
    {
        return Err(Error::NonPositiveCell { trial_id: trial.id });
    }
    let mut others: Vec<&TrialArm> = used
        .iter()
        .copied()
        .filter(|a| a.treatment != reference)
        .collect();
    others.sort_by_key(|a| a.treatment);

    let ref_logit = logit(ref_arm.events, ref_arm.size);
    let ref_var = logit_variance(ref_arm.events, ref_arm.size);
    let q = others.len();
    let y = DVector::from_iterator(q, others.iter().map(|a| logit(a.events, a.size) - ref_logit));
    let mut s = DMatrix::from_element(q, q, ref_var);
    for (k, a) in others.iter().enumerate() {
        s[(k, k)] += logit_variance(a.events, a.size);
    }
    Ok(ContrastData {
        trial_id: trial.id,
        arms: trial.real_arms().map(|a| a.treatment).collect(),
        reference,
        augmented: ref_arm.pseudo,
        treatments: others.iter().map(|a| a.treatment).collect(),
        y,
        s,
    })
}

/// Contrasts against another real arm, computed from the cell counts. The
/// pseudo reference arm, if present, is dropped.
pub fn rebase_contrasts(trial: &Trial, new_reference: TreatmentId) -> Result<ContrastData> {
    match trial.arm(new_reference) {
        Some(a) if !a.pseudo => compute_contrasts(trial, new_reference),
        _ => Err(Error::NotInTrial {
            trial_id: trial.id,
            treatment: format!("#{}", new_reference.0),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrepConfig {
    pub continuity_increment: f64,
    pub pseudo_events: f64,
    pub pseudo_size: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            continuity_increment: 0.5,
            pseudo_events: 0.001,
            pseudo_size: 0.01,
        }
    }
}

/// Continuity correction, reference augmentation, then contrasts against the
/// global reference for every trial.
pub fn build_contrasts(trials: &[Trial], config: &PrepConfig) -> Result<Vec<ContrastData>> {
    trials
        .iter()
        .map(|t| {
            let corrected = apply_continuity_correction(t, config.continuity_increment);
            let augmented =
                augment_reference(&corrected, config.pseudo_events, config.pseudo_size)?;
            compute_contrasts(&augmented, TreatmentId::REFERENCE)
        })
        .collect()
}
