//! Correlation metrics, grouped reports and the bitrate-ranking diagnostic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetEntry, Manifest};
use crate::error::{Error, Result};
use crate::frontend::{normalize_pair, pair_windows, GammatoneFrontend, Spectrogram};
use crate::model::{Checkpoint, Model};
use crate::training::NormStats;

/// Tolerance below which a score drop along a bitrate ladder is ignored.
pub const RANKING_TOLERANCE: f64 = 0.05;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("{} samples", x.len())));
    }
    Ok(())
}

/// Product-moment correlation. A constant input is an error rather than 0.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; ties share the mean of their rank span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of the average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Argument(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    Overall,
    Codec,
    Bitrate,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::Overall, Grouping::Codec, Grouping::Bitrate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Grouping::Overall => "overall",
            Grouping::Codec => "codec",
            Grouping::Bitrate => "bitrate",
        }
    }
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(Grouping::Overall),
            "codec" => Ok(Grouping::Codec),
            "bitrate" => Ok(Grouping::Bitrate),
            other => Err(Error::Argument(format!("unknown grouping `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub group_key: String,
    pub group_value: String,
    pub n: usize,
    /// `None` when the correlation is undefined (constant scores).
    pub rp: Option<f64>,
    pub rs: Option<f64>,
    pub mse: f64,
}

/// A manifest entry with its predicted score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry: DatasetEntry,
    pub prediction: f64,
}

fn report(
    key: Grouping,
    value: String,
    mut members: Vec<&ScoredEntry>,
) -> Option<CorrelationReport> {
    if members.len() < 2 {
        log::warn!(
            "group {}={value} has {} entries; skipped",
            key.as_str(),
            members.len()
        );
        return None;
    }
    // A fixed order keeps the float sums independent of input row order.
    members.sort_by(|a, b| {
        (&a.entry.deg_path, &a.entry.ref_path)
            .cmp(&(&b.entry.deg_path, &b.entry.ref_path))
            .then(a.prediction.total_cmp(&b.prediction))
    });
    let pred: Vec<f64> = members.iter().map(|m| m.prediction).collect();
    let label: Vec<f64> = members.iter().map(|m| m.entry.label).collect();
    let rp = pearson(&pred, &label).ok();
    let rs = spearman(&pred, &label).ok();
    if rp.is_none() {
        log::warn!(
            "group {}={value}: correlation undefined (constant scores)",
            key.as_str()
        );
    }
    Some(CorrelationReport {
        group_key: key.as_str().into(),
        group_value: value,
        n: members.len(),
        rp,
        rs,
        mse: mse(&pred, &label).ok()?,
    })
}

/// Reports for each requested grouping. With `include_anchors`, the
/// references and anchors of the excerpts in a codec or bitrate group are
/// added to that group, and to the overall pool; otherwise they are left out
/// everywhere.
pub fn correlation_reports<'a>(
    scored: &'a [ScoredEntry],
    groupings: &[Grouping],
    include_anchors: bool,
) -> Vec<CorrelationReport> {
    let is_extra = |s: &ScoredEntry| s.entry.is_reference() || s.entry.is_anchor();
    let coded: Vec<&ScoredEntry> = scored.iter().filter(|s| !is_extra(s)).collect();
    let extras: Vec<&ScoredEntry> = scored.iter().filter(|s| is_extra(s)).collect();
    let with_extras = |mut members: Vec<&'a ScoredEntry>| -> Vec<&'a ScoredEntry> {
        if include_anchors {
            let ids: BTreeSet<&str> = members
                .iter()
                .map(|m| m.entry.excerpt_id.as_str())
                .collect();
            members.extend(
                extras
                    .iter()
                    .filter(|e| ids.contains(e.entry.excerpt_id.as_str())),
            );
        }
        members
    };
    let mut groupings = groupings.to_vec();
    groupings.sort();
    groupings.dedup();
    let mut out = Vec::new();
    for g in groupings {
        match g {
            Grouping::Overall => {
                let members = if include_anchors {
                    scored.iter().collect()
                } else {
                    coded.clone()
                };
                out.extend(report(g, "all".into(), members));
            }
            Grouping::Codec => {
                let mut groups: BTreeMap<&str, Vec<&ScoredEntry>> = BTreeMap::new();
                for s in &coded {
                    groups.entry(s.entry.codec.as_str()).or_default().push(s);
                }
                for (codec, members) in groups {
                    out.extend(report(g, codec.into(), with_extras(members)));
                }
            }
            Grouping::Bitrate => {
                let mut groups: BTreeMap<u32, Vec<&ScoredEntry>> = BTreeMap::new();
                for s in &coded {
                    if let Some(b) = s.entry.bitrate_kbps {
                        groups.entry(b).or_default().push(s);
                    }
                }
                for (kbps, members) in groups {
                    out.extend(report(g, kbps.to_string(), with_extras(members)));
                }
            }
        }
    }
    out
}

/// One point of a bitrate ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderPoint {
    pub excerpt_id: String,
    pub codec: String,
    pub bitrate_kbps: u32,
    pub score: f64,
}

/// Fraction of adjacent rungs (per excerpt and codec, ordered by bitrate)
/// whose score drops by more than `tolerance` as the bitrate rises. `None`
/// when no group has two rungs.
pub fn ranking_violation_rate(points: &[LadderPoint], tolerance: f64) -> Option<f64> {
    let mut groups: BTreeMap<(&str, &str), Vec<(u32, f64)>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.excerpt_id.as_str(), p.codec.as_str()))
            .or_default()
            .push((p.bitrate_kbps, p.score));
    }
    let (mut pairs, mut violations) = (0usize, 0usize);
    for ladder in groups.values_mut() {
        ladder.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for w in ladder.windows(2) {
            pairs += 1;
            if w[1].1 < w[0].1 - tolerance {
                violations += 1;
            }
        }
    }
    (pairs > 0).then(|| violations as f64 / pairs as f64)
}

/// Ladder points of the coded (non-reference, non-anchor) entries.
pub fn ladder_points(scored: &[ScoredEntry]) -> Vec<LadderPoint> {
    scored
        .iter()
        .filter(|s| !s.entry.is_reference() && !s.entry.is_anchor())
        .filter_map(|s| {
            Some(LadderPoint {
                excerpt_id: s.entry.excerpt_id.clone(),
                codec: s.entry.codec.clone(),
                bitrate_kbps: s.entry.bitrate_kbps?,
                score: s.prediction,
            })
        })
        .collect()
}

/// A loaded checkpoint ready to score file pairs.
#[derive(Debug, Clone)]
pub struct Predictor {
    model: Model<f32>,
    stats: NormStats,
    frontend: GammatoneFrontend,
}

impl Predictor {
    pub fn new(checkpoint: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: checkpoint.model()?,
            stats: checkpoint.norm_stats.clone(),
            frontend: GammatoneFrontend::new(checkpoint.gammatone.clone())?,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(&Checkpoint::load(path)?)
    }

    pub fn frontend(&self) -> &GammatoneFrontend {
        &self.frontend
    }

    /// Clamped score of a spectrogram pair; inputs longer than one window
    /// are scored window by window and averaged.
    pub fn score_spectrograms(
        &self,
        reference: &Spectrogram,
        degraded: &Spectrogram,
    ) -> Result<f64> {
        let windows = pair_windows(reference, degraded)?
            .iter()
            .map(|w| normalize_pair(w, &self.stats))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = windows.iter().collect();
        let scores = self.model.predict(&refs)?;
        Ok(scores.iter().map(|&s| f64::from(s)).sum::<f64>() / scores.len() as f64)
    }

    pub fn score_files(&self, reference: &Path, degraded: &Path) -> Result<f64> {
        let r = self.frontend.compute_file(reference)?;
        let d = self.frontend.compute_file(degraded)?;
        self.score_spectrograms(&r, &d)
    }

    /// Scores every entry in parallel; output order follows the input.
    pub fn score_entries(&self, entries: &[DatasetEntry]) -> Result<Vec<ScoredEntry>> {
        entries
            .par_iter()
            .map(|e| {
                Ok(ScoredEntry {
                    entry: e.clone(),
                    prediction: self.score_files(&e.ref_path, &e.deg_path)?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scored: Vec<ScoredEntry>,
    pub reports: Vec<CorrelationReport>,
    pub ranking_violation_rate: Option<f64>,
}

/// Scores a manifest with a checkpoint and builds the grouped reports.
pub fn evaluate(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    groupings: &[Grouping],
    include_anchors: bool,
) -> Result<Evaluation> {
    let scored = Predictor::new(checkpoint)?.score_entries(&manifest.entries)?;
    Ok(evaluate_scored(scored, groupings, include_anchors))
}

/// Reports for entries that already carry predictions.
pub fn evaluate_scored(
    scored: Vec<ScoredEntry>,
    groupings: &[Grouping],
    include_anchors: bool,
) -> Evaluation {
    let reports = correlation_reports(&scored, groupings, include_anchors);
    let ranking_violation_rate = ranking_violation_rate(&ladder_points(&scored), RANKING_TOLERANCE);
    Evaluation {
        scored,
        reports,
        ranking_violation_rate,
    }
}

fn read_two_column(path: &Path, delimiter: u8, header: bool) -> Result<HashMap<PathBuf, f64>> {
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(header)
        .from_path(path)
        .map_err(err)?;
    let mut out = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(err)?;
        if rec.len() != 2 {
            return Err(Error::format(
                path.display().to_string(),
                format!("row {}: expected 2 fields", line + 1),
            ));
        }
        let score: f64 = rec[1].trim().parse().map_err(|_| {
            Error::format(
                path.display().to_string(),
                format!("row {}: bad score `{}`", line + 1, &rec[1]),
            )
        })?;
        let p = PathBuf::from(rec[0].trim());
        out.insert(if p.is_relative() { base.join(p) } else { p }, score);
    }
    Ok(out)
}

/// Subjective scores from a CSV with header `deg_path,score`.
pub fn load_subjective_scores(path: &Path) -> Result<HashMap<PathBuf, f64>> {
    read_two_column(path, b',', true)
}

/// Predictions in the `deg_path<TAB>mos` format printed by the predictor.
pub fn load_predictions_tsv(path: &Path) -> Result<HashMap<PathBuf, f64>> {
    read_two_column(path, b'\t', false)
}

/// Replaces manifest labels with subjective scores; entries without a score are dropped.
pub fn apply_subjective_scores(
    manifest: &Manifest,
    scores: &HashMap<PathBuf, f64>,
) -> Result<Manifest> {
    let mut entries = Vec::new();
    for e in &manifest.entries {
        match scores.get(&e.deg_path) {
            Some(&s) => entries.push(DatasetEntry {
                label: s,
                ..e.clone()
            }),
            None => log::warn!("{}: no subjective score; dropped", e.deg_path.display()),
        }
    }
    // Subjective scales (e.g. 0-100) fall outside the MOS label range, so
    // skip manifest validation.
    Ok(Manifest {
        entries,
        schema_version: manifest.schema_version,
    })
}

/// Attaches precomputed predictions (keyed by degraded path) to manifest entries.
pub fn attach_predictions(
    manifest: &Manifest,
    predictions: &HashMap<PathBuf, f64>,
) -> Result<Vec<ScoredEntry>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let p = predictions.get(&e.deg_path).ok_or_else(|| {
                Error::Argument(format!("no prediction for {}", e.deg_path.display()))
            })?;
            Ok(ScoredEntry {
                entry: e.clone(),
                prediction: *p,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.6}"))
}

pub fn write_reports_csv(reports: &[CorrelationReport], path: &Path) -> Result<()> {
    let err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["group_key", "group_value", "n", "rp", "rs", "mse"])
        .map_err(err)?;
    for r in reports {
        w.write_record([
            r.group_key.clone(),
            r.group_value.clone(),
            r.n.to_string(),
            fmt_opt(r.rp),
            fmt_opt(r.rs),
            format!("{:.6}", r.mse),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fixed-width table for terminal output.
pub fn format_table(reports: &[CorrelationReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<14} {:>5} {:>8} {:>8} {:>8}",
        "group", "value", "n", "R_p", "R_s", "MSE"
    );
    for r in reports {
        let f = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{x:.3}"));
        let _ = writeln!(
            s,
            "{:<10} {:<14} {:>5} {:>8} {:>8} {:>8.3}",
            r.group_key,
            r.group_value,
            r.n,
            f(r.rp),
            f(r.rs),
            r.mse
        );
    }
    s
}
