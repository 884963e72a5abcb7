use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::aggregate::{BestPose, Direction};
use super::classify::{binarize, confusion, pr_curve, ConfusionSummary, ThresholdRule};
use super::regression::{pearson, spearman};
use super::{EvalError, Stat};

pub type Key = (String, String);

/// What the experimental column measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    PercentInhibition,
    Pk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentalRow {
    pub compound_id: String,
    pub target_id: String,
    pub value: f64,
    pub rmsd: Option<f64>,
}

/// Experimental values plus any score columns from external methods.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentalTable {
    pub kind: ValueKind,
    pub rows: Vec<ExperimentalRow>,
    pub external: Vec<MethodScores>,
}

/// One method's aggregated score per (compound, target).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub name: String,
    pub direction: Direction,
    pub scores: BTreeMap<Key, f64>,
}

impl MethodScores {
    pub fn from_best(name: impl Into<String>, direction: Direction, best: &[BestPose<f64>]) -> Self {
        let scores = best.iter().map(|b| ((b.compound_id.clone(), b.target_id.clone()), b.score)).collect();
        Self { name: name.into(), direction, scores }
    }
}

fn parse_opt(cell: &str, col: &str, line: usize) -> Result<Option<f64>, EvalError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| EvalError::Table(format!("line {line}: {col} value {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(EvalError::Table(format!("line {line}: {col} is not finite")));
    }
    Ok(Some(v))
}

/// Reads a comma- or tab-separated table with a header row. Required
/// columns are `compound_id`, `target_id` and one of `percent_inhibition` or
/// `pk`; `rmsd` is optional. Every other column is read as an external
/// method whose lower scores mean tighter binding; empty cells are missing.
pub fn read_experimental(path: &Path) -> Result<ExperimentalTable, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let first = text.lines().next().ok_or_else(|| EvalError::Table("empty table".into()))?;
    let delim = if first.contains('\t') { b'\t' } else { b',' };
    let mut rdr = csv::ReaderBuilder::new().delimiter(delim).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ci, ti) = match (col("compound_id"), col("target_id")) {
        (Some(c), Some(t)) => (c, t),
        _ => return Err(EvalError::Table("compound_id and target_id columns are required".into())),
    };
    let (kind, vi) = match (col("percent_inhibition"), col("pk")) {
        (Some(i), None) => (ValueKind::PercentInhibition, i),
        (None, Some(i)) => (ValueKind::Pk, i),
        _ => return Err(EvalError::Table("exactly one of percent_inhibition or pk is required".into())),
    };
    let ri = col("rmsd");
    let extra: Vec<usize> = (0..headers.len()).filter(|&i| i != ci && i != ti && i != vi && Some(i) != ri).collect();
    let mut external: Vec<MethodScores> =
        extra.iter().map(|&i| MethodScores { name: headers[i].clone(), direction: Direction::LowerIsStronger, scores: BTreeMap::new() }).collect();
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let key = (rec[ci].to_string(), rec[ti].to_string());
        if !seen.insert(key.clone()) {
            return Err(EvalError::Table(format!("line {line}: duplicate row for {}/{}", key.0, key.1)));
        }
        let value = parse_opt(&rec[vi], &headers[vi], line)?.ok_or_else(|| EvalError::Table(format!("line {line}: missing experimental value")))?;
        let rmsd = match ri {
            Some(i) => parse_opt(&rec[i], "rmsd", line)?,
            None => None,
        };
        for (m, &i) in external.iter_mut().zip(&extra) {
            if let Some(v) = parse_opt(&rec[i], &headers[i], line)? {
                m.scores.insert(key.clone(), v);
            }
        }
        rows.push(ExperimentalRow { compound_id: key.0, target_id: key.1, value, rmsd });
    }
    Ok(ExperimentalTable { kind, rows, external })
}

/// Writes `table` in the comma-separated layout [`read_experimental`] reads.
pub fn write_experimental(path: &Path, table: &ExperimentalTable) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    let value = match table.kind {
        ValueKind::PercentInhibition => "percent_inhibition",
        ValueKind::Pk => "pk",
    };
    let mut header = vec!["compound_id", "target_id", value, "rmsd"];
    header.extend(table.external.iter().map(|m| m.name.as_str()));
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in &table.rows {
        let key = (r.compound_id.clone(), r.target_id.clone());
        let mut rec = vec![r.compound_id.clone(), r.target_id.clone(), r.value.to_string(), opt(r.rmsd)];
        rec.extend(table.external.iter().map(|m| opt(m.scores.get(&key).copied())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Correlations use only rows with experimental value strictly above this.
    pub correlation_min: Option<f64>,
    pub rule: ThresholdRule,
    /// When set, rows without `rmsd < cutoff` are excluded.
    pub rmsd_cutoff: Option<f64>,
}

impl ReportConfig {
    /// Percent inhibition: correlations above 1 %, actives above 33 %.
    /// pK: all rows correlated, actives above 8 and inactives below 6.
    pub fn for_kind(kind: ValueKind) -> Self {
        match kind {
            ValueKind::PercentInhibition => Self { correlation_min: Some(1.0), rule: ThresholdRule::Cutoff(33.0), rmsd_cutoff: None },
            ValueKind::Pk => Self { correlation_min: None, rule: ThresholdRule::Band { lo: 6.0, hi: 8.0 }, rmsd_cutoff: None },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTargetRow {
    pub method: String,
    pub target: String,
    pub n: usize,
    pub n_correlation: usize,
    pub pearson: Stat<f64>,
    pub spearman: Stat<f64>,
    pub positives: usize,
    pub negatives: usize,
    pub dropped: usize,
    pub f1_best: Stat<f64>,
    /// F1 when the top-k scores are called positive, k = actual positives.
    pub f1_top_k: Stat<f64>,
    pub baseline_precision: Stat<f64>,
    pub kappa: Stat<f64>,
    pub confusion: Option<ConfusionSummary<f64>>,
    /// `(recall, precision)` from the strictest threshold to the loosest.
    pub pr_series: Vec<(f64, f64)>,
    /// `(experimental, predicted)` for every row of this target.
    pub scatter: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub kind: ValueKind,
    pub config: ReportConfig,
    pub rows: Vec<MethodTargetRow>,
}

impl ComparisonReport {
    /// `method,target,pearson,spearman` lines with a header.
    pub fn correlation_table(&self) -> String {
        let fmt = |s: Stat<f64>| s.value().map_or("undefined".to_string(), |v| format!("{v:.6}"));
        let mut out = String::from("method,target,pearson,spearman\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.method, r.target, fmt(r.pearson), fmt(r.spearman)));
        }
        out
    }
}

fn key_diff(a: &MethodScores, b: &MethodScores) -> Option<String> {
    let ka: BTreeSet<&Key> = a.scores.keys().collect();
    let kb: BTreeSet<&Key> = b.scores.keys().collect();
    let missing: Vec<String> = ka.difference(&kb).take(10).map(|(c, t)| format!("{c}/{t}")).collect();
    let extra: Vec<String> = kb.difference(&ka).take(10).map(|(c, t)| format!("{c}/{t}")).collect();
    if missing.is_empty() && extra.is_empty() {
        return None;
    }
    Some(format!("{} vs {}: missing {:?}, extra {:?}", a.name, b.name, missing, extra))
}

fn row(method: &MethodScores, target: &str, pairs: &[(f64, f64)], cfg: &ReportConfig) -> Result<MethodTargetRow, EvalError> {
    // pairs are (score, experimental)
    let corr: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|(_, e)| cfg.correlation_min.map_or(true, |m| *e > m))
        .map(|&(s, e)| (if method.direction == Direction::LowerIsStronger { s.abs() } else { s }, e))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = corr.iter().copied().unzip();
    let (pr, sp) = if corr.len() >= 2 { (pearson(&xs, &ys)?, spearman(&xs, &ys)?) } else { (Stat::Undefined, Stat::Undefined) };

    let exp: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let bin = binarize(&exp, cfg.rule)?;
    let (scores, labels): (Vec<f64>, Vec<bool>) = bin.kept().map(|(i, l)| (method.direction.orient(pairs[i].0), l)).unzip();
    let mut r = MethodTargetRow {
        method: method.name.clone(),
        target: target.to_string(),
        n: pairs.len(),
        n_correlation: corr.len(),
        pearson: pr,
        spearman: sp,
        positives: bin.positives,
        negatives: bin.negatives,
        dropped: bin.dropped,
        f1_best: Stat::Undefined,
        f1_top_k: Stat::Undefined,
        baseline_precision: Stat::Undefined,
        kappa: Stat::Undefined,
        confusion: None,
        pr_series: Vec::new(),
        scatter: pairs.iter().map(|&(s, e)| (e, s)).collect(),
    };
    if bin.require_both().is_ok() {
        let curve = pr_curve(&scores, &labels)?;
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let cut = sorted[bin.positives - 1];
        let called: Vec<bool> = scores.iter().map(|&s| s >= cut).collect();
        let c = confusion::<f64>(&called, &labels)?;
        r.f1_best = Stat::Value(curve.f1_best);
        r.f1_top_k = Stat::Value(c.f1());
        r.baseline_precision = Stat::Value(curve.baseline_precision);
        r.kappa = c.kappa;
        r.confusion = Some(c);
        r.pr_series = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
    }
    Ok(r)
}

/// Per method and per target (plus an `all` row): correlations on the
/// correlation subset, a P/R curve and F1 under the activity rule, and
/// Cohen's kappa at the top-k operating point. Lower-is-stronger methods are
/// correlated by absolute value and ranked by negated score.
pub fn method_comparison_report(methods: &[MethodScores], table: &ExperimentalTable, cfg: &ReportConfig) -> Result<ComparisonReport, EvalError> {
    if methods.len() < 2 {
        return Err(EvalError::TooFew { need: 2, got: methods.len() });
    }
    let diffs: Vec<String> = methods[1..].iter().filter_map(|m| key_diff(&methods[0], m)).collect();
    if !diffs.is_empty() {
        return Err(EvalError::KeyMismatch(diffs.join("; ")));
    }
    let exp: BTreeMap<Key, &ExperimentalRow> = table.rows.iter().map(|r| ((r.compound_id.clone(), r.target_id.clone()), r)).collect();
    let lacking: Vec<String> = methods[0].scores.keys().filter(|k| !exp.contains_key(*k)).take(10).map(|(c, t)| format!("{c}/{t}")).collect();
    if !lacking.is_empty() {
        return Err(EvalError::KeyMismatch(format!("no experimental value for {lacking:?}")));
    }
    let keys: Vec<&Key> = methods[0].scores.keys().filter(|k| cfg.rmsd_cutoff.map_or(true, |c| exp[*k].rmsd.is_some_and(|r| r < c))).collect();
    let targets: BTreeSet<&str> = keys.iter().map(|k| k.1.as_str()).collect();
    let mut rows = Vec::new();
    for m in methods {
        for target in targets.iter().copied().chain(std::iter::once("all")) {
            let pairs: Vec<(f64, f64)> = keys.iter().filter(|k| target == "all" || k.1 == target).map(|k| (m.scores[*k], exp[*k].value)).collect();
            rows.push(row(m, target, &pairs, cfg)?);
        }
    }
    Ok(ComparisonReport { kind: table.kind, config: cfg.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn method(name: &str, dir: Direction, vals: &[(&str, &str, f64)]) -> MethodScores {
        MethodScores { name: name.into(), direction: dir, scores: vals.iter().map(|(c, t, v)| ((c.to_string(), t.to_string()), *v)).collect() }
    }

    #[test]
    fn reads_tab_table_with_external_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.tsv");
        std::fs::write(&p, "compound_id\ttarget_id\tpercent_inhibition\trmsd\tvina\nc1\tp1\t40\t0.5\t-9.1\nc2\tp1\t2\t\t\n").unwrap();
        let t = read_experimental(&p).unwrap();
        assert_eq!(t.kind, ValueKind::PercentInhibition);
        assert_eq!(t.rows[1].rmsd, None);
        assert_eq!(t.external[0].name, "vina");
        assert_eq!(t.external[0].scores.len(), 1);
    }

    #[test]
    fn written_table_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.csv");
        let vina = method("vina", Direction::LowerIsStronger, &[("c1", "t", -9.25)]);
        let rows = vec![
            ExperimentalRow { compound_id: "c1".into(), target_id: "t".into(), value: 7.125, rmsd: None },
            ExperimentalRow { compound_id: "c2".into(), target_id: "t".into(), value: 0.1 + 0.2, rmsd: Some(1.5) },
        ];
        let table = ExperimentalTable { kind: ValueKind::Pk, rows, external: vec![vina] };
        write_experimental(&p, &table).unwrap();
        assert_eq!(read_experimental(&p).unwrap(), table);
    }

    #[test]
    fn duplicate_and_missing_columns_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        std::fs::write(&p, "compound_id,target_id,pk\na,t,5\na,t,6\n").unwrap();
        assert!(read_experimental(&p).is_err());
        std::fs::write(&p, "compound_id,value\na,5\n").unwrap();
        assert!(read_experimental(&p).is_err());
    }

    #[test]
    fn key_mismatch_lists_difference() {
        let a = method("a", Direction::HigherIsStronger, &[("c1", "t", 1.0), ("c2", "t", 2.0)]);
        let b = method("b", Direction::HigherIsStronger, &[("c1", "t", 1.0)]);
        let table = ExperimentalTable { kind: ValueKind::Pk, rows: vec![], external: vec![] };
        match method_comparison_report(&[a, b], &table, &ReportConfig::for_kind(ValueKind::Pk)) {
            Err(EvalError::KeyMismatch(m)) => assert!(m.contains("c2/t")),
            other => panic!("{other:?}"),
        }
    }
}
