//! Multi-annotator label store, overlap assignment, Cohen's κ and the
//! disagreement-resolution rule.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::StanceLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub annotator_id: String,
    pub label: StanceLabel,
    pub round_id: u64,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionKind {
    Consensus,
    NegativePrecedence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedExample {
    pub doc_id: String,
    pub aggregate_label: StanceLabel,
    pub resolution: ResolutionKind,
    /// Sorted annotator ids.
    pub contributing_annotators: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Resolution {
    Resolved(ResolvedExample),
    Unresolved {
        doc_id: String,
        /// Sorted `(annotator, label)` pairs that conflict.
        labels: Vec<(String, StanceLabel)>,
    },
}

impl Resolution {
    pub fn resolved(&self) -> Option<&ResolvedExample> {
        match self {
            Resolution::Resolved(r) => Some(r),
            Resolution::Unresolved { .. } => None,
        }
    }
}

/// Aggregates one document's labels.
///
/// All equal gives consensus. Labels drawn only from {Negative, Neutral}
/// with at least one Negative resolve to Negative. Any other disagreement,
/// in particular one involving Positive, stays unresolved. Only the latest
/// label per annotator counts, so input order and duplicates do not matter.
pub fn resolve(records: &[AnnotationRecord]) -> Resolution {
    let doc_id = records.first().map(|r| r.doc_id.clone()).unwrap_or_default();
    let mut latest: BTreeMap<&str, &AnnotationRecord> = BTreeMap::new();
    for r in records {
        latest
            .entry(r.annotator_id.as_str())
            .and_modify(|cur| {
                if (r.timestamp, r.round_id, r.label) > (cur.timestamp, cur.round_id, cur.label) {
                    *cur = r;
                }
            })
            .or_insert(r);
    }
    let labels: Vec<(String, StanceLabel)> = latest.iter().map(|(a, r)| (a.to_string(), r.label)).collect();
    resolve_labels(doc_id, labels)
}

fn resolve_labels(doc_id: String, labels: Vec<(String, StanceLabel)>) -> Resolution {
    let distinct: BTreeSet<StanceLabel> = labels.iter().map(|(_, l)| *l).collect();
    let annotators = || labels.iter().map(|(a, _)| a.clone()).collect();
    let resolved = |label, resolution| {
        Resolution::Resolved(ResolvedExample {
            doc_id: doc_id.clone(),
            aggregate_label: label,
            resolution,
            contributing_annotators: annotators(),
        })
    };
    match distinct.len() {
        1 => resolved(*distinct.first().unwrap(), ResolutionKind::Consensus),
        2 if distinct.contains(&StanceLabel::Negative) && distinct.contains(&StanceLabel::Neutral) => {
            resolved(StanceLabel::Negative, ResolutionKind::NegativePrecedence)
        }
        _ => Resolution::Unresolved {
            doc_id: doc_id.clone(),
            labels,
        },
    }
}

/// Checks that a resolved example's tag follows from the records it names.
pub fn audit(example: &ResolvedExample, records: &[AnnotationRecord]) -> bool {
    let mine: Vec<AnnotationRecord> = records
        .iter()
        .filter(|r| r.doc_id == example.doc_id && example.contributing_annotators.contains(&r.annotator_id))
        .cloned()
        .collect();
    resolve(&mine).resolved() == Some(example)
}

/// Unweighted Cohen's κ for paired nominal labels.
pub fn cohens_kappa(a: &[StanceLabel], b: &[StanceLabel]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument("kappa needs two non-empty label lists of equal length".into()));
    }
    kappa_from_confusion(&confusion(a.iter().copied().zip(b.iter().copied())))
}

pub fn confusion(pairs: impl IntoIterator<Item = (StanceLabel, StanceLabel)>) -> [[u64; 3]; 3] {
    let mut m = [[0u64; 3]; 3];
    for (x, y) in pairs {
        m[x.index()][y.index()] += 1;
    }
    m
}

pub fn kappa_from_confusion(m: &[[u64; 3]; 3]) -> Result<f64> {
    let n: u64 = m.iter().flatten().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("kappa of an empty table".into()));
    }
    let row: Vec<u64> = (0..3).map(|i| m[i].iter().sum()).collect();
    let col: Vec<u64> = (0..3).map(|j| (0..3).map(|i| m[i][j]).sum()).collect();
    let agree: u64 = (0..3).map(|i| m[i][i]).sum();
    let nf = n as f64;
    let p_o = agree as f64 / nf;
    // p_e = 1 exactly when both raters put every item in the same single class.
    if (0..3).any(|k| row[k] == n && col[k] == n) {
        return if agree == n {
            Ok(1.0)
        } else {
            Err(Error::DegenerateKappa { observed: p_o })
        };
    }
    let p_e: f64 = (0..3).map(|k| row[k] as f64 * col[k] as f64).sum::<f64>() / (nf * nf);
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub annotator_a: String,
    pub annotator_b: String,
    pub overlap_n: u64,
    pub kappa: f64,
    /// Rows are `annotator_a`'s labels, columns `annotator_b`'s.
    pub confusion: [[u64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub pairs: Vec<AgreementReport>,
    pub min_kappa: Option<f64>,
    pub max_kappa: Option<f64>,
}

/// Current labels: one record per (document, annotator), plus the full history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationStore {
    history: Vec<AnnotationRecord>,
    current: BTreeMap<String, BTreeMap<String, AnnotationRecord>>,
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: impl IntoIterator<Item = AnnotationRecord>) -> Self {
        let mut s = Self::new();
        for r in records {
            s.apply(r);
        }
        s
    }

    /// Folds one record in; a later record for the same (doc, annotator) replaces the earlier one.
    pub fn apply(&mut self, record: AnnotationRecord) {
        self.current
            .entry(record.doc_id.clone())
            .or_default()
            .insert(record.annotator_id.clone(), record.clone());
        self.history.push(record);
    }

    pub fn history(&self) -> &[AnnotationRecord] {
        &self.history
    }

    pub fn current(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.current.values().flat_map(|m| m.values())
    }

    pub fn get(&self, doc_id: &str, annotator_id: &str) -> Option<&AnnotationRecord> {
        self.current.get(doc_id)?.get(annotator_id)
    }

    pub fn records_for(&self, doc_id: &str) -> Vec<AnnotationRecord> {
        self.current
            .get(doc_id)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.current.keys().map(String::as_str)
    }

    pub fn annotators(&self) -> BTreeSet<&str> {
        self.current().map(|r| r.annotator_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.current.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    /// Resolution for every labelled document, in id order.
    pub fn resolve_all(&self) -> Vec<Resolution> {
        self.current
            .values()
            .map(|m| resolve(&m.values().cloned().collect::<Vec<_>>()))
            .collect()
    }

    /// Resolutions limited to `doc_ids`, skipping unlabelled ones.
    pub fn resolve_docs<'a>(&self, doc_ids: impl IntoIterator<Item = &'a str>) -> Vec<Resolution> {
        doc_ids
            .into_iter()
            .filter_map(|d| self.current.get(d))
            .map(|m| resolve(&m.values().cloned().collect::<Vec<_>>()))
            .collect()
    }

    pub fn agreement(&self) -> AgreementSummary {
        let mut tables: BTreeMap<(String, String), [[u64; 3]; 3]> = BTreeMap::new();
        for by_annotator in self.current.values() {
            let recs: Vec<&AnnotationRecord> = by_annotator.values().collect();
            for i in 0..recs.len() {
                for j in i + 1..recs.len() {
                    let t = tables
                        .entry((recs[i].annotator_id.clone(), recs[j].annotator_id.clone()))
                        .or_insert([[0; 3]; 3]);
                    t[recs[i].label.index()][recs[j].label.index()] += 1;
                }
            }
        }
        let pairs: Vec<AgreementReport> = tables
            .into_iter()
            .map(|((a, b), m)| AgreementReport {
                annotator_a: a,
                annotator_b: b,
                overlap_n: m.iter().flatten().sum(),
                kappa: kappa_from_confusion(&m).expect("non-empty table with consistent marginals"),
                confusion: m,
            })
            .collect();
        let ks = pairs.iter().map(|p| p.kappa);
        AgreementSummary {
            min_kappa: ks.clone().reduce(f64::min),
            max_kappa: ks.reduce(f64::max),
            pairs,
        }
    }

    /// Overlap counts per unordered annotator pair across all labelled documents.
    pub fn pair_overlap(&self) -> OverlapCounts {
        let mut out = OverlapCounts::new();
        for m in self.current.values() {
            let ids: Vec<&String> = m.keys().collect();
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    out.add(ids[i], ids[j], 1);
                }
            }
        }
        out
    }
}

pub fn agreement_report(store: &AnnotationStore) -> AgreementSummary {
    store.agreement()
}

/// Append-only JSONL annotation log.
pub struct AnnotationLog {
    path: PathBuf,
    file: std::fs::File,
}

impl AnnotationLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, file })
    }

    pub fn append(&mut self, record: &AnnotationRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).expect("records serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(input: impl BufRead) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::MalformedRecord {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<AnnotationStore> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(AnnotationStore::from_records(read_log(std::io::BufReader::new(f))?))
}

pub fn write_records(out: &mut impl Write, records: &[AnnotationRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Cumulative overlap per unordered annotator pair.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts(BTreeMap<String, usize>);

impl OverlapCounts {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(a: &str, b: &str) -> String {
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        format!("{x}\u{1f}{y}")
    }

    pub fn get(&self, a: &str, b: &str) -> usize {
        self.0.get(&Self::key(a, b)).copied().unwrap_or(0)
    }

    pub fn add(&mut self, a: &str, b: &str, n: usize) {
        *self.0.entry(Self::key(a, b)).or_insert(0) += n;
    }

    pub fn merge(&mut self, other: &OverlapCounts) {
        for (k, v) in &other.0 {
            *self.0.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// `(a, b, n)` with `a < b`.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, usize)> {
        self.0.iter().map(|(k, &v)| {
            let (a, b) = k.split_once('\u{1f}').unwrap();
            (a, b, v)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Documents per annotator, in batch order.
    pub by_annotator: BTreeMap<String, Vec<String>>,
    /// Annotators per document.
    pub by_doc: BTreeMap<String, Vec<String>>,
    /// Overlap added by this assignment.
    pub overlap: OverlapCounts,
    pub warnings: Vec<String>,
}

impl Assignment {
    pub fn load(&self) -> BTreeMap<&str, usize> {
        self.by_annotator.iter().map(|(a, d)| (a.as_str(), d.len())).collect()
    }
}

/// Round-robin schedule of pairs: `m - 1` (or `m` for odd `m`) perfect
/// matchings by the circle method, so every annotator appears once per matching.
pub fn pair_schedule(m: usize) -> Vec<Vec<(usize, usize)>> {
    if m < 2 {
        return Vec::new();
    }
    let slots = m + m % 2;
    let mut ring: Vec<usize> = (0..slots).collect();
    let mut rounds = Vec::with_capacity(slots - 1);
    for _ in 0..slots - 1 {
        let mut matching = Vec::new();
        for i in 0..slots / 2 {
            let (a, b) = (ring[i], ring[slots - 1 - i]);
            if a < m && b < m {
                matching.push((a.min(b), a.max(b)));
            }
        }
        rounds.push(matching);
        // Keep slot 0 fixed and rotate the rest.
        let last = ring.pop().unwrap();
        ring.insert(1, last);
    }
    rounds
}

/// Distributes a batch over annotators.
///
/// Documents are taken in batch order. The leading ones are double-assigned
/// to pairs that still fall short of `overlap_target` (counting `carried`
/// overlap from earlier rounds), walking the round-robin schedule so loads
/// stay balanced. Remaining documents go singly to the least-loaded
/// annotator. An unreachable target is reported as a warning.
pub fn assign(
    doc_ids: &[String],
    annotators: &[String],
    overlap_target: usize,
    carried: &OverlapCounts,
) -> Result<Assignment> {
    if annotators.is_empty() {
        return Err(Error::InvalidArgument("need at least one annotator".into()));
    }
    let unique: BTreeSet<&String> = annotators.iter().collect();
    if unique.len() != annotators.len() {
        return Err(Error::InvalidArgument("duplicate annotator id".into()));
    }
    let m = annotators.len();
    let mut load = vec![0usize; m];
    let mut by_doc: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut by_annotator: BTreeMap<String, Vec<String>> =
        annotators.iter().map(|a| (a.clone(), Vec::new())).collect();
    let mut overlap = OverlapCounts::new();
    let mut warnings = Vec::new();

    let schedule = pair_schedule(m);
    let mut deficit: HashMap<(usize, usize), usize> = schedule
        .iter()
        .flatten()
        .map(|&(a, b)| {
            ((a, b), overlap_target.saturating_sub(carried.get(&annotators[a], &annotators[b])))
        })
        .collect();

    let mut docs = doc_ids.iter();
    let mut give = |doc: &String, who: &[usize], load: &mut Vec<usize>| {
        for &i in who {
            load[i] += 1;
            by_annotator.get_mut(&annotators[i]).unwrap().push(doc.clone());
        }
        by_doc.insert(doc.clone(), who.iter().map(|&i| annotators[i].clone()).collect());
    };

    'pairs: while deficit.values().any(|&d| d > 0) {
        for matching in &schedule {
            for pair in matching {
                let d = deficit.get_mut(pair).unwrap();
                if *d == 0 {
                    continue;
                }
                let Some(doc) = docs.next() else { break 'pairs };
                *d -= 1;
                give(doc, &[pair.0, pair.1], &mut load);
                overlap.add(&annotators[pair.0], &annotators[pair.1], 1);
            }
        }
    }
    let short: usize = deficit.values().sum();
    if short > 0 {
        warnings.push(format!(
            "overlap target {overlap_target} not reached this round; {short} paired documents still needed"
        ));
    }
    for doc in docs {
        let who = (0..m).min_by_key(|&i| (load[i], i)).unwrap();
        give(doc, &[who], &mut load);
    }
    Ok(Assignment {
        by_annotator,
        by_doc,
        overlap,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use StanceLabel::*;

    fn rec(doc: &str, ann: &str, label: StanceLabel, t: i64) -> AnnotationRecord {
        AnnotationRecord {
            doc_id: doc.into(),
            annotator_id: ann.into(),
            label,
            round_id: 0,
            timestamp: Utc.timestamp_opt(1_700_000_000 + t, 0).unwrap(),
        }
    }

    #[test]
    fn kappa_hand_values() {
        assert_eq!(cohens_kappa(&[Positive, Positive, Negative, Negative], &[Positive, Negative, Negative, Negative]).unwrap(), 0.5);
        assert_eq!(cohens_kappa(&[Neutral, Neutral], &[Neutral, Neutral]).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&[Positive, Negative, Neutral], &[Positive, Negative, Neutral]).unwrap(), 1.0);
        assert!(cohens_kappa(&[], &[]).is_err());
        assert!(cohens_kappa(&[Positive], &[]).is_err());
    }

    #[test]
    fn kappa_from_known_confusion() {
        // n = 11, diagonal 8, row sums (6, 3, 2), column sums (4, 5, 2).
        let m = [[4, 1, 1], [0, 3, 0], [0, 1, 1]];
        let p_o = 8.0 / 11.0;
        let p_e = (6.0 * 4.0 + 3.0 * 5.0 + 2.0 * 2.0) / 121.0;
        assert!((kappa_from_confusion(&m).unwrap() - (p_o - p_e) / (1.0 - p_e)).abs() < 1e-15);
    }

    #[test]
    fn independent_raters_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| StanceLabel::from_index(rng.random_range(0..3)).unwrap();
        let a: Vec<StanceLabel> = (0..10_000).map(|_| draw(&mut rng)).collect();
        let b: Vec<StanceLabel> = (0..10_000).map(|_| draw(&mut rng)).collect();
        assert!(cohens_kappa(&a, &b).unwrap().abs() < 0.05);
    }

    fn label() -> impl Strategy<Value = StanceLabel> {
        prop_oneof![Just(Positive), Just(Neutral), Just(Negative)]
    }

    proptest! {
        #[test]
        fn kappa_symmetric_and_bounded(pairs in proptest::collection::vec((label(), label()), 1..60)) {
            let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let k = cohens_kappa(&a, &b).unwrap();
            prop_assert_eq!(k, cohens_kappa(&b, &a).unwrap());
            prop_assert!((-1.0..=1.0).contains(&k));
            prop_assert_eq!(cohens_kappa(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn resolve_permutation_invariant_and_idempotent(
            labels in proptest::collection::vec(label(), 1..5),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let records: Vec<AnnotationRecord> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| rec("d", &format!("a{i}"), l, 0))
                .collect();
            let r = resolve(&records);
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&resolve(&shuffled), &r);
            let doubled: Vec<_> = records.iter().chain(records.iter()).cloned().collect();
            prop_assert_eq!(&resolve(&doubled), &r);
            if let Resolution::Resolved(ex) = &r {
                prop_assert!(audit(ex, &records));
            }
        }
    }

    #[test]
    fn resolution_rule() {
        let r = resolve(&[rec("d", "a", Negative, 0), rec("d", "b", Neutral, 0)]);
        let ex = r.resolved().unwrap();
        assert_eq!(ex.aggregate_label, Negative);
        assert_eq!(ex.resolution, ResolutionKind::NegativePrecedence);
        let r = resolve(&[rec("d", "a", Positive, 0), rec("d", "b", Positive, 0)]);
        assert_eq!(r.resolved().unwrap().resolution, ResolutionKind::Consensus);
        assert!(resolve(&[rec("d", "a", Positive, 0), rec("d", "b", Negative, 0)]).resolved().is_none());
        assert!(resolve(&[rec("d", "a", Positive, 0), rec("d", "b", Neutral, 0)]).resolved().is_none());
        assert_eq!(resolve(&[rec("d", "a", Neutral, 0)]).resolved().unwrap().aggregate_label, Neutral);
        // A later relabel by the same annotator replaces the earlier one.
        let r = resolve(&[rec("d", "a", Positive, 0), rec("d", "a", Neutral, 5), rec("d", "b", Neutral, 0)]);
        assert_eq!(r.resolved().unwrap().aggregate_label, Neutral);
    }

    #[test]
    fn store_overwrites_and_keeps_history() {
        let mut s = AnnotationStore::new();
        s.apply(rec("d", "a", Positive, 0));
        s.apply(rec("d", "a", Negative, 1));
        s.apply(rec("d", "b", Negative, 1));
        assert_eq!(s.history().len(), 3);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("d", "a").unwrap().label, Negative);
        let agreement = s.agreement();
        assert_eq!(agreement.pairs.len(), 1);
        assert_eq!(agreement.pairs[0].overlap_n, 1);
        assert_eq!(s.pair_overlap().get("b", "a"), 1);

        let single = AnnotationStore::from_records([rec("d", "a", Positive, 0)]);
        assert!(single.agreement().pairs.is_empty());
        assert_eq!(single.agreement().min_kappa, None);
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.jsonl");
        let mut log = AnnotationLog::open(&path).unwrap();
        let recs = vec![rec("d1", "a", Positive, 0), rec("d1", "b", Neutral, 1)];
        for r in &recs {
            log.append(r).unwrap();
        }
        drop(log);
        let store = load_store(&path).unwrap();
        assert_eq!(store.history(), recs.as_slice());
    }

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|i| format!("ann{i}")).collect()
    }

    fn docs(n: usize, round: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{round}-d{i:04}")).collect()
    }

    #[test]
    fn schedule_covers_pairs_once() {
        for m in 2..9 {
            let s = pair_schedule(m);
            let all: Vec<(usize, usize)> = s.iter().flatten().copied().collect();
            let set: BTreeSet<_> = all.iter().collect();
            assert_eq!(all.len(), m * (m - 1) / 2);
            assert_eq!(set.len(), all.len());
            for matching in &s {
                let people: Vec<usize> = matching.iter().flat_map(|&(a, b)| [a, b]).collect();
                let uniq: BTreeSet<_> = people.iter().collect();
                assert_eq!(uniq.len(), people.len());
            }
        }
    }

    #[test]
    fn assignment_small_cases() {
        let two = assign(&docs(100, 0), &names(2), 100, &OverlapCounts::new()).unwrap();
        assert!(two.by_doc.values().all(|a| a.len() == 2));
        assert!(two.warnings.is_empty());
        let one = assign(&docs(10, 0), &names(1), 100, &OverlapCounts::new()).unwrap();
        assert!(one.by_doc.values().all(|a| a.len() == 1));
        assert!(assign(&docs(1, 0), &[], 1, &OverlapCounts::new()).is_err());
    }

    /// Oracle: replay the round-robin rule by hand for four annotators.
    #[test]
    fn four_annotators_reach_quota_over_rounds() {
        let ann = names(4);
        let mut carried = OverlapCounts::new();
        for round in 0..5 {
            let a = assign(&docs(600, round), &ann, 500, &carried).unwrap();
            assert!(a.by_doc.values().all(|w| w.len() == 2));
            for (_, _, n) in a.overlap.iter() {
                assert_eq!(n, 100);
            }
            let loads: Vec<usize> = a.load().values().copied().collect();
            assert!(loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 1);
            assert_eq!(loads.iter().sum::<usize>(), 1200);
            carried.merge(&a.overlap);
            assert_eq!(a.warnings.is_empty(), round == 4);
        }
        for (_, _, n) in carried.iter() {
            assert_eq!(n, 500);
        }
        let after = assign(&docs(600, 9), &ann, 500, &carried).unwrap();
        assert!(after.by_doc.values().all(|w| w.len() == 1));
        let loads: Vec<usize> = after.load().values().copied().collect();
        assert_eq!(loads, vec![150; 4]);
    }

    proptest! {
        #[test]
        fn assignment_covers_and_balances(m in 1usize..7, n in 0usize..300, target in 0usize..200) {
            let a = assign(&docs(n, 0), &names(m), target, &OverlapCounts::new()).unwrap();
            prop_assert_eq!(a.by_doc.len(), n);
            prop_assert!(a.by_doc.values().all(|w| !w.is_empty() && w.len() <= 2));
            if m % 2 == 0 || m == 1 {
                let loads: Vec<usize> = a.load().values().copied().collect();
                prop_assert!(loads.iter().max().unwrap() - loads.iter().min().unwrap() <= 1, "{:?}", loads);
            }
        }
    }
}
