//! Batch selection strategies: random, exemplar-guided nearest neighbours,
//! minority-class certainty and top-two margin.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::classifier::{Prediction, StanceLabel};
use crate::corpus::{Corpus, SliceLabel, SlicePair};
use crate::embedding::{embed_text, DocVector, EmbeddingModel, VectorIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Guided,
    Certainty,
    Margin,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Guided => "guided",
            Strategy::Certainty => "certainty",
            Strategy::Margin => "margin",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "guided" => Ok(Strategy::Guided),
            "certainty" => Ok(Strategy::Certainty),
            "margin" => Ok(Strategy::Margin),
            _ => Err(Error::InvalidArgument(format!("unknown strategy `{s}`"))),
        }
    }
}

/// A short document written by an annotator to illustrate a stance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub annotator_id: String,
    pub text: String,
    pub intended_label: StanceLabel,
}

impl Exemplar {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::InvalidArgument("exemplar text is empty".into()));
        }
        if self.intended_label == StanceLabel::Neutral {
            return Err(Error::InvalidArgument("exemplars must be positive or negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBatch {
    pub round_id: u64,
    pub strategy: Strategy,
    pub doc_ids: Vec<String>,
    /// Per time-slice counts; empty when slices are not used.
    #[serde(default)]
    pub per_slice_quota: BTreeMap<String, usize>,
    #[serde(default)]
    pub metadata: serde_json::Value,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SamplingBatch {
    fn new(strategy: Strategy, doc_ids: Vec<String>) -> Self {
        Self {
            round_id: 0,
            strategy,
            doc_ids,
            per_slice_quota: BTreeMap::new(),
            metadata: serde_json::Value::Null,
            warnings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }
}

/// `(before, after)` share of `n`; Before takes the odd item.
pub fn split_quota(n: usize) -> (usize, usize) {
    (n.div_ceil(2), n / 2)
}

fn take_or_clamp(requested: usize, available: usize, lenient: bool, what: &str, warnings: &mut Vec<String>) -> Result<usize> {
    if requested <= available {
        return Ok(requested);
    }
    if !lenient {
        return Err(Error::PoolTooSmall { requested, available });
    }
    warnings.push(format!("{what}: requested {requested}, only {available} eligible"));
    Ok(available)
}

fn draw(ids: &[&str], n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    rand::seq::index::sample(rng, ids.len(), n)
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect()
}

/// Uniform sampling without replacement from documents not in `exclude`.
///
/// With `slices`, half of `n` comes from each slice and documents outside
/// both slices are ineligible. In `lenient` mode a short pool is clamped
/// with a warning instead of failing.
pub fn random_sample(
    pool: &Corpus,
    n: usize,
    slices: Option<&SlicePair>,
    exclude: &HashSet<String>,
    seed: u64,
    lenient: bool,
) -> Result<SamplingBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eligible: Vec<(&str, Option<SliceLabel>)> = pool
        .documents
        .iter()
        .filter(|d| !exclude.contains(&d.id))
        .map(|d| (d.id.as_str(), slices.and_then(|s| s.label_of(d.created_at))))
        .collect();
    eligible.sort_unstable_by(|a, b| a.0.cmp(b.0));
    let mut warnings = Vec::new();
    let mut quota = BTreeMap::new();
    let doc_ids = match slices {
        None => {
            let ids: Vec<&str> = eligible.iter().map(|e| e.0).collect();
            let n = take_or_clamp(n, ids.len(), lenient, "random", &mut warnings)?;
            draw(&ids, n, &mut rng)
        }
        Some(_) => {
            let (nb, na) = split_quota(n);
            let mut out = Vec::with_capacity(n);
            for (label, want) in [(SliceLabel::Before, nb), (SliceLabel::After, na)] {
                let ids: Vec<&str> = eligible
                    .iter()
                    .filter(|e| e.1 == Some(label))
                    .map(|e| e.0)
                    .collect();
                let got = take_or_clamp(want, ids.len(), lenient, &format!("random/{label}"), &mut warnings)?;
                quota.insert(label.to_string(), got);
                out.extend(draw(&ids, got, &mut rng));
            }
            out
        }
    };
    let mut batch = SamplingBatch::new(Strategy::Random, doc_ids);
    batch.per_slice_quota = quota;
    batch.metadata = json!({ "seed": seed, "requested": n });
    batch.warnings = warnings;
    Ok(batch)
}

/// Expands exemplars into their `k` nearest unclaimed pool documents each.
///
/// Exemplars are handled in order and earlier ones claim documents first,
/// so a later exemplar moves on to its next-nearest neighbour. With
/// `slices` (document id to slice), `k` is split across the two slices and
/// unlabelled documents are ineligible. Exemplars whose text does not
/// resolve in the embedding are skipped with a warning.
pub fn guided_sample(
    pool: &[DocVector],
    exemplars: &[Exemplar],
    model: &EmbeddingModel,
    k_per_exemplar: usize,
    slices: Option<&HashMap<String, SliceLabel>>,
    exclude: &HashSet<String>,
) -> Result<SamplingBatch> {
    if exemplars.is_empty() {
        return Err(Error::InvalidArgument("no exemplars".into()));
    }
    if k_per_exemplar == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    for e in exemplars {
        e.validate()?;
    }
    let eligible: Vec<DocVector> = pool
        .iter()
        .filter(|d| !exclude.contains(&d.doc_id))
        .filter(|d| slices.is_none_or(|s| s.contains_key(&d.doc_id)))
        .cloned()
        .collect();
    let index = VectorIndex::new(&eligible);
    let mut claimed: HashSet<String> = HashSet::new();
    let mut doc_ids = Vec::new();
    let mut warnings = Vec::new();
    let mut per_exemplar = Vec::new();
    let mut quota: BTreeMap<String, usize> = BTreeMap::new();

    for (i, ex) in exemplars.iter().enumerate() {
        let q = embed_text(model, &format!("\u{0}exemplar-{i}"), &ex.text);
        if !q.resolved {
            warnings.push(format!("exemplar {i} has no resolvable tokens; skipped"));
            per_exemplar.push(json!({ "index": i, "picked": 0, "label": ex.intended_label }));
            continue;
        }
        let (nb, na) = split_quota(k_per_exemplar);
        let mut want: HashMap<Option<SliceLabel>, usize> = match slices {
            None => HashMap::from([(None, k_per_exemplar)]),
            Some(_) => HashMap::from([(Some(SliceLabel::Before), nb), (Some(SliceLabel::After), na)]),
        };
        let mut picked = 0;
        for nb in index.ranked(&q)? {
            if want.values().all(|&w| w == 0) {
                break;
            }
            if claimed.contains(&nb.doc_id) {
                continue;
            }
            let slot = slices.map(|s| s[&nb.doc_id]);
            let Some(w) = want.get_mut(&slot) else { continue };
            if *w == 0 {
                continue;
            }
            *w -= 1;
            if let Some(label) = slot {
                *quota.entry(label.to_string()).or_insert(0) += 1;
            }
            claimed.insert(nb.doc_id.clone());
            doc_ids.push(nb.doc_id);
            picked += 1;
        }
        if picked < k_per_exemplar {
            warnings.push(format!("exemplar {i}: only {picked} of {k_per_exemplar} neighbours available"));
        }
        per_exemplar.push(json!({ "index": i, "picked": picked, "label": ex.intended_label, "annotator_id": ex.annotator_id }));
    }
    let mut batch = SamplingBatch::new(Strategy::Guided, doc_ids);
    batch.per_slice_quota = quota;
    batch.metadata = json!({ "k_per_exemplar": k_per_exemplar, "exemplars": per_exemplar });
    batch.warnings = warnings;
    Ok(batch)
}

fn eligible_predictions<'a>(preds: &'a [Prediction], exclude: &HashSet<String>) -> Result<Vec<&'a Prediction>> {
    let mut seen = HashSet::with_capacity(preds.len());
    let mut out = Vec::with_capacity(preds.len());
    for p in preds {
        if !seen.insert(p.doc_id.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate posterior for `{}`", p.doc_id)));
        }
        if !exclude.contains(&p.doc_id) {
            out.push(p);
        }
    }
    Ok(out)
}

/// The `n` smallest items under `cmp`, sorted.
fn top_n<T>(mut items: Vec<T>, n: usize, cmp: impl Fn(&T, &T) -> Ordering) -> Vec<T> {
    if n == 0 {
        return Vec::new();
    }
    if n < items.len() {
        items.select_nth_unstable_by(n - 1, &cmp);
        items.truncate(n);
    }
    items.sort_unstable_by(cmp);
    items
}

/// Top-`n` documents by posterior of `target`, descending, ties by id.
/// Asking for more than the eligible pool clamps with a warning.
pub fn certainty_sample(
    preds: &[Prediction],
    target: StanceLabel,
    n: usize,
    exclude: &HashSet<String>,
) -> Result<SamplingBatch> {
    let eligible = eligible_predictions(preds, exclude)?;
    let mut warnings = Vec::new();
    let n = take_or_clamp(n, eligible.len(), true, "certainty", &mut warnings)?;
    let t = target.index();
    let picked = top_n(eligible, n, |a, b| {
        b.posterior[t]
            .total_cmp(&a.posterior[t])
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    let mut batch = SamplingBatch::new(Strategy::Certainty, picked.iter().map(|p| p.doc_id.clone()).collect());
    batch.metadata = json!({ "target": target });
    batch.warnings = warnings;
    Ok(batch)
}

/// Difference between the largest and second-largest posterior.
pub fn margin(p: &[f64; 3]) -> f64 {
    let mut s = *p;
    s.sort_unstable_by(|a, b| b.total_cmp(a));
    s[0] - s[1]
}

/// The `n` documents with the smallest top-two margin, ascending, ties by id.
pub fn margin_sample(preds: &[Prediction], n: usize, exclude: &HashSet<String>) -> Result<SamplingBatch> {
    let eligible = eligible_predictions(preds, exclude)?;
    let mut warnings = Vec::new();
    let n = take_or_clamp(n, eligible.len(), true, "margin", &mut warnings)?;
    let scored: Vec<(f64, &Prediction)> = eligible.into_iter().map(|p| (margin(&p.posterior), p)).collect();
    let picked = top_n(scored, n, |a, b| a.0.total_cmp(&b.0).then_with(|| a.1.doc_id.cmp(&b.1.doc_id)));
    let mut batch = SamplingBatch::new(Strategy::Margin, picked.iter().map(|(_, p)| p.doc_id.clone()).collect());
    batch.metadata = json!({ "max_margin": picked.last().map(|(m, _)| *m) });
    batch.warnings = warnings;
    Ok(batch)
}

/// Positive batch first, then a negative batch drawn from what is left.
pub fn certainty_pair(
    preds: &[Prediction],
    n_positive: usize,
    n_negative: usize,
    exclude: &HashSet<String>,
) -> Result<SamplingBatch> {
    let pos = certainty_sample(preds, StanceLabel::Positive, n_positive, exclude)?;
    let mut excl = exclude.clone();
    excl.extend(pos.doc_ids.iter().cloned());
    let neg = certainty_sample(preds, StanceLabel::Negative, n_negative, &excl)?;
    let mut batch = SamplingBatch::new(Strategy::Certainty, pos.doc_ids.clone());
    batch.doc_ids.extend(neg.doc_ids.iter().cloned());
    batch.metadata = json!({ "positive": pos.len(), "negative": neg.len() });
    batch.warnings = pos.warnings.into_iter().chain(neg.warnings).collect();
    Ok(batch)
}
