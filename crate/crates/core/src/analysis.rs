//! Corpus-shift analytics: movers between slices, account-creation
//! histograms with KL and Bhattacharyya divergences, and stance time series.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, Prediction, StanceLabel};
use crate::corpus::{Corpus, SliceLabel, SlicePair};
use crate::error::{Error, Result};
use crate::textproc::{NgramTable, StopWords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    TowardBefore,
    TowardAfter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoverEntry {
    /// Space-joined n-gram (or hashtag).
    pub term: String,
    pub delta: f64,
    pub freq_before: f64,
    pub freq_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoversReport {
    pub direction: Direction,
    pub entries: Vec<MoverEntry>,
}

fn rank_movers(
    before: &HashMap<String, f64>,
    after: &HashMap<String, f64>,
    k: usize,
) -> (MoversReport, MoversReport) {
    let terms: BTreeSet<&String> = before.keys().chain(after.keys()).collect();
    let mut toward_before = Vec::new();
    let mut toward_after = Vec::new();
    for t in terms {
        let fb = before.get(t).copied().unwrap_or(0.0);
        let fa = after.get(t).copied().unwrap_or(0.0);
        let entry = |delta| MoverEntry {
            term: t.clone(),
            delta,
            freq_before: fb,
            freq_after: fa,
        };
        if fb > fa {
            toward_before.push(entry(fb - fa));
        } else if fa > fb {
            toward_after.push(entry(fa - fb));
        }
    }
    let finish = |mut v: Vec<MoverEntry>, direction| {
        v.sort_by(|a, b| b.delta.total_cmp(&a.delta).then_with(|| a.term.cmp(&b.term)));
        v.truncate(k);
        MoversReport { direction, entries: v }
    };
    (
        finish(toward_before, Direction::TowardBefore),
        finish(toward_after, Direction::TowardAfter),
    )
}

fn table_frequencies(t: &NgramTable, stopwords: &StopWords) -> HashMap<String, f64> {
    t.relative_frequencies()
        .into_iter()
        .filter(|(g, _)| !g.iter().all(|w| stopwords.contains(w)))
        .map(|(g, f)| (g.join(" "), f))
        .collect()
}

/// Top-`k` terms whose relative frequency rose in each direction.
///
/// Frequencies are taken over the full tables; stop-word n-grams are
/// dropped from the ranking only. Terms present on one side count with
/// their full frequency.
pub fn movers(
    before: &NgramTable,
    after: &NgramTable,
    stopwords: &StopWords,
    k: usize,
) -> Result<(MoversReport, MoversReport)> {
    if before.n != after.n {
        return Err(Error::InvalidArgument(format!(
            "n-gram orders differ: {} vs {}",
            before.n, after.n
        )));
    }
    if before.total == 0 || after.total == 0 {
        return Err(Error::InvalidArgument("movers need two non-empty tables".into()));
    }
    Ok(rank_movers(
        &table_frequencies(before, stopwords),
        &table_frequencies(after, stopwords),
        k,
    ))
}

fn hashtag_frequencies(corpus: &Corpus) -> HashMap<String, f64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for d in &corpus.documents {
        for h in d.all_hashtags() {
            *counts.entry(h).or_insert(0) += 1;
        }
    }
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(h, c)| (h, c as f64 / total as f64))
        .collect()
}

/// Movers over hashtags (field plus inline tags, once per document).
pub fn hashtag_movers(before: &Corpus, after: &Corpus, k: usize) -> (MoversReport, MoversReport) {
    rank_movers(&hashtag_frequencies(before), &hashtag_frequencies(after), k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

/// First month the platform accepted accounts.
pub const PLATFORM_EPOCH: YearMonth = YearMonth { year: 2006, month: 3 };

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!("month {month} out of range")));
        }
        Ok(Self { year, month })
    }

    pub fn of(t: DateTime<Utc>) -> Self {
        Self {
            year: t.year(),
            month: t.month(),
        }
    }

    pub fn succ(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                month: self.month + 1,
                ..self
            }
        }
    }

    /// Inclusive month range.
    pub fn range(from: Self, to: Self) -> Vec<Self> {
        let mut out = Vec::new();
        let mut m = from;
        while m <= to {
            out.push(m);
            m = m.succ();
        }
        out
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected YYYY-MM, got `{s}`"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        Self::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for YearMonth {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(m: YearMonth) -> String {
        m.to_string()
    }
}

/// Account-creation months of a set of users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSet {
    pub name: String,
    pub months: Vec<YearMonth>,
    /// Users without a creation time, or with one outside the platform's lifetime.
    pub missing: usize,
}

impl UserSet {
    pub fn new(name: impl Into<String>, months: Vec<YearMonth>) -> Self {
        let now = YearMonth::of(Utc::now());
        let (months, bad): (Vec<_>, Vec<_>) = months
            .into_iter()
            .partition(|m| *m >= PLATFORM_EPOCH && *m <= now);
        Self {
            name: name.into(),
            months,
            missing: bad.len(),
        }
    }

    /// One entry per distinct author in `corpus`, restricted to `authors` when given.
    pub fn from_corpus(name: impl Into<String>, corpus: &Corpus, authors: Option<&HashSet<String>>) -> Self {
        let mut seen = HashSet::new();
        let mut months = Vec::new();
        let mut missing = 0;
        for d in &corpus.documents {
            if d.author_id.is_empty() || authors.is_some_and(|a| !a.contains(&d.author_id)) {
                continue;
            }
            if !seen.insert(d.author_id.as_str()) {
                continue;
            }
            match d.account_created_at {
                Some(t) => months.push(YearMonth::of(t)),
                None => missing += 1,
            }
        }
        let mut set = Self::new(name, months);
        set.missing += missing;
        set
    }

    pub fn len(&self) -> usize {
        self.months.len()
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionHistogram {
    pub bins: Vec<String>,
    pub mass: Vec<f64>,
}

impl DistributionHistogram {
    /// Normalizes non-negative weights over the given bins.
    pub fn from_weights(bins: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if bins.len() != weights.len() {
            return Err(Error::MisalignedBins);
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !(total > 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite, non-negative, and not all zero".into()));
        }
        Ok(Self {
            bins,
            mass: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    fn validate(&self) -> Result<()> {
        let sum: f64 = self.mass.iter().sum();
        if self.mass.iter().any(|m| !m.is_finite() || *m < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDistribution(format!("mass sums to {sum}")));
        }
        Ok(())
    }
}

/// Month histogram over `[from, to]`, keeping empty months so sets align.
pub fn creation_histogram_over(users: &UserSet, from: YearMonth, to: YearMonth) -> Result<DistributionHistogram> {
    if users.is_empty() {
        return Err(Error::InvalidArgument(format!("user set `{}` is empty", users.name)));
    }
    let bins = YearMonth::range(from, to);
    let pos: HashMap<YearMonth, usize> = bins.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut counts = vec![0.0; bins.len()];
    for m in &users.months {
        let i = pos
            .get(m)
            .ok_or_else(|| Error::InvalidArgument(format!("month {m} outside histogram range")))?;
        counts[*i] += 1.0;
    }
    DistributionHistogram::from_weights(bins.iter().map(|m| m.to_string()).collect(), counts)
}

/// Histogram over the set's own month range.
pub fn creation_histogram(users: &UserSet) -> Result<DistributionHistogram> {
    let (from, to) = month_span(std::slice::from_ref(users))?;
    creation_histogram_over(users, from, to)
}

fn month_span(sets: &[UserSet]) -> Result<(YearMonth, YearMonth)> {
    let all = sets.iter().flat_map(|s| s.months.iter());
    let from = all.clone().min().copied();
    let to = all.max().copied();
    from.zip(to)
        .ok_or_else(|| Error::InvalidArgument("no account-creation months".into()))
}

/// Histograms of every set over the union of their month ranges.
pub fn aligned_histograms(sets: &[UserSet]) -> Result<Vec<DistributionHistogram>> {
    let (from, to) = month_span(sets)?;
    sets.iter().map(|s| creation_histogram_over(s, from, to)).collect()
}

/// Default additive smoothing for [`kl_divergence`].
pub const KL_EPSILON: f64 = 1e-9;

/// `D(p‖q)` in nats, smoothing only the reference: `q' = (q + ε) / (1 + ε·|bins|)`.
pub fn kl_divergence(p: &DistributionHistogram, q: &DistributionHistogram, epsilon: f64) -> Result<f64> {
    if p.bins != q.bins {
        return Err(Error::MisalignedBins);
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument("epsilon must be > 0".into()));
    }
    p.validate()?;
    q.validate()?;
    let z = 1.0 + epsilon * p.bins.len() as f64;
    let d: f64 = p
        .mass
        .iter()
        .zip(&q.mass)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / ((qi + epsilon) / z)).ln())
        .sum();
    Ok(d.max(0.0))
}

/// `−ln Σ √(p q)`; `+∞` for disjoint supports.
pub fn bhattacharyya(p: &DistributionHistogram, q: &DistributionHistogram) -> Result<f64> {
    if p.bins != q.bins {
        return Err(Error::MisalignedBins);
    }
    p.validate()?;
    q.validate()?;
    let bc: f64 = p.mass.iter().zip(&q.mass).map(|(a, b)| (a * b).sqrt()).sum();
    if bc == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok((-bc.ln()).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub name: String,
    pub users: usize,
    pub missing: usize,
    pub kl: f64,
    pub bhattacharyya: f64,
    /// 1 = closest to the baseline.
    pub kl_rank: usize,
    pub bhattacharyya_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceTable {
    pub baseline: String,
    /// True when KL is `D(baseline‖set)` instead of `D(set‖baseline)`.
    pub reversed: bool,
    pub rows: Vec<DivergenceRow>,
    pub rankings_agree: bool,
}

fn ranks(values: &[f64], names: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then_with(|| names[a].cmp(names[b])));
    let mut r = vec![0; values.len()];
    for (rank, i) in order.into_iter().enumerate() {
        r[i] = rank + 1;
    }
    r
}

/// KL and Bhattacharyya of each set against `baseline`, with both rankings.
pub fn divergence_ranking(sets: &[UserSet], baseline: &UserSet, reverse: bool, epsilon: f64) -> Result<DivergenceTable> {
    if sets.is_empty() {
        return Err(Error::InvalidArgument("no comparison sets".into()));
    }
    let mut all = sets.to_vec();
    all.push(baseline.clone());
    let hists = aligned_histograms(&all)?;
    let base = hists.last().unwrap();
    let mut kl = Vec::new();
    let mut bd = Vec::new();
    for h in &hists[..sets.len()] {
        kl.push(if reverse {
            kl_divergence(base, h, epsilon)?
        } else {
            kl_divergence(h, base, epsilon)?
        });
        bd.push(bhattacharyya(h, base)?);
    }
    let names: Vec<&str> = sets.iter().map(|s| s.name.as_str()).collect();
    let kr = ranks(&kl, &names);
    let br = ranks(&bd, &names);
    Ok(DivergenceTable {
        baseline: baseline.name.clone(),
        reversed: reverse,
        rankings_agree: kr == br,
        rows: sets
            .iter()
            .enumerate()
            .map(|(i, s)| DivergenceRow {
                name: s.name.clone(),
                users: s.len(),
                missing: s.missing,
                kl: kl[i],
                bhattacharyya: bd[i],
                kl_rank: kr[i],
                bhattacharyya_rank: br[i],
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Day,
    Week,
    Month,
}

impl FromStr for Granularity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Self::Day),
            "week" => Ok(Self::Week),
            "month" => Ok(Self::Month),
            _ => Err(Error::InvalidArgument(format!("unknown granularity `{s}`"))),
        }
    }
}

impl Granularity {
    /// First day of the period containing `d`.
    fn start(self, d: NaiveDate) -> NaiveDate {
        match self {
            Self::Day => d,
            Self::Week => d - Duration::days(d.weekday().num_days_from_monday() as i64),
            Self::Month => d.with_day(1).unwrap(),
        }
    }

    fn next(self, d: NaiveDate) -> NaiveDate {
        match self {
            Self::Day => d + Duration::days(1),
            Self::Week => d + Duration::days(7),
            Self::Month => d.checked_add_months(chrono::Months::new(1)).unwrap(),
        }
    }

    fn label(self, d: NaiveDate) -> String {
        match self {
            Self::Day => d.format("%Y-%m-%d").to_string(),
            Self::Week => {
                let w = d.iso_week();
                format!("{}-W{:02}", w.year(), w.week())
            }
            Self::Month => d.format("%Y-%m").to_string(),
        }
    }
}

/// Class shares; `None` when there are no documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceShares {
    pub n: usize,
    pub positive: Option<f64>,
    pub neutral: Option<f64>,
    pub negative: Option<f64>,
}

impl StanceShares {
    fn from_counts(c: [usize; 3]) -> Self {
        let n: usize = c.iter().sum();
        let share = |k: usize| (n > 0).then(|| c[k] as f64 / n as f64);
        Self {
            n,
            positive: share(0),
            neutral: share(1),
            negative: share(2),
        }
    }

    pub fn get(&self, label: StanceLabel) -> Option<f64> {
        match label {
            StanceLabel::Positive => self.positive,
            StanceLabel::Neutral => self.neutral,
            StanceLabel::Negative => self.negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StancePoint {
    pub period: String,
    pub start: NaiveDate,
    #[serde(flatten)]
    pub shares: StanceShares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StanceTimeSeries {
    pub granularity: Granularity,
    pub points: Vec<StancePoint>,
    pub before: Option<StanceShares>,
    pub after: Option<StanceShares>,
    /// After/before share ratio per class; `None` where the before share is 0.
    pub ratio: Option<BTreeMap<StanceLabel, Option<f64>>>,
    /// Documents with no prediction.
    pub unscored: usize,
}

/// Per-period stance shares from argmax labels.
///
/// Every period between the first and last scored document is emitted,
/// empty ones with `n = 0`. With `slices`, before/after aggregates and the
/// after/before ratio per class are added.
pub fn stance_timeseries(
    corpus: &Corpus,
    predictions: &[Prediction],
    granularity: Granularity,
    slices: Option<&SlicePair>,
) -> Result<StanceTimeSeries> {
    let by_id: HashMap<&str, StanceLabel> = predictions.iter().map(|p| (p.doc_id.as_str(), p.label)).collect();
    let mut periods: BTreeMap<NaiveDate, [usize; 3]> = BTreeMap::new();
    let mut sliced: HashMap<SliceLabel, [usize; 3]> = HashMap::new();
    let mut unscored = 0;
    for d in &corpus.documents {
        let Some(&label) = by_id.get(d.id.as_str()) else {
            unscored += 1;
            continue;
        };
        let start = granularity.start(d.created_at.date_naive());
        periods.entry(start).or_insert([0; 3])[label.index()] += 1;
        if let Some(s) = slices.and_then(|s| s.label_of(d.created_at)) {
            sliced.entry(s).or_insert([0; 3])[label.index()] += 1;
        }
    }
    let mut points = Vec::new();
    if let (Some(&first), Some(&last)) = (periods.keys().next(), periods.keys().next_back()) {
        let mut cur = first;
        while cur <= last {
            points.push(StancePoint {
                period: granularity.label(cur),
                start: cur,
                shares: StanceShares::from_counts(periods.get(&cur).copied().unwrap_or([0; 3])),
            });
            cur = granularity.next(cur);
        }
    }
    let (before, after, ratio) = match slices {
        None => (None, None, None),
        Some(_) => {
            let b = StanceShares::from_counts(sliced.get(&SliceLabel::Before).copied().unwrap_or([0; 3]));
            let a = StanceShares::from_counts(sliced.get(&SliceLabel::After).copied().unwrap_or([0; 3]));
            let ratio = StanceLabel::ALL
                .iter()
                .map(|&l| {
                    let r = match (b.get(l), a.get(l)) {
                        (Some(sb), Some(sa)) if sb > 0.0 => Some(sa / sb),
                        _ => None,
                    };
                    (l, r)
                })
                .collect();
            (Some(b), Some(a), Some(ratio))
        }
    };
    Ok(StanceTimeSeries {
        granularity,
        points,
        before,
        after,
        ratio,
        unscored,
    })
}

/// Scores the corpus with `classifier`, then builds the series.
pub fn stance_timeseries_with(
    corpus: &Corpus,
    classifier: &dyn Classifier,
    granularity: Granularity,
    slices: Option<&SlicePair>,
) -> Result<StanceTimeSeries> {
    let preds = classifier.predict_all(&corpus.token_streams(false))?;
    stance_timeseries(corpus, &preds, granularity, slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::doc;
    use crate::textproc::ngram_table;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::from_documents(
            "c",
            "fa",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| doc(&format!("d{i}"), t, 2022, 3, 1))
                .collect(),
        )
        .unwrap()
    }

    fn unigrams(texts: &[&str]) -> NgramTable {
        ngram_table(&corpus(texts).token_streams(false), 1, &StopWords::empty(), 1).unwrap()
    }

    #[test]
    fn movers_hand_example() {
        let (tb, ta) = movers(&unigrams(&["a b", "a c"]), &unigrams(&["a b", "b b"]), &StopWords::empty(), 10).unwrap();
        let terms = |r: &MoversReport| r.entries.iter().map(|e| (e.term.clone(), e.delta)).collect::<Vec<_>>();
        assert_eq!(terms(&tb), vec![("a".into(), 0.25), ("c".into(), 0.25)]);
        assert_eq!(terms(&ta), vec![("b".into(), 0.5)]);
        let (x, y) = movers(&unigrams(&["a b"]), &unigrams(&["a b"]), &StopWords::empty(), 10).unwrap();
        assert!(x.entries.is_empty() && y.entries.is_empty());
        assert!(movers(&NgramTable::empty(1), &unigrams(&["a"]), &StopWords::empty(), 3).is_err());
        let sw = StopWords::from_words(["a"]);
        let (tb, _) = movers(&unigrams(&["a b", "a c"]), &unigrams(&["a b", "b b"]), &sw, 10).unwrap();
        assert_eq!(tb.entries.len(), 1);
    }

    #[test]
    fn hashtag_movers_cases() {
        let (a, b) = hashtag_movers(&corpus(&["x"]), &corpus(&["y"]), 5);
        assert!(a.entries.is_empty() && b.entries.is_empty());
        // before: #p ×3, #q ×1 → .75/.25; after: #p ×1, #r ×3 → .25/.75.
        let before = corpus(&["#p", "#p", "#p", "#q"]);
        let after = corpus(&["#p", "#r", "#r", "#r"]);
        let (tb, ta) = hashtag_movers(&before, &after, 5);
        let terms = |r: &MoversReport| r.entries.iter().map(|e| (e.term.clone(), e.delta)).collect::<Vec<_>>();
        assert_eq!(terms(&tb), vec![("p".into(), 0.5), ("q".into(), 0.25)]);
        assert_eq!(terms(&ta), vec![("r".into(), 0.75)]);
    }

    fn h(m: &[f64]) -> DistributionHistogram {
        DistributionHistogram::from_weights((0..m.len()).map(|i| format!("b{i}")).collect(), m.to_vec()).unwrap()
    }

    #[test]
    fn divergence_hand_values() {
        let p = h(&[0.5, 0.5]);
        let q = h(&[0.25, 0.75]);
        assert!((kl_divergence(&p, &q, 1e-12).unwrap() - 0.143841).abs() < 1e-5);
        assert!((0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln() - 0.143841).abs() < 1e-6);
        assert!((bhattacharyya(&p, &q).unwrap() - 0.034664).abs() < 1e-5);
        assert!(kl_divergence(&p, &p, KL_EPSILON).unwrap() <= 1e-6);
        assert_eq!(bhattacharyya(&p, &p).unwrap(), 0.0);
        assert_eq!(bhattacharyya(&h(&[1.0, 0.0]), &h(&[0.0, 1.0])).unwrap(), f64::INFINITY);
        let crafted = (h(&[0.9, 0.1]), h(&[0.5, 0.5]));
        let forward = kl_divergence(&crafted.0, &crafted.1, KL_EPSILON).unwrap();
        let back = kl_divergence(&crafted.1, &crafted.0, KL_EPSILON).unwrap();
        assert!((forward - back).abs() > 1e-3);
        let other = DistributionHistogram::from_weights(vec!["x".into(), "y".into()], vec![1.0, 1.0]).unwrap();
        assert!(matches!(kl_divergence(&p, &other, KL_EPSILON), Err(Error::MisalignedBins)));
        assert!(kl_divergence(&p, &q, 0.0).is_err());
    }

    fn histogram_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(0.0f64..1.0, n),
                proptest::collection::vec(0.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn kl_nonnegative_bd_symmetric((a, b) in histogram_pair()) {
            prop_assume!(a.iter().sum::<f64>() > 0.0 && b.iter().sum::<f64>() > 0.0);
            let (p, q) = (h(&a), h(&b));
            prop_assert!(kl_divergence(&p, &q, KL_EPSILON).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&p, &p, KL_EPSILON).unwrap() <= 1e-6);
            let (x, y) = (bhattacharyya(&p, &q).unwrap(), bhattacharyya(&q, &p).unwrap());
            prop_assert!(x == y || (x - y).abs() <= 1e-12);
        }
    }

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    #[test]
    fn histograms() {
        let one = UserSet::new("s", vec![ym("2020-05"); 3]);
        let hist = creation_histogram(&one).unwrap();
        assert_eq!(hist.mass, vec![1.0]);
        let two = UserSet::new("t", vec![ym("2020-01"), ym("2020-01"), ym("2020-03"), ym("2020-03")]);
        let hist = creation_histogram(&two).unwrap();
        assert_eq!(hist.bins, vec!["2020-01", "2020-02", "2020-03"]);
        assert_eq!(hist.mass, vec![0.5, 0.0, 0.5]);
        let early = UserSet::new("e", vec![ym("2001-01"), ym("2010-01")]);
        assert_eq!(early.missing, 1);
        let aligned = aligned_histograms(&[one, two]).unwrap();
        assert_eq!(aligned[0].bins, aligned[1].bins);
        assert_eq!(aligned[0].bins.first().unwrap(), "2020-01");
        assert_eq!(aligned[0].bins.last().unwrap(), "2020-05");
        assert!(creation_histogram(&UserSet::new("z", vec![])).is_err());
        assert!("2020-13".parse::<YearMonth>().is_err());
    }

    #[test]
    fn user_set_from_corpus_dedupes_authors() {
        let mut docs = vec![doc("1", "x", 2022, 3, 1), doc("2", "x", 2022, 3, 2), doc("3", "x", 2022, 3, 3)];
        docs[0].author_id = "u1".into();
        docs[0].account_created_at = Some(Utc.with_ymd_and_hms(2015, 6, 1, 0, 0, 0).unwrap());
        docs[1].author_id = "u1".into();
        docs[2].author_id = "u2".into();
        let c = Corpus::from_documents("c", "fa", docs).unwrap();
        let s = UserSet::from_corpus("all", &c, None);
        assert_eq!(s.months, vec![ym("2015-06")]);
        assert_eq!(s.missing, 1);
    }

    #[test]
    fn ranking_identical_vs_disjoint() {
        let base = UserSet::new("base", vec![ym("2015-01"), ym("2015-02")]);
        let same = UserSet::new("same", vec![ym("2015-01"), ym("2015-02")]);
        let far = UserSet::new("far", vec![ym("2020-01")]);
        let t = divergence_ranking(&[far, same], &base, false, KL_EPSILON).unwrap();
        let same_row = t.rows.iter().find(|r| r.name == "same").unwrap();
        assert_eq!((same_row.kl_rank, same_row.bhattacharyya_rank), (1, 1));
        assert!(t.rankings_agree);
        assert_eq!(t.rows.iter().find(|r| r.name == "far").unwrap().bhattacharyya, f64::INFINITY);
    }

    #[test]
    fn ranking_matches_direct_computation() {
        let months = |spec: &[(&str, usize)]| -> Vec<YearMonth> {
            spec.iter().flat_map(|(m, n)| std::iter::repeat_n(ym(m), *n)).collect()
        };
        let base = UserSet::new("base", months(&[("2012-01", 10), ("2012-02", 10), ("2012-03", 10)]));
        let sets = vec![
            UserSet::new("near", months(&[("2012-01", 9), ("2012-02", 11), ("2012-03", 10)])),
            UserSet::new("mid", months(&[("2012-01", 4), ("2012-02", 10), ("2012-03", 16)])),
            UserSet::new("far", months(&[("2012-03", 25), ("2012-02", 5)])),
        ];
        let t = divergence_ranking(&sets, &base, false, KL_EPSILON).unwrap();
        let bh = h(&[10.0, 10.0, 10.0]);
        for (row, w) in t.rows.iter().zip([[9.0, 11.0, 10.0], [4.0, 10.0, 16.0], [0.0, 5.0, 25.0]]) {
            assert!((row.kl - kl_divergence(&h(&w), &bh, KL_EPSILON).unwrap()).abs() < 1e-12);
        }
        assert_eq!(t.rows.iter().map(|r| r.kl_rank).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(t.rankings_agree);
        let rev = divergence_ranking(&sets, &base, true, KL_EPSILON).unwrap();
        assert!(rev.reversed && rev.rows[2].kl > t.rows[2].kl);
    }

    fn pred(id: &str, label: StanceLabel) -> Prediction {
        let mut p = [0.1; 3];
        p[label.index()] = 0.8;
        Prediction::from_posterior(id, p)
    }

    #[test]
    fn timeseries_basics() {
        let docs = vec![
            doc("1", "x", 2022, 3, 1),
            doc("2", "x", 2022, 3, 2),
            doc("3", "x", 2022, 5, 9),
            doc("4", "x", 2022, 10, 1),
        ];
        let c = Corpus::from_documents("c", "fa", docs).unwrap();
        let preds: Vec<Prediction> = ["1", "2", "3", "4"].iter().map(|i| pred(i, StanceLabel::Positive)).collect();
        let ts = stance_timeseries(&c, &preds, Granularity::Month, Some(&SlicePair::study_period())).unwrap();
        assert_eq!(ts.points.len(), 8);
        assert_eq!(ts.points[1].shares.n, 0);
        assert_eq!(ts.points[1].shares.positive, None);
        for p in ts.points.iter().filter(|p| p.shares.n > 0) {
            assert_eq!(p.shares.positive, Some(1.0));
        }
        assert_eq!(ts.ratio.as_ref().unwrap()[&StanceLabel::Positive], Some(1.0));
        assert_eq!(ts.ratio.as_ref().unwrap()[&StanceLabel::Negative], None);
        let weekly = stance_timeseries(&c, &preds[..2], Granularity::Week, None).unwrap();
        assert_eq!(weekly.points.len(), 1);
        assert_eq!(weekly.points[0].period, "2022-W09");
        assert_eq!(weekly.unscored, 2);
        let daily = stance_timeseries(&c, &preds[..2], Granularity::Day, None).unwrap();
        assert_eq!(daily.points.len(), 2);
    }

    #[test]
    fn scaling_logits_keeps_labels() {
        use crate::classifier::{ClassifierModel, FeatureConfig, TextClassifier};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cfg = FeatureConfig {
            hash_bits: 6,
            ..Default::default()
        };
        let mut m = ClassifierModel::zeros(64, cfg);
        m.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        m.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let mut scaled = m.clone();
        scaled.weights.iter_mut().for_each(|w| *w *= 7.5);
        scaled.bias.iter_mut().for_each(|b| *b *= 7.5);
        let words = ["a", "b", "c", "d", "e", "f"];
        let docs: Vec<_> = (0..40)
            .map(|i| doc(&format!("{i}"), &(0..4).map(|_| words[rng.random_range(0..6)]).collect::<Vec<_>>().join(" "), 2022, 3, 1 + i % 28))
            .collect();
        let c = Corpus::from_documents("c", "fa", docs).unwrap();
        let labels = |model: &ClassifierModel| {
            let clf = TextClassifier { model, embedding: None };
            let ts = stance_timeseries_with(&c, &clf, Granularity::Day, None).unwrap();
            ts.points.into_iter().map(|p| p.shares).collect::<Vec<_>>()
        };
        assert_eq!(labels(&m), labels(&scaled));
    }
}
