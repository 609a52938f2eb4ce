//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! Expected values come from independent implementations in this file
//! (brute-force sorts, exhaustive scans, a dense re-derivation of the
//! objective), never from the code under test.

#[path = "../../service/tests/common/mod.rs"]
mod service_common;

use std::collections::{BTreeMap, HashSet};
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stancekit::analysis::{bhattacharyya, kl_divergence, DistributionHistogram, KL_EPSILON};
use stancekit::annotation::{cohens_kappa, resolve, AnnotationRecord, AnnotationStore, Resolution};
use stancekit::bench::{synth_bench, BenchConfig};
use stancekit::classifier::{class_weights, Example, FeatureSource, FeatureVector, Objective, Prediction, StanceLabel};
use stancekit::corpus::{apply_rule_set, ingest, CompiledRules, IngestConfig, RuleSet};
use stancekit::embedding::{embed_documents, nearest, train_embeddings, DocVector, EmbeddingConfig, Metric};
use stancekit::sampling::{certainty_sample, guided_sample, margin_sample, Exemplar};
use stancekit::synth::{generate, SynthConfig};

type Outcome = Result<String, String>;

struct Gate {
    passed: usize,
    failed: Vec<String>,
}

impl Gate {
    fn check(&mut self, name: &str, f: impl FnOnce() -> Outcome) {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => {
                self.passed += 1;
                println!("PASS  {name}  [{detail}; {secs:.2}s]");
            }
            Err(detail) => {
                self.failed.push(name.to_string());
                println!("FAIL  {name}  [{detail}; {secs:.2}s]");
            }
        }
        let _ = std::io::stdout().flush();
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn label_strategy() -> impl Strategy<Value = StanceLabel> {
    prop_oneof![Just(StanceLabel::Positive), Just(StanceLabel::Neutral), Just(StanceLabel::Negative)]
}

fn hist(mass: &[f64]) -> DistributionHistogram {
    DistributionHistogram::from_weights((0..mass.len()).map(|i| format!("b{i}")).collect(), mass.to_vec()).unwrap()
}

fn histogram_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..24).prop_flat_map(|n| {
        let w = prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0f64..10.0], n)
            .prop_filter("not all zero", |v| v.iter().sum::<f64>() > 1e-6);
        (w.clone(), w)
    })
}

// ---- math oracles ---------------------------------------------------------

fn kappa_oracle() -> Outcome {
    use StanceLabel::{Negative as N, Positive as P};
    let k = cohens_kappa(&[P, P, N, N], &[P, N, N, N]).map_err(|e| e.to_string())?;
    ensure(k == 0.5, || format!("kappa = {k}"))?;
    Ok(format!("kappa = {k}"))
}

fn kappa_properties() -> Outcome {
    let started = Instant::now();
    let pairs = (1usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(label_strategy(), n),
            prop::collection::vec(label_strategy(), n),
        )
    });
    runner(1000)
        .run(&pairs, |(a, b)| {
            let ab = cohens_kappa(&a, &b);
            let ba = cohens_kappa(&b, &a);
            match (&ab, &ba) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "symmetry broken: {ab:?} vs {ba:?}"),
            }
            let same = cohens_kappa(&a, &a);
            prop_assert!(matches!(same, Ok(k) if k == 1.0), "kappa(x, x) = {same:?}");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3}s"))?;
    Ok("1000 cases: symmetric, self-agreement 1".into())
}

fn kl_oracle() -> Outcome {
    let kl = kl_divergence(&hist(&[0.5, 0.5]), &hist(&[0.25, 0.75]), 1e-12).map_err(|e| e.to_string())?;
    // 0.5 ln 2 + 0.5 ln(2/3)
    let exact = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
    ensure((kl - 0.143841).abs() <= 1e-5, || format!("kl = {kl}"))?;
    ensure((kl - exact).abs() < 1e-9, || format!("kl = {kl} vs closed form {exact}"))?;
    Ok(format!("KL = {kl:.6} nats"))
}

fn kl_properties() -> Outcome {
    runner(10_000)
        .run(&histogram_pair(), |(p, q)| {
            let (hp, hq) = (hist(&p), hist(&q));
            let d = kl_divergence(&hp, &hq, KL_EPSILON).unwrap();
            prop_assert!(d >= -1e-12, "KL = {d}");
            let same = kl_divergence(&hp, &hp, KL_EPSILON).unwrap();
            prop_assert!(same.abs() <= 1e-6, "KL(p,p) = {same}");
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 pairs: KL >= 0, KL(p,p) <= 1e-6".into())
}

fn bd_oracle() -> Outcome {
    let bd = bhattacharyya(&hist(&[0.5, 0.5]), &hist(&[0.25, 0.75])).map_err(|e| e.to_string())?;
    let exact = -((0.125f64).sqrt() + (0.375f64).sqrt()).ln();
    ensure((bd - 0.034664).abs() <= 1e-5, || format!("bd = {bd}"))?;
    ensure((bd - exact).abs() < 1e-12, || format!("bd = {bd} vs closed form {exact}"))?;
    Ok(format!("BD = {bd:.6}"))
}

fn bd_symmetry() -> Outcome {
    runner(10_000)
        .run(&histogram_pair(), |(p, q)| {
            let (hp, hq) = (hist(&p), hist(&q));
            let a = bhattacharyya(&hp, &hq).unwrap();
            let b = bhattacharyya(&hq, &hp).unwrap();
            prop_assert!(a == b || (a - b).abs() <= 1e-12, "{a} vs {b}");
            prop_assert!(a >= 0.0);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("10000 pairs symmetric".into())
}

/// Weighted mean cross-entropy plus L2 on weights, computed densely.
fn dense_objective(xs: &[Vec<f64>], ys: &[usize], cw: &[f64], l2: f64, w: &[f64], b: &[f64], k: usize) -> f64 {
    let d = xs[0].len();
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z: Vec<f64> = (0..k).map(|c| b[c] + (0..d).map(|j| w[c * d + j] * x[j]).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += cw[y] * (lse - z[y]);
    }
    total / xs.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    for inst in 0..100 {
        let k = rng.random_range(2..=4);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(k..=12);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let ys: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        let l2 = rng.random_range(0.0..0.5);
        let examples: Vec<Example> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| (FeatureVector::from_pairs(x.iter().enumerate().map(|(j, v)| (j as u32, *v)), FeatureSource::HashedNgrams), y))
            .collect();
        let cw = class_weights(ys.iter().copied(), k);
        let obj = Objective {
            examples: &examples,
            num_classes: k,
            dim: d,
            l2,
            class_weights: cw.clone(),
        };
        let w: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gw, gb) = obj.gradient(&w, &b);
        let h = 1e-6;
        let f = |w: &[f64], b: &[f64]| dense_objective(&xs, &ys, &cw, l2, w, b, k);
        let mut compare = |analytic: f64, numeric: f64, what: String| -> Result<(), String> {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max(rel);
            ensure(rel <= 1e-4, || format!("instance {inst} {what}: analytic {analytic} numeric {numeric}"))
        };
        for j in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[j] += h;
            wm[j] -= h;
            compare(gw[j], (f(&wp, &b) - f(&wm, &b)) / (2.0 * h), format!("w[{j}]"))?;
        }
        for c in 0..k {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[c] += h;
            bm[c] -= h;
            compare(gb[c], (f(&w, &bp) - f(&w, &bm)) / (2.0 * h), format!("b[{c}]"))?;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!("100 instances, worst relative error {worst:.2e}"))
}

// ---- sampling oracles -----------------------------------------------------

fn random_pool(rng: &mut ChaCha8Rng) -> (Vec<Prediction>, HashSet<String>) {
    let size = rng.random_range(1..=10_000);
    let preds: Vec<Prediction> = (0..size)
        .map(|i| {
            // coarse posteriors so ties are common
            let a = rng.random_range(0..=20u32);
            let b = rng.random_range(0..=20 - a);
            let c = 20 - a - b;
            Prediction::from_posterior(format!("doc{:05}", (i * 7919) % 100_000), [a as f64 / 20.0, b as f64 / 20.0, c as f64 / 20.0])
        })
        .collect();
    let exclude = preds.iter().filter(|_| rng.random_bool(0.2)).map(|p| p.doc_id.clone()).collect();
    (preds, exclude)
}

fn certainty_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for pool in 0..100 {
        let (preds, exclude) = random_pool(&mut rng);
        let target = if rng.random_bool(0.5) { StanceLabel::Positive } else { StanceLabel::Negative };
        let t = target.index();
        let mut eligible: Vec<&Prediction> = preds.iter().filter(|p| !exclude.contains(&p.doc_id)).collect();
        if eligible.is_empty() {
            continue;
        }
        let n = rng.random_range(1..=eligible.len());
        eligible.sort_by(|a, b| b.posterior[t].partial_cmp(&a.posterior[t]).unwrap().then(a.doc_id.cmp(&b.doc_id)));
        let want: Vec<String> = eligible[..n].iter().map(|p| p.doc_id.clone()).collect();
        let got = certainty_sample(&preds, target, n, &exclude).map_err(|e| e.to_string())?;
        ensure(got.doc_ids == want, || format!("pool {pool} differs"))?;
    }
    Ok("100 pools equal".into())
}

fn margin_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for pool in 0..100 {
        let (preds, exclude) = random_pool(&mut rng);
        let top_two = |p: &[f64; 3]| {
            let mut best = f64::MIN;
            let mut second = f64::MIN;
            for &v in p {
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            best - second
        };
        let mut eligible: Vec<(f64, &Prediction)> =
            preds.iter().filter(|p| !exclude.contains(&p.doc_id)).map(|p| (top_two(&p.posterior), p)).collect();
        if eligible.is_empty() {
            continue;
        }
        let n = rng.random_range(1..=eligible.len());
        eligible.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.doc_id.cmp(&b.1.doc_id)));
        let want: Vec<String> = eligible[..n].iter().map(|(_, p)| p.doc_id.clone()).collect();
        let got = margin_sample(&preds, n, &exclude).map_err(|e| e.to_string())?;
        ensure(got.doc_ids == want, || format!("pool {pool} differs"))?;
    }
    Ok("100 pools equal".into())
}

fn nearest_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for pool_no in 0..30 {
        let size = rng.random_range(1..=10_000);
        let dim = rng.random_range(2..=12);
        let mut pool: Vec<DocVector> = Vec::with_capacity(size);
        for i in 0..size {
            let vector: Vec<f32> = if i > 0 && rng.random_bool(0.05) {
                pool[rng.random_range(0..i)].vector.clone()
            } else if rng.random_bool(0.02) {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
            };
            pool.push(DocVector {
                doc_id: format!("v{i:05}"),
                resolved: vector.iter().any(|v| *v != 0.0),
                vector,
            });
        }
        let query = loop {
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            if q.iter().any(|v| *v != 0.0) {
                break DocVector {
                    doc_id: "query".into(),
                    vector: q,
                    resolved: true,
                };
            }
        };
        let k = rng.random_range(1..=size.min(100));
        let norm = |v: &[f32]| v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
        let qn = norm(&query.vector);
        let mut scan: Vec<(f64, &str)> = pool
            .iter()
            .filter(|p| norm(&p.vector) > 0.0)
            .map(|p| {
                let dot: f64 = p.vector.iter().zip(&query.vector).map(|(a, b)| *a as f64 * *b as f64).sum();
                (dot / (qn * norm(&p.vector)), p.doc_id.as_str())
            })
            .collect();
        scan.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        scan.truncate(k);
        let got = nearest(&query, &pool, k, Metric::Cosine).map_err(|e| e.to_string())?;
        let ids: Vec<&str> = got.iter().map(|n| n.doc_id.as_str()).collect();
        let want: Vec<&str> = scan.iter().map(|s| s.1).collect();
        ensure(ids == want, || format!("pool {pool_no}: ranking differs"))?;
        for (g, s) in got.iter().zip(&scan) {
            ensure((g.similarity - s.0).abs() < 1e-9, || format!("pool {pool_no}: similarity {} vs {}", g.similarity, s.0))?;
        }
    }
    Ok("30 pools up to 10000 vectors equal to exhaustive scan".into())
}

fn guided_750() -> Outcome {
    let world = generate(&SynthConfig {
        n_docs: 12_000,
        seed: 750,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let model = train_embeddings(
        &world.corpus.token_streams(false),
        &EmbeddingConfig {
            dimension: 32,
            window: 4,
            epochs: 1,
            min_count: 2,
            buckets: 1 << 16,
            seed: 1,
            ..EmbeddingConfig::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let exemplars: Vec<Exemplar> = world.exemplars(30, 3);
    let started = Instant::now();
    let pool = embed_documents(&model, &world.corpus.token_streams(false));
    let batch = guided_sample(&pool, &exemplars, &model, 25, None, &HashSet::new()).map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let unique: HashSet<&String> = batch.doc_ids.iter().collect();
    ensure(exemplars.len() == 30, || format!("{} exemplars", exemplars.len()))?;
    ensure(batch.len() == 750 && unique.len() == 750, || format!("{} ids, {} unique", batch.len(), unique.len()))?;
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("750 unique ids from a pool of {} in {secs:.2}s", pool.len()))
}

// ---- synthetic benchmark --------------------------------------------------

fn generator_shape() -> Outcome {
    let cfg = BenchConfig::default().synth;
    let world = generate(&cfg).map_err(|e| e.to_string())?;
    let n = world.corpus.len();
    let pos = world.count(StanceLabel::Positive) as f64 / n as f64;
    let neg = world.count(StanceLabel::Negative) as f64 / n as f64;
    ensure(n == 20_000, || format!("{n} documents"))?;
    ensure((pos - 0.05).abs() < 0.005 && (neg - 0.08).abs() < 0.005, || format!("positive {pos:.4}, negative {neg:.4}"))?;
    Ok(format!("{n} docs, positive {pos:.3}, negative {neg:.3}"))
}

// ---- pipeline audit -------------------------------------------------------

fn records_strategy() -> impl Strategy<Value = Vec<AnnotationRecord>> {
    prop::sample::subsequence(vec!["a1", "a2", "a3", "a4", "a5"], 1..=5).prop_flat_map(|anns| {
        let n = anns.len();
        prop::collection::vec(label_strategy(), n).prop_map(move |labels| {
            anns.iter()
                .zip(labels)
                .map(|(a, l)| AnnotationRecord {
                    doc_id: "d".into(),
                    annotator_id: a.to_string(),
                    label: l,
                    round_id: 0,
                    timestamp: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
                })
                .collect()
        })
    })
}

fn resolve_properties() -> Outcome {
    runner(2000)
        .run(&(records_strategy(), any::<u64>()), |(records, seed)| {
            let base = resolve(&records);
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&resolve(&shuffled), &base);

            // re-submitting the same records changes nothing
            let mut store = AnnotationStore::from_records(records.clone());
            for r in &records {
                store.apply(r.clone());
            }
            prop_assert_eq!(&store.resolve_all()[..], std::slice::from_ref(&base));

            // resolving the resolved labels again gives the same label
            if let Resolution::Resolved(ex) = &base {
                let again: Vec<AnnotationRecord> = ex
                    .contributing_annotators
                    .iter()
                    .map(|a| AnnotationRecord {
                        doc_id: ex.doc_id.clone(),
                        annotator_id: a.clone(),
                        label: ex.aggregate_label,
                        round_id: 0,
                        timestamp: records[0].timestamp,
                    })
                    .collect();
                let r2 = resolve(&again);
                prop_assert_eq!(r2.resolved().map(|e| e.aggregate_label), Some(ex.aggregate_label));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("2000 cases: permutation invariant, idempotent".into())
}

fn crash_replay() -> Outcome {
    use std::io::Write;
    let world = service_common::world();
    let src = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trace = service_common::scripted_run(&world, src.path());
    let n = trace.states.len() - 1;
    let lines: Vec<String> = std::fs::read_to_string(src.path().join("events.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(String::from)
        .collect();
    ensure(lines.len() == n, || format!("{} log lines for {n} events", lines.len()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2020);
    let mut points = Vec::new();
    for i in 0..20 {
        let k = rng.random_range(0..=n);
        points.push(k);
        let dst = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut out = std::fs::File::create(dst.path().join("events.jsonl")).map_err(|e| e.to_string())?;
        for l in &lines[..k] {
            writeln!(out, "{l}").map_err(|e| e.to_string())?;
        }
        if i % 2 == 0 && k < n {
            out.write_all(&lines[k].as_bytes()[..lines[k].len() / 3]).map_err(|e| e.to_string())?;
        }
        drop(out);
        copy_dir(&src.path().join("models"), &dst.path().join("models"))?;
        let svc = service_common::open(&world, dst.path());
        ensure(svc.state() == &trace.states[k], || format!("state differs after crash at event {k}"))?;
        ensure(svc.model() == trace.models[k].as_ref(), || format!("model differs after crash at event {k}"))?;
    }
    points.sort_unstable();
    Ok(format!("{n} events, crash points {points:?}"))
}

fn copy_dir(from: &Path, to: &Path) -> Result<(), String> {
    std::fs::create_dir_all(to).map_err(|e| e.to_string())?;
    for e in std::fs::read_dir(from).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        std::fs::copy(e.path(), to.join(e.file_name())).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn gender_fixture() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let corpus = ingest(
        dir.join("gender_corpus.jsonl"),
        &IngestConfig {
            language: None,
            ..IngestConfig::default()
        },
    )
    .map_err(|e| e.to_string())?
    .corpus;
    let set = RuleSet::load(dir.join("gender_rules.toml")).map_err(|e| e.to_string())?;
    let mut expected: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for line in std::fs::read_to_string(dir.join("gender_expected.tsv")).map_err(|e| e.to_string())?.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let (id, rules) = line.split_once('\t').unwrap_or((line, ""));
        let mut rules: Vec<String> = rules.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        rules.sort();
        expected.insert(id.to_string(), rules);
    }
    let compiled = CompiledRules::new(&set.rules).map_err(|e| e.to_string())?;
    let mut got = BTreeMap::new();
    for d in &corpus.documents {
        let mut rules: Vec<String> = compiled
            .rule_names()
            .iter()
            .zip(compiled.matches(d))
            .filter(|(_, m)| *m)
            .map(|(r, _)| r.clone())
            .collect();
        rules.sort();
        got.insert(d.id.clone(), rules);
    }
    ensure(got == expected, || {
        let diff: Vec<_> = got.iter().filter(|(k, v)| expected.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect();
        format!("per-rule matches differ on {diff:?}")
    })?;
    let kept: HashSet<String> = apply_rule_set(&corpus, &set).map_err(|e| e.to_string())?.documents.into_iter().map(|d| d.id).collect();
    let want: HashSet<String> = expected.iter().filter(|(_, r)| !r.is_empty()).map(|(k, _)| k.clone()).collect();
    ensure(kept == want, || "filtered corpus differs".into())?;
    Ok(format!("{} documents, {} kept", corpus.len(), kept.len()))
}

fn main() {
    let mut gate = Gate {
        passed: 0,
        failed: Vec::new(),
    };
    gate.check("kappa: [P,P,N,N] vs [P,N,N,N] = 0.5", kappa_oracle);
    gate.check("kappa: symmetry and self-agreement, 1000 cases < 1 s", kappa_properties);
    gate.check("KL((.5,.5),(.25,.75)) = 0.143841", kl_oracle);
    gate.check("KL >= 0 on 10000 pairs, KL(p,p) <= 1e-6", kl_properties);
    gate.check("Bhattacharyya((.5,.5),(.25,.75)) = 0.034664", bd_oracle);
    gate.check("Bhattacharyya symmetric on 10000 pairs", bd_symmetry);
    gate.check("gradient = central differences on 100 instances < 30 s", gradient_check);
    gate.check("certainty_sample = sort oracle on 100 pools", certainty_oracle);
    gate.check("margin_sample = sort oracle on 100 pools", margin_oracle);
    gate.check("nearest = exhaustive scan", nearest_oracle);
    gate.check("guided: 30 exemplars x 25 = 750 unique ids < 10 s", guided_750);
    gate.check("generator: 20000 docs at 5% positive / 8% negative", generator_shape);

    let seeds = [7u64, 8, 9, 10, 11];
    let cfg = BenchConfig::default();
    let started = Instant::now();
    let report = catch_unwind(|| synth_bench(&cfg, &seeds));
    let bench_secs = started.elapsed().as_secs_f64();
    let report = match report {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err("benchmark panicked".to_string()),
    };
    if let Ok(r) = &report {
        print!("{}", r.table());
        print!("{}", r.summary());
    }
    let with = |f: &dyn Fn(&stancekit::bench::BenchReport) -> Outcome| match &report {
        Ok(r) => f(r),
        Err(e) => Err(e.clone()),
    };
    gate.check("guided positive rate >= 2x random, every seed", || {
        with(&|r| {
            let e: Vec<f64> = r.seeds.iter().map(|s| s.enrichment).collect();
            ensure(e.iter().all(|v| *v >= 2.0), || format!("enrichment {e:.2?}"))?;
            Ok(format!("enrichment {e:.2?}"))
        })
    });
    gate.check("macro-F1 seed < +certainty < +margin, all five seeds", || {
        with(&|r| {
            let f: Vec<Vec<f64>> = r.seeds.iter().map(|s| s.rows.iter().map(|x| x.macro_f1).collect()).collect();
            ensure(r.seeds.len() == 5 && r.seeds.iter().all(|s| s.rows.len() == 3 && s.strictly_improving()), || format!("{f:.3?}"))?;
            Ok(format!("{f:.3?}"))
        })
    });
    gate.check("macro-F1 gain >= 5 points, all five seeds", || {
        with(&|r| {
            let g: Vec<f64> = r.seeds.iter().map(|s| s.gain_points()).collect();
            ensure(g.iter().all(|v| *v >= 5.0), || format!("gains {g:.2?}"))?;
            Ok(format!("gains {g:.2?}"))
        })
    });
    gate.check("benchmark runtime < 5 min", || {
        with(&|_| {
            ensure(bench_secs < 300.0, || format!("{bench_secs:.1}s"))?;
            Ok(format!("{bench_secs:.1}s"))
        })
    });
    gate.check("planted 10% -> 30% shift recovered as 3.0 +/- 0.3", || {
        with(&|r| {
            let got = r.shift.recovered_ratio.ok_or("no ratio")?;
            ensure((got - 3.0).abs() <= 0.3, || format!("ratio {got:.3}"))?;
            Ok(format!("recovered {got:.3}, planted {:.3}", r.shift.true_ratio))
        })
    });
    gate.check("no document sampled twice across rounds", || {
        with(&|r| {
            ensure(r.seeds.iter().all(|s| s.no_repeats), || "repeat found".into())?;
            Ok(format!("{} full runs", r.seeds.len()))
        })
    });
    gate.check("resolve: permutation invariance and idempotence", resolve_properties);
    gate.check("event-log replay after crash at 20 random points", crash_replay);
    gate.check("gender rule-set fixture matches the hand list", gender_fixture);

    println!("\n{} passed, {} failed", gate.passed, gate.failed.len());
    if !gate.failed.is_empty() {
        std::process::exit(1);
    }
}
