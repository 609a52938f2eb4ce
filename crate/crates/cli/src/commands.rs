use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;
use stancekit::analysis::{
    creation_histogram, divergence_ranking, hashtag_movers, movers, stance_timeseries, Granularity, MoversReport, UserSet,
};
use stancekit::annotation::{cohens_kappa, confusion, load_store, Resolution, ResolutionKind, ResolvedExample};
use stancekit::bench::{synth_bench, BenchConfig};
use stancekit::classifier::{
    binary_class_names, collapse_binary, evaluate, load_predictions, save_predictions, train_stance, Classifier,
    ClassifierModel, Example, FeatureConfig, FeatureVector, Featurizer, Stage, StanceLabel, TextClassifier, TrainConfig,
    TrainSpec,
};
use stancekit::corpus::{
    apply_rule_set, ingest, phrase_filter, slice, CompiledRules, Corpus, IngestConfig, RuleSet, SliceLabel, SlicePair,
    TimeSlice,
};
use stancekit::embedding::{embed_documents, match_reference_lines, train_embeddings, EmbeddingConfig, EmbeddingModel};
use stancekit::sampling::{certainty_pair, guided_sample, margin_sample, random_sample, Exemplar, SamplingBatch};
use stancekit::textproc::{ngram_table, NgramDenylist, NgramTable, StopWords};

use crate::manifest::{RunDir, RunManifest};
use crate::output::{f, opt, read_jsonl, read_lines, table, write_json, write_jsonl, write_lines};
use crate::{Cli, CliError, Command, FeatureArgs, GranularityArg, SliceArgs, StageArg, StopArgs, TrainArgs};

pub struct Outcome {
    pub json: serde_json::Value,
    pub table: String,
}

type Res = Result<Outcome, CliError>;

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into())
}

fn load_corpus(path: &Path) -> Result<Corpus, CliError> {
    let cfg = IngestConfig {
        name: stem(path),
        language: None,
        ..IngestConfig::default()
    };
    Ok(ingest(path, &cfg)?.corpus)
}

fn slice_pair(before: &str, after: &str) -> Result<SlicePair, CliError> {
    let usage = |e: stancekit::Error| CliError::Usage(e.to_string());
    SlicePair::new(
        TimeSlice::parse(SliceLabel::Before, before).map_err(usage)?,
        TimeSlice::parse(SliceLabel::After, after).map_err(usage)?,
    )
    .map_err(usage)
}

fn optional_slices(s: &SliceArgs) -> Result<Option<SlicePair>, CliError> {
    match (&s.before, &s.after) {
        (Some(b), Some(a)) => Ok(Some(slice_pair(b, a)?)),
        (None, None) => Ok(None),
        _ => Err(CliError::Usage("--before and --after go together".into())),
    }
}

fn exclusion(paths: &[PathBuf]) -> Result<HashSet<String>, CliError> {
    let mut out = HashSet::new();
    for p in paths {
        out.extend(read_lines(p)?);
    }
    Ok(out)
}

fn stopwords(s: &StopArgs) -> Result<StopWords, CliError> {
    let mut words = match &s.stopwords {
        Some(p) => StopWords::load(p)?,
        None => StopWords::empty(),
    };
    if s.persian_stopwords {
        words.extend(&StopWords::persian_baseline());
    }
    Ok(words)
}

fn table_for(corpus: &Corpus, n: usize, s: &StopArgs, stop: &StopWords) -> Result<NgramTable, CliError> {
    let t = ngram_table(&corpus.token_streams(false), n, stop, s.min_count)?;
    Ok(match &s.denylist {
        Some(p) => t.without(&NgramDenylist::load(p)?),
        None => t,
    })
}

fn feature_config(a: &FeatureArgs) -> Result<(FeatureConfig, Option<EmbeddingModel>), CliError> {
    let fc = FeatureConfig {
        hashed_ngrams: !a.no_hashed,
        hash_bits: a.hash_bits,
        doc_embedding: a.doc_embedding,
    };
    fc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if fc.doc_embedding && a.embedding.is_none() {
        return Err(CliError::Usage("--doc-embedding needs --embedding".into()));
    }
    let emb = a.embedding.as_ref().map(EmbeddingModel::load).transpose()?;
    Ok((fc, emb))
}

fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        l2: a.l2,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        class_weights: !a.no_class_weights,
    }
}

fn read_resolved(paths: &[PathBuf]) -> Result<Vec<ResolvedExample>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_jsonl::<ResolvedExample>(p)?);
    }
    Ok(out)
}

fn labelled(
    corpus: &Corpus,
    featurizer: &Featurizer<'_>,
    examples: &[ResolvedExample],
) -> Result<Vec<(FeatureVector, StanceLabel)>, CliError> {
    let by_id: HashMap<&str, usize> = corpus.documents.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    examples
        .iter()
        .map(|ex| {
            let i = by_id
                .get(ex.doc_id.as_str())
                .ok_or_else(|| CliError::Data(format!("labelled document `{}` is not in the corpus", ex.doc_id)))?;
            Ok((featurizer.featurize(&corpus.documents[*i].tokens(false)), ex.aggregate_label))
        })
        .collect()
}

fn stage(s: StageArg) -> Stage {
    match s {
        StageArg::Seed => Stage::Seed,
        StageArg::Certainty => Stage::Certainty,
        StageArg::Uncertainty => Stage::Uncertainty,
    }
}

/// Result of a command that wrote files into a run directory.
fn artifact(run: &RunDir, outputs: &[&str], report: serde_json::Value, mut lines: Vec<Vec<String>>) -> Outcome {
    let mut rows = vec![vec!["run_dir".to_string(), run.dir.display().to_string()]];
    for o in outputs {
        rows.push(vec!["output".into(), run.path(o).display().to_string()]);
    }
    rows.append(&mut lines);
    Outcome {
        json: json!({
            "run_dir": run.dir,
            "outputs": outputs,
            "report": report,
        }),
        table: table(&["key", "value"], &rows),
    }
}

fn kv(k: &str, v: impl ToString) -> Vec<String> {
    vec![k.to_string(), v.to_string()]
}

fn batch_outcome(run: &RunDir, batch: &SamplingBatch) -> Result<Outcome, CliError> {
    write_json(&run.path("batch.json"), batch)?;
    write_lines(&run.path("doc_ids.txt"), &batch.doc_ids)?;
    let mut lines = vec![kv("strategy", batch.strategy), kv("size", batch.len())];
    for (s, n) in &batch.per_slice_quota {
        lines.push(kv(&format!("slice_{s}"), n));
    }
    for w in &batch.warnings {
        lines.push(kv("warning", w));
    }
    let report = json!({
        "strategy": batch.strategy,
        "size": batch.len(),
        "per_slice_quota": batch.per_slice_quota,
        "warnings": batch.warnings,
    });
    Ok(artifact(run, &["batch.json", "doc_ids.txt"], report, lines))
}

fn movers_outcome(pair: (MoversReport, MoversReport)) -> Outcome {
    let mut rows = Vec::new();
    for r in [&pair.0, &pair.1] {
        for e in &r.entries {
            rows.push(vec![
                format!("{:?}", r.direction),
                e.term.clone(),
                f(e.delta),
                f(e.freq_before),
                f(e.freq_after),
            ]);
        }
    }
    Outcome {
        json: json!({ "toward_before": pair.0, "toward_after": pair.1 }),
        table: table(&["direction", "term", "delta", "freq_before", "freq_after"], &rows),
    }
}

/// Label file: one label per line, or `DOC_ID<TAB>LABEL`.
fn read_labels(path: &Path) -> Result<Vec<(Option<String>, StanceLabel)>, CliError> {
    read_lines(path)?
        .into_iter()
        .map(|l| {
            let (id, label) = match l.split_once('\t') {
                Some((id, label)) => (Some(id.trim().to_string()), label.trim()),
                None => (None, l.as_str()),
            };
            let label = label
                .parse::<StanceLabel>()
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            Ok((id, label))
        })
        .collect()
}

fn aligned_labels(a: &Path, b: &Path) -> Result<(Vec<StanceLabel>, Vec<StanceLabel>), CliError> {
    let la = read_labels(a)?;
    let lb = read_labels(b)?;
    let keyed = |v: &[(Option<String>, StanceLabel)]| v.iter().all(|(id, _)| id.is_some());
    if keyed(&la) && keyed(&lb) {
        let mb: BTreeMap<&str, StanceLabel> = lb.iter().map(|(id, l)| (id.as_deref().unwrap(), *l)).collect();
        let mut ma: Vec<(&str, StanceLabel)> = la.iter().map(|(id, l)| (id.as_deref().unwrap(), *l)).collect();
        ma.sort_by(|x, y| x.0.cmp(y.0));
        let pairs: Vec<(StanceLabel, StanceLabel)> = ma.iter().filter_map(|(id, l)| mb.get(id).map(|m| (*l, *m))).collect();
        return Ok(pairs.into_iter().unzip());
    }
    if la.len() != lb.len() {
        return Err(CliError::Data(format!("label files differ in length: {} vs {}", la.len(), lb.len())));
    }
    Ok((la.into_iter().map(|x| x.1).collect(), lb.into_iter().map(|x| x.1).collect()))
}

pub fn dispatch(cli: &Cli) -> Res {
    let seed = cli.seed;
    let runs = cli.runs_dir.as_path();
    let cmd = &cli.command;
    let name = command_name(cmd);
    let manifest = || RunManifest::new(name, seed, cmd);
    match cmd {
        Command::Ingest {
            input,
            name: corpus_name,
            language,
            from,
            to,
            lenient,
        } => {
            let window = match (from, to) {
                (Some(a), Some(b)) => Some((*a, *b)),
                (None, None) => None,
                _ => return Err(CliError::Usage("--from and --to go together".into())),
            };
            let cfg = IngestConfig {
                name: corpus_name.clone().unwrap_or_else(|| stem(input)),
                language: (language != "any").then(|| language.clone()),
                window,
                lenient: *lenient,
            };
            let got = ingest(input, &cfg)?;
            let outs = ["corpus.jsonl", "ingest_report.json"];
            let run = manifest().input("input", input)?.outputs(&outs).create_dir(runs)?;
            got.corpus.write_jsonl(run.path(outs[0]))?;
            write_json(&run.path(outs[1]), &got.report)?;
            let r = &got.report;
            let lines = vec![
                kv("records", r.records),
                kv("kept", got.corpus.len()),
                kv("dropped_language", r.dropped_language),
                kv("dropped_window", r.dropped_window),
                kv("duplicates", r.duplicates),
                kv("malformed", r.malformed.len()),
            ];
            Ok(artifact(&run, &outs, json!({ "kept": got.corpus.len(), "ingest": r }), lines))
        }
        Command::Filter { corpus, rules } => {
            let c = load_corpus(corpus)?;
            let set = RuleSet::load(rules)?;
            let compiled = CompiledRules::new(&set.rules)?;
            let mut per_rule = vec![0usize; compiled.rule_names().len()];
            for d in &c.documents {
                for (i, hit) in compiled.matches(d).into_iter().enumerate() {
                    per_rule[i] += usize::from(hit);
                }
            }
            let kept = apply_rule_set(&c, &set)?;
            let outs = ["filtered.jsonl"];
            let run = manifest().input("corpus", corpus)?.input("rules", rules)?.outputs(&outs).create_dir(runs)?;
            kept.write_jsonl(run.path(outs[0]))?;
            let counts: BTreeMap<&str, usize> =
                compiled.rule_names().iter().map(String::as_str).zip(per_rule.iter().copied()).collect();
            let mut lines = vec![kv("input", c.len()), kv("kept", kept.len())];
            for (r, n) in &counts {
                lines.push(kv(&format!("rule:{r}"), n));
            }
            Ok(artifact(&run, &outs, json!({ "input": c.len(), "kept": kept.len(), "per_rule": counts }), lines))
        }
        Command::Slice { corpus, before, after } => {
            let pair = slice_pair(before, after)?;
            let c = load_corpus(corpus)?;
            let s = slice(&c, &pair);
            let outs = ["before.jsonl", "after.jsonl"];
            let run = manifest().input("corpus", corpus)?.outputs(&outs).create_dir(runs)?;
            s.before.write_jsonl(run.path(outs[0]))?;
            s.after.write_jsonl(run.path(outs[1]))?;
            let report = json!({ "before": s.before.len(), "after": s.after.len(), "excluded": s.excluded });
            let lines = vec![kv("before", s.before.len()), kv("after", s.after.len()), kv("excluded", s.excluded)];
            Ok(artifact(&run, &outs, report, lines))
        }
        Command::PhraseFilter { corpus, phrase } => {
            let c = load_corpus(corpus)?;
            let kept = phrase_filter(&c, phrase)?;
            let outs = ["filtered.jsonl"];
            let run = manifest().input("corpus", corpus)?.outputs(&outs).create_dir(runs)?;
            kept.write_jsonl(run.path(outs[0]))?;
            let lines = vec![kv("input", c.len()), kv("kept", kept.len())];
            Ok(artifact(&run, &outs, json!({ "input": c.len(), "kept": kept.len() }), lines))
        }
        Command::Ngrams { corpus, n, top, stop } => {
            let c = load_corpus(corpus)?;
            let sw = stopwords(stop)?;
            let t = table_for(&c, *n, stop, &sw)?;
            let total = t.total.max(1) as f64;
            let entries: Vec<_> = t
                .top(*top)
                .into_iter()
                .map(|(g, count)| json!({ "ngram": g.join(" "), "count": count, "frequency": count as f64 / total }))
                .collect();
            let rows = t
                .top(*top)
                .into_iter()
                .map(|(g, count)| vec![g.join(" "), count.to_string(), f(count as f64 / total)])
                .collect::<Vec<_>>();
            Ok(Outcome {
                json: json!({ "n": n, "total": t.total, "distinct": t.len(), "top": entries }),
                table: table(&["ngram", "count", "frequency"], &rows),
            })
        }
        Command::Movers { before, after, n, k, stop } => {
            let sw = stopwords(stop)?;
            let tb = table_for(&load_corpus(before)?, *n, stop, &sw)?;
            let ta = table_for(&load_corpus(after)?, *n, stop, &sw)?;
            Ok(movers_outcome(movers(&tb, &ta, &sw, *k)?))
        }
        Command::HashtagMovers { before, after, k } => {
            Ok(movers_outcome(hashtag_movers(&load_corpus(before)?, &load_corpus(after)?, *k)))
        }
        Command::TrainEmbed {
            corpus,
            dim,
            window,
            epochs,
            negatives,
            lr,
            min_count,
            min_n,
            max_n,
            buckets,
        } => {
            let cfg = EmbeddingConfig {
                dimension: *dim,
                window: *window,
                epochs: *epochs,
                negatives: *negatives,
                learning_rate: *lr,
                min_count: *min_count,
                min_n: *min_n,
                max_n: *max_n,
                buckets: *buckets,
                seed,
            };
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let c = load_corpus(corpus)?;
            let model = train_embeddings(&c.token_streams(false), &cfg)?;
            let outs = ["embedding.stkemb"];
            let run = manifest().input("corpus", corpus)?.outputs(&outs).create_dir(runs)?;
            model.save(run.path(outs[0]))?;
            let mut lines = vec![kv("vocabulary", model.vocab_len()), kv("dimension", model.dimension())];
            for (i, l) in model.epoch_loss().iter().enumerate() {
                lines.push(kv(&format!("loss_epoch_{}", i + 1), f(*l)));
            }
            let report = json!({ "vocabulary": model.vocab_len(), "dimension": model.dimension(), "epoch_loss": model.epoch_loss() });
            Ok(artifact(&run, &outs, report, lines))
        }
        Command::EmbedDocs { corpus, embedding } => {
            let c = load_corpus(corpus)?;
            let model = EmbeddingModel::load(embedding)?;
            let vectors = embed_documents(&model, &c.token_streams(false));
            let resolved = vectors.iter().filter(|v| v.resolved).count();
            let outs = ["vectors.jsonl"];
            let run = manifest()
                .input("corpus", corpus)?
                .input("embedding", embedding)?
                .outputs(&outs)
                .create_dir(runs)?;
            write_jsonl(&run.path(outs[0]), &vectors)?;
            let lines = vec![kv("documents", vectors.len()), kv("resolved", resolved)];
            Ok(artifact(&run, &outs, json!({ "documents": vectors.len(), "resolved": resolved }), lines))
        }
        Command::MatchLines { corpus, embedding, lines } => {
            let c = load_corpus(corpus)?;
            let model = EmbeddingModel::load(embedding)?;
            let refs = read_lines(lines)?;
            let t = match_reference_lines(&model, &c, &refs)?;
            let rows = t
                .lines
                .iter()
                .map(|l| vec![l.line.clone(), l.matched.to_string(), format!("{:.2}", l.percent)])
                .collect::<Vec<_>>();
            Ok(Outcome {
                json: serde_json::to_value(&t).expect("serializes"),
                table: table(&["line", "matched", "percent"], &rows) + &format!("unmatched  {}\n", t.unmatched),
            })
        }
        Command::SampleRandom {
            corpus,
            n,
            slices,
            exclude,
            lenient,
        } => {
            let pair = optional_slices(slices)?;
            let c = load_corpus(corpus)?;
            let batch = random_sample(&c, *n, pair.as_ref(), &exclusion(exclude)?, seed, *lenient)?;
            let run = manifest()
                .input("corpus", corpus)?
                .inputs("exclude", exclude)?
                .outputs(&["batch.json", "doc_ids.txt"])
                .create_dir(runs)?;
            batch_outcome(&run, &batch)
        }
        Command::SampleGuided {
            corpus,
            embedding,
            exemplars,
            k,
            slices,
            exclude,
        } => {
            let pair = optional_slices(slices)?;
            let c = load_corpus(corpus)?;
            let model = EmbeddingModel::load(embedding)?;
            let pool = embed_documents(&model, &c.token_streams(false));
            let ex: Vec<Exemplar> = read_jsonl(exemplars)?;
            let map: Option<HashMap<String, SliceLabel>> = pair.as_ref().map(|p| {
                c.documents
                    .iter()
                    .filter_map(|d| p.label_of(d.created_at).map(|l| (d.id.clone(), l)))
                    .collect()
            });
            let batch = guided_sample(&pool, &ex, &model, *k, map.as_ref(), &exclusion(exclude)?)?;
            let run = manifest()
                .input("corpus", corpus)?
                .input("embedding", embedding)?
                .input("exemplars", exemplars)?
                .inputs("exclude", exclude)?
                .outputs(&["batch.json", "doc_ids.txt"])
                .create_dir(runs)?;
            batch_outcome(&run, &batch)
        }
        Command::SampleCertainty {
            predictions,
            n_positive,
            n_negative,
            exclude,
        } => {
            let preds = load_predictions(predictions)?;
            let batch = certainty_pair(&preds, *n_positive, *n_negative, &exclusion(exclude)?)?;
            let run = manifest()
                .input("predictions", predictions)?
                .inputs("exclude", exclude)?
                .outputs(&["batch.json", "doc_ids.txt"])
                .create_dir(runs)?;
            batch_outcome(&run, &batch)
        }
        Command::SampleMargin { predictions, n, exclude } => {
            let preds = load_predictions(predictions)?;
            let batch = margin_sample(&preds, *n, &exclusion(exclude)?)?;
            let run = manifest()
                .input("predictions", predictions)?
                .inputs("exclude", exclude)?
                .outputs(&["batch.json", "doc_ids.txt"])
                .create_dir(runs)?;
            batch_outcome(&run, &batch)
        }
        Command::Kappa { a, b } => {
            let (la, lb) = aligned_labels(a, b)?;
            let kappa = cohens_kappa(&la, &lb)?;
            let m = confusion(la.iter().copied().zip(lb.iter().copied()));
            let mut rows = vec![kv("n", la.len()), kv("kappa", f(kappa))];
            for (i, l) in StanceLabel::ALL.iter().enumerate() {
                rows.push(vec![format!("confusion:{l}"), format!("{:?}", m[i])]);
            }
            Ok(Outcome {
                json: json!({ "n": la.len(), "kappa": kappa, "confusion": m }),
                table: table(&["key", "value"], &rows),
            })
        }
        Command::Resolve { annotations, docs } => {
            let store = load_store(annotations)?;
            let all = match docs {
                Some(p) => {
                    let ids = read_lines(p)?;
                    store.resolve_docs(ids.iter().map(String::as_str))
                }
                None => store.resolve_all(),
            };
            let resolved: Vec<&ResolvedExample> = all.iter().filter_map(Resolution::resolved).collect();
            let unresolved: Vec<&Resolution> = all.iter().filter(|r| r.resolved().is_none()).collect();
            let count = |k: ResolutionKind| resolved.iter().filter(|r| r.resolution == k).count();
            let (consensus, precedence) = (count(ResolutionKind::Consensus), count(ResolutionKind::NegativePrecedence));
            let outs = ["resolved.jsonl", "unresolved.jsonl"];
            let run = manifest()
                .input("annotations", annotations)?
                .optional("docs", docs.as_ref())?
                .outputs(&outs)
                .create_dir(runs)?;
            write_jsonl(&run.path(outs[0]), &resolved)?;
            write_jsonl(&run.path(outs[1]), &unresolved)?;
            let report = json!({
                "documents": all.len(),
                "consensus": consensus,
                "negative_precedence": precedence,
                "unresolved": unresolved.len(),
            });
            let lines = vec![
                kv("documents", all.len()),
                kv("consensus", consensus),
                kv("negative_precedence", precedence),
                kv("unresolved", unresolved.len()),
            ];
            Ok(artifact(&run, &outs, report, lines))
        }
        Command::Train {
            corpus,
            labels,
            init,
            stage: st,
            features,
            train,
        } => {
            let (fc, emb) = feature_config(features)?;
            let c = load_corpus(corpus)?;
            let featurizer = Featurizer::new(&fc, emb.as_ref())?;
            let examples = labelled(&c, &featurizer, &read_resolved(labels)?)?;
            let prev = init.as_ref().map(ClassifierModel::load).transpose()?;
            let mut spec = TrainSpec::stance(featurizer.dim(), fc.clone(), seed);
            spec.config = train_config(train);
            spec.stage = stage(*st);
            spec.init = prev.as_ref();
            let model = train_stance(&examples, &spec)?;
            let outs = ["model.stkclf"];
            let run = manifest()
                .input("corpus", corpus)?
                .inputs("labels", labels)?
                .optional("init", init.as_ref())?
                .optional("embedding", features.embedding.as_ref())?
                .outputs(&outs)
                .create_dir(runs)?;
            model.save(run.path(outs[0]))?;
            let mut per_class = [0usize; 3];
            for (_, l) in &examples {
                per_class[l.index()] += 1;
            }
            let objective = model.train_log.last().copied();
            let report = json!({
                "examples": examples.len(),
                "per_class": per_class,
                "dim": model.dim,
                "stage": model.stage,
                "final_objective": objective,
            });
            let lines = vec![
                kv("examples", examples.len()),
                kv("positive", per_class[0]),
                kv("neutral", per_class[1]),
                kv("negative", per_class[2]),
                kv("dim", model.dim),
                kv("final_objective", opt(objective)),
            ];
            Ok(artifact(&run, &outs, report, lines))
        }
        Command::Eval {
            corpus,
            train_labels,
            test_labels,
            runs: n_runs,
            binary,
            features,
            train,
        } => {
            let (fc, emb) = feature_config(features)?;
            let c = load_corpus(corpus)?;
            let featurizer = Featurizer::new(&fc, emb.as_ref())?;
            let index = |v: Vec<(FeatureVector, StanceLabel)>| -> Vec<Example> {
                v.into_iter()
                    .map(|(x, l)| (x, if *binary { collapse_binary(l) } else { l.index() }))
                    .collect()
            };
            let tr = index(labelled(&c, &featurizer, &read_resolved(train_labels)?)?);
            let te = index(labelled(&c, &featurizer, &read_resolved(test_labels)?)?);
            let mut spec = TrainSpec::stance(featurizer.dim(), fc.clone(), seed);
            spec.config = train_config(train);
            if *binary {
                spec.classes = binary_class_names();
            }
            let r = evaluate(&tr, &te, *n_runs, &spec)?;
            let mut rows: Vec<Vec<String>> = r
                .classes
                .iter()
                .enumerate()
                .map(|(i, cl)| {
                    vec![
                        cl.clone(),
                        f(r.precision[i]),
                        f(r.recall[i]),
                        f(r.f1[i]),
                        opt(r.f1_std.as_ref().map(|s| s[i])),
                    ]
                })
                .collect();
            rows.push(vec!["macro".into(), "-".into(), "-".into(), f(r.macro_f1), opt(r.macro_f1_std)]);
            let mut text = table(&["class", "precision", "recall", "f1", "f1_std"], &rows);
            for w in &r.warnings {
                text.push_str(&format!("warning: {w}\n"));
            }
            Ok(Outcome {
                json: serde_json::to_value(&r).expect("serializes"),
                table: text,
            })
        }
        Command::Infer { corpus, model, embedding } => {
            let c = load_corpus(corpus)?;
            let m = ClassifierModel::load(model)?;
            let emb = embedding.as_ref().map(EmbeddingModel::load).transpose()?;
            let clf = TextClassifier {
                model: &m,
                embedding: emb.as_ref(),
            };
            let preds = clf.predict_all(&c.token_streams(false))?;
            let outs = ["predictions.jsonl"];
            let run = manifest()
                .input("corpus", corpus)?
                .input("model", model)?
                .optional("embedding", embedding.as_ref())?
                .outputs(&outs)
                .create_dir(runs)?;
            save_predictions(run.path(outs[0]), &preds)?;
            let mut counts = [0usize; 3];
            for p in &preds {
                counts[p.label.index()] += 1;
            }
            let lines = vec![
                kv("documents", preds.len()),
                kv("positive", counts[0]),
                kv("neutral", counts[1]),
                kv("negative", counts[2]),
            ];
            Ok(artifact(&run, &outs, json!({ "documents": preds.len(), "per_class": counts, "stage": m.stage }), lines))
        }
        Command::Timeseries {
            corpus,
            predictions,
            granularity,
            slices,
        } => {
            let pair = optional_slices(slices)?;
            let g = match granularity {
                GranularityArg::Day => Granularity::Day,
                GranularityArg::Week => Granularity::Week,
                GranularityArg::Month => Granularity::Month,
            };
            let ts = stance_timeseries(&load_corpus(corpus)?, &load_predictions(predictions)?, g, pair.as_ref())?;
            let mut rows: Vec<Vec<String>> = ts
                .points
                .iter()
                .map(|p| {
                    vec![
                        p.period.clone(),
                        p.shares.n.to_string(),
                        opt(p.shares.positive),
                        opt(p.shares.neutral),
                        opt(p.shares.negative),
                    ]
                })
                .collect();
            for (name, s) in [("before", &ts.before), ("after", &ts.after)] {
                if let Some(s) = s {
                    rows.push(vec![name.into(), s.n.to_string(), opt(s.positive), opt(s.neutral), opt(s.negative)]);
                }
            }
            if let Some(r) = &ts.ratio {
                let get = |l| opt(r.get(&l).copied().flatten());
                rows.push(vec![
                    "ratio".into(),
                    "-".into(),
                    get(StanceLabel::Positive),
                    get(StanceLabel::Neutral),
                    get(StanceLabel::Negative),
                ]);
            }
            Ok(Outcome {
                json: serde_json::to_value(&ts).expect("serializes"),
                table: table(&["period", "n", "positive", "neutral", "negative"], &rows),
            })
        }
        Command::CreationHist { corpus, authors } => {
            let c = load_corpus(corpus)?;
            let filter: Option<HashSet<String>> = authors.as_ref().map(|p| read_lines(p)).transpose()?.map(|v| v.into_iter().collect());
            let users = UserSet::from_corpus(stem(corpus), &c, filter.as_ref());
            let h = creation_histogram(&users)?;
            let rows = h.bins.iter().zip(&h.mass).map(|(b, m)| vec![b.clone(), f(*m)]).collect::<Vec<_>>();
            Ok(Outcome {
                json: json!({ "name": users.name, "users": users.len(), "missing": users.missing, "histogram": h }),
                table: table(&["month", "mass"], &rows) + &format!("users  {}\nmissing  {}\n", users.len(), users.missing),
            })
        }
        Command::Divergence {
            set,
            baseline,
            reverse,
            epsilon,
        } => {
            let mut sets = Vec::new();
            for p in set {
                sets.push(UserSet::from_corpus(stem(p), &load_corpus(p)?, None));
            }
            let base = UserSet::from_corpus(stem(baseline), &load_corpus(baseline)?, None);
            let t = divergence_ranking(&sets, &base, *reverse, *epsilon)?;
            let rows = t
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        r.users.to_string(),
                        r.missing.to_string(),
                        f(r.kl),
                        r.kl_rank.to_string(),
                        f(r.bhattacharyya),
                        r.bhattacharyya_rank.to_string(),
                    ]
                })
                .collect::<Vec<_>>();
            Ok(Outcome {
                json: serde_json::to_value(&t).expect("serializes"),
                table: table(&["set", "users", "missing", "kl", "kl_rank", "bhattacharyya", "bd_rank"], &rows)
                    + &format!("rankings_agree  {}\n", t.rankings_agree),
            })
        }
        Command::Serve { config } => {
            use stancekit_service::{http, system_clock, Context, Service, ServiceConfig};
            let cfg = ServiceConfig::load(config)?;
            let listen = cfg.listen.clone();
            let svc = Service::open(Arc::new(Context::load(cfg)?), system_clock())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
            rt.block_on(http::serve(svc, &listen)).map_err(|e| CliError::Data(format!("{listen}: {e}")))?;
            Ok(Outcome {
                json: serde_json::Value::Null,
                table: String::new(),
            })
        }
        Command::SynthBench { count, docs, runs: n_runs } => {
            let mut cfg = BenchConfig::default();
            if let Some(d) = docs {
                cfg.synth.n_docs = *d;
            }
            if let Some(r) = n_runs {
                cfg.runs = *r;
            }
            let seeds: Vec<u64> = (seed..seed + (*count).max(1)).collect();
            let report = synth_bench(&cfg, &seeds)?;
            Ok(Outcome {
                json: serde_json::to_value(&report).expect("serializes"),
                table: format!("{}\n{}", report.table(), report.summary()),
            })
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest { .. } => "ingest",
        Command::Filter { .. } => "filter",
        Command::Slice { .. } => "slice",
        Command::PhraseFilter { .. } => "phrase-filter",
        Command::Ngrams { .. } => "ngrams",
        Command::Movers { .. } => "movers",
        Command::HashtagMovers { .. } => "hashtag-movers",
        Command::TrainEmbed { .. } => "train-embed",
        Command::EmbedDocs { .. } => "embed-docs",
        Command::MatchLines { .. } => "match-lines",
        Command::SampleRandom { .. } => "sample-random",
        Command::SampleGuided { .. } => "sample-guided",
        Command::SampleCertainty { .. } => "sample-certainty",
        Command::SampleMargin { .. } => "sample-margin",
        Command::Kappa { .. } => "kappa",
        Command::Resolve { .. } => "resolve",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Infer { .. } => "infer",
        Command::Timeseries { .. } => "timeseries",
        Command::CreationHist { .. } => "creation-hist",
        Command::Divergence { .. } => "divergence",
        Command::Serve { .. } => "serve",
        Command::SynthBench { .. } => "synth-bench",
    }
}
