use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hiero::config::{ModelConfig, RunConfig};
use hiero::eval::{
    label_accuracy, map_at_iou, mcq_accuracy, procedure_report, recall_at_iou, McqChoice, MetricReport, RankedQuery,
};
use hiero::io::{
    read_answers, read_predictions, read_questions, read_queries, read_rankings, AnswerDoc, FeatureSequence,
    GroundingQuery, McqAnswer, NarrationSet, PredictionDoc, QueryRanking, RankingDoc, StepAnnotation,
    VideoPredictions,
};
use hiero::model::{forward, ModelParams};
use hiero::synth::{self, SynthSpec, QUESTIONS_FILE};
use hiero::tasks::{
    aligned_taxonomy, extract_candidates, mcq_retrieval, procedure_learning, project_text, step_grounding,
    step_localization, McqClip,
};
use hiero::training::{check_model_gradient, train_toy};
use hiero::{par, DenseMatrix, HieroError};
use serde::Serialize;
use serde_json::{json, Value};

use crate::corpus::{load_params, Corpus};
use crate::error::{CliError, CliResult};
use crate::{Cli, Command, DimsPreset, EvaluateArgs, ForwardFlags, Task};

pub fn dispatch(cli: &Cli, mut cfg: RunConfig) -> CliResult<Value> {
    let params = cli.params.as_deref();
    match &cli.command {
        Command::DumpConfig => {
            validated(&cfg)?;
            to_json(&cfg)
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.videos, a.videos);
            set(&mut s.spec.seed, a.seed);
            if a.taxonomy_seed.is_some() {
                s.spec.taxonomy_seed = a.taxonomy_seed;
            }
            set(&mut s.spec.steps_per_thread, a.steps);
            set(&mut s.spec.num_threads, a.threads);
            set(&mut s.spec.segments, a.segments);
            set(&mut s.spec.dim, a.dim);
            set(&mut s.spec.separation, a.separation);
            set(&mut s.spec.sigma, a.sigma);
            s.spec.interleave |= a.interleave;
            validated(&cfg)?;
            synth_corpus(&cfg.synth.spec, cfg.synth.videos, &a.out)
        }
        Command::Forward(a) => {
            apply_forward(&mut cfg, &a.forward);
            validated(&cfg)?;
            let corpus = Corpus::load(&a.manifest)?;
            let p = load_params(params, &cfg, corpus.input_dim(), corpus.text_dim())?;
            run_forward(&corpus, &p, &cfg, a.embeddings)
        }
        Command::ProcedureLearn(a) => {
            apply_forward(&mut cfg, &a.forward);
            set(&mut cfg.tasks.procedure_k, a.k);
            set(&mut cfg.tasks.procedure_depth, a.depth);
            set(&mut cfg.tasks.kappa, a.kappa);
            set(&mut cfg.tasks.seed, a.seed);
            validated(&cfg)?;
            let corpus = Corpus::load(&a.manifest)?;
            let p = load_params(params, &cfg, corpus.input_dim(), corpus.text_dim())?;
            procedure(&corpus, &p, &cfg)
        }
        Command::Ground(a) => {
            apply_forward(&mut cfg, &a.forward);
            set(&mut cfg.tasks.ground_k, a.k);
            set(&mut cfg.tasks.min_len, a.min_len);
            set(&mut cfg.tasks.seed, a.seed);
            validated(&cfg)?;
            let corpus = Corpus::load(&a.manifest)?;
            let queries = match &a.queries {
                Some(path) => read_queries(path)?,
                None => corpus.queries.clone().ok_or_else(|| missing("queries", "manifest names no queries file"))?,
            };
            let p = load_params(params, &cfg, corpus.input_dim(), corpus.text_dim())?;
            ground(&corpus, &queries, &p, &cfg)
        }
        Command::Localize(a) => {
            apply_forward(&mut cfg, &a.forward);
            set(&mut cfg.tasks.localize_k, a.k);
            set(&mut cfg.tasks.min_len, a.min_len);
            set(&mut cfg.tasks.seed, a.seed);
            validated(&cfg)?;
            let corpus = Corpus::load(&a.manifest)?;
            let p = load_params(params, &cfg, corpus.input_dim(), corpus.text_dim())?;
            localize(&corpus, &p, &cfg)
        }
        Command::Mcq(a) => {
            apply_forward(&mut cfg, &a.forward);
            set(&mut cfg.tasks.context, a.context);
            validated(&cfg)?;
            let corpus = Corpus::load(&a.manifest)?;
            let qpath = a.questions.clone().unwrap_or_else(|| corpus.dir.join(QUESTIONS_FILE));
            let questions = read_questions(qpath)?;
            let text_dim = questions.first().map_or_else(|| corpus.text_dim(), |q| q.query.len());
            let p = load_params(params, &cfg, corpus.input_dim(), text_dim)?;
            mcq(&corpus, &questions, &p, &cfg)
        }
        Command::Evaluate(a) => {
            set(&mut cfg.eval.fps, a.fps);
            validated(&cfg)?;
            evaluate(a, &cfg)
        }
        Command::TrainToy(a) => {
            apply_forward(&mut cfg, &a.forward);
            if a.dims == DimsPreset::Toy {
                cfg.model = ModelConfig { init_seed: cfg.model.init_seed, activation: cfg.model.activation, ..ModelConfig::toy() };
            }
            let t = &mut cfg.train;
            set(&mut t.epochs, a.epochs);
            set(&mut t.batch, a.batch);
            set(&mut t.lr, a.lr);
            set(&mut t.warmup_epochs, a.warmup_epochs);
            set(&mut t.seed, a.seed);
            validated(&cfg)?;
            let corpus = Corpus::load(&a.manifest)?;
            let p = load_params(params, &cfg, corpus.input_dim(), corpus.text_dim())?;
            train(&corpus.training_pairs(), p, &cfg, a.params_out.as_deref(), a.history.as_deref())
        }
        Command::GradCheck(a) => {
            apply_forward(&mut cfg, &a.forward);
            if a.dims == DimsPreset::Toy {
                cfg.model = ModelConfig { init_seed: cfg.model.init_seed, activation: cfg.model.activation, ..ModelConfig::toy() };
            }
            set(&mut cfg.grad_check.epsilon, a.epsilon);
            set(&mut cfg.grad_check.sample, a.sample);
            set(&mut cfg.grad_check.seed, a.seed);
            validated(&cfg)?;
            if a.videos == 0 {
                return Err(CliError::Usage("--videos must be >= 1".into()));
            }
            let data = match &a.manifest {
                Some(m) => {
                    let mut pairs = Corpus::load(m)?.training_pairs();
                    pairs.truncate(a.videos);
                    pairs
                }
                None => grad_check_batch(a.videos, cfg.grad_check.seed)?,
            };
            let text_dim = data.iter().find_map(|(_, n)| n.dim()).unwrap_or_else(|| data[0].0.dim());
            let p = load_params(params, &cfg, data[0].0.dim(), text_dim)?;
            grad_check(&data, &p, &cfg)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_forward(cfg: &mut RunConfig, f: &ForwardFlags) {
    let o = &mut cfg.forward;
    set(&mut o.edge_threshold, f.edge_threshold);
    set(&mut o.k, f.decoder_k);
    set(&mut o.max_nodes, f.max_nodes);
    set(&mut o.seed, f.forward_seed);
    if f.no_cluster {
        o.cluster_enabled = false;
    }
}

fn validated(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate().map_err(CliError::Config)
}

fn to_json<T: Serialize>(value: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(value).expect("result types serialize to json"))
}

fn missing(field: &str, detail: &str) -> CliError {
    HieroError::Schema { field: field.into(), detail: detail.into() }.into()
}

/// Collects per-item results, keeping the first error in input order.
fn collect<T>(items: Vec<hiero::Result<T>>) -> CliResult<Vec<T>> {
    Ok(items.into_iter().collect::<hiero::Result<Vec<T>>>()?)
}

fn synth_corpus(spec: &SynthSpec, videos: usize, out: &Path) -> CliResult<Value> {
    let corpus = synth::generate(spec, videos)?;
    let manifest = synth::write_corpus(&corpus, out)?;
    Ok(json!({
        "videos": manifest.videos.len(),
        "steps": spec.num_steps(),
        "queries": corpus.videos.iter().map(|v| v.queries.len()).sum::<usize>(),
        "questions": corpus.questions.len(),
        "spec": spec,
    }))
}

fn run_forward(corpus: &Corpus, params: &ModelParams, cfg: &RunConfig, embeddings: bool) -> CliResult<Value> {
    let rows = par::map_slice(&corpus.videos, |v| -> hiero::Result<Value> {
        let trace = forward(params, &v.features, &cfg.forward)?;
        let mut row = json!({
            "video_id": v.features.video_id,
            "segments": v.features.len(),
            "encoder_nodes": trace.encoder_graphs.iter().map(|g| g.len()).collect::<Vec<_>>(),
            "partitions": trace.partitions,
            "output_dim": trace.output.cols(),
        });
        if embeddings {
            let rows: Vec<&[f64]> = (0..trace.output.rows()).map(|r| trace.output.row(r)).collect();
            row["output"] = json!(rows);
        }
        Ok(row)
    });
    Ok(json!({ "videos": collect(rows)? }))
}

fn procedure(corpus: &Corpus, params: &ModelParams, cfg: &RunConfig) -> CliResult<Value> {
    let t = &cfg.tasks;
    let videos = par::map_slice(&corpus.videos, |v| -> hiero::Result<VideoPredictions> {
        let trace = forward(params, &v.features, &cfg.forward)?;
        let assign = procedure_learning(&trace, t.procedure_k, t.procedure_depth, t.kappa, t.seed)?;
        Ok(VideoPredictions { video_id: v.features.video_id.clone(), predictions: assign.to_predictions() })
    });
    to_json(&PredictionDoc { videos: collect(videos)?, meta: None })
}

fn ground(corpus: &Corpus, queries: &[GroundingQuery], params: &ModelParams, cfg: &RunConfig) -> CliResult<Value> {
    if let Some(q) = queries.iter().find(|q| corpus.video(&q.video_id).is_none()) {
        return Err(missing("queries.video_id", &format!("query {} names unknown video {}", q.query_id, q.video_id)));
    }
    let t = &cfg.tasks;
    let per_video = par::map_slice(&corpus.videos, |v| -> hiero::Result<Vec<(usize, QueryRanking)>> {
        let id = &v.features.video_id;
        let mine: Vec<(usize, &GroundingQuery)> = queries.iter().enumerate().filter(|(_, q)| &q.video_id == id).collect();
        if mine.is_empty() {
            return Ok(vec![]);
        }
        let trace = forward(params, &v.features, &cfg.forward)?;
        let cands = extract_candidates(&trace, params, t.ground_k, t.min_len, t.kappa, t.seed)?;
        let mut out = Vec::with_capacity(mine.len());
        for (i, q) in mine {
            let text = project_text(params, &DenseMatrix::from_vec(1, q.embedding.len(), q.embedding.clone())?)?;
            let ranked = if cands.is_empty() { vec![] } else { step_grounding(&cands, text.row(0))? };
            out.push((i, QueryRanking { query_id: q.query_id.clone(), video_id: id.clone(), ranked }));
        }
        Ok(out)
    });
    let mut ranked: Vec<(usize, QueryRanking)> = collect(per_video)?.into_iter().flatten().collect();
    ranked.sort_by_key(|(i, _)| *i);
    to_json(&RankingDoc { queries: ranked.into_iter().map(|(_, r)| r).collect(), meta: None })
}

fn localize(corpus: &Corpus, params: &ModelParams, cfg: &RunConfig) -> CliResult<Value> {
    let taxonomy = corpus.taxonomy.as_ref().ok_or_else(|| missing("taxonomy", "manifest names no taxonomy file"))?;
    let aligned = aligned_taxonomy(params, taxonomy)?;
    let t = &cfg.tasks;
    let videos = par::map_slice(&corpus.videos, |v| -> hiero::Result<VideoPredictions> {
        let trace = forward(params, &v.features, &cfg.forward)?;
        let cands = extract_candidates(&trace, params, t.localize_k, t.min_len, t.kappa, t.seed)?;
        let predictions = if cands.is_empty() { vec![] } else { step_localization(&cands, &aligned)? };
        Ok(VideoPredictions { video_id: v.features.video_id.clone(), predictions })
    });
    to_json(&PredictionDoc { videos: collect(videos)?, meta: None })
}

fn mcq(corpus: &Corpus, questions: &[hiero::io::McqQuestion], params: &ModelParams, cfg: &RunConfig) -> CliResult<Value> {
    let answers = par::map_slice(questions, |q| -> hiero::Result<McqAnswer> {
        let mut clips = Vec::with_capacity(q.candidates.len());
        for c in &q.candidates {
            let video = corpus.video(&c.video_id).ok_or_else(|| HieroError::Schema {
                field: format!("{}.candidates.video_id", q.question_id),
                detail: format!("unknown video {}", c.video_id),
            })?;
            clips.push(McqClip { video: &video.features, start: c.start, end: c.end });
        }
        let text = project_text(params, &DenseMatrix::from_vec(1, q.query.len(), q.query.clone())?)?;
        let chosen = mcq_retrieval(text.row(0), &clips, params, &cfg.forward, cfg.tasks.context)?;
        Ok(McqAnswer { question_id: q.question_id.clone(), chosen, group: q.group, answer: q.answer })
    });
    to_json(&AnswerDoc { answers: collect(answers)?, meta: None })
}

fn annotations(corpus: &Corpus) -> CliResult<Vec<StepAnnotation>> {
    corpus
        .videos
        .iter()
        .map(|v| {
            let mut a = v.annotation.clone().ok_or_else(|| missing("annotations", &format!("{} has no annotations", v.features.video_id)))?;
            a.video_id = v.features.video_id.clone();
            Ok(a)
        })
        .collect()
}

fn evaluate(a: &EvaluateArgs, cfg: &RunConfig) -> CliResult<Value> {
    let corpus = match (&a.manifest, a.task) {
        (Some(m), _) => Some(Corpus::load(m)?),
        (None, Task::Mcq) => None,
        (None, _) => return Err(CliError::Usage("--manifest is required for this task".into())),
    };
    let report = match a.task {
        Task::Procedure => {
            let corpus = corpus.expect("checked above");
            let gts = annotations(&corpus)?;
            let preds = by_video(read_predictions(&a.predictions)?);
            let num_steps = match &corpus.taxonomy {
                Some(t) => t.len(),
                None => gts.iter().flat_map(|g| g.intervals.iter().filter_map(|s| s.label)).max().map_or(0, |m| m + 1),
            };
            let rows: Vec<(String, Vec<Option<usize>>, Vec<Option<usize>>)> = gts
                .iter()
                .map(|gt| {
                    let pred = preds.get(gt.video_id.as_str());
                    let (p, g) = frame_labels(pred, gt, cfg.eval.fps);
                    (gt.video_id.clone(), p, g)
                })
                .collect();
            procedure_report(&rows, num_steps)?
        }
        Task::Localize => {
            let corpus = corpus.expect("checked above");
            let gts = annotations(&corpus)?;
            let preds = read_predictions(&a.predictions)?;
            let mut report = map_at_iou(&preds, &gts, &cfg.eval.map_thresholds);
            let (acc, labeled) = label_accuracy(&preds, &gts);
            report.metrics.insert("label_accuracy".into(), acc);
            report.counts.insert("labeled".into(), labeled);
            report
        }
        Task::Ground => {
            let corpus = corpus.expect("checked above");
            let queries = corpus.queries.as_ref().ok_or_else(|| missing("queries", "manifest names no queries file"))?;
            let rankings: HashMap<String, QueryRanking> =
                read_rankings(&a.predictions)?.into_iter().map(|r| (r.query_id.clone(), r)).collect();
            let ranked: Vec<RankedQuery> = queries
                .iter()
                .map(|q| RankedQuery {
                    ranked: rankings.get(&q.query_id).map_or_else(Vec::new, |r| r.ranked.iter().map(|p| (p.start, p.end)).collect()),
                    gt: q.start.zip(q.end),
                })
                .collect();
            recall_at_iou(&ranked, &cfg.eval.recall_ks, &cfg.eval.recall_thresholds)
        }
        Task::Mcq => mcq_report(a, corpus.as_ref())?,
    };
    to_json(&report)
}

fn mcq_report(a: &EvaluateArgs, corpus: Option<&Corpus>) -> CliResult<MetricReport> {
    let answers = read_answers(&a.predictions)?;
    let qpath = a.questions.clone().or_else(|| corpus.map(|c| c.dir.join(QUESTIONS_FILE)));
    let keys: HashMap<String, usize> = match qpath {
        Some(p) if p.exists() || a.questions.is_some() => {
            read_questions(p)?.into_iter().filter_map(|q| q.answer.map(|ans| (q.question_id, ans))).collect()
        }
        _ => HashMap::new(),
    };
    let mut choices = Vec::with_capacity(answers.len());
    for ans in &answers {
        let correct = ans
            .answer
            .or_else(|| keys.get(&ans.question_id).copied())
            .ok_or_else(|| missing("answers.answer", &format!("no answer key for question {}", ans.question_id)))?;
        choices.push(McqChoice { chosen: ans.chosen, correct, group: ans.group });
    }
    Ok(mcq_accuracy(&choices))
}

fn by_video(videos: Vec<VideoPredictions>) -> HashMap<String, VideoPredictions> {
    videos.into_iter().map(|v| (v.video_id.clone(), v)).collect()
}

/// Samples predicted and ground-truth labels at frame centers up to the
/// last annotated or predicted instant.
fn frame_labels(pred: Option<&VideoPredictions>, gt: &StepAnnotation, fps: f64) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let preds = pred.map_or(&[][..], |p| &p.predictions[..]);
    let end = gt.intervals.iter().map(|s| s.end).chain(preds.iter().map(|p| p.end)).fold(0.0, f64::max);
    let frames = (end * fps).floor() as usize;
    let mut p = Vec::with_capacity(frames);
    let mut g = Vec::with_capacity(frames);
    for f in 0..frames {
        let t = (f as f64 + 0.5) / fps;
        p.push(preds.iter().find(|s| s.start <= t && t < s.end).and_then(|s| s.label));
        g.push(gt.label_at(t));
    }
    (p, g)
}

fn train(
    data: &[(FeatureSequence, NarrationSet)],
    params: ModelParams,
    cfg: &RunConfig,
    params_out: Option<&Path>,
    history: Option<&Path>,
) -> CliResult<Value> {
    let count = params.dims.param_count();
    let mut writer = match history {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| HieroError::Io { path: p.to_path_buf(), source: e })?)),
        None => None,
    };
    let log = writer.as_mut().map(|w| w as &mut dyn Write);
    let outcome = train_toy(params, data, &cfg.train, &cfg.forward, &cfg.loss, log)?;
    if let (Some(w), Some(p)) = (writer.as_mut(), history) {
        w.flush().map_err(|e| HieroError::Io { path: p.to_path_buf(), source: e })?;
    }
    if let Some(p) = params_out {
        outcome.params.write(p)?;
    }
    Ok(json!({
        "parameter_count": count,
        "videos": data.len(),
        "initial_loss": outcome.initial_loss,
        "final_loss": outcome.final_loss,
        "relative_drop": 1.0 - outcome.final_loss / outcome.initial_loss,
        "history": outcome.history,
    }))
}

/// Two short planted videos with dense narrations.
fn grad_check_batch(videos: usize, seed: u64) -> CliResult<Vec<(FeatureSequence, NarrationSet)>> {
    let spec = SynthSpec { segments: 40, dim: 8, steps_per_thread: 3, narration_stride: 2, seed, ..SynthSpec::default() };
    let corpus = synth::generate(&spec, videos)?;
    Ok(corpus.videos.into_iter().map(|v| (v.features, v.narrations)).collect())
}

const GRAD_TOLERANCE: f64 = 1e-4;

fn grad_check(data: &[(FeatureSequence, NarrationSet)], params: &ModelParams, cfg: &RunConfig) -> CliResult<Value> {
    let batch: Vec<(&FeatureSequence, &NarrationSet)> = data.iter().map(|(s, n)| (s, n)).collect();
    let report = check_model_gradient(params, &batch, &cfg.forward, &cfg.loss, &cfg.grad_check)?;
    let mut value = to_json(&report)?;
    value["tolerance"] = json!(GRAD_TOLERANCE);
    value["passed"] = json!(report.max_rel_error <= GRAD_TOLERANCE);
    value["videos"] = json!(data.len());
    Ok(value)
}

