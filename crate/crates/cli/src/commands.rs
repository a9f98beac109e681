use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use serde_json::json;

use stance_core::analysis::{self, keyword_correlations, lexicon_correlations, Dimension, Lexicon};
use stance_core::baselines::{train_target, FeatureKind, ModelError, ModelKind, TrainConfig, TrainedModel, MODEL_SCHEMA_VERSION};
use stance_core::corpus::{load_corpus, split_users, write_corpus, CorpusSplit, SampleMode, UserRecord};
use stance_core::features::{fit_vocabulary, load_embeddings, tokenize, EmbeddingTable};
use stance_core::llm::{HttpBackend, LlmClient, MockBackend, MockPolicy, ResponseCache, TruthIndex, DEFAULT_PARALLELISM};
use stance_core::metrics::{self, score, sweep_curve, Cell, MetricsReport};
use stance_core::pipeline::{
    join_truth, labelled_users, predict_llm, predict_model, Method, PredictionRow, RunConfig, SplitSide,
};
use stance_core::pooling::{tune_threshold, StanceScore, ThresholdConfig};
use stance_core::prompt::TargetSpec;
use stance_core::synth::{generate_with_lexicon, SynthConfig};
use stance_core::label::Verdict;

use crate::manifest::{self, RunManifest};
use crate::settings::Settings;
use crate::{AnalyzeArgs, Cli, Command, CorpusArgs, EvaluateArgs, LlmArgs, PredictArgs, SweepArgs, SynthArgs, TrainArgs, TuneArgs};

const DEFAULT_LLM_MODEL: &str = "gpt-4o";
const DEFAULT_N_TWEETS: usize = 50;
const DEFAULT_TRAIN_FRACTION: f64 = 0.5;
const HTTP_TIMEOUT: Duration = Duration::from_secs(60);

pub enum Fail {
    /// Bad flags, missing or malformed inputs: exit 1.
    Input(anyhow::Error),
    /// Anything that broke after inputs were accepted: exit 2.
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn input(self) -> Result<T, Fail>;
    fn runtime(self) -> Result<T, Fail>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Fail> {
        self.map_err(|e| Fail::Input(e.into()))
    }

    fn runtime(self) -> Result<T, Fail> {
        self.map_err(|e| Fail::Runtime(e.into()))
    }
}

fn input_err(msg: impl Into<String>) -> Fail {
    Fail::Input(anyhow!(msg.into()))
}

pub fn run(cli: Cli) -> Result<(), Fail> {
    let settings = match &cli.config {
        Some(path) => Settings::load(path).input()?,
        None => Settings::default(),
    };
    let started_at = manifest::now();
    let mut run = Run {
        settings,
        started_at,
        config: json!({}),
        corpus_digest: None,
        seeds: BTreeMap::new(),
        outputs: Vec::new(),
        failures: 0,
    };
    let (name, out) = match &cli.command {
        Command::Synth(a) => ("synth", &a.out),
        Command::Predict(a) => ("predict", &a.out),
        Command::Train(a) => ("train", &a.out),
        Command::TuneThreshold(a) => ("tune-threshold", &a.out),
        Command::Evaluate(a) => ("evaluate", &a.out),
        Command::Sweep(a) => ("sweep", &a.out),
        Command::Analyze(a) => ("analyze", &a.out),
    };
    match &cli.command {
        Command::Synth(a) => synth(&mut run, a)?,
        Command::Predict(a) => predict(&mut run, a)?,
        Command::Train(a) => train(&mut run, a)?,
        Command::TuneThreshold(a) => tune(&mut run, a)?,
        Command::Evaluate(a) => evaluate(&mut run, a)?,
        Command::Sweep(a) => sweep(&mut run, a)?,
        Command::Analyze(a) => analyze(&mut run, a)?,
    }
    run.finish(name, out).runtime()
}

/// State shared by every command, flushed into the manifest at the end.
struct Run {
    settings: Settings,
    started_at: String,
    config: serde_json::Value,
    corpus_digest: Option<String>,
    seeds: BTreeMap<String, u64>,
    outputs: Vec<String>,
    failures: usize,
}

impl Run {
    fn finish(self, command: &str, out: &Path) -> anyhow::Result<()> {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: self.config,
            corpus_digest: self.corpus_digest,
            seeds: self.seeds,
            versions: manifest::versions(),
            outputs: self.outputs,
            failures: self.failures,
            started_at: self.started_at,
            finished_at: manifest::now(),
        }
        .write(out)
    }

    fn corpus_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf, Fail> {
        flag.clone()
            .or_else(|| self.settings.corpus.clone())
            .ok_or_else(|| input_err("no corpus given (--corpus or `corpus` in the config)"))
    }

    fn load_corpus(&mut self, flag: &Option<PathBuf>) -> Result<(PathBuf, Vec<UserRecord>), Fail> {
        let path = self.corpus_path(flag)?;
        let users = load_corpus(&path).with_context(|| format!("corpus {}", path.display())).input()?;
        self.corpus_digest = Some(manifest::file_digest(&path).input()?);
        Ok((path, users))
    }

    fn targets(&self, flag: &Option<Vec<String>>, users: &[UserRecord]) -> Result<Vec<TargetSpec>, Fail> {
        let ids: Vec<String> = match flag.clone().or_else(|| self.settings.targets.clone()) {
            Some(ids) => ids,
            None => users
                .iter()
                .flat_map(|u| u.stances.keys().cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        if ids.is_empty() {
            return Err(input_err("no targets: none given and the corpus has no stance labels"));
        }
        ids.iter()
            .map(|id| match self.settings.target_phrases.get(id) {
                Some(phrase) => TargetSpec::new(id.clone(), phrase.clone()).input(),
                None => Ok(TargetSpec::for_id(id)),
            })
            .collect()
    }

    fn split(&mut self, args: &CorpusArgs, users: &[UserRecord], default: SplitSide) -> Result<(SplitSide, Option<CorpusSplit>), Fail> {
        let side = match args.split.clone().or_else(|| self.settings.split.clone()) {
            Some(s) => s.parse::<SplitSide>().map_err(input_err)?,
            None => default,
        };
        if side == SplitSide::All {
            return Ok((side, None));
        }
        let seed = args.split_seed.or(self.settings.split_seed).unwrap_or(0);
        let fraction = args
            .train_fraction
            .or(self.settings.train_fraction)
            .unwrap_or(DEFAULT_TRAIN_FRACTION);
        self.seeds.insert("split_seed".into(), seed);
        Ok((side, Some(split_users(users, fraction, seed).input()?)))
    }

    fn seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.settings.seed).unwrap_or(0);
        self.seeds.insert("seed".into(), seed);
        seed
    }

    fn output(&mut self, out: &Path, name: &str) -> Result<BufWriter<File>, Fail> {
        let path = out.join(name);
        self.outputs.push(name.to_string());
        File::create(&path)
            .with_context(|| format!("cannot create {}", path.display()))
            .runtime()
            .map(BufWriter::new)
    }

    fn write_json(&mut self, out: &Path, name: &str, value: &impl serde::Serialize) -> Result<(), Fail> {
        let mut w = self.output(out, name)?;
        serde_json::to_writer_pretty(&mut w, value).runtime()?;
        writeln!(w).and_then(|_| w.flush()).runtime()
    }

    fn path_setting(&self, flag: &Option<PathBuf>, fallback: &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| fallback.clone())
    }
}

fn create_out(out: &Path) -> Result<(), Fail> {
    fs::create_dir_all(out)
        .with_context(|| format!("cannot create output directory {}", out.display()))
        .runtime()
}

fn require_file(path: &Path, what: &str) -> Result<(), Fail> {
    if path.is_file() {
        Ok(())
    } else {
        Err(input_err(format!("{what} {} does not exist", path.display())))
    }
}

fn synth(run: &mut Run, a: &SynthArgs) -> Result<(), Fail> {
    let mut lexicon_effect = BTreeMap::new();
    for spec in &a.lexicon_effect {
        let (dim, delta) = spec
            .split_once('=')
            .ok_or_else(|| input_err(format!("--lexicon-effect {spec:?} is not dimension=delta")))?;
        let dim: Dimension = dim.parse().map_err(input_err)?;
        let delta: f64 = delta
            .parse()
            .map_err(|_| input_err(format!("--lexicon-effect {spec:?}: bad number")))?;
        lexicon_effect.insert(dim, delta);
    }
    let config = SynthConfig {
        n_users: a.n_users,
        tweets_per_user: a.tweets_per_user,
        specific_per_target: a.specific_per_target,
        support_fraction: a.support_fraction,
        keyword_rate: a.keyword_rate,
        lexicon_base_rate: a.lexicon_base_rate,
        lexicon_target: a.lexicon_target.clone(),
        lexicon_effect,
        seed: run.seed(a.seed),
        ..SynthConfig::default()
    };
    let corpus = generate_with_lexicon(&config, &Lexicon::bundled()).input()?;
    create_out(&a.out)?;
    let mut w = run.output(&a.out, "corpus.jsonl")?;
    write_corpus(&mut w, &corpus.users).runtime()?;
    run.write_json(&a.out, "truth.json", &corpus.truth)?;
    run.config = serde_json::to_value(&config).runtime()?;
    Ok(())
}

/// Parses `--mock-policy`: inline JSON, or a path to a JSON file.
fn mock_policy(value: &str) -> Result<MockPolicy, Fail> {
    let text = if value.trim_start().starts_with('{') {
        value.to_string()
    } else {
        fs::read_to_string(value)
            .with_context(|| format!("cannot read mock policy {value}"))
            .input()?
    };
    let policy: MockPolicy = serde_json::from_str(&text).context("invalid mock policy").input()?;
    policy.validate().input()?;
    Ok(policy)
}

fn llm_client(
    run: &mut Run,
    a: &LlmArgs,
    users: &[UserRecord],
    targets: &[TargetSpec],
) -> Result<(LlmClient, serde_json::Value), Fail> {
    let s = &run.settings;
    let parallelism = a.parallelism.or(s.parallelism).unwrap_or(DEFAULT_PARALLELISM);
    let cache = run.path_setting(&a.cache, &s.cache);
    let (client, backend) = match a.mock_policy.clone().or_else(|| s.mock_policy.clone()) {
        Some(raw) => {
            let policy = mock_policy(&raw)?;
            let described = serde_json::to_value(&policy).runtime()?;
            let backend = MockBackend::new(policy, TruthIndex::from_users(users), targets).input()?;
            (LlmClient::new(backend), json!({ "mock": described }))
        }
        None => {
            let url = a
                .llm_base_url
                .clone()
                .or_else(|| s.llm_base_url.clone())
                .ok_or_else(|| input_err("LLM methods need --llm-base-url or --mock-policy"))?;
            let backend = HttpBackend::from_env(url.clone(), HTTP_TIMEOUT).input()?;
            (LlmClient::new(backend), json!({ "base_url": url }))
        }
    };
    let mut client = client.with_parallelism(parallelism);
    if let Some(path) = &cache {
        client = client.with_cache(ResponseCache::open(path).input()?);
    }
    let described = json!({
        "backend": backend,
        "parallelism": parallelism,
        "cache": cache,
    });
    Ok((client, described))
}

fn load_thresholds(path: Option<&Path>) -> Result<ThresholdConfig, Fail> {
    match path {
        None => Ok(ThresholdConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read thresholds {}", p.display()))
                .input()?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid thresholds {}", p.display()))
                .input()
        }
    }
}

fn load_model(path: &Path, method: Method) -> Result<TrainedModel, Fail> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read model {}", path.display()))
        .input()?;
    let model = TrainedModel::from_json(&text)
        .with_context(|| format!("invalid model {}", path.display()))
        .input()?;
    model.check_version().input()?;
    if method.trained_kind() != Some((model.features, model.model)) {
        return Err(input_err(format!(
            "model {} holds {:?}/{:?}, which does not match method {method}",
            path.display(),
            model.features,
            model.model
        )));
    }
    Ok(model)
}

fn maybe_embeddings(path: Option<&Path>) -> Result<Option<EmbeddingTable>, Fail> {
    path.map(|p| load_embeddings(p).with_context(|| format!("embeddings {}", p.display())).input())
        .transpose()
}

fn log_failures(run: &mut Run, rows: &[PredictionRow]) {
    for r in rows.iter().filter(|r| r.failed()) {
        run.failures += 1;
        eprintln!("warning: {} / {}: prediction failed, recorded as unparsable", r.user_id, r.target);
    }
}

fn write_predictions(run: &mut Run, out: &Path, rows: &[PredictionRow]) -> Result<(), Fail> {
    let mut w = run.output(out, "predictions.jsonl")?;
    for row in rows {
        serde_json::to_writer(&mut w, row).runtime()?;
        w.write_all(b"\n").runtime()?;
    }
    w.flush().runtime()
}

/// Everything a method needs besides the users.
struct Predictor {
    client: Option<LlmClient>,
    models: BTreeMap<Method, TrainedModel>,
    embeddings: Option<EmbeddingTable>,
    thresholds: ThresholdConfig,
}

impl Predictor {
    fn run(
        &self,
        users: &[&UserRecord],
        target: &TargetSpec,
        config: &RunConfig,
    ) -> Result<Vec<PredictionRow>, Fail> {
        if config.method.is_llm() {
            let client = self.client.as_ref().expect("client built for LLM methods");
            let threshold = self.thresholds.get(&target.target_id).unwrap_or(0.0);
            return Ok(predict_llm(client, users, target, config, threshold));
        }
        let model = self.models.get(&config.method).expect("model loaded for trained methods");
        let mut tm = model.target(&target.target_id).input()?.clone();
        if let Some(t) = self.thresholds.get(&target.target_id) {
            tm.threshold = t;
        }
        predict_model(&tm, self.embeddings.as_ref(), users, &target.target_id, config).runtime()
    }
}

#[allow(clippy::too_many_arguments)]
fn predictor(
    run: &mut Run,
    methods: &[Method],
    llm: &LlmArgs,
    model_paths: &[PathBuf],
    embeddings: Option<&Path>,
    thresholds: Option<&Path>,
    users: &[UserRecord],
    targets: &[TargetSpec],
) -> Result<(Predictor, serde_json::Value), Fail> {
    let mut models = BTreeMap::new();
    for &m in methods.iter().filter(|m| !m.is_llm()) {
        let path = model_paths
            .iter()
            .find(|p| {
                fs::read_to_string(p)
                    .ok()
                    .and_then(|t| TrainedModel::from_json(&t).ok())
                    .is_some_and(|tm| m.trained_kind() == Some((tm.features, tm.model)))
            })
            .or(if model_paths.len() == 1 { model_paths.first() } else { None })
            .ok_or_else(|| input_err(format!("method {m} needs a trained model (--model)")))?;
        models.insert(m, load_model(path, m)?);
    }
    let embeddings = maybe_embeddings(embeddings)?;
    let thresholds = load_thresholds(thresholds)?;
    let (client, described) = if methods.iter().any(|m| m.is_llm()) {
        let (c, d) = llm_client(run, llm, users, targets)?;
        (Some(c), d)
    } else {
        (None, serde_json::Value::Null)
    };
    Ok((
        Predictor {
            client,
            models,
            embeddings,
            thresholds,
        },
        described,
    ))
}

fn check_method_inputs(method: Method, embeddings: Option<&Path>) -> Result<(), Fail> {
    if method.needs_embeddings() {
        let path = embeddings.ok_or_else(|| input_err(format!("method {method} needs --embeddings")))?;
        require_file(path, "embeddings file")?;
    }
    Ok(())
}

fn predict(run: &mut Run, a: &PredictArgs) -> Result<(), Fail> {
    let s = run.settings.clone();
    let method: Method = a
        .method
        .clone()
        .or(s.method.clone())
        .unwrap_or_else(|| "llm".into())
        .parse()
        .map_err(input_err)?;
    let embeddings = run.path_setting(&a.embeddings, &s.embeddings);
    check_method_inputs(method, embeddings.as_deref())?;
    if let Some(m) = &a.model {
        require_file(m, "model file")?;
    }
    let mode: SampleMode = a
        .mode
        .clone()
        .or(s.mode.clone())
        .unwrap_or_else(|| "agnostic".into())
        .parse()
        .map_err(input_err)?;
    let n_tweets = a.n_tweets.or(s.n_tweets).unwrap_or(DEFAULT_N_TWEETS);
    if n_tweets == 0 {
        return Err(input_err("--n-tweets must be at least 1"));
    }
    let (_, users) = run.load_corpus(&a.corpus.corpus)?;
    let targets = run.targets(&a.corpus.targets, &users)?;
    let (side, split) = run.split(&a.corpus, &users, SplitSide::All)?;
    let seed = run.seed(a.seed);
    let thresholds = run.path_setting(&a.thresholds, &s.thresholds);
    let models: Vec<PathBuf> = a.model.iter().cloned().collect();
    let (predictor, backend) = predictor(
        run,
        &[method],
        &a.llm,
        &models,
        embeddings.as_deref(),
        thresholds.as_deref(),
        &users,
        &targets,
    )?;
    let config = RunConfig {
        method,
        n_tweets,
        mode,
        seed,
        llm_model: a.llm.llm_model.clone().or(s.llm_model.clone()).unwrap_or_else(|| DEFAULT_LLM_MODEL.into()),
    };
    create_out(&a.out)?;
    let mut rows = Vec::new();
    for target in &targets {
        let selected = labelled_users(&users, &target.target_id, split.as_ref().and_then(|sp| side.select(sp)));
        rows.extend(predictor.run(&selected, target, &config)?);
    }
    log_failures(run, &rows);
    write_predictions(run, &a.out, &rows)?;
    run.config = json!({
        "method": method,
        "n_tweets": n_tweets,
        "mode": mode,
        "targets": targets.iter().map(|t| (&t.target_id, &t.display_phrase)).collect::<BTreeMap<_, _>>(),
        "split": side,
        "llm_model": config.llm_model,
        "llm": backend,
        "model": a.model,
        "embeddings": embeddings,
        "thresholds": thresholds,
        "network_calls": predictor.client.as_ref().map(|c| c.network_calls()),
    });
    Ok(())
}

fn train(run: &mut Run, a: &TrainArgs) -> Result<(), Fail> {
    let s = run.settings.clone();
    let features: FeatureKind = a.features.parse().map_err(input_err)?;
    let model: ModelKind = a.model.parse().map_err(input_err)?;
    let embeddings_path = run.path_setting(&a.embeddings, &s.embeddings);
    if features == FeatureKind::Embed {
        let path = embeddings_path
            .as_deref()
            .ok_or_else(|| input_err("embedding features need --embeddings"))?;
        require_file(path, "embeddings file")?;
    }
    let (_, users) = run.load_corpus(&a.corpus.corpus)?;
    let targets = run.targets(&a.corpus.targets, &users)?;
    let (side, split) = run.split(&a.corpus, &users, SplitSide::Train)?;
    let embeddings = if features == FeatureKind::Embed {
        maybe_embeddings(embeddings_path.as_deref())?
    } else {
        None
    };
    let mut config = TrainConfig::new(features, model);
    config.n_tweets = a.n_tweets.or(s.n_tweets).unwrap_or(DEFAULT_N_TWEETS);
    config.folds = a.folds;
    config.min_df = a.min_df;
    config.seed = run.seed(a.seed);

    let mut trained = TrainedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        features,
        model,
        targets: BTreeMap::new(),
    };
    let mut thresholds = ThresholdConfig::default();
    for target in &targets {
        let id = &target.target_id;
        let selected = labelled_users(&users, id, split.as_ref().and_then(|sp| side.select(sp)));
        let tm = match train_target(&selected, id, &config, embeddings.as_ref()) {
            Ok(tm) => tm,
            Err(e @ (ModelError::SingleClassTarget(_) | ModelError::Corpus(_) | ModelError::MissingLabel { .. })) => {
                return Err(Fail::Input(anyhow!(e).context(format!("training target {id}"))))
            }
            Err(e) => return Err(Fail::Runtime(anyhow!(e).context(format!("training target {id}")))),
        };
        thresholds.insert(id.clone(), tm.threshold);
        trained.targets.insert(id.clone(), tm);
    }
    create_out(&a.out)?;
    run.write_json(&a.out, "model.json", &trained)?;
    run.write_json(&a.out, "thresholds.json", &thresholds)?;
    run.config = json!({
        "features": features,
        "model": model,
        "targets": targets.iter().map(|t| &t.target_id).collect::<Vec<_>>(),
        "split": side,
        "n_tweets": config.n_tweets,
        "folds": config.folds,
        "min_df": config.min_df,
        "grid": config.grid,
        "embeddings": embeddings_path,
    });
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, Fail> {
    let file = File::open(path)
        .with_context(|| format!("cannot read predictions {}", path.display()))
        .input()?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.input()?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
                .input()?,
        );
    }
    if rows.is_empty() {
        return Err(input_err(format!("{} holds no predictions", path.display())));
    }
    Ok(rows)
}

fn tune(run: &mut Run, a: &TuneArgs) -> Result<(), Fail> {
    require_file(&a.predictions, "predictions file")?;
    let (_, users) = run.load_corpus(&a.corpus)?;
    let rows = read_predictions(&a.predictions)?;
    let joined = join_truth(&rows, &users).map_err(input_err)?;
    let mut by_target: BTreeMap<&str, Vec<(StanceScore, stance_core::StanceLabel)>> = BTreeMap::new();
    let mut cells = BTreeSet::new();
    for (row, label) in joined {
        let value = row.score.ok_or_else(|| {
            input_err(format!(
                "prediction for {} has no score; thresholds need llm-pooled or trained-model predictions",
                row.user_id
            ))
        })?;
        cells.insert((row.target.as_str(), row.method, row.tweets_per_user));
        by_target.entry(&row.target).or_default().push((
            StanceScore {
                value,
                n_tweets: row.tweets_per_user,
            },
            label,
        ));
    }
    if cells.len() != by_target.len() {
        return Err(input_err("predictions mix methods or budgets for one target"));
    }
    let mut thresholds = ThresholdConfig::default();
    for (target, pairs) in &by_target {
        let t = tune_threshold(pairs)
            .with_context(|| format!("tuning {target}"))
            .input()?;
        thresholds.insert(*target, t);
    }
    create_out(&a.out)?;
    run.write_json(&a.out, "thresholds.json", &thresholds)?;
    run.config = json!({ "predictions": a.predictions, "predictions_digest": manifest::file_digest(&a.predictions).input()? });
    Ok(())
}

fn evaluate(run: &mut Run, a: &EvaluateArgs) -> Result<(), Fail> {
    require_file(&a.predictions, "predictions file")?;
    let (_, users) = run.load_corpus(&a.corpus)?;
    let rows = read_predictions(&a.predictions)?;
    let joined = join_truth(&rows, &users).map_err(input_err)?;
    let mut cells: BTreeMap<Cell, (Vec<Verdict>, Vec<stance_core::StanceLabel>)> = BTreeMap::new();
    for (row, label) in joined {
        let entry = cells
            .entry(Cell::new(&row.target, row.method.as_str(), row.tweets_per_user))
            .or_default();
        entry.0.push(row.predicted);
        entry.1.push(label);
    }
    let reports = cells
        .into_iter()
        .map(|(cell, (preds, truth))| score(cell, &preds, &truth))
        .collect::<Result<Vec<MetricsReport>, _>>()
        .runtime()?;
    create_out(&a.out)?;
    write_reports(run, &a.out, "metrics", &reports)?;
    run.config = json!({ "predictions": a.predictions, "predictions_digest": manifest::file_digest(&a.predictions).input()? });
    Ok(())
}

fn write_reports(run: &mut Run, out: &Path, stem: &str, reports: &[MetricsReport]) -> Result<(), Fail> {
    let w = run.output(out, &format!("{stem}.csv"))?;
    metrics::write_csv(w, reports).runtime()?;
    run.write_json(out, &format!("{stem}.json"), &metrics::to_json(reports))
}

fn sweep(run: &mut Run, a: &SweepArgs) -> Result<(), Fail> {
    let s = run.settings.clone();
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(input_err))
        .collect::<Result<Vec<_>, _>>()?;
    let embeddings = run.path_setting(&a.embeddings, &s.embeddings);
    for &m in &methods {
        check_method_inputs(m, embeddings.as_deref())?;
    }
    for m in &a.model {
        require_file(m, "model file")?;
    }
    let mut grid = a.n_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.first() == Some(&0) {
        return Err(input_err("--n-grid budgets must be at least 1"));
    }
    let mode: SampleMode = a
        .mode
        .clone()
        .or(s.mode.clone())
        .unwrap_or_else(|| "agnostic".into())
        .parse()
        .map_err(input_err)?;
    let (_, users) = run.load_corpus(&a.corpus.corpus)?;
    let targets = run.targets(&a.corpus.targets, &users)?;
    let (side, split) = run.split(&a.corpus, &users, SplitSide::All)?;
    let seed = run.seed(a.seed);
    let thresholds = run.path_setting(&a.thresholds, &s.thresholds);
    let (predictor, backend) = predictor(
        run,
        &methods,
        &a.llm,
        &a.model,
        embeddings.as_deref(),
        thresholds.as_deref(),
        &users,
        &targets,
    )?;
    let llm_model = a.llm.llm_model.clone().or(s.llm_model.clone()).unwrap_or_else(|| DEFAULT_LLM_MODEL.into());
    let mut reports = Vec::new();
    let mut failed_rows = Vec::new();
    for target in &targets {
        let selected = labelled_users(&users, &target.target_id, split.as_ref().and_then(|sp| side.select(sp)));
        if selected.is_empty() {
            return Err(input_err(format!("no labelled users for target {}", target.target_id)));
        }
        let max_available = selected
            .iter()
            .map(|u| u.tweets_in_mode(&target.target_id, mode).count())
            .max()
            .unwrap_or(0);
        for &method in &methods {
            let mut inner_err = None;
            let curve = sweep_curve(&target.target_id, method.as_str(), &grid, max_available, |n| {
                let config = RunConfig {
                    method,
                    n_tweets: n,
                    mode,
                    seed,
                    llm_model: llm_model.clone(),
                };
                let rows = match predictor.run(&selected, target, &config) {
                    Ok(rows) => rows,
                    Err(Fail::Input(e)) | Err(Fail::Runtime(e)) => {
                        let msg = e.to_string();
                        inner_err = Some(e);
                        return Err(msg);
                    }
                };
                let outcomes = selected
                    .iter()
                    .zip(&rows)
                    .map(|(u, r)| (r.predicted, u.stance(&target.target_id).expect("labelled")))
                    .collect();
                failed_rows.extend(rows.into_iter().filter(|r| r.failed()));
                Ok::<_, String>(outcomes)
            });
            match (curve, inner_err) {
                (Ok(curve), _) => reports.extend(curve.into_iter().map(|(_, r)| r)),
                (Err(_), Some(e)) => return Err(Fail::Runtime(e)),
                (Err(e), None) => return Err(Fail::Input(anyhow!(e).context(format!("sweeping {}", target.target_id)))),
            }
        }
    }
    log_failures(run, &failed_rows);
    create_out(&a.out)?;
    write_reports(run, &a.out, "sweep", &reports)?;
    run.config = json!({
        "methods": methods,
        "n_grid": grid,
        "mode": mode,
        "targets": targets.iter().map(|t| &t.target_id).collect::<Vec<_>>(),
        "split": side,
        "llm_model": llm_model,
        "llm": backend,
        "models": a.model,
        "embeddings": embeddings,
        "thresholds": thresholds,
    });
    Ok(())
}

fn analyze(run: &mut Run, a: &AnalyzeArgs) -> Result<(), Fail> {
    let s = run.settings.clone();
    let lexicon_path = run.path_setting(&a.lexicon, &s.lexicon);
    if let Some(p) = &lexicon_path {
        require_file(p, "lexicon file")?;
    }
    let lexicon = match &lexicon_path {
        Some(p) => Lexicon::load(p).input()?,
        None => Lexicon::bundled(),
    };
    let (_, users) = run.load_corpus(&a.corpus.corpus)?;
    let targets = run.targets(&a.corpus.targets, &users)?;
    let (side, split) = run.split(&a.corpus, &users, SplitSide::All)?;
    let mut keyword_rows = Vec::new();
    let mut lexicon_rows = Vec::new();
    let mut skipped = BTreeMap::new();
    for target in &targets {
        let id = &target.target_id;
        let selected = labelled_users(&users, id, split.as_ref().and_then(|sp| side.select(sp)));
        let docs: Vec<Vec<String>> = selected
            .iter()
            .flat_map(|u| u.tweets.iter().filter(|t| t.is_agnostic_for(id)).map(|t| tokenize(&t.text)))
            .collect();
        let vocab = fit_vocabulary(&docs, a.min_df)
            .with_context(|| format!("vocabulary for {id}"))
            .input()?;
        let kw = keyword_correlations(&selected, id, &vocab, a.top_k)
            .with_context(|| format!("keyword correlations for {id}"))
            .input()?;
        skipped.insert(id.clone(), kw.skipped_constant);
        keyword_rows.extend(kw.rows);
        match lexicon_correlations(&selected, id, &lexicon) {
            Ok(rows) => lexicon_rows.extend(rows),
            Err(analysis::AnalysisError::ConstantFeature) => {
                lexicon_rows.extend(lexicon_rows_skipping_constant(&selected, id, &lexicon).input()?);
            }
            Err(e) => return Err(Fail::Input(anyhow!(e).context(format!("lexicon correlations for {id}")))),
        }
    }
    create_out(&a.out)?;
    let w = run.output(&a.out, "keyword_correlations.csv")?;
    analysis::write_csv(w, &keyword_rows).runtime()?;
    let w = run.output(&a.out, "lexicon_correlations.csv")?;
    analysis::write_csv(w, &lexicon_rows).runtime()?;
    run.config = json!({
        "targets": targets.iter().map(|t| &t.target_id).collect::<Vec<_>>(),
        "split": side,
        "lexicon": lexicon_path,
        "top_k": a.top_k,
        "min_df": a.min_df,
        "skipped_constant_terms": skipped,
        "significance_level": analysis::SIGNIFICANCE_LEVEL,
    });
    Ok(())
}

/// Per-dimension fallback when some dimension does not vary across users.
fn lexicon_rows_skipping_constant(
    users: &[&UserRecord],
    target: &str,
    lexicon: &Lexicon,
) -> Result<Vec<analysis::CorrelationRow>, analysis::AnalysisError> {
    let codes: Vec<bool> = users
        .iter()
        .map(|u| u.stance(target) == Some(stance_core::StanceLabel::Support))
        .collect();
    let scores: Vec<_> = users.iter().map(|u| analysis::lexicon_scores(u, target, lexicon)).collect();
    let mut rows = Vec::new();
    for dim in Dimension::ALL {
        let column: Vec<f64> = scores.iter().map(|s| s.scores[&dim]).collect();
        match analysis::point_biserial(&column, &codes) {
            Ok(rp) => rows.push(analysis::CorrelationRow::new(dim.to_string(), target, users.len(), rp)),
            Err(analysis::AnalysisError::ConstantFeature) => {
                eprintln!("warning: {target}: {dim} is constant across users; row skipped");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}
