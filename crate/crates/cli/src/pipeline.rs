use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use salience_lab::analysis::{
    elbow_select, line_svg, minibatch_kmeans, pca_fit, profile_partitions, project, random_orthogonal, scatter_svg,
    silhouette, spearman, ElbowReport, KMeansModel, PartitionProfile, ProjectionModel, Series,
};
use salience_lab::features::{
    read_dataset, split_dataset, write_dataset, DatasetSplit, FeaturizedTrace, Target, BEHAVIOR_NAMES, TARGET_NAMES,
};
use salience_lab::models::{
    evaluate, extract_embedding, split_validation, train, write_eval_csv, EvalReport, MelchiorModel, ModelKind,
    Predictor, TdEnet, TdMlp, TrainedModel, TrainingHistory, VocabSizes,
};
use salience_lab::telemetry::{
    ingest_csv, read_latent_csv, simulate_population, write_latent_csv, write_telemetry_csv, GameSpec, PlayerTrace,
};
use salience_lab::tuning::{hyperband_run, make_schedule, save_trial_log, BracketSchedule, TrialResult};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Stage};

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Self {
        Layout {
            root: config.output_dir.clone(),
        }
    }

    pub fn telemetry(&self) -> PathBuf {
        self.root.join("telemetry.csv")
    }
    pub fn latent(&self) -> PathBuf {
        self.root.join("telemetry.latent.csv")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset")
    }
    pub fn model_stem(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(kind.name())
    }
    pub fn history(&self, kind: ModelKind) -> PathBuf {
        self.root.join("models").join(format!("{}.history.json", kind.name()))
    }
    pub fn trials(&self) -> PathBuf {
        self.root.join("tuning").join("trials.csv")
    }
    pub fn tuning_best(&self) -> PathBuf {
        self.root.join("tuning").join("best.json")
    }
    pub fn evaluation(&self) -> PathBuf {
        self.root.join("evaluation.csv")
    }
    pub fn evaluation_cells(&self, kind: ModelKind) -> PathBuf {
        self.root.join("evaluation").join(format!("{}_cells.csv", kind.name()))
    }
    pub fn embedding(&self) -> PathBuf {
        self.root.join("embedding.csv")
    }
    pub fn projection(&self) -> PathBuf {
        self.root.join("projection.json")
    }
    pub fn embedding_2d(&self) -> PathBuf {
        self.root.join("embedding_2d.csv")
    }
    pub fn clusters(&self) -> PathBuf {
        self.root.join("clusters.csv")
    }
    pub fn profiles(&self) -> PathBuf {
        self.root.join("profiles.json")
    }
    pub fn elbow(&self) -> PathBuf {
        self.root.join("elbow.json")
    }
    pub fn kmeans(&self) -> PathBuf {
        self.root.join("kmeans.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn summary(&self) -> PathBuf {
        self.report().join("summary.json")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    ensure_parent(path)?;
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_dataset(layout: &Layout) -> Result<DatasetSplit> {
    let dir = layout.dataset();
    read_dataset(&dir).with_context(|| format!("reading dataset {} (run `featurize` first)", dir.display()))
}

fn load_model(layout: &Layout, kind: ModelKind) -> Result<TrainedModel> {
    let stem = layout.model_stem(kind);
    TrainedModel::load(&stem)
        .with_context(|| format!("loading model {} (run `train --model {kind}` first)", stem.display()))
}

/// Simulates the configured population and writes the telemetry CSV and
/// its latent sidecar.
pub fn simulate(config: &RunConfig) -> Result<Vec<PlayerTrace>> {
    let layout = Layout::new(config);
    let traces = simulate_population(&config.population())?;
    let path = layout.telemetry();
    write_telemetry_csv(&traces, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    let path = layout.latent();
    write_latent_csv(&traces, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(traces)
}

/// Telemetry carries no completion flag; a trace counts as completed when
/// its session count equals its game's completion count.
pub fn mark_completion(traces: &mut [PlayerTrace], games: &[GameSpec]) {
    let goal: HashMap<&str, u32> = games
        .iter()
        .filter_map(|g| g.completion_sessions.map(|n| (g.game_id.as_str(), n)))
        .collect();
    for t in traces {
        if let Some(&n) = goal.get(t.game_id.as_str()) {
            t.completed = t.total_sessions == n as usize;
        }
    }
}

/// Builds the train/test dataset from `input` (default: the simulated
/// telemetry).
pub fn featurize(config: &RunConfig, input: Option<&Path>) -> Result<DatasetSplit> {
    let layout = Layout::new(config);
    let path = input.map_or_else(|| layout.telemetry(), Path::to_path_buf);
    let mut traces = ingest_csv(&path).with_context(|| format!("ingesting {}", path.display()))?;
    ensure!(!traces.is_empty(), "{}: no sessions", path.display());
    mark_completion(&mut traces, &config.simulate.games);
    let split = split_dataset(
        &traces,
        config.split.ratio,
        config.stage_seed(Stage::Split),
        config.observation_end(),
    )?;
    write_dataset(&layout.dataset(), &split)?;
    Ok(split)
}

/// Fits one estimator on the training split and saves it.
pub fn train_model(config: &RunConfig, kind: ModelKind) -> Result<(TrainedModel, Option<TrainingHistory>)> {
    let layout = Layout::new(config);
    let split = load_dataset(&layout)?;
    let vocab = VocabSizes::from_vocabs(&split.preprocessor.vocabs);
    let tc = config.train_config();
    let (model, history) = match kind {
        ModelKind::Enet => (
            TrainedModel::Enet(TdEnet::fit(&split.train, vocab, config.models.enet, tc.seed)?),
            None,
        ),
        ModelKind::Mlp => {
            let (fit, val) = split_validation(&split.train, tc.validation_fraction, tc.seed)?;
            let mut m = TdMlp::new(config.mlp_config(vocab), tc.seed)?;
            let h = train(&mut m, &fit, &val, &tc)?;
            (TrainedModel::Mlp(m), Some(h))
        }
        ModelKind::Melchior => {
            let (fit, val) = split_validation(&split.train, tc.validation_fraction, tc.seed)?;
            let mut m = MelchiorModel::new(config.melchior_config(vocab), tc.seed)?;
            let h = train(&mut m, &fit, &val, &tc)?;
            (TrainedModel::Melchior(m), Some(h))
        }
    };
    let stem = layout.model_stem(kind);
    ensure_parent(&stem)?;
    model.save(&stem, tc.seed)?;
    if let Some(h) = &history {
        write_json(&layout.history(kind), h)?;
    }
    Ok((model, history))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub model: ModelKind,
    pub schedule: BracketSchedule,
    pub best: TrialResult,
    pub trials: usize,
    pub diverged_seeds: Vec<u64>,
}

/// Hyperband search over the configured space; writes the trial log and
/// the winning configuration.
pub fn tune(config: &RunConfig) -> Result<TuneReport> {
    let layout = Layout::new(config);
    let split = load_dataset(&layout)?;
    let vocab = VocabSizes::from_vocabs(&split.preprocessor.vocabs);
    let schedule = make_schedule(config.tune.max_epochs, config.tune.eta)?;
    let outcome = hyperband_run(
        config.tune.model,
        &config.tune.space,
        &schedule,
        &split.train,
        vocab,
        &config.train_config(),
        config.stage_seed(Stage::Tune),
    )?;
    let path = layout.trials();
    ensure_parent(&path)?;
    save_trial_log(&path, &outcome.trials)?;
    let report = TuneReport {
        model: config.tune.model,
        schedule,
        best: outcome.best,
        trials: outcome.trials.len(),
        diverged_seeds: outcome.diverged,
    };
    write_json(&layout.tuning_best(), &report)?;
    Ok(report)
}

/// Test-split losses for every trained model found, in `ModelKind::ALL`
/// order.
pub fn evaluate_models(config: &RunConfig) -> Result<Vec<(ModelKind, EvalReport)>> {
    let layout = Layout::new(config);
    let split = load_dataset(&layout)?;
    let mut reports = Vec::new();
    for kind in ModelKind::ALL {
        if !layout.model_stem(kind).with_extension("json").exists() {
            continue;
        }
        let model = load_model(&layout, kind)?;
        let report = evaluate(&model, &split.test)?;
        let path = layout.evaluation_cells(kind);
        write_eval_csv(&report, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
        reports.push((kind, report));
    }
    if reports.is_empty() {
        bail!(
            "no trained models under {} (run `train` first)",
            layout.root.join("models").display()
        );
    }
    let path = layout.evaluation();
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "target", "loss"])?;
    for (kind, report) in &reports {
        for (k, name) in TARGET_NAMES.iter().enumerate() {
            w.write_record([kind.name(), name, &report.overall[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(reports)
}

/// Reads `evaluation.csv` back as per-model (ch, st, ss, ab) losses.
pub fn read_evaluation(path: &Path) -> Result<BTreeMap<String, [f64; 4]>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    for (line, row) in r.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        let k = TARGET_NAMES
            .iter()
            .position(|t| *t == &row[1])
            .with_context(|| format!("{}: row {}: unknown target `{}`", path.display(), line + 2, &row[1]))?;
        let loss: f64 = row[2]
            .parse()
            .with_context(|| format!("{}: row {}: loss", path.display(), line + 2))?;
        out.entry(row[0].to_string()).or_insert([f64::NAN; 4])[k] = loss;
    }
    Ok(out)
}

/// Final-session salience state of one held-out user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEmbedding {
    pub user_id: String,
    pub game_id: String,
    pub z: Vec<f64>,
}

fn raw_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-user medians of the observed (ch, st, ss, ab) in raw units; `ab`
/// only over steps where it is defined.
fn median_targets(trace: &FeaturizedTrace, split: &DatasetSplit) -> [Option<f64>; 4] {
    let raw: Vec<[f64; 4]> = trace
        .targets
        .iter()
        .map(|y| split.preprocessor.unscale_targets(y))
        .collect();
    std::array::from_fn(|k| {
        let mut v: Vec<f64> = (0..trace.len())
            .filter(|&t| trace.target_valid(t, k))
            .map(|t| raw[t][k])
            .collect();
        raw_median(&mut v)
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Extracts final-session salience states of the test users, fits the 2-D
/// projection, and writes `embedding.csv`, `projection.json` and
/// `embedding_2d.csv`.
pub fn embed(config: &RunConfig) -> Result<(Vec<UserEmbedding>, ProjectionModel)> {
    let layout = Layout::new(config);
    let split = load_dataset(&layout)?;
    let TrainedModel::Melchior(model) = load_model(&layout, ModelKind::Melchior)? else {
        bail!(
            "{}: not a melchior checkpoint",
            layout.model_stem(ModelKind::Melchior).display()
        );
    };
    let users: Vec<UserEmbedding> = extract_embedding(&model, &split.test)?
        .into_iter()
        .map(|e| UserEmbedding {
            z: e.final_state().to_vec(),
            user_id: e.user_id,
            game_id: e.game_id,
        })
        .collect();
    let d_z = model.d_z();
    let path = layout.embedding();
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["user_id".to_string(), "game_id".to_string()];
    header.extend((0..d_z).map(|i| format!("z{i}")));
    w.write_record(&header)?;
    for u in &users {
        let mut row = vec![u.user_id.clone(), u.game_id.clone()];
        row.extend(u.z.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;

    let vectors: Vec<Vec<f64>> = users.iter().map(|u| u.z.clone()).collect();
    let projection = pca_fit(&vectors).context("projecting the salience embedding")?;
    write_json(&layout.projection(), &projection)?;

    let path = layout.embedding_2d();
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header: Vec<String> = ["user_id", "x", "y", "game"].iter().map(|s| s.to_string()).collect();
    header.extend(TARGET_NAMES.iter().map(|t| format!("median_{t}")));
    w.write_record(&header)?;
    for (u, trace) in users.iter().zip(&split.test) {
        let [x, y] = projection.transform(&u.z)?;
        let mut row = vec![u.user_id.clone(), x.to_string(), y.to_string(), u.game_id.clone()];
        row.extend(median_targets(trace, &split).into_iter().map(opt));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok((users, projection))
}

/// Reads `embedding.csv`.
pub fn read_embedding(path: &Path) -> Result<Vec<UserEmbedding>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {} (run `embed` first)", path.display()))?;
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        ensure!(row.len() > 2, "{}: row {}: no z columns", path.display(), line + 2);
        let z = row
            .iter()
            .skip(2)
            .map(str::parse)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .with_context(|| format!("{}: row {}: z", path.display(), line + 2))?;
        out.push(UserEmbedding {
            user_id: row[0].to_string(),
            game_id: row[1].to_string(),
            z,
        });
    }
    Ok(out)
}

fn aligned_embedding(layout: &Layout, split: &DatasetSplit) -> Result<Vec<UserEmbedding>> {
    let users = read_embedding(&layout.embedding())?;
    ensure!(
        users.len() == split.test.len() && users.iter().zip(&split.test).all(|(u, t)| u.user_id == t.user_id),
        "{} does not match the test split; rerun `embed`",
        layout.embedding().display()
    );
    Ok(users)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub elbow: ElbowReport,
    pub model: KMeansModel,
    pub assignments: Vec<usize>,
    pub profile: PartitionProfile,
}

/// Chooses k by the elbow rule, partitions the final-session states with
/// mini-batch k-means, and profiles each cluster.
pub fn cluster(config: &RunConfig) -> Result<Clustering> {
    let layout = Layout::new(config);
    let split = load_dataset(&layout)?;
    let users = aligned_embedding(&layout, &split)?;
    let vectors: Vec<Vec<f64>> = users.iter().map(|u| u.z.clone()).collect();
    let seed = config.stage_seed(Stage::Cluster);
    let a = &config.analysis;
    let k_range: Vec<usize> = a.k_range.iter().copied().filter(|&k| k <= vectors.len()).collect();
    ensure!(
        !k_range.is_empty(),
        "analysis.k_range: every k exceeds the {} test users",
        vectors.len()
    );
    let elbow = elbow_select(&vectors, &k_range, seed)?;
    let model = minibatch_kmeans(&vectors, elbow.chosen_k, a.batch_size, a.iterations, seed)?;
    let assignments = model.predict(&vectors);
    let profile = profile_partitions(&assignments, &split.test, model.k, &split.preprocessor)?;

    let path = layout.clusters();
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["user_id", "cluster"])?;
    for (u, c) in users.iter().zip(&assignments) {
        w.write_record([u.user_id.as_str(), &c.to_string()])?;
    }
    w.flush()?;
    write_json(&layout.elbow(), &elbow)?;
    write_json(&layout.kmeans(), &model)?;
    write_json(&layout.profiles(), &profile)?;
    Ok(Clustering {
        elbow,
        model,
        assignments,
        profile,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceRecovery {
    pub users: usize,
    /// Rank correlation of true final salience with the predicted `ss` at
    /// the last observed session.
    pub spearman_predicted_ss: Option<f64>,
    /// Rank correlation of true final salience with the first principal
    /// coordinate of the final state (sign is arbitrary).
    pub spearman_pc1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    /// Silhouette of game labels on final-session states.
    pub silhouette_z: f64,
    /// Same labels on a random orthogonal 2-D projection of the final
    /// session's model inputs.
    pub silhouette_random_projection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileContrast {
    pub k: usize,
    pub highest_ss_cluster: usize,
    pub lowest_ss_cluster: usize,
    pub sessions: usize,
    /// Pooled means over session indices 1..=sessions, (highest, lowest).
    pub session_time: (f64, f64),
    pub delta_session: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub test_losses: BTreeMap<String, [f64; 4]>,
    /// Targets on which melchior <= mlp <= enet, when all three exist.
    pub ordering_targets: Option<usize>,
    pub salience_recovery: Option<SalienceRecovery>,
    pub separation: Separation,
    pub profile_contrast: Option<ProfileContrast>,
}

/// Scaled behaviour plus normalized context indices of the final session.
pub fn final_inputs(trace: &FeaturizedTrace, vocab: &VocabSizes) -> Vec<f64> {
    let t = trace.len() - 1;
    let sizes = [vocab.hour, vocab.weekday, vocab.yearday, vocab.region];
    let mut v = trace.behavior[t].to_vec();
    v.extend(trace.env[t].iter().zip(sizes).map(|(&i, n)| i as f64 / n as f64));
    v
}

/// Counts targets on which `melchior <= mlp <= enet`.
pub fn ordering_count(losses: &BTreeMap<String, [f64; 4]>) -> Option<usize> {
    let e = losses.get("enet")?;
    let m = losses.get("mlp")?;
    let r = losses.get("melchior")?;
    Some((0..4).filter(|&k| r[k] <= m[k] && m[k] <= e[k]).count())
}

const PROFILE_PLOT_SESSIONS: usize = 40;

/// Comparison table, 2-D embedding plots, cluster profile plots and a JSON
/// summary of the headline statistics.
pub fn report(config: &RunConfig) -> Result<ReportSummary> {
    let layout = Layout::new(config);
    let split = load_dataset(&layout)?;
    let dir = layout.report();
    let losses = read_evaluation(&layout.evaluation()).context("run `evaluate` first")?;

    let mut table = String::from("target,enet,mlp,melchior\n");
    for (k, name) in TARGET_NAMES.iter().enumerate() {
        let cell = |m: &str| losses.get(m).map(|l| l[k].to_string()).unwrap_or_default();
        table.push_str(&format!(
            "{name},{},{},{}\n",
            cell("enet"),
            cell("mlp"),
            cell("melchior")
        ));
    }
    write_text(&dir.join("comparison.csv"), &table)?;
    let series: Vec<Series> = losses
        .iter()
        .map(|(m, l)| Series {
            name: m.clone(),
            points: (0..4).map(|k| (k as f64, l[k])).collect(),
            band: None,
        })
        .collect();
    write_text(
        &dir.join("losses.svg"),
        &line_svg("Test loss by target (ch, st, ss, ab)", "target", "loss", &series),
    )?;

    let users = aligned_embedding(&layout, &split)?;
    let projection: ProjectionModel = read_json(&layout.projection())?;
    let points: Vec<[f64; 2]> = users
        .iter()
        .map(|u| projection.transform(&u.z))
        .collect::<salience_lab::Result<_>>()?;
    let game_names = split.preprocessor.vocabs.game.tokens().to_vec();
    let games: Vec<usize> = split.test.iter().map(|t| t.game_idx).collect();
    write_text(
        &dir.join("embedding_by_game.svg"),
        &scatter_svg("Final salience state by game", &points, &games, &game_names),
    )?;

    let vectors: Vec<Vec<f64>> = users.iter().map(|u| u.z.clone()).collect();
    let seed = config.stage_seed(Stage::Cluster);
    let cap = config.analysis.silhouette_sample;
    let vocab = VocabSizes::from_vocabs(&split.preprocessor.vocabs);
    let raw: Vec<Vec<f64>> = split.test.iter().map(|t| final_inputs(t, &vocab)).collect();
    let basis = random_orthogonal(raw[0].len(), 2, seed)?;
    let separation = Separation {
        silhouette_z: silhouette(&vectors, &games, cap, seed)?,
        silhouette_random_projection: silhouette(&project(&raw, &basis), &games, cap, seed)?,
    };

    let latent = layout.latent();
    let salience_recovery = if latent.exists() {
        let truth = read_latent_csv(&latent)?;
        let model = load_model(&layout, ModelKind::Melchior)?;
        let mut y = Vec::new();
        let mut ss = Vec::new();
        let mut pc1 = Vec::new();
        for (trace, p) in split.test.iter().zip(&points) {
            let Some(last) = truth.get(&trace.user_id).and_then(|s| s.last()) else {
                continue;
            };
            y.push(last.salience);
            ss.push(model.predict(trace)?.last().expect("non-empty trace")[Target::SurvivalSessions as usize]);
            pc1.push(p[0]);
        }
        Some(SalienceRecovery {
            users: y.len(),
            spearman_predicted_ss: spearman(&ss, &y),
            spearman_pc1: spearman(&pc1, &y),
        })
    } else {
        None
    };

    let profile_contrast = if layout.profiles().exists() {
        let profile: PartitionProfile = read_json(&layout.profiles())?;
        let assignments = read_clusters(&layout.clusters(), &users)?;
        let names: Vec<String> = (0..profile.k).map(|c| format!("cluster {c}")).collect();
        write_text(
            &dir.join("embedding_by_cluster.svg"),
            &scatter_svg("Final salience state by cluster", &points, &assignments, &names),
        )?;
        for (j, metric) in BEHAVIOR_NAMES.iter().enumerate() {
            let series: Vec<Series> = profile
                .clusters
                .iter()
                .map(|c| {
                    let rows = c.sessions.iter().take(PROFILE_PLOT_SESSIONS);
                    Series {
                        name: format!("cluster {} (n={})", c.cluster, c.count),
                        points: rows
                            .clone()
                            .map(|s| (s.session_index as f64, s.metrics[j].mean))
                            .collect(),
                        band: Some(rows.map(|s| (s.metrics[j].ci_low, s.metrics[j].ci_high)).collect()),
                    }
                })
                .collect();
            write_text(
                &dir.join(format!("profile_{metric}.svg")),
                &line_svg(&format!("{metric} by session index"), "session index", metric, &series),
            )?;
        }
        let n = config.analysis.profile_sessions;
        profile
            .extreme_clusters(Target::SurvivalSessions as usize)
            .and_then(|(hi, lo)| {
                let mean = |c: usize, j: usize| profile.clusters[c].early_mean(j, n);
                Some(ProfileContrast {
                    k: profile.k,
                    highest_ss_cluster: hi,
                    lowest_ss_cluster: lo,
                    sessions: n,
                    session_time: (mean(hi, 0)?, mean(lo, 0)?),
                    delta_session: (mean(hi, 2)?, mean(lo, 2)?),
                })
            })
    } else {
        None
    };

    let summary = ReportSummary {
        ordering_targets: ordering_count(&losses),
        test_losses: losses,
        salience_recovery,
        separation,
        profile_contrast,
    };
    write_json(&layout.summary(), &summary)?;
    Ok(summary)
}

fn read_clusters(path: &Path, users: &[UserEmbedding]) -> Result<Vec<usize>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {} (run `cluster` first)", path.display()))?;
    let mut out = Vec::with_capacity(users.len());
    for (row, u) in r.records().zip(users) {
        let row = row.with_context(|| format!("reading {}", path.display()))?;
        ensure!(
            row[0] == u.user_id,
            "{}: user order differs from embedding.csv",
            path.display()
        );
        out.push(row[1].parse().with_context(|| format!("{}: cluster", path.display()))?);
    }
    ensure!(
        out.len() == users.len(),
        "{}: expected {} rows",
        path.display(),
        users.len()
    );
    Ok(out)
}

/// Every stage except tuning, in order.
pub fn run_all(config: &RunConfig) -> Result<ReportSummary> {
    simulate(config)?;
    featurize(config, None)?;
    for kind in ModelKind::ALL {
        train_model(config, kind)?;
    }
    evaluate_models(config)?;
    embed(config)?;
    cluster(config)?;
    report(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_follows_session_count() {
        let games = vec![GameSpec {
            game_id: "g".into(),
            base_quality: 0.5,
            quality_drift: 0.0,
            completion_sessions: Some(2),
            noise_sd: 0.0,
        }];
        let mut traces = vec![
            PlayerTrace::new("a", "g", vec![], false),
            PlayerTrace::new("b", "other", vec![], false),
        ];
        traces[0].total_sessions = 2;
        traces[1].total_sessions = 2;
        mark_completion(&mut traces, &games);
        assert!(traces[0].completed);
        assert!(!traces[1].completed);
    }

    #[test]
    fn ordering_needs_all_three_models() {
        let mut l = BTreeMap::new();
        l.insert("enet".to_string(), [3.0, 3.0, 1.0, 3.0]);
        l.insert("mlp".to_string(), [2.0, 2.0, 2.0, 2.0]);
        assert_eq!(ordering_count(&l), None);
        l.insert("melchior".to_string(), [1.0, 2.0, 1.0, 2.5]);
        assert_eq!(ordering_count(&l), Some(2));
    }

    #[test]
    fn median_of_even_count_averages() {
        assert_eq!(raw_median(&mut [3.0, 1.0, 2.0, 10.0]), Some(2.5));
        assert_eq!(raw_median(&mut []), None);
    }
}
