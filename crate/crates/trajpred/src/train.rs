//! Run orchestration: data preparation, the training loop, evaluation, and
//! the two-mode comparison. All artifacts embed the full run configuration
//! and the crate version, and a fixed seed makes every byte reproducible.

use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, ScoreTable};
use crate::checkpoint::{self, CheckpointHeader};
use crate::config::RunConfig;
use crate::dataset::{self, SequenceSample, Split, OBS_LEN, PRED_LEN};
use crate::error::{Error, Result};
use crate::metrics::{DatasetMetrics, MetricAccumulator, MetricsReport};
use crate::model::{Mode, Predictor};
use crate::optim::{ParamStore, RmspropConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn artifact_header(config: &RunConfig) -> String {
    format!("# trajpred {VERSION}\n# {}\n", config.header_line())
}

fn out_path(config: &RunConfig, suffix: &str) -> PathBuf {
    Path::new(&config.out).join(format!(
        "{}_{}{suffix}",
        config.dataset.to_ascii_lowercase(),
        config.mode
    ))
}

/// Samples and split indices for one dataset under one configuration.
pub struct PreparedData {
    pub points: Vec<dataset::TrackPoint>,
    pub samples: Vec<SequenceSample>,
    pub split: Split,
}

/// Parses the annotation file named by the config and windows/splits it.
pub fn prepare_data(config: &RunConfig) -> Result<PreparedData> {
    config.validate()?;
    let path = config
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no data file configured (set data=... or --data)".into()))?;
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open data file {path}: {e}")))?;
    let points = dataset::parse_dataset(BufReader::new(file), config.columns)?;
    let samples = dataset::build_sequences(
        &points,
        OBS_LEN,
        PRED_LEN,
        config.stride,
        config.frame_period,
    )?;
    let split = dataset::split_dataset(samples.len(), config.fractions, config.seed)?;
    Ok(PreparedData {
        points,
        samples,
        split,
    })
}

/// `prepare` artifact emission: the normalized annotation file and the split
/// manifest (window start frames per split).
pub fn prepare(config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let data = prepare_data(config)?;
    fs::create_dir_all(&config.out)?;
    let stem = config.dataset.to_ascii_lowercase();

    let normalized = Path::new(&config.out).join(format!("{stem}_normalized.txt"));
    let mut text = artifact_header(config);
    text.push_str(&dataset::write_points(&data.points));
    fs::write(&normalized, text)?;

    let manifest = Path::new(&config.out).join(format!("{stem}_splits.txt"));
    let mut text = artifact_header(config);
    text.push_str("# split window_start_frame\n");
    for (name, indices) in [
        ("train", &data.split.train),
        ("val", &data.split.val),
        ("test", &data.split.test),
    ] {
        let mut starts: Vec<i64> = indices
            .iter()
            .map(|&i| data.samples[i].start_frame())
            .collect();
        starts.sort_unstable();
        for s in starts {
            text.push_str(&format!("{name} {s}\n"));
        }
    }
    fs::write(&manifest, text)?;
    Ok((normalized, manifest))
}

/// Debug dump of every pedestrian's local map at every annotated frame,
/// one CSV row per map.
pub fn dump_local_maps(config: &RunConfig) -> Result<PathBuf> {
    let path = config
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no data file configured".into()))?;
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open data file {path}: {e}")))?;
    let points = dataset::parse_dataset(BufReader::new(file), config.columns)?;
    let by_frame = dataset::frame_states(&points, config.frame_period)?;

    fs::create_dir_all(&config.out)?;
    let out = Path::new(&config.out).join(format!(
        "{}_localmaps.csv",
        config.dataset.to_ascii_lowercase()
    ));
    let mut text = artifact_header(config);
    text.push_str("frame,ped_id");
    for ix in 0..crate::localmap::MAP_GRID {
        for iy in 0..crate::localmap::MAP_GRID {
            for ch in ["occ", "vx", "vy"] {
                text.push_str(&format!(",c{ix}{iy}_{ch}"));
            }
        }
    }
    text.push('\n');
    for (frame, states) in &by_frame {
        for (i, (ped, pos, vel)) in states.iter().enumerate() {
            let target = crate::localmap::AgentState::new(*pos, *vel);
            let others: Vec<crate::localmap::AgentState<f64>> = states
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != i)
                .map(|(_, (_, p, v))| crate::localmap::AgentState::new(*p, *v))
                .collect();
            let (map, _) = crate::localmap::build_local_map(&target, &others);
            text.push_str(&format!("{frame},{ped}"));
            for v in &map.cells {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
    }
    fs::write(&out, text)?;
    Ok(out)
}

fn load_frozen_scores(config: &RunConfig) -> Result<Option<ScoreTable>> {
    match &config.scores_file {
        None => Ok(None),
        Some(path) => {
            let file = fs::File::open(path)
                .map_err(|e| Error::Data(format!("cannot open scores file {path}: {e}")))?;
            Ok(Some(attention::load_scores(
                BufReader::new(file),
                &config.dataset,
            )?))
        }
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_ade: f64,
    pub val_fde: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub rows: Vec<EpochRow>,
    pub best_val_loss: f64,
}

/// Trains per the configuration and retains the best-validation checkpoint.
/// With `epochs = 0` the initial parameters are checkpointed and the curve
/// is empty.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let data = prepare_data(config)?;
    if data.split.train.is_empty() {
        return Err(Error::Data(format!(
            "training split is empty ({} samples total)",
            data.samples.len()
        )));
    }
    if config.epochs > 0 && data.split.val.is_empty() {
        return Err(Error::Data(
            "validation split is empty; widen the validation fraction".into(),
        ));
    }
    let frozen = load_frozen_scores(config)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut model = Predictor::register(
        &mut store,
        config.mode,
        config.dropout,
        config.frame_period,
        &mut rng,
    )?;
    model.use_crowd_feature = config.crowd_feature;

    let opt = RmspropConfig {
        lr: config.lr,
        decay: config.rmsprop_decay,
        eps: config.rmsprop_eps,
    };

    let mut best = store.clone();
    let mut best_val = f64::INFINITY;
    let mut rows = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // Seeded in-place shuffle of the training order.
        let mut order = data.split.train.clone();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut train_loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            for &idx in batch {
                let sample = &data.samples[idx];
                let run = model
                    .forward_sample(&store, sample, true, Some(&mut rng), frozen.as_ref())
                    .map_err(|e| {
                        Error::Diverged(format!(
                            "epoch {epoch}, batch {batch_no}, sample {}: {e}",
                            sample.start_frame()
                        ))
                    })?;
                train_loss_sum += run.loss;
                model.backward_sample(&mut store, sample, &run)?;
            }
            store.scale_grads(1.0 / batch.len() as f64);
            store.clip_grad_norm(config.clip_norm);
            store.rmsprop_step(&opt).map_err(|e| {
                Error::Diverged(format!("epoch {epoch}, batch {batch_no}: {e}"))
            })?;
        }
        let train_loss = train_loss_sum / order.len() as f64;

        let mut val_loss_sum = 0.0;
        let mut acc = MetricAccumulator::default();
        for &idx in &data.split.val {
            let sample = &data.samples[idx];
            let run = model.forward_sample(&store, sample, false, None, frozen.as_ref())?;
            val_loss_sum += run.loss;
            accumulate_rollout(&mut acc, sample, &run.predictions)?;
        }
        let val_loss = val_loss_sum / data.split.val.len() as f64;
        let (val_ade, val_fde) = acc.finish()?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged(format!(
                "epoch {epoch}: train {train_loss}, val {val_loss}"
            )));
        }

        if val_loss < best_val {
            best_val = val_loss;
            best = store.clone();
        }
        rows.push(EpochRow {
            epoch,
            train_loss,
            val_loss,
            val_ade,
            val_fde,
        });
    }

    fs::create_dir_all(&config.out)?;
    let curve = out_path(config, "_loss.csv");
    let mut text = artifact_header(config);
    text.push_str("epoch,train_loss,val_loss,val_ade,val_fde\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_ade, r.val_fde
        ));
    }
    fs::write(&curve, text)?;

    let ckpt = out_path(config, ".ckpt");
    checkpoint::save(&ckpt, &best, config)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        curve,
        rows,
        best_val_loss: best_val,
    })
}

/// Feeds one sample's rollout into the metric accumulator, pedestrian by
/// pedestrian against the ground-truth prediction horizon.
fn accumulate_rollout(
    acc: &mut MetricAccumulator,
    sample: &SequenceSample,
    predictions: &[Vec<[f64; 2]>],
) -> Result<()> {
    for (p, pred) in predictions.iter().enumerate() {
        let truth: Vec<[f64; 2]> = sample.positions[p][OBS_LEN..].to_vec();
        acc.add(pred, &truth)?;
    }
    Ok(())
}

/// Evaluation of one checkpoint over its test split. Overrides exist so a
/// moved data file or a mode flip (for strict-superset checks) can be
/// applied without retraining.
#[derive(Debug, Default, Clone)]
pub struct EvalOverrides {
    pub data: Option<String>,
    pub mode: Option<Mode>,
    pub out: Option<String>,
    pub scores_file: Option<Option<String>>,
    /// Also write the per-cell social tensor norms of every test rollout.
    pub dump_social_norms: bool,
    /// Draw rollout positions from each step's Gaussian (seeded) instead of
    /// feeding back the mean.
    pub sample_seed: Option<u64>,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub metrics: DatasetMetrics,
    pub config: RunConfig,
    pub metrics_csv: PathBuf,
    pub predictions_csv: PathBuf,
}

pub fn evaluate(ckpt_path: &Path, overrides: &EvalOverrides) -> Result<EvalOutcome> {
    let (store, header) = checkpoint::load(ckpt_path)?;
    let mut config = header.config.clone();
    if let Some(d) = &overrides.data {
        config.data = Some(d.clone());
    }
    if let Some(m) = overrides.mode {
        config.mode = m;
    }
    if let Some(o) = &overrides.out {
        config.out = o.clone();
    }
    if let Some(s) = &overrides.scores_file {
        config.scores_file = s.clone();
    }

    let data = prepare_data(&config)?;
    if data.split.test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let (metrics, records) = evaluate_on(
        &store,
        &config,
        &data.samples,
        &data.split.test,
        overrides.sample_seed,
    )?;

    fs::create_dir_all(&config.out)?;
    let metrics_csv = out_path(&config, "_metrics.csv");
    let mut text = artifact_header(&config);
    text.push_str("dataset,mode,ade,fde,n_trajectories\n");
    text.push_str(&format!(
        "{},{},{},{},{}\n",
        metrics.dataset, config.mode, metrics.ade, metrics.fde, metrics.n_trajectories
    ));
    fs::write(&metrics_csv, text)?;

    let predictions_csv = out_path(&config, "_predictions.csv");
    let mut text = artifact_header(&config);
    text.push_str("dataset,sample_id,ped_id,frame,pred_x,pred_y,gt_x,gt_y\n");
    for r in &records {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            config.dataset, r.sample_id, r.ped, r.frame, r.pred[0], r.pred[1], r.gt[0], r.gt[1]
        ));
    }
    fs::write(&predictions_csv, text)?;

    if overrides.dump_social_norms {
        dump_social_norms(&store, &config, &data)?;
    }

    Ok(EvalOutcome {
        metrics,
        config,
        metrics_csv,
        predictions_csv,
    })
}

/// Per-cell social-tensor norms over every test rollout (debug dump).
fn dump_social_norms(
    store: &ParamStore<f64>,
    config: &RunConfig,
    data: &PreparedData,
) -> Result<PathBuf> {
    let mut model = Predictor::resolve(store, config.mode, config.dropout, config.frame_period)?;
    model.use_crowd_feature = config.crowd_feature;
    let frozen = load_frozen_scores(config)?;
    let out = out_path(config, "_social_norms.csv");
    let mut text = artifact_header(config);
    text.push_str("sample_id,frame,ped_id,cell_x,cell_y,norm\n");
    for &idx in &data.split.test {
        let sample = &data.samples[idx];
        let run = model.forward_sample(store, sample, false, None, frozen.as_ref())?;
        for (t, ped, norms) in run.social_cell_norms() {
            for (c, norm) in norms.iter().enumerate() {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    sample.start_frame(),
                    sample.frames[t],
                    sample.peds[ped],
                    c / crate::social::COARSE_N,
                    c % crate::social::COARSE_N,
                    norm
                ));
            }
        }
    }
    fs::write(&out, text)?;
    Ok(out)
}

struct PredRecord {
    sample_id: i64,
    ped: i64,
    frame: i64,
    pred: [f64; 2],
    gt: [f64; 2],
}

/// Rolls out every listed sample and aggregates ADE/FDE over pedestrians.
/// `sample_seed` switches from mean feedback to seeded Gaussian draws.
fn evaluate_on(
    store: &ParamStore<f64>,
    config: &RunConfig,
    samples: &[SequenceSample],
    indices: &[usize],
    sample_seed: Option<u64>,
) -> Result<(DatasetMetrics, Vec<PredRecord>)> {
    let mut model = Predictor::resolve(store, config.mode, config.dropout, config.frame_period)?;
    model.use_crowd_feature = config.crowd_feature;
    let frozen = load_frozen_scores(config)?;
    let mut draw_rng = sample_seed.map(ChaCha8Rng::seed_from_u64);

    let mut acc = MetricAccumulator::default();
    let mut records = Vec::new();
    for &idx in indices {
        let sample = &samples[idx];
        let predictions = model.rollout(
            store,
            sample,
            frozen.as_ref(),
            draw_rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
        )?;
        accumulate_rollout(&mut acc, sample, &predictions)?;
        for (p, pred) in predictions.iter().enumerate() {
            for (k, pos) in pred.iter().enumerate() {
                let t = OBS_LEN + k;
                records.push(PredRecord {
                    sample_id: sample.start_frame(),
                    ped: sample.peds[p],
                    frame: sample.frames[t],
                    pred: *pos,
                    gt: sample.positions[p][t],
                });
            }
        }
    }
    let (ade, fde) = acc.finish()?;
    Ok((
        DatasetMetrics {
            dataset: config.dataset.clone(),
            ade,
            fde,
            n_trajectories: acc.count(),
        },
        records,
    ))
}

#[derive(Debug)]
pub struct CompareOutcome {
    pub report: MetricsReport,
    pub table: String,
    pub csv: PathBuf,
}

/// Side-by-side evaluation of matched (social baseline, attention) runs.
/// Each pair must have been trained over the identical split.
pub fn compare(pairs: &[(PathBuf, PathBuf)], out_dir: &Path) -> Result<CompareOutcome> {
    if pairs.is_empty() {
        return Err(Error::Config("compare needs at least one checkpoint pair".into()));
    }
    let mut rows = Vec::new();
    let mut header_lines = Vec::new();
    for (social_path, attention_path) in pairs {
        let (social_store, social_hdr) = checkpoint::load(social_path)?;
        let (att_store, att_hdr) = checkpoint::load(attention_path)?;
        check_pair(&social_hdr, &att_hdr, social_path, attention_path)?;

        let data = prepare_data(&social_hdr.config)?;
        if data.split.test.is_empty() {
            return Err(Error::Data(format!(
                "test split of {} is empty",
                social_hdr.config.dataset
            )));
        }
        let (base, _) = evaluate_on(
            &social_store,
            &social_hdr.config,
            &data.samples,
            &data.split.test,
            None,
        )?;
        let (ours, _) = evaluate_on(
            &att_store,
            &att_hdr.config,
            &data.samples,
            &data.split.test,
            None,
        )?;
        header_lines.push(format!("# {}", social_hdr.config.header_line()));
        header_lines.push(format!("# {}", att_hdr.config.header_line()));
        rows.push((base, ours));
    }
    let report = MetricsReport::new(rows)?;
    let table = report.render();

    fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("compare_metrics.csv");
    let mut text = format!("# trajpred {VERSION}\n");
    for line in &header_lines {
        text.push_str(line);
        text.push('\n');
    }
    text.push_str("dataset,social_ade,attention_ade,social_fde,attention_fde,ade_improvement,fde_improvement\n");
    let mut emit = |name: &str, b: &DatasetMetrics, o: &DatasetMetrics| {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            name,
            b.ade,
            o.ade,
            b.fde,
            o.fde,
            crate::metrics::improvement(b.ade, o.ade),
            crate::metrics::improvement(b.fde, o.fde),
        ));
    };
    for (name, b, o) in &report.rows {
        emit(name, b, o);
    }
    let (avg_b, avg_o) = report.averages();
    emit("Average", &avg_b, &avg_o);
    fs::write(&csv, text)?;

    Ok(CompareOutcome { report, table, csv })
}

fn check_pair(
    social: &CheckpointHeader,
    attention: &CheckpointHeader,
    social_path: &Path,
    attention_path: &Path,
) -> Result<()> {
    if social.config.mode != Mode::SocialOnly {
        return Err(Error::Config(format!(
            "{} was trained in {} mode, expected social",
            social_path.display(),
            social.config.mode
        )));
    }
    if attention.config.mode != Mode::Attention {
        return Err(Error::Config(format!(
            "{} was trained in {} mode, expected attention",
            attention_path.display(),
            attention.config.mode
        )));
    }
    if !social.config.same_split(&attention.config) {
        return Err(Error::SplitMismatch(format!(
            "{} and {} were trained over different splits; the comparison would be invalid",
            social_path.display(),
            attention_path.display()
        )));
    }
    Ok(())
}

/// Computes attention scores for every (frame, target, neighbor) triple of
/// the raw dataset using a trained checkpoint, and writes the scores file.
pub fn dump_scores(ckpt_path: &Path, overrides: &EvalOverrides) -> Result<PathBuf> {
    let (store, header) = checkpoint::load(ckpt_path)?;
    let mut config = header.config.clone();
    if let Some(d) = &overrides.data {
        config.data = Some(d.clone());
    }
    if let Some(o) = &overrides.out {
        config.out = o.clone();
    }
    let model = Predictor::resolve(&store, Mode::Attention, config.dropout, config.frame_period)?;

    let path = config
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no data file configured".into()))?;
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open data file {path}: {e}")))?;
    let points = dataset::parse_dataset(BufReader::new(file), config.columns)?;
    let by_frame = dataset::frame_states(&points, config.frame_period)?;

    let mut records = Vec::new();
    for (frame, states) in &by_frame {
        if states.len() < 2 {
            continue;
        }
        for (i, (target_ped, tpos, tvel)) in states.iter().enumerate() {
            let target = crate::localmap::AgentState::new(*tpos, *tvel);
            let mut neighbors = Vec::with_capacity(states.len() - 1);
            for (j, (ped, pos, vel)) in states.iter().enumerate() {
                if i == j {
                    continue;
                }
                let state = crate::localmap::AgentState::new(*pos, *vel);
                let others: Vec<crate::localmap::AgentState<f64>> = states
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, (_, p, v))| crate::localmap::AgentState::new(*p, *v))
                    .collect();
                let (map, _) = crate::localmap::build_local_map(&state, &others);
                neighbors.push(attention::NeighborInput {
                    ped: *ped,
                    state,
                    map,
                });
            }
            let scores = attention::score_neighbors(
                *target_ped,
                &target,
                &neighbors,
                &store,
                model.attention_net(),
            )?;
            for (ped, w) in scores.neighbors.iter().zip(&scores.weights) {
                records.push((*frame, *target_ped, *ped, *w));
            }
        }
    }

    fs::create_dir_all(&config.out)?;
    let out = Path::new(&config.out).join(format!(
        "{}_scores.txt",
        config.dataset.to_ascii_lowercase()
    ));
    let mut buf = Vec::new();
    attention::write_scores(&mut buf, &config.dataset, &records)?;
    let mut file = fs::File::create(&out)?;
    file.write_all(artifact_header(&config).as_bytes())?;
    file.write_all(&buf)?;
    Ok(out)
}
