//! End-to-end flows: training sanity, degenerate configs, the zero-model
//! metric oracle, and every CLI subcommand over a small synthetic dataset.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use trajpred::checkpoint;
use trajpred::cli;
use trajpred::config::RunConfig;
use trajpred::dataset::{self, OBS_LEN};
use trajpred::model::{Mode, Predictor};
use trajpred::optim::ParamStore;
use trajpred::synth::{self, SynthConfig};
use trajpred::train;

fn synth_file(dir: &Path, cfg: &SynthConfig) -> PathBuf {
    let points = synth::constant_velocity_tracks(cfg);
    let path = dir.join("synth.txt");
    std::fs::write(&path, dataset::write_points(&points)).unwrap();
    path
}

fn small_cfg() -> SynthConfig {
    SynthConfig {
        n_scenes: 6,
        track_len: 50,
        speed: (0.12, 0.4),
        ..SynthConfig::default()
    }
}

fn base_config(dir: &Path, data: &Path) -> RunConfig {
    let mut config = RunConfig::default();
    config.dataset = "SYNTH".into();
    config.data = Some(data.to_string_lossy().into_owned());
    config.out = dir.join("out").to_string_lossy().into_owned();
    config
}

#[test]
fn five_epoch_training_sanity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        track_len: 310,
        speed: (0.12, 0.4),
        ..SynthConfig::default()
    };
    let data = synth_file(dir.path(), &cfg);
    let mut config = base_config(dir.path(), &data);
    config.epochs = 5;
    let outcome = train::train(&config).unwrap();
    assert_eq!(outcome.rows.len(), 5);
    for w in outcome.rows.windows(2) {
        assert!(
            w[1].train_loss < w[0].train_loss,
            "train loss rose: {} -> {}",
            w[0].train_loss,
            w[1].train_loss
        );
        assert!(
            w[1].val_loss < w[0].val_loss,
            "validation loss rose: {} -> {}",
            w[0].val_loss,
            w[1].val_loss
        );
    }
    // The curve artifact carries the header and one row per epoch.
    let curve = std::fs::read_to_string(&outcome.curve).unwrap();
    assert!(curve.starts_with("# trajpred"));
    assert!(curve.contains(&config.header_line()));
    assert_eq!(curve.lines().filter(|l| !l.starts_with('#')).count(), 6); // column row + 5
}

#[test]
fn zero_epochs_checkpoints_initial_params() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());
    let mut config = base_config(dir.path(), &data);
    config.epochs = 0;
    let outcome = train::train(&config).unwrap();
    assert!(outcome.rows.is_empty());
    let curve = std::fs::read_to_string(&outcome.curve).unwrap();
    assert_eq!(
        curve.lines().filter(|l| !l.starts_with('#')).count(),
        1,
        "expected only the column header"
    );

    // The checkpoint must hold exactly the seed-initialized parameters.
    let (loaded, _) = checkpoint::load(&outcome.checkpoint).unwrap();
    let mut fresh = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Predictor::register(&mut fresh, config.mode, config.dropout, config.frame_period, &mut rng)
        .unwrap();
    assert_eq!(fresh.len(), loaded.len());
    for id in fresh.ids() {
        let other = loaded.id(fresh.name(id)).unwrap();
        assert_eq!(fresh.value(id).values(), loaded.value(other).values());
    }
}

#[test]
fn zero_model_eval_matches_displacement_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());
    let mut config = base_config(dir.path(), &data);
    config.epochs = 0;

    // A checkpoint with every parameter zeroed predicts each pedestrian's
    // anchor (its first observed position) at every horizon frame.
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Predictor::register(&mut store, config.mode, config.dropout, config.frame_period, &mut rng)
        .unwrap();
    for id in store.ids() {
        store.value_mut(id).fill(0.0);
    }
    let ckpt = dir.path().join("zero.ckpt");
    checkpoint::save(&ckpt, &store, &config).unwrap();

    let eval = train::evaluate(&ckpt, &train::EvalOverrides::default()).unwrap();

    // Brute-force oracle straight from the windowed data.
    let prepared = train::prepare_data(&config).unwrap();
    let mut sum_ade = 0.0;
    let mut sum_fde = 0.0;
    let mut count = 0usize;
    for &idx in &prepared.split.test {
        let sample = &prepared.samples[idx];
        for track in &sample.positions {
            let anchor = track[0];
            let horizon = &track[OBS_LEN..];
            let mut acc = 0.0;
            for p in horizon {
                acc += ((p[0] - anchor[0]).powi(2) + (p[1] - anchor[1]).powi(2)).sqrt();
            }
            sum_ade += acc / horizon.len() as f64;
            let last = horizon.last().unwrap();
            sum_fde += ((last[0] - anchor[0]).powi(2) + (last[1] - anchor[1]).powi(2)).sqrt();
            count += 1;
        }
    }
    assert!((eval.metrics.ade - sum_ade / count as f64).abs() < 1e-12);
    assert!((eval.metrics.fde - sum_fde / count as f64).abs() < 1e-12);
    assert_eq!(eval.metrics.n_trajectories, count);
}

#[test]
fn training_divergence_aborts_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());
    let mut config = base_config(dir.path(), &data);
    config.epochs = 2;
    config.lr = 1e9; // guaranteed blow-up
    let err = train::train(&config).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("epoch"), "no context in {msg}");
}

fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["trajpred"];
    full.extend_from_slice(args);
    cli::run(full)
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());
    let data_s = data.to_string_lossy();
    let out = dir.path().join("out");
    let out_s = out.to_string_lossy();

    // prepare (with the local-map debug dump)
    assert_eq!(
        run_cli(&[
            "prepare", "--dataset", "SYNTH", "--data", &data_s, "--out", &out_s, "--dump-maps",
        ]),
        0
    );
    let normalized = out.join("synth_normalized.txt");
    let manifest = out.join("synth_splits.txt");
    assert!(normalized.exists() && manifest.exists());
    let maps = std::fs::read_to_string(out.join("synth_localmaps.csv")).unwrap();
    assert!(maps.lines().any(|l| l.starts_with("frame,ped_id,c00_occ")));
    let manifest_text = std::fs::read_to_string(&manifest).unwrap();
    assert!(manifest_text.lines().any(|l| l.starts_with("train ")));
    assert!(manifest_text.lines().any(|l| l.starts_with("test ")));
    // The normalized file re-parses to the same rows it was written from.
    let reparsed = dataset::parse_dataset(
        std::io::BufReader::new(std::fs::File::open(&normalized).unwrap()),
        dataset::ColumnOrder::FramePedXY,
    )
    .unwrap();
    assert_eq!(reparsed, synth::constant_velocity_tracks(&small_cfg()));

    // train, both modes
    for mode in ["attention", "social"] {
        assert_eq!(
            run_cli(&[
                "train", "--dataset", "SYNTH", "--data", &data_s, "--mode", mode, "--epochs",
                "2", "--out", &out_s,
            ]),
            0,
            "training {mode} failed"
        );
    }
    let att_ckpt = out.join("synth_attention.ckpt");
    let soc_ckpt = out.join("synth_social.ckpt");
    assert!(att_ckpt.exists() && soc_ckpt.exists());

    // eval (with the social-norm debug dump)
    let att_s = att_ckpt.to_string_lossy();
    let soc_s = soc_ckpt.to_string_lossy();
    assert_eq!(run_cli(&["eval", "--checkpoint", &att_s, "--dump-social-norms"]), 0);
    assert!(out.join("synth_attention_metrics.csv").exists());
    let norms = std::fs::read_to_string(out.join("synth_attention_social_norms.csv")).unwrap();
    assert!(norms.lines().any(|l| l.starts_with("sample_id,frame,ped_id")));
    let preds = std::fs::read_to_string(out.join("synth_attention_predictions.csv")).unwrap();
    assert!(preds
        .lines()
        .any(|l| l.starts_with("dataset,sample_id,ped_id,frame")));
    assert!(preds.lines().filter(|l| !l.starts_with('#')).count() > 12);

    // eval with a mode override (superset path), and a stochastic rollout
    assert_eq!(run_cli(&["eval", "--checkpoint", &att_s, "--mode", "social"]), 0);
    assert_eq!(run_cli(&["eval", "--checkpoint", &att_s, "--sample", "7"]), 0);

    // compare
    assert_eq!(
        run_cli(&["compare", "--social", &soc_s, "--attention", &att_s, "--out", &out_s]),
        0
    );
    let compare_csv = std::fs::read_to_string(out.join("compare_metrics.csv")).unwrap();
    assert!(compare_csv.lines().any(|l| l.starts_with("SYNTH,")));
    assert!(compare_csv.lines().any(|l| l.starts_with("Average,")));

    // dump-scores, then consume the frozen scores end to end
    assert_eq!(run_cli(&["dump-scores", "--checkpoint", &att_s]), 0);
    let scores = out.join("synth_scores.txt");
    assert!(scores.exists());
    let scores_s = scores.to_string_lossy();
    assert_eq!(
        run_cli(&["eval", "--checkpoint", &att_s, "--scores-file", &scores_s]),
        0
    );
    let frozen_out = dir.path().join("frozen");
    assert_eq!(
        run_cli(&[
            "train", "--dataset", "SYNTH", "--data", &data_s, "--epochs", "1", "--scores-file",
            &scores_s, "--out", &frozen_out.to_string_lossy(),
        ]),
        0
    );

    // swapped-pair flag counts are rejected
    assert_eq!(run_cli(&["compare", "--social", &soc_s, "--out", &out_s]), 2);
}

#[test]
fn cli_config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "dataset=SYNTH\ndata={}\nepochs=9999\nmode=social\nout={}\n",
            data.display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    // The flag must beat the config file's epochs=9999.
    assert_eq!(
        run_cli(&["train", "--config", &conf.to_string_lossy(), "--epochs", "1"]),
        0
    );
    let ckpt = dir.path().join("out").join("synth_social.ckpt");
    let (_, header) = checkpoint::load(&ckpt).unwrap();
    assert_eq!(header.config.epochs, 1);
    assert_eq!(header.config.mode, Mode::SocialOnly);
}

#[test]
fn compare_rejects_mismatched_splits() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());

    let mut ckpts = Vec::new();
    for (mode, seed) in [(Mode::SocialOnly, 0u64), (Mode::Attention, 1u64)] {
        let mut config = base_config(dir.path(), &data);
        config.mode = mode;
        config.seed = seed; // different seed -> different split
        config.epochs = 0;
        config.out = dir
            .path()
            .join(format!("out{seed}"))
            .to_string_lossy()
            .into_owned();
        ckpts.push(train::train(&config).unwrap().checkpoint);
    }
    let err = train::compare(&[(ckpts[0].clone(), ckpts[1].clone())], dir.path()).unwrap_err();
    assert!(matches!(err, trajpred::Error::SplitMismatch(_)), "{err}");
}

#[test]
fn eval_requires_nonempty_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_file(dir.path(), &small_cfg());
    let mut config = base_config(dir.path(), &data);
    config.epochs = 0;
    // 24 samples split 18/6/0: the floors leave nothing for test.
    config.fractions = [0.75, 0.25, 0.0];
    let outcome = train::train(&config).unwrap();
    let err = train::evaluate(&outcome.checkpoint, &train::EvalOverrides::default()).unwrap_err();
    assert!(err.to_string().contains("test split"), "{err}");
}
