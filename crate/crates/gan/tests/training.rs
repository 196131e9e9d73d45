use nc2c_core::rng::rng_for;
use nc2c_gan::checkpoint::{load_checkpoint, save_checkpoint};
use nc2c_gan::nets::{ConvLayerSpec, DiscriminatorSpec, GeneratorSpec};
use nc2c_gan::train::{checkpoint_name, read_ledger, write_ledger, LEDGER_COLUMNS};
use nc2c_gan::{infer_nc2c, train, Dataset, FitOptions, GanError, Tensor, TrainConfig, TrainState};

fn blob(seed: u64, bright: f32) -> Tensor<f32> {
    let (cy, cx) = (7.5 + (seed % 3) as f32, 7.5 - (seed % 2) as f32);
    let data = (0..256)
        .map(|i| {
            let (r, c) = ((i / 16) as f32, (i % 16) as f32);
            let d2 = (r - cy).powi(2) + (c - cx).powi(2);
            -0.6 + bright * (-d2 / 18.0).exp() + 0.02 * ((i as f32 * 1.7 + seed as f32).sin())
        })
        .collect();
    Tensor::image(16, 16, data).unwrap()
}

fn data() -> Dataset<f32> {
    Dataset { nc: (0..4).map(|s| blob(s, 0.2)).collect(), ct: (0..4).map(|s| blob(s + 10, 1.2)).collect() }
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        generator: GeneratorSpec { base_width: 2, residual_blocks: 1 },
        discriminator: DiscriminatorSpec {
            layers: vec![
                ConvLayerSpec { kernel: 4, stride: 2, width: 4 },
                ConvLayerSpec { kernel: 4, stride: 1, width: 4 },
                ConvLayerSpec { kernel: 3, stride: 1, width: 1 },
            ],
        },
        pool_size: 3,
        checkpoint_every: 1,
        seed: 11,
        lr: 2e-3,
        ..TrainConfig::default()
    }
}

fn param_values(state: &TrainState<f32>) -> Vec<Vec<f32>> {
    state.nets.networks().iter().flat_map(|n| n.params().into_iter().map(|p| p.value.clone())).collect()
}

#[test]
fn zero_epochs_returns_the_initial_state() {
    let state = train(&data(), config(0)).unwrap();
    assert_eq!(state, TrainState::new(config(0)).unwrap());
    assert!(state.ledger.is_empty());
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let mut state = TrainState::<f32>::new(config(1)).unwrap();
    let before = param_values(&state);
    let d = data();
    let mut rng = rng_for(0, &[]);
    for i in 0..3 {
        state.training_step(&d.nc[i], &d.ct[i], 0.0, &mut rng, None).unwrap();
    }
    assert_eq!(param_values(&state), before);
    assert_eq!(state.ledger.len(), 3);
}

#[test]
fn single_step_is_reproducible() {
    let d = data();
    let run = || {
        let mut s = TrainState::<f32>::new(config(1)).unwrap();
        let row = s.training_step(&d.nc[0], &d.ct[1], 2e-4, &mut rng_for(5, &[]), None).unwrap();
        (row, s)
    };
    let (ra, a) = run();
    let (rb, b) = run();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_ne!(param_values(&a), param_values(&TrainState::new(config(1)).unwrap()));
}

#[test]
fn ledger_is_increasing_finite_and_round_trips() {
    let state = train(&data(), config(2)).unwrap();
    assert_eq!(state.ledger.len(), 8);
    for (i, r) in state.ledger.iter().enumerate() {
        assert_eq!(r.iteration, i as u64 + 1);
        for v in [r.g_adv, r.d_ct, r.d_nc, r.cycle_nc, r.cycle_ct, r.identity_nc, r.identity_ct] {
            assert!(v.is_finite() && v >= 0.0);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.csv");
    write_ledger(&state.ledger, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), LEDGER_COLUMNS.join(","));
    assert_eq!(read_ledger(&path).unwrap(), state.ledger);
    write_ledger(&[], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap().trim_end(), LEDGER_COLUMNS.join(","));
    assert!(read_ledger(&path).unwrap().is_empty());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut full = TrainState::<f32>::new(config(3)).unwrap();
    full.fit(&data(), &mut FitOptions { checkpoint_dir: Some(dir.path().to_path_buf()), ..Default::default() })
        .unwrap();
    for e in 1..=3 {
        assert!(dir.path().join(checkpoint_name(e)).exists());
    }
    let mut resumed: TrainState<f32> = load_checkpoint(&dir.path().join(checkpoint_name(2))).unwrap();
    assert_eq!(resumed.epoch, 2);
    assert_eq!(resumed.ledger.len(), 8);
    resumed.fit(&data(), &mut FitOptions::default()).unwrap();
    assert_eq!(resumed.nets, full.nets, "nets");
    assert_eq!(resumed.pool_ct, full.pool_ct, "pool");
    assert_eq!(resumed.ledger, full.ledger, "ledger");
    assert_eq!((resumed.opt_g, resumed.opt_d, resumed.epoch), (full.opt_g, full.opt_d, full.epoch));
    assert_eq!(resumed, full);
    let last: TrainState<f32> = load_checkpoint(&dir.path().join(checkpoint_name(3))).unwrap();
    assert_eq!(last, full);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    save_checkpoint(&train(&data(), config(1)).unwrap(), &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let mut flipped = good.clone();
    let n = flipped.len();
    flipped[n - 3] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(GanError::Checkpoint { .. })));
    std::fs::write(&path, &good[..n / 2]).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(GanError::Checkpoint { .. })));
    let mut magic = good.clone();
    magic[0] = b'X';
    std::fs::write(&path, &magic).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(GanError::Checkpoint { .. })));
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let mut state = TrainState::<f32>::new(config(1)).unwrap();
    state.nets.g_nc2ct.params_mut()[0].value[0] = f32::NAN;
    let before = state.clone();
    let dir = tempfile::tempdir().unwrap();
    let d = data();
    let err = state.training_step(&d.nc[0], &d.ct[0], 2e-4, &mut rng_for(0, &[]), Some(dir.path())).unwrap_err();
    match err {
        GanError::NonFinite { iteration, dump: Some(path), .. } => {
            assert_eq!(iteration, 1);
            let dump: serde_json::Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
            assert_eq!(dump["nc"]["shape"], serde_json::json!([1, 1, 16, 16]));
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
    assert_eq!(state.iteration, 0);
    assert_eq!(param_values(&state)[1..], param_values(&before)[1..]);
}

#[test]
fn inference_contract() {
    let d = data();
    let untrained = TrainState::<f32>::new(config(1)).unwrap();
    assert!(matches!(infer_nc2c(&untrained, &d.nc[0]), Err(GanError::State(_))));
    let state = train(&d, config(1)).unwrap();
    let a = infer_nc2c(&state, &d.nc[0]).unwrap();
    let b = infer_nc2c(&state, &d.nc[0]).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.shape(), [1, 1, 16, 16]);
    assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(infer_nc2c(&state, &Tensor::zeros([1, 1, 14, 16])).is_err());
}

#[test]
fn invalid_inputs_are_rejected() {
    let mut bad = data();
    bad.nc[0].data_mut()[0] = 1.5;
    assert!(matches!(train(&bad, config(1)), Err(GanError::Config(_))));
    let empty = Dataset::<f32> { nc: vec![], ct: vec![] };
    assert!(train(&empty, config(1)).is_err());
    let mut odd = data();
    odd.nc = vec![Tensor::zeros([1, 1, 18, 16])];
    assert!(train(&odd, config(1)).is_err());
    assert!(TrainState::<f32>::new(TrainConfig { lr: -1.0, ..config(1) }).is_err());
    assert!(TrainState::<f32>::new(TrainConfig { beta1: 1.0, ..config(1) }).is_err());
}

#[test]
fn config_hash_tracks_every_field() {
    let a = config(3);
    assert_eq!(a.hash(), config(3).hash());
    assert_ne!(a.hash(), config(4).hash());
    assert_ne!(a.hash(), TrainConfig { seed: 12, ..config(3) }.hash());
    assert_eq!(a.hash().len(), 64);
}
