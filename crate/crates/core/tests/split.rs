//! Split execution against the centralized model.

use intail_core::qpt::{self, Parameters, QptConfig, QptModel, TrainConfig};
use intail_core::split::{partition, FaultModel, MessageKind, Participant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> QptConfig {
    QptConfig {
        n_sa: 3,
        window: 4,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        hidden: 6,
        dropout: 0.1,
        alpha: 0.05,
    }
}

fn data(cfg: &QptConfig, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n * cfg.window * cfg.n_sa)
        .map(|_| rng.random::<f64>())
        .collect();
    let y = (0..n * cfg.n_sa).map(|_| rng.random::<f64>()).collect();
    (x, y)
}

#[test]
fn partition_and_merge_are_exact() {
    let model = QptModel::new(small_cfg(), 5).unwrap();
    let sys = partition(&model, Default::default(), FaultModel::default());
    let client: usize = sys.clients.iter().map(|c| c.param_count()).sum();
    assert_eq!(client + sys.server.body.param_count(), model.param_count());
    let back = sys.merge();
    assert_eq!(back.flat_values(), model.flat_values());
    assert_eq!(back.id(), model.id());
}

#[test]
fn split_epoch_matches_centralized_training() {
    let cfg = small_cfg();
    let (x, y) = data(&cfg, 50, 1);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        lr: 1e-3,
        seed: 3,
    };
    let mut central = QptModel::new(cfg.clone(), 9).unwrap();
    let mut sys = partition(&central, tc.adam(), FaultModel::default());
    let c_curve = qpt::train(&mut central, &x, &y, &tc).unwrap();
    let s_curve = sys.train(&x, &y, &tc).unwrap();
    let merged = sys.merge();
    let max_diff = central
        .flat_values()
        .iter()
        .zip(merged.flat_values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_diff <= 1e-10, "max parameter difference {max_diff}");
    for (a, b) in c_curve.losses.iter().zip(&s_curve.losses) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn message_counts_and_label_privacy() {
    let cfg = small_cfg();
    let (x, y) = data(&cfg, 32, 2);
    let model = QptModel::new(cfg.clone(), 1).unwrap();
    let mut sys = partition(&model, Default::default(), FaultModel::default());
    sys.transport.record = Some(Vec::new());
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        lr: 1e-3,
        seed: 0,
    };
    sys.train_epoch(&x, &y, &tc, 0).unwrap();
    let m = cfg.n_sa;
    let batches = 4;
    let s = sys.transport.stats;
    assert_eq!(s.activations_up, m * batches);
    assert_eq!(s.activations_down, m * batches);
    assert_eq!(s.gradients_up, m * batches);
    assert_eq!(s.gradients_down, m * batches);
    let record = sys.transport.record.take().unwrap();
    for msg in &record {
        match msg.kind {
            MessageKind::Activation if msg.dest == Participant::Server => {
                assert_eq!(msg.cols, cfg.d_model)
            }
            MessageKind::Activation => assert_eq!(msg.cols, cfg.hidden),
            MessageKind::Gradient if msg.dest == Participant::Server => {
                assert_eq!(msg.cols, cfg.hidden)
            }
            MessageKind::Gradient => assert_eq!(msg.cols, cfg.d_model),
        }
        for v in &msg.payload {
            assert!(!y.contains(v), "label value leaked in a payload");
        }
    }
}

#[test]
fn shuffled_arrivals_give_identical_predictions() {
    let cfg = small_cfg();
    let (x, _) = data(&cfg, 40, 4);
    let model = QptModel::new(cfg, 2).unwrap();
    let central = model.predict_all(&x, 40).unwrap();
    let mut sys = partition(
        &model,
        Default::default(),
        FaultModel {
            shuffle_server_inbox: true,
            seed: 99,
            ..Default::default()
        },
    );
    let split = sys.predict_all(&x, 40).unwrap();
    assert_eq!(central, split);
}

#[test]
fn lossy_transport_fails_with_protocol_error() {
    let cfg = small_cfg();
    let (x, y) = data(&cfg, 16, 5);
    let model = QptModel::new(cfg, 2).unwrap();
    let mut sys = partition(
        &model,
        Default::default(),
        FaultModel {
            loss_prob: 0.3,
            seed: 1,
            ..Default::default()
        },
    );
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 8,
        lr: 1e-3,
        seed: 0,
    };
    let err = sys.train(&x, &y, &tc).unwrap_err();
    assert!(matches!(err, intail_core::Error::Protocol(_)), "{err}");
}
