//! Library-level train, calibrate, finetune, compress and reload on
//! synthetic data.

use dasnet_core::calibration::{calibrate_network, pruning_summary, CalibrationStats};
use dasnet_core::compression::{fc_weight_density, magnitude_prune_fc, quantize_weights_linear8};
use dasnet_core::cost::count_macs;
use dasnet_core::data::{synthetic_dataset, Split};
use dasnet_core::nn::checkpoint::{load, save_int8};
use dasnet_core::nn::{
    evaluate, finetune_dasnet, infer, load_network, save, train_baseline, KernelPath, LayerKindTag, LayerSpec,
    Network, TrainConfig,
};
use dasnet_core::nn::Int8Weights;

fn small_mlp(seed: u64) -> Network {
    let layers = vec![
        LayerSpec::fc("fc1", 64, 48, true),
        LayerSpec::fc("fc2", 48, 24, true),
        LayerSpec::fc("fc3", 24, 4, false),
    ];
    Network::new("small", [8, 8, 1], layers, seed).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        lr: 0.1,
        epochs: 12,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

#[test]
fn masked_pipeline_keeps_accuracy_and_reloads_exactly() {
    let data = synthetic_dataset(11, 1200, [8, 8, 1], 4).unwrap();
    let mut net = small_mlp(0);
    train_baseline(&mut net, &data, &config()).unwrap();
    let base = evaluate(&net, &data, Split::Test, false).unwrap();
    assert!(base > 0.9, "baseline {base}");

    let stats = CalibrationStats::collect(&net, &data, 300, 0).unwrap();
    let theta = stats.max_theta_for_pruning(&net, LayerKindTag::Fc, 0.5).unwrap().expect("reachable");
    let rates = stats.report(&net, 1.0, theta).unwrap().winner_rates(&net).unwrap();
    assert!(pruning_summary(&net, &rates).fc_pruned >= 0.5);

    let mut dasnet = net.clone();
    let ft = finetune_dasnet(&mut dasnet, &data, &rates, &config().finetune_from()).unwrap();
    assert!(ft.best_validation_accuracy >= ft.initial_validation_accuracy);
    let acc = evaluate(&dasnet, &data, Split::Test, true).unwrap();
    assert!(base - acc < 0.05, "baseline {base}, masked {acc}");

    let cost = count_macs(&dasnet, &dasnet.winner_rates()).unwrap();
    assert!(cost.condensed_macs < cost.dense_macs);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.dasn");
    save(&dasnet, &path).unwrap();
    let back = load_network(&path).unwrap();
    assert_eq!(back, dasnet);
    for &i in data.indices(Split::Test).iter().take(50) {
        let a = infer(&dasnet, data.image(i), true, KernelPath::Dense).unwrap();
        let b = infer(&back, data.image(i), true, KernelPath::Condensed).unwrap();
        assert_eq!(a.masks, b.masks);
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!((x - y).abs() <= 1e-5 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn int8_checkpoint_reproduces_the_dequantized_network() {
    let data = synthetic_dataset(12, 600, [8, 8, 1], 4).unwrap();
    let mut net = small_mlp(1);
    train_baseline(&mut net, &data, &TrainConfig { epochs: 3, ..config() }).unwrap();
    let (q, layers) = quantize_weights_linear8(&net).unwrap();
    let codes: Vec<Int8Weights> = layers.into_iter().map(Into::into).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.dasn");
    save_int8(&q, &codes, &path).unwrap();
    let ck = load(&path).unwrap();
    assert_eq!(ck.network, q);
    assert_eq!(ck.int8.unwrap(), codes);
    let (a, b) = (
        evaluate(&net, &data, Split::Test, false).unwrap(),
        evaluate(&q, &data, Split::Test, false).unwrap(),
    );
    assert!((a - b).abs() < 0.03, "{a} vs {b}");
}

#[test]
fn pruned_weights_stay_zero_through_finetuning_and_reload() {
    let data = synthetic_dataset(13, 600, [8, 8, 1], 4).unwrap();
    let mut net = small_mlp(2);
    train_baseline(&mut net, &data, &TrainConfig { epochs: 3, ..config() }).unwrap();
    magnitude_prune_fc(&mut net, 0.25).unwrap();
    let rates = calibrate_network(&net, &data, 1.0, 0.95, 200, 0).unwrap().winner_rates(&net).unwrap();
    finetune_dasnet(&mut net, &data, &rates, &TrainConfig { epochs: 2, ..config().finetune_from() }).unwrap();
    let density = fc_weight_density(&net);
    assert!(density <= 0.25 + 1e-9, "{density}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.dasn");
    save(&net, &path).unwrap();
    let mut back = load_network(&path).unwrap();
    assert!(back.has_weight_masks());
    finetune_dasnet(&mut back, &data, &rates, &TrainConfig { epochs: 1, ..config().finetune_from() }).unwrap();
    assert!(fc_weight_density(&back) <= density + 1e-12);
}

#[test]
fn calibration_requires_a_trained_network() {
    let data = synthetic_dataset(14, 100, [8, 8, 1], 4).unwrap();
    let net = small_mlp(3);
    let e = CalibrationStats::collect(&net, &data, 50, 0).unwrap_err();
    assert!(e.to_string().contains("trained"), "{e}");
}
