use auscult_core::model::{train, Arch, InMemorySamples, ModelState, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two classes of 16x16 single-channel images: a bright horizontal band in
/// the lower or upper half, plus noise.
fn two_class(n: usize, seed: u64) -> InMemorySamples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * 256);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let row0 = if class == 0 { rng.gen_range(0..6) } else { rng.gen_range(9..14) };
        for y in 0..16 {
            for _ in 0..16 {
                let band = if (row0..row0 + 3).contains(&y) { 0.8 } else { 0.0 };
                inputs.push(band + rng.gen_range(0.0..0.3f32));
            }
        }
        labels.push(class);
    }
    InMemorySamples { input_len: 256, inputs, labels }
}

#[test]
fn train_loss_decreases_on_separable_problem() {
    let arch = Arch {
        input_channels: 1,
        input_height: 16,
        input_width: 16,
        conv_channels: vec![4, 8],
        dense_width: 16,
        dropout: 0.2,
        n_classes: 2,
    };
    let data = two_class(200, 1);
    let val = two_class(40, 2);
    let cfg = TrainConfig { epochs: 10, base_lr: 0.01, seed: 11, ..TrainConfig::default() };
    let (h, best) = train(ModelState::init(arch, 3).unwrap(), &data, &val, &cfg).unwrap();
    let losses: Vec<f64> = h.records.iter().map(|r| r.train_loss).collect();
    assert!(losses[0] > losses[1] && losses[1] > losses[2], "{losses:?}");
    assert!(h.records[h.best_epoch].val_accuracy > 0.9, "{:?}", h.records[h.best_epoch]);
    assert_eq!(best.arch().n_classes, 2);
}
