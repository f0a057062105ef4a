use auscult_cli::PipelineConfig;
use auscult_core::DatasetId;
use proptest::prelude::*;

proptest! {
    #[test]
    fn text_form_round_trips(
        b in any::<bool>(),
        seed in any::<u64>(),
        lr in 1e-6f64..1.0,
        momentum in 0.0f64..0.99,
        dropout in 0.0f64..0.9,
        epochs in 1usize..100,
        warp in 0usize..20,
        f in 0usize..60,
        cutoff in 20.0f64..1000.0,
        shift in -2.0f64..2.0,
    ) {
        let mut cfg = PipelineConfig::defaults(if b { DatasetId::A } else { DatasetId::B });
        cfg.seed = seed;
        cfg.lr = lr;
        cfg.momentum = momentum;
        cfg.dropout = dropout;
        cfg.epochs = epochs;
        cfg.specaugment.warp_w = warp;
        cfg.specaugment.freq_mask_f = f;
        cfg.cutoff_hz = cutoff;
        cfg.time_shift_seconds = shift;
        prop_assert!(cfg.validate().is_ok());
        let back = PipelineConfig::parse(&cfg.to_text(), DatasetId::A).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_win_over_file(epochs in 1usize..500, lr in 1e-5f64..0.5) {
        let mut cfg = PipelineConfig::parse("dataset = B\nepochs = 3\nlr = 0.1\n", DatasetId::A).unwrap();
        cfg.apply_overrides(&[format!("epochs={epochs}"), format!("lr={lr}")]).unwrap();
        prop_assert_eq!(cfg.epochs, epochs);
        prop_assert_eq!(cfg.lr, lr);
        prop_assert_eq!(cfg.dataset, DatasetId::B);
    }

    #[test]
    fn garbage_values_are_rejected(v in "[a-z]{1,8}") {
        // "nan" and "inf" are valid floats; validation rejects those later.
        prop_assume!(v.parse::<f64>().is_err());
        let mut cfg = PipelineConfig::defaults(DatasetId::A);
        for key in ["epochs", "lr", "n_mels", "cutoff_hz", "warp_w"] {
            prop_assert!(cfg.set(key, &v).is_err());
        }
    }
}
