use avsi::model::ModelConfig;
use avsi::nn::gradcheck::{certify_model, certify_op, OpCase};

#[test]
fn every_op_in_double_precision() {
    for case in OpCase::ALL {
        for seed in 0..3 {
            let err = certify_op::<f64>(case, seed).unwrap();
            assert!(err < 1e-6, "{case:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn every_op_in_single_precision() {
    for case in OpCase::ALL {
        for seed in 0..3 {
            let err = certify_op::<f32>(case, seed).unwrap();
            assert!(err < 1e-3, "{case:?} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn toy_model_in_double_precision() {
    let err = certify_model::<f64>(ModelConfig::toy(8), 12, 5, 3, 1).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn toy_model_in_single_precision() {
    let err = certify_model::<f32>(ModelConfig::toy(8), 12, 5, 3, 2).unwrap();
    assert!(err < 1e-3, "{err:e}");
}
