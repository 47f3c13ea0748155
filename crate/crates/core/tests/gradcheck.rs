mod common;

use common::grad;
use ucnet::nn::BnMode;

const INSTANCES: usize = 20;

#[test]
fn conv_gradients() {
    let e = grad::conv(INSTANCES);
    assert!(e < 1e-5, "conv rel err {e:e}");
}

#[test]
fn batchnorm_train_gradients() {
    let e = grad::batchnorm(INSTANCES, BnMode::Train);
    assert!(e < 1e-5, "bn train rel err {e:e}");
}

#[test]
fn batchnorm_eval_gradients() {
    let e = grad::batchnorm(INSTANCES, BnMode::Eval);
    assert!(e < 1e-5, "bn eval rel err {e:e}");
}

#[test]
fn relu_gradients() {
    let e = grad::relu_layer(INSTANCES);
    assert!(e < 1e-5, "relu rel err {e:e}");
}

#[test]
fn gap_gradients() {
    let e = grad::gap_layer(INSTANCES);
    assert!(e < 1e-5, "gap rel err {e:e}");
}

#[test]
fn fc_gradients() {
    let e = grad::fc_layer(INSTANCES);
    assert!(e < 1e-5, "fc rel err {e:e}");
}

#[test]
fn softmax_ce_gradients() {
    let e = grad::softmax_ce(INSTANCES);
    assert!(e < 1e-5, "softmax-ce rel err {e:e}");
}

#[test]
fn residual_block_gradients() {
    let e = grad::blocks(21);
    assert!(e < 1e-5, "block rel err {e:e}");
}

#[test]
fn tiny_model_gradients() {
    let e = grad::end_to_end(INSTANCES);
    assert!(e < 1e-4, "end-to-end rel err {e:e}");
}
