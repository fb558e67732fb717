mod common;

use common::oracles;

#[test]
fn mse() {
    oracles::mse().unwrap();
}

#[test]
fn local_cc() {
    oracles::local_cc().unwrap();
}

#[test]
fn smoothness() {
    oracles::smoothness().unwrap();
}

#[test]
fn convolution() {
    oracles::conv().unwrap();
}

#[test]
fn jacobian_determinant() {
    oracles::jacobian().unwrap();
}

#[test]
fn dice_under_integer_shift() {
    oracles::dice_shift().unwrap();
}
