mod common;

use common::identities;

#[test]
fn warp_identity_is_bit_exact() {
    identities::warp_identity().unwrap();
}

#[test]
fn warp_partition_of_unity() {
    identities::partition_of_unity().unwrap();
}

#[test]
fn mse_of_equal_images() {
    identities::mse_self().unwrap();
}

#[test]
fn cc_self_and_affine() {
    identities::cc_self_and_affine().unwrap();
}

#[test]
fn smoothness_of_constant_fields() {
    identities::smoothness_constant().unwrap();
}

#[test]
fn dice_identical_and_disjoint() {
    identities::dice_identical_disjoint().unwrap();
}

#[test]
fn jacobian_of_trivial_fields() {
    identities::jacobian_trivial_fields().unwrap();
}

#[test]
fn jacobian_of_reversing_field() {
    identities::jacobian_reversal().unwrap();
}
