mod common;

use common::*;

fn assert_close(d: Deviation) {
    assert!(d.compared >= 100, "{}: only {} comparisons", d.name, d.compared);
    assert!(d.worst <= ORACLE_TOL, "{}: worst deviation {:e}", d.name, d.worst);
}

#[test]
fn object_loss_matches_naive_loops() {
    assert_close(object_loss_deviation(100));
}

#[test]
fn attribute_loss_matches_naive_loops() {
    assert_close(attribute_loss_deviation(100));
}

#[test]
fn answer_loss_matches_naive_loops() {
    assert_close(answer_loss_deviation(100));
}

#[test]
fn attention_matches_naive_loops() {
    assert_close(attention_deviation(100));
}

#[test]
fn image_representation_matches_naive_loops() {
    assert_close(image_representation_deviation(100));
}

#[test]
fn zero_shot_score_matches_naive_loops() {
    assert_close(zero_shot_deviation(100));
}
