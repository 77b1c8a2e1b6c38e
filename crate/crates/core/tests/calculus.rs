mod common;

#[test]
fn add_is_pointwise_sum() {
    common::check_add().unwrap();
}

#[test]
fn compose_matches_evaluation_at_image() {
    common::check_compose().unwrap();
}

#[test]
fn scale_multiplies_value() {
    common::check_scale().unwrap();
}

#[test]
fn l1_misfit_with_ridge_layout() {
    common::l1_misfit_with_ridge_layout();
}

#[test]
fn vapnik_misfit_with_ridge_layout() {
    common::vapnik_misfit_with_ridge_layout();
}

#[test]
fn elastic_net_layout() {
    common::elastic_net_layout();
}
