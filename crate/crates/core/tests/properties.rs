mod common;

use common::invariants;

const CASES: u32 = 128;

macro_rules! property_tests {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                if let Err(e) = invariants::$name(CASES) {
                    panic!("{e}");
                }
            }
        )*
    };
}

property_tests!(
    partition_completeness,
    direction_duality,
    normalization_bound,
    mask_neutrality,
    graph_conv_equivariance,
    attention_range,
    att_equals_avg,
    off_identity,
    fd_equivariance,
    focus_convexity,
    gate_monotonicity,
    build_input_purity,
    top5_dominates_top1,
    translation_invariance,
);

#[test]
fn registry_lists_every_property() {
    assert_eq!(invariants::ALL.len(), 14);
}
