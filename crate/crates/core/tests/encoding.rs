mod common;

use common::encoding::*;

#[test]
fn mode_bounds_match_logic() {
    assert_eq!(mode_bounds_mismatches(), 0);
}

#[test]
fn switch_rows_match_logic() {
    assert_eq!(switch_mismatches(), 0);
}

#[test]
fn counter_rows_match_logic() {
    assert_eq!(counter_mismatches(), 0);
}

#[test]
fn min_dwell_matches_logic() {
    assert_eq!(min_dwell_mismatches(), 0);
}

#[test]
fn max_dwell_matches_logic() {
    assert_eq!(max_dwell_mismatches(), 0);
}

#[test]
fn strict_battery_split_matches_logic() {
    assert_eq!(battery_split_mismatches(), 0);
}

#[test]
fn switch_rows_with_unit_big_m() {
    printed_switch_rows_match().unwrap();
}
