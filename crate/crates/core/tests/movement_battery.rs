mod support;

#[test]
fn randomized_battery() {
    let tally = support::movement_battery(0..100).unwrap();
    assert!(tally.stopped_leaders >= 100, "{tally:?}");
    assert!(tally.turn_exits >= 100, "{tally:?}");
}
