mod support;

use gloss_collect::store::{state_at, StoreError, TransitionRecord, TransitionStore};
use proptest::prelude::*;
use support::{expected_transitions, temp_path};

#[test]
fn five_second_sequence_keeps_baseline_and_two_transitions() {
    let mut s = TransitionStore::in_memory();
    let stored: Vec<bool> = [false, false, true, true, false]
        .iter()
        .enumerate()
        .map(|(t, &on)| s.record_transition("Desk_Tim", t as i64, on).unwrap())
        .collect();
    assert_eq!(stored, [true, false, true, false, true]);
    assert_eq!(
        s.records(),
        [
            TransitionRecord::new("Desk_Tim", 0, false),
            TransitionRecord::new("Desk_Tim", 2, true),
            TransitionRecord::new("Desk_Tim", 4, false),
        ]
    );
    assert_eq!(s.query_range(1, 4).unwrap().len(), 2);
    assert_eq!(s.query_range(0, 4).unwrap().len(), 3);
}

#[test]
fn query_orders_by_time_then_name_and_checks_range() {
    let mut s = TransitionStore::in_memory();
    s.record_transition("b", 5, true).unwrap();
    s.record_transition("a", 7, true).unwrap();
    s.record_transition("a", 5, false).unwrap_err();
    s.record_transition("c", 5, false).unwrap();
    s.record_transition("a", 8, false).unwrap();
    let names: Vec<_> = s
        .query_range(0, 100)
        .unwrap()
        .into_iter()
        .map(|r| (r.t, r.sensor))
        .collect();
    assert_eq!(
        names,
        [
            (5, "b".into()),
            (5, "c".into()),
            (7, "a".into()),
            (8, "a".into())
        ]
    );
    assert!(s.query_range(-10, -1).unwrap().is_empty());
    assert!(s.query_range(5, 5).unwrap().len() == 2);
    assert!(matches!(
        s.query_range(6, 5),
        Err(StoreError::BadRange { from: 6, to: 5 })
    ));
}

#[test]
fn regressions_are_refused() {
    let mut s = TransitionStore::in_memory();
    s.record_transition("x", 10, true).unwrap();
    assert!(matches!(
        s.record_transition("x", 9, false),
        Err(StoreError::TimeRegression {
            last: 10,
            got: 9,
            ..
        })
    ));
    // Same second, conflicting state.
    assert!(s.record_transition("x", 10, false).is_err());
    // Same second, same state: a harmless repeat.
    assert!(!s.record_transition("x", 10, true).unwrap());
    assert_eq!(s.len(), 1);
}

#[test]
fn log_survives_reopen() {
    let path = temp_path("store");
    {
        let mut s = TransitionStore::open(&path).unwrap();
        s.record_transition("Door_E", 1, true).unwrap();
        s.record_transition("Door_E", 3, false).unwrap();
        s.record_transition("Door_E", 4, false).unwrap();
    }
    let mut s = TransitionStore::open(&path).unwrap();
    assert_eq!(s.len(), 2);
    assert_eq!(s.last_state("Door_E"), Some((3, false)));
    assert!(s.record_transition("Door_E", 2, true).is_err());
    s.record_transition("Door_E", 9, true).unwrap();
    drop(s);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
    std::fs::write(&path, "1\tDoor_E\tmaybe\n").unwrap();
    assert!(matches!(
        TransitionStore::open(&path),
        Err(StoreError::Corrupt { line: 1, .. })
    ));
    let _ = std::fs::remove_file(&path);
}

proptest! {
    #[test]
    fn stored_records_are_exactly_the_transitions(
        seqs in prop::collection::vec(prop::collection::vec(any::<bool>(), 1..40), 1..5)
    ) {
        let mut s = TransitionStore::in_memory();
        let len = seqs.iter().map(Vec::len).max().unwrap();
        for t in 0..len {
            for (k, seq) in seqs.iter().enumerate() {
                if let Some(&on) = seq.get(t) {
                    s.record_transition(&format!("s{k}"), t as i64, on).unwrap();
                }
            }
        }
        for (k, seq) in seqs.iter().enumerate() {
            let name = format!("s{k}");
            let got: Vec<(usize, bool)> = s.records().iter()
                .filter(|r| r.sensor == name)
                .map(|r| (r.t as usize, r.on))
                .collect();
            prop_assert_eq!(got, expected_transitions(seq));
            // The per-second history is recoverable from transitions alone.
            for (t, &on) in seq.iter().enumerate() {
                let at = state_at(s.records(), t as i64);
                prop_assert_eq!(at.get(&name), Some(&on));
            }
        }
    }
}
