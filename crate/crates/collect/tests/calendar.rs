use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gloss_collect::calendar::{CalendarError, Notification, SensorCalendar};
use gloss_collect::store::TransitionRecord;

#[test]
fn stepping_onto_a_recorded_second_raises_an_event() {
    let rec = TransitionRecord::new("Door_Tim", 5, true);
    let mut cal = SensorCalendar::replay(vec![rec.clone()], 0, 10);
    let seen = Arc::new(Mutex::new(Vec::new()));
    {
        let seen = seen.clone();
        cal.subscribe(move |n| seen.lock().unwrap().push(n.clone()));
    }
    cal.seek(4).unwrap();
    assert_eq!(
        cal.step().unwrap(),
        [
            Notification::Time(5),
            Notification::Transitions(5, vec![rec.clone()])
        ]
    );
    assert_eq!(cal.step().unwrap(), [Notification::Time(6)]);
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(cal.state().get("Door_Tim"), Some(&true));
    assert_eq!(cal.step_back().unwrap().len(), 2);
    cal.step_back().unwrap();
    assert!(cal.state().is_empty());
}

#[test]
fn window_edges() {
    let mut cal = SensorCalendar::replay(vec![], 0, 2);
    cal.step().unwrap();
    cal.step().unwrap();
    assert_eq!(cal.step(), Err(CalendarError::Finished));
    assert_eq!(cal.seek(3), Err(CalendarError::OutOfWindow(3)));
    cal.seek(0).unwrap();
    assert!(cal.step_back().is_err());
}

#[test]
fn realtime_refuses_navigation() {
    let mut cal = SensorCalendar::realtime(100);
    assert_eq!(cal.step(), Err(CalendarError::NavigationUnavailable));
    assert_eq!(cal.step_back(), Err(CalendarError::NavigationUnavailable));
    assert_eq!(cal.seek(50), Err(CalendarError::NavigationUnavailable));
    assert_eq!(cal.play(10.0), Err(CalendarError::NavigationUnavailable));
    cal.push(TransitionRecord::new("Beam_W", 102, false));
    let n = cal.advance_to(102);
    assert_eq!(n.len(), 3);
    assert_eq!(cal.now(), 102);
}

#[test]
fn replay_at_ten_times_takes_a_tenth_of_the_trace() {
    let recs: Vec<_> = (0..60)
        .step_by(7)
        .map(|t| TransitionRecord::new("Desk_Dave", t, t % 2 == 1))
        .collect();
    let mut cal = SensorCalendar::replay(recs, 0, 60);
    let events = Arc::new(Mutex::new(0));
    {
        let events = events.clone();
        cal.subscribe(move |n| {
            if matches!(n, Notification::Transitions(..)) {
                *events.lock().unwrap() += 1;
            }
        });
    }
    let t0 = Instant::now();
    assert_eq!(cal.play(10.0).unwrap(), 60);
    let took = t0.elapsed();
    assert!(
        took >= Duration::from_secs_f64(4.8) && took <= Duration::from_secs_f64(7.2),
        "{took:?}"
    );
    // Second 0 is the starting point, already on screen.
    assert_eq!(*events.lock().unwrap(), 8);
}
