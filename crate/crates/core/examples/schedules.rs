//! Checks polynomial step-size schedules against the three-timescale
//! conditions.

use selab::agents::{validate_schedules, LearningRateSchedule, Schedules};

fn main() {
    let cases = [
        ("defaults", Schedules::default()),
        ("(0.6, 0.6, 0.9)", schedules(0.6, 0.6, 0.9)),
        ("actor not summable-square", schedules(0.6, 0.6, 0.5)),
        ("actor too fast", schedules(0.9, 0.6, 0.55)),
        ("actor summable", schedules(0.6, 0.6, 1.1)),
    ];
    for (name, s) in cases {
        let report = validate_schedules(&s.a, &s.b, &s.c);
        if report.is_ok() {
            println!("{name}: ok");
        } else {
            println!("{name}: {}", report.violations.join(", "));
        }
    }
    let s = Schedules::default();
    for k in [0, 10, 100, 1000, 10_000] {
        println!(
            "k = {k:>5}: a = {:.4}  b = {:.4}  c = {:.5}  c/a = {:.4}",
            s.a.value(k),
            s.b.value(k),
            s.c.value(k),
            s.c.value(k) / s.a.value(k)
        );
    }
}

fn schedules(pa: f64, pb: f64, pc: f64) -> Schedules {
    Schedules {
        a: LearningRateSchedule::polynomial(0.5, pa),
        b: LearningRateSchedule::polynomial(0.5, pb),
        c: LearningRateSchedule::polynomial(0.1, pc),
    }
}
