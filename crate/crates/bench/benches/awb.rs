use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sensorlab::awb::{QuadraticSurrogate, StepSchedule};
use sensorlab::{AwbSearch, Quantity, SetId};

fn surrogate_search(c: &mut Criterion) {
    let surrogate = QuadraticSurrogate {
        quantity: Quantity::Lw,
        optimum: 2.531,
        floor: 0.1,
    };
    let cfg = SetId::new(1).unwrap().config();
    for (name, schedule) in [("awb_surrogate_lm", StepSchedule::LM), ("awb_surrogate_br", StepSchedule::BR)] {
        c.bench_function(name, |b| {
            b.iter(|| {
                let mut search = AwbSearch::new(&surrogate, schedule);
                let baseline = search.evaluate(&cfg).unwrap();
                search.tune_quantity(black_box(&cfg), Quantity::Lw, &baseline).unwrap()
            })
        });
    }
}

criterion_group!(benches, surrogate_search);
criterion_main!(benches);
