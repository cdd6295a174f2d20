use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use hyperwave::hyperboloid::{natural_energy, sample_slice, Channel};
use hyperwave::nulltensor::make_cm_tensor;
use hyperwave::solver::{initial_data, run, step_in_place, QuasiCoefficients};
use hyperwave::vectorfields::FieldBlock;
use hyperwave::{FieldId, GridSpec, InitialData, MultiIndex, Simulation, SolutionHistory, SpacetimeVector};

fn short_history() -> SolutionHistory {
    let spec = GridSpec::fitted(0.1, 0.04, 2.0, 9.0, 4);
    let mut sim = Simulation::new(spec, make_cm_tensor(SpacetimeVector::new(1.0, 0.0, 0.0)), InitialData::bump(0.01));
    sim.margin = 4;
    run(&sim, &mut []).expect("short run")
}

fn leapfrog(c: &mut Criterion) {
    let tensor = make_cm_tensor(SpacetimeVector::new(1.0, 0.0, 0.0));
    let spec = GridSpec::fitted(0.05, 0.02, 2.0, 12.0, 4);
    let coeffs = QuasiCoefficients::new(&tensor);
    let state = initial_data(&InitialData::bump(0.01), &spec, &tensor, None).expect("initial data");
    c.bench_function("step_in_place h=0.05", |b| {
        let mut scratch = Vec::new();
        b.iter_batched_ref(
            || state.clone(),
            |s| step_in_place(s, &coeffs, &spec, None, &mut scratch).expect("step"),
            BatchSize::LargeInput,
        )
    });
}

fn vector_fields(c: &mut Criterion) {
    let hist = short_history();
    let (lo, hi) = hist.range().expect("snapshots");
    let mid = (lo + hi) / 2;
    let block = FieldBlock::from_history(&hist, mid - 2, mid + 2).expect("block");
    c.bench_function("apply_range L1", |b| {
        b.iter(|| black_box(block.apply_range(FieldId::L1, mid - 1, mid + 1)))
    });
    c.bench_function("apply_range O12", |b| {
        b.iter(|| black_box(block.apply_range(FieldId::O12, mid - 1, mid + 1)))
    });
}

fn slices(c: &mut Criterion) {
    let hist = short_history();
    let index = MultiIndex::new(&[FieldId::L1]);
    let channels = Channel::with_gradient(&index).to_vec();
    c.bench_function("sample_slice s=4 L1", |b| {
        b.iter(|| black_box(sample_slice(&hist, 4.0, channels.clone()).expect("slice")))
    });
    let slice = sample_slice(&hist, 4.0, channels).expect("slice");
    let field = slice.field(&index).expect("sampled");
    c.bench_function("natural_energy s=4", |b| b.iter(|| black_box(natural_energy(&field))));
}

criterion_group! {
    name = kernels;
    config = Criterion::default().sample_size(10);
    targets = leapfrog, vector_fields, slices
}
criterion_main!(kernels);
