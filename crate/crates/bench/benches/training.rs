use criterion::{criterion_group, criterion_main, Criterion};
use locdistill::distill::{train_model, TrainConfig};
use locdistill::toydet::{evaluate_model, generate_dataset, ModelConfig};
use locdistill::DistillConfig;

fn one_epoch(c: &mut Criterion) {
    let data = generate_dataset(256, 2.0, 1).unwrap();
    let tcfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let plain = DistillConfig::default().without_teacher();
    let teacher_cfg = ModelConfig::default().with_hidden(vec![64]);
    let student_cfg = ModelConfig::default().with_hidden(vec![8]);
    let teacher = train_model(&teacher_cfg, &tcfg, &data, None, &plain).unwrap();

    let mut group = c.benchmark_group("epoch_256_samples");
    group.sample_size(20);
    group.bench_function("plain_student", |b| {
        b.iter(|| train_model(&student_cfg, &tcfg, &data, None, &plain).unwrap())
    });
    group.bench_function("distilled_student", |b| {
        b.iter(|| {
            train_model(
                &student_cfg,
                &tcfg,
                &data,
                Some(&teacher.params),
                &DistillConfig::default(),
            )
            .unwrap()
        })
    });
    group.bench_function("evaluate_teacher", |b| {
        b.iter(|| evaluate_model(&teacher.params, &data, 0.6).unwrap())
    });
    group.finish();
}

criterion_group!(benches, one_epoch);
criterion_main!(benches);
