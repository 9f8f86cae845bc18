mod common;

use std::time::Instant;

use mdi::models::{Model, Task};
use nncore::{grad_check, RngStream};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Summed loss over every head, each the mean cross-entropy over its
/// targets; the masked-LM head is scored on two positions per sequence.
fn check(model: &Model) -> f64 {
    let batch = vec![vec![3, 10, 7, 29, 4], vec![12, 5, 5, 20, 8]];
    let heads: Vec<usize> = (0..model.spec.heads.len()).collect();
    let mut store = model.store.clone();
    let report = grad_check(
        &mut store,
        |g| {
            let out = model
                .forward(g, &batch, &heads, &mut RngStream::new(0))
                .expect("forward");
            let mut parts = Vec::new();
            for (h, head) in model.spec.heads.iter().enumerate() {
                let logits = out.logits[h].unwrap();
                let targets: Vec<Option<usize>> = if head.task == Task::Mlm {
                    (0..10).map(|i| (i % 5 == 1 || i % 5 == 3).then_some((i * 7) % 30)).collect()
                } else {
                    vec![Some(0), Some(head.labels.len() - 1)]
                };
                let n = targets.iter().flatten().count() as f64;
                let ce = g.cross_entropy(logits, &targets)?;
                parts.push(g.affine(ce, 1.0 / n, 0.0));
            }
            g.add_scalars(&parts)
        },
        EPS,
        Some((400, 11)),
    )
    .unwrap();
    eprintln!("{}: {:.3e}", model.spec.arch.name(), report.max_rel_err);
    assert!(report.max_rel_err < TOL, "{}: {report:?}", model.spec.arch.name());
    report.max_rel_err
}

#[test]
fn every_architecture_matches_finite_differences() {
    let started = Instant::now();
    let models = common::tiny_models(3);
    assert_eq!(models.len(), 6);
    for m in &models {
        assert_eq!(m.spec.vocab.len(), 30);
        check(m);
    }
    assert!(started.elapsed().as_secs() < 120);
}

#[test]
fn full_coordinate_check_on_single_task() {
    let models = common::tiny_models(8);
    let batch = vec![vec![3, 4, 5, 6, 7]];
    let mut store = models[0].store.clone();
    let report = grad_check(
        &mut store,
        |g| {
            let out = models[0]
                .forward(g, &batch, &[0], &mut RngStream::new(0))
                .expect("forward");
            g.cross_entropy(out.logits[0].unwrap(), &[Some(2)])
        },
        EPS,
        None,
    )
    .unwrap();
    assert_eq!(report.coordinates, models[0].num_params());
    assert!(report.max_rel_err < TOL, "{report:?}");
}
