//! Manual step-time probe at the desk-scale config. Run with:
//! `cargo test -p equilearn --test bench_step -- --ignored --nocapture`

use std::time::Instant;

use equilearn::data::{generate_dataset, ProceduralDatasetSpec};
use equilearn::trainer::{make_views, TrainConfig, TrainState};

#[test]
#[ignore]
fn step_time() {
    let cfg = TrainConfig::default();
    let spec = ProceduralDatasetSpec { n: 256, side: cfg.encoder.side, ..Default::default() };
    let ds = generate_dataset(&spec, 1).unwrap();
    let images: Vec<_> = (0..cfg.batch_size).map(|i| ds.image(i).unwrap()).collect();
    let refs: Vec<_> = images.iter().collect();

    for (label, lambda, k) in [("lambda=1 K=2", 1.0, 2), ("lambda=0", 0.0, 2), ("lambda=1 K=1", 1.0, 1)] {
        let mut cfg = cfg.clone();
        cfg.lambda = lambda;
        cfg.intermediates = k;
        let mut state = TrainState::new(cfg.clone()).unwrap();
        let t0 = Instant::now();
        let mut views_time = 0.0;
        let iters = 6;
        for step in 0..iters {
            let tv = Instant::now();
            let bundle = make_views(&refs, &cfg, step, None).unwrap();
            views_time += tv.elapsed().as_secs_f64();
            state.train_step(&bundle, 1e-4).unwrap();
        }
        let per = t0.elapsed().as_secs_f64() / iters as f64;
        println!(
            "{label}: {per:.3} s/step (views {:.3} s/step); params {}",
            views_time / iters as f64,
            state.model.params.total_params()
        );
    }
}
