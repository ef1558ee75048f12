//! Shared test support: the central finite-difference gradient oracle.

use equilearn::tensor::{NodeId, Scalar, Tape, TensorData};

/// Largest mixed relative error between analytic and central-difference
/// gradients of `build`'s scalar loss with respect to every parameter entry.
///
/// The oracle re-runs the forward pass at perturbed inputs; it never looks at
/// the tape's backward machinery.
pub fn max_grad_error<T, F>(params: &[TensorData<T>], h: f64, build: &F) -> f64
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[NodeId]) -> NodeId,
{
    let forward = |ps: &[TensorData<T>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p.clone()).unwrap()).collect();
        let loss = build(&mut tape, &ids);
        tape.scalar_value(loss).to_f64x()
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone()).unwrap()).collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.value(loss).len(), 1, "gradcheck loss must be scalar");
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).unwrap().iter().map(|g| g.to_f64x()).collect())
        .collect();

    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        for j in 0..params[pi].data.len() {
            let mut plus = params.to_vec();
            plus[pi].data[j] = plus[pi].data[j] + T::of(h);
            let mut minus = params.to_vec();
            minus[pi].data[j] = minus[pi].data[j] - T::of(h);
            let numeric = (forward(&plus) - forward(&minus)) / (2.0 * h);
            let a = analytic[pi][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}

/// Deterministic pseudo-random values in [-0.9, 0.9] for gradcheck inputs;
/// keeps tests hermetic without threading an rng through.
pub fn pseudo<T: Scalar>(n: usize, salt: u64) -> Vec<T> {
    let mut state = salt.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            T::of((state % 1_000_000) as f64 / 1_000_000.0 * 1.8 - 0.9)
        })
        .collect()
}

pub fn tensor<T: Scalar>(shape: &[usize], salt: u64) -> TensorData<T> {
    let n = shape.iter().product();
    TensorData::new(shape.to_vec(), pseudo(n, salt))
}

/// Like [`max_grad_error`] but probing only `per_tensor` seeded coordinates
/// of each parameter, for composed graphs too large to sweep exhaustively.
pub fn sampled_grad_error<T, F>(
    params: &[TensorData<T>],
    h: f64,
    per_tensor: usize,
    salt: u64,
    build: &F,
) -> f64
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[NodeId]) -> NodeId,
{
    let forward = |ps: &[TensorData<T>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p.clone()).unwrap()).collect();
        let loss = build(&mut tape, &ids);
        tape.scalar_value(loss).to_f64x()
    };
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|p| tape.leaf(p.clone()).unwrap()).collect();
    let loss = build(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).unwrap().iter().map(|g| g.to_f64x()).collect())
        .collect();

    let mut state = salt.wrapping_mul(0x9e3779b97f4a7c15) | 1;
    let mut next = |modulo: usize| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % modulo as u64) as usize
    };
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        let n = params[pi].data.len();
        for _ in 0..per_tensor.min(n) {
            let j = next(n);
            let mut plus = params.to_vec();
            plus[pi].data[j] = plus[pi].data[j] + T::of(h);
            let mut minus = params.to_vec();
            minus[pi].data[j] = minus[pi].data[j] - T::of(h);
            let numeric = (forward(&plus) - forward(&minus)) / (2.0 * h);
            let a = analytic[pi][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    worst
}
