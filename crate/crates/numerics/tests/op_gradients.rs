//! Finite-difference checks for every differentiable op at random points.

use graphsum_numerics::{
    finite_difference_check, GradCheckOptions, Graph, Init, NumericsError, ParamId, ParamStore,
    Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type OpFn = fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .unwrap()
}

/// `sum(op(inputs) * w)` for a fixed random `w`, so every output entry matters.
fn weighted_loss(g: &mut Graph, out: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let s = g.shape(out);
    let w = g.constant(random(&mut rng, s.rows, s.cols));
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

fn check(shapes: &[(usize, usize)], op: OpFn, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.insert(format!("p{i}"), random(&mut rng, r, c), Init::Zeros).unwrap())
        .collect();
    let eval = |s: &ParamStore, grads: bool| -> Result<(f64, Option<graphsum_numerics::Gradients>), NumericsError> {
        let mut g = Graph::new(s);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = op(&mut g, &vars)?;
        let loss = weighted_loss(&mut g, out, seed)?;
        let value = g.value(loss).item()?;
        Ok((value, if grads { Some(g.backward(loss)?) } else { None }))
    };
    let (_, grads) = eval(&store, true).unwrap();
    let report = finite_difference_check(
        &mut store,
        &grads.unwrap(),
        |s| eval(s, false).map(|r| r.0),
        GradCheckOptions::default(),
    )
    .unwrap();
    report.max_rel_error
}

const TOL: f64 = 1e-4;

macro_rules! op_case {
    ($name:ident, $shapes:expr, $op:expr) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn $name(seed in any::<u64>()) {
                let err = check(&$shapes, $op, seed);
                prop_assert!(err <= TOL, "max relative error {err}");
            }
        }
    };
}

op_case!(matmul, [(3, 4), (4, 2)], |g, v| g.matmul(v[0], v[1]));
op_case!(transpose, [(3, 2)], |g, v| Ok(g.transpose(v[0])));
op_case!(add, [(2, 3), (2, 3)], |g, v| g.add(v[0], v[1]));
op_case!(sub, [(2, 3), (2, 3)], |g, v| g.sub(v[0], v[1]));
op_case!(mul, [(2, 3), (2, 3)], |g, v| g.mul(v[0], v[1]));
op_case!(add_row, [(3, 4), (1, 4)], |g, v| g.add_row(v[0], v[1]));
op_case!(mul_row, [(3, 4), (1, 4)], |g, v| g.mul_row(v[0], v[1]));
op_case!(add_outer, [(3, 1), (1, 4)], |g, v| g.add_outer(v[0], v[1]));
op_case!(affine, [(2, 2)], |g, v| Ok(g.affine(v[0], -1.7, 0.3)));
op_case!(mul_scalar, [(2, 3), (1, 1)], |g, v| g.mul_scalar(v[0], v[1]));
op_case!(tanh, [(2, 3)], |g, v| Ok(g.tanh(v[0])));
op_case!(sigmoid, [(2, 3)], |g, v| Ok(g.sigmoid(v[0])));
op_case!(relu, [(2, 3)], |g, v| Ok(g.relu(v[0])));
op_case!(leaky_relu, [(2, 3)], |g, v| Ok(g.leaky_relu(v[0], 0.2)));
op_case!(elu, [(2, 3)], |g, v| Ok(g.elu(v[0])));
op_case!(softmax, [(3, 5)], |g, v| Ok(g.softmax(v[0])));
op_case!(masked_softmax, [(3, 3)], |g, v| g.masked_softmax(
    v[0],
    &[true, false, true, true, true, false, false, false, true]
));
op_case!(layer_norm, [(3, 5)], |g, v| Ok(g.layer_norm(v[0], 1e-6)));
op_case!(concat_cols, [(2, 3), (2, 1)], |g, v| g.concat_cols(&[v[0], v[1], v[0]]));
op_case!(concat_rows, [(2, 3), (1, 3)], |g, v| g.concat_rows(&[v[0], v[1]]));
op_case!(slice_cols, [(3, 5)], |g, v| g.slice_cols(v[0], 1, 4));
op_case!(slice_rows, [(4, 2)], |g, v| g.slice_rows(v[0], 1, 3));
op_case!(gather_rows, [(4, 3)], |g, v| g.gather_rows(v[0], &[2, 0, 2, 3]));
op_case!(scatter_cols, [(2, 4)], |g, v| g.scatter_cols(v[0], &[1, 0, 1, 4], 5));
op_case!(pad_cols, [(2, 3)], |g, v| g.pad_cols(v[0], 5));
op_case!(mean_rows, [(4, 3)], |g, v| g.mean_rows(v[0]));
op_case!(sum, [(2, 3)], |g, v| Ok(g.sum(v[0])));
op_case!(softmax_nll, [(1, 6)], |g, v| {
    let p = g.softmax(v[0]);
    g.neg_log_pick(p, 2, 1e-12)
});

proptest! {
    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(random(&mut rng, rows, cols).map(|x| x * 20.0));
        let y = g.softmax(x);
        let t = g.value(y);
        for r in 0..rows {
            let row = t.row_slice(r);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}

/// Cross-entropy of a small softmax classifier: analytic gradient against
/// central differences with step 1e-5.
#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut store = ParamStore::new();
    let w = store.add("w", 4, 5, Init::XavierUniform, &mut rng).unwrap();
    let b = store.add("b", 1, 5, Init::Uniform(0.3), &mut rng).unwrap();
    let x = random(&mut rng, 3, 4);
    let labels = [1usize, 4, 0];
    let loss_of = |s: &ParamStore| -> Result<(f64, graphsum_numerics::Gradients), NumericsError> {
        let mut g = Graph::new(s);
        let xv = g.constant(x.clone());
        let (wv, bv) = (g.param(w), g.param(b));
        let logits = g.matmul(xv, wv)?;
        let logits = g.add_row(logits, bv)?;
        let probs = g.softmax(logits);
        let mut terms = Vec::new();
        for (r, &y) in labels.iter().enumerate() {
            let row = g.row(probs, r)?;
            terms.push(g.neg_log_pick(row, y, 1e-12)?);
        }
        let all = g.concat_cols(&terms)?;
        let total = g.sum(all);
        let loss = g.scale(total, 1.0 / labels.len() as f64);
        Ok((g.value(loss).item()?, g.backward(loss)?))
    };
    let (_, grads) = loss_of(&store).unwrap();
    let report = finite_difference_check(
        &mut store,
        &grads,
        |s| loss_of(s).map(|r| r.0),
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}
