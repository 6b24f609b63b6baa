//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::NumericsError;
use crate::params::{Gradients, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Tensors with more entries than this are checked on a random sample.
    pub max_coords_per_param: usize,
    /// Denominator floor of the relative error, so that coordinates whose true
    /// gradient is ~0 are judged on absolute error.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_param: 64,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` with central differences of `loss` around the current
/// parameter values. Every parameter is restored afterwards.
pub fn finite_difference_check<F, E>(
    store: &mut ParamStore,
    analytic: &Gradients,
    mut loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&ParamStore) -> Result<f64, E>,
    E: From<NumericsError>,
{
    if !(opts.eps.is_finite() && opts.eps > 0.0) {
        return Err(NumericsError::InvalidArgument(format!(
            "finite-difference step must be positive, got {}",
            opts.eps
        ))
        .into());
    }
    let mut rng = rand::rngs::StdRng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_coord: 0,
        coords_checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if n <= opts.max_coords_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let grad = analytic.dense(id, store);
        for j in coords {
            let original = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = original + opts.eps;
            let plus = loss(store);
            store.value_mut(id).data_mut()[j] = original - opts.eps;
            let minus = loss(store);
            store.value_mut(id).data_mut()[j] = original;
            let numeric = (plus? - minus?) / (2.0 * opts.eps);
            let err = relative_error(grad.data()[j], numeric, opts.abs_floor);
            report.coords_checked += 1;
            if report.worst_param.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_coord = j;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::Init;
    use crate::tensor::Tensor;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = ParamStore::new();
        let w = s.add("w", 4, 3, Init::XavierUniform, &mut rng).unwrap();
        let x = Tensor::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let f = |s: &ParamStore| -> Result<(Gradients, f64), NumericsError> {
            let mut g = Graph::new(s);
            let xv = g.constant(x.clone());
            let wv = g.param(w);
            let y = g.matmul(xv, wv)?;
            let l = g.sum(y);
            Ok((g.backward(l)?, g.value(l).data()[0]))
        };
        let (grads, _) = f(&s).unwrap();
        let report = finite_difference_check(
            &mut s,
            &grads,
            |s| f(s).map(|r| r.1),
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-10, "{report:?}");
        assert_eq!(report.coords_checked, 12);
    }

    #[test]
    fn zero_step_rejected() {
        let mut s = ParamStore::new();
        let grads = Gradients::zeros_like(&s);
        let opts = GradCheckOptions {
            eps: 0.0,
            ..Default::default()
        };
        let r: Result<_, NumericsError> =
            finite_difference_check(&mut s, &grads, |_| Ok(0.0), opts);
        assert!(matches!(r, Err(NumericsError::InvalidArgument(_))));
    }
}
