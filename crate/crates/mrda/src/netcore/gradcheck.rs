//! Central finite-difference verification of reverse-mode gradients.

use ndarray::ArrayD;

use crate::error::Result;

use super::graph::{Graph, Var};
use super::scalar::Scalar;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Relative error with a floor so near-zero gradient pairs compare on an
/// absolute scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares the reverse-mode gradient of a scalar-valued composite against
/// central finite differences, element by element, and returns the maximum
/// relative error over all inputs.
///
/// `build` must be a pure function of the input values.
pub fn grad_check<T, F>(build: F, inputs: &[ArrayD<T>], eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    // Reverse-mode gradients.
    let mut g = Graph::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<ArrayD<f64>> = vars
        .iter()
        .zip(inputs.iter())
        .map(|(v, x)| match grads.get(*v) {
            Some(gv) => g.value(gv).mapv(|t| t.to_f64()),
            None => ArrayD::zeros(x.raw_dim()),
        })
        .collect();

    let eval = |perturbed: &[ArrayD<T>]| -> Result<f64> {
        let mut g = Graph::<T>::new();
        let vars: Vec<Var> = perturbed.iter().map(|x| g.constant(x.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.scalar_value(loss).to_f64())
    };

    let mut max_err = 0.0f64;
    let mut work: Vec<ArrayD<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.len();
        for j in 0..n {
            let orig = work[i].as_slice_mut().expect("standard layout")[j];
            work[i].as_slice_mut().expect("standard layout")[j] =
                orig + T::from_f64(eps);
            let plus = eval(&work)?;
            work[i].as_slice_mut().expect("standard layout")[j] =
                orig - T::from_f64(eps);
            let minus = eval(&work)?;
            work[i].as_slice_mut().expect("standard layout")[j] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let ad = analytic[i].as_slice().expect("standard layout")[j];
            max_err = max_err.max(rel_err(ad, fd));
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_op_is_exact() {
        let x = arr1(&[0.3, -0.7, 1.1]).into_dyn();
        let err = grad_check(
            |g, vars| {
                let s = g.scale(vars[0], 2.5);
                Ok(g.sum(s))
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-8, "linear rel err {err}");
    }

    #[test]
    fn leaky_relu_away_from_zero() {
        let x = arr1(&[0.4, -0.6, 1.3, -2.0]).into_dyn();
        let err = grad_check(
            |g, vars| {
                let y = g.leaky_relu(vars[0], 0.1);
                Ok(g.sum(y))
            },
            &[x],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "leaky relu rel err {err}");
    }

    #[test]
    fn product_and_sigmoid_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: ndarray::ArrayD<f64> =
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[4]), |_| rng.random_range(-1.0..1.0));
        let y: ndarray::ArrayD<f64> =
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[4]), |_| rng.random_range(-1.0..1.0));
        let err = grad_check(
            |g, vars| {
                let p = g.mul(vars[0], vars[1])?;
                let s = g.sigmoid(p);
                Ok(g.sum(s))
            },
            &[x, y],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-4, "chain rel err {err}");
    }

    #[test]
    fn softmax_log_chain() {
        let x = arr1(&[0.2, -0.4, 0.9, 0.1]).into_dyn();
        let t = arr1(&[0.4, 0.3, 0.2, 0.1]).into_dyn();
        let err = grad_check(
            |g, vars| {
                let q = g.log_softmax(vars[0])?;
                let w = g.mul(q, vars[1])?;
                Ok(g.sum(w))
            },
            &[x, t],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err < 1e-6, "softmax rel err {err}");
    }
}
