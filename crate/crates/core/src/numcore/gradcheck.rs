//! Central-difference validation of analytic gradients.

use super::{Float, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-5..=1e-3).contains(&eps) {
        return Err(Error::invalid(format!("grad_check eps {eps} outside [1e-5, 1e-3]")));
    }
    Ok(())
}

fn scalar_of<F: Float>(g: &Graph<F>, out: Var) -> Result<f64> {
    let t = g.value(out);
    if t.numel() != 1 {
        return Err(Error::invalid(format!(
            "grad_check needs a scalar function, got shape {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0].as_f64())
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over all input entries of `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` builds a scalar from differentiable inputs placed on a fresh graph.
pub fn grad_check<F, Fun>(inputs: &[Tensor<F>], eps: f64, f: Fun) -> Result<f64>
where
    F: Float,
    Fun: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |values: &[Tensor<F>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.numel() {
            let analytic = grads.get(vars[i]).map_or(0.0, |g| g[k].as_f64());
            let orig = input.data()[k];
            probe[i].data_mut()[k] = F::from_f64(orig.as_f64() + eps);
            let plus = eval(&probe)?;
            probe[i].data_mut()[k] = F::from_f64(orig.as_f64() - eps);
            let minus = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

/// Same check, with respect to every entry of every parameter in `store`.
pub fn grad_check_params<F, Fun>(store: &ParamStore<F>, eps: f64, f: Fun) -> Result<f64>
where
    F: Float,
    Fun: Fn(&mut Graph<F>, &ParamStore<F>) -> Result<Var>,
{
    check_eps(eps)?;
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    scalar_of(&g, out)?;
    let grads = g.backward(out)?;
    let mut analytic_store = store.clone();
    analytic_store.zero_grad();
    g.accumulate_param_grads(&grads, &mut analytic_store);

    let eval = |s: &ParamStore<F>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        scalar_of(&g, out)
    };

    let mut worst = 0.0f64;
    let mut probe = store.clone();
    for id in store.ids() {
        let n = store.get(id).tensor.numel();
        for k in 0..n {
            let analytic = analytic_store
                .get(id)
                .tensor
                .grad()
                .map_or(0.0, |g| g[k].as_f64());
            let orig = store.get(id).tensor.data()[k];
            probe.get_mut(id).tensor.data_mut()[k] = F::from_f64(orig.as_f64() + eps);
            let plus = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[k] = F::from_f64(orig.as_f64() - eps);
            let minus = eval(&probe)?;
            probe.get_mut(id).tensor.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let x = Tensor::<f64>::new(&[2, 3], vec![0.5, -1.5, 2.0, 0.1, -0.7, 1.2]).unwrap();
        let err = grad_check(&[x], 1e-4, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            Ok(g.sum_all(sq))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn softmax_cross_entropy_on_three_logits() {
        let x = Tensor::<f64>::new(&[1, 3], vec![0.2, -1.3, 0.7]).unwrap();
        let err = grad_check(&[x], 1e-4, |g, v| g.cross_entropy(v[0], &[2], &[1.0])).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let x = Tensor::<f64>::ones(&[3]);
        assert!(grad_check(&[x], 1e-4, |g, v| Ok(g.tanh(v[0]))).is_err());
    }

    #[test]
    fn eps_out_of_range_is_an_error() {
        let x = Tensor::<f64>::ones(&[1]);
        assert!(grad_check(&[x], 1e-2, |g, v| Ok(g.sum_all(v[0]))).is_err());
    }
}
