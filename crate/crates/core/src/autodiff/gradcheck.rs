use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar graph against central
/// differences with step `h`.
///
/// `build` must construct the same scalar from the supplied parameter
/// leaves on every call. Returns the maximum over all parameter entries of
/// `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Range {
            what: "grad_check step",
            value: h,
            expected: "> 0",
        });
    }
    let mut params: Vec<Tensor> = params.iter().map(|p| p.clone().with_grad()).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p)).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.scalar(root))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p)).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&params)
        .map(|(&v, p)| g.grad(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();

    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            params[pi].data_mut()[e] = orig + h;
            let up = eval(&params)?;
            params[pi].data_mut()[e] = orig - h;
            let down = eval(&params)?;
            params[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic[pi][e] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
