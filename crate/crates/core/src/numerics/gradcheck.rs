use super::tensor::{Grads, ParamSet};
use crate::error::{Error, Result};

/// Compare analytic gradients against central differences.
///
/// `loss_fn` evaluates the loss and its analytic gradient at the given
/// parameters. Every element of every tensor with `requires_grad` is
/// perturbed by `±h`; the result is the maximum of
/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn grad_check<L>(loss_fn: L, params: &ParamSet<f64>, h: f64) -> Result<f64>
where
    L: Fn(&ParamSet<f64>) -> Result<(f64, Grads<f64>)>,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(loss));
    }
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for (ti, t) in params.tensors.iter().enumerate() {
        if !t.requires_grad {
            continue;
        }
        for e in 0..t.numel() {
            let orig = t.data[e];
            probe.tensors[ti].data[e] = orig + h;
            let (up, _) = loss_fn(&probe)?;
            probe.tensors[ti].data[e] = orig - h;
            let (down, _) = loss_fn(&probe)?;
            probe.tensors[ti].data[e] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(if up.is_finite() { down } else { up }));
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(ti).and_then(|g| g.as_ref()).map_or(0.0, |g| g[e]);
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    fn theta(x: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::default();
        ps.push("theta", Tensor::new(vec![1], vec![x]).unwrap());
        ps
    }

    #[test]
    fn quadratic() {
        let err = grad_check(
            |p| {
                let x = p.tensors[0].data[0];
                Ok((0.5 * x * x, vec![Some(vec![x])]))
            },
            &theta(3.0),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_loss() {
        let err = grad_check(|_| Ok((2.0, vec![Some(vec![0.0])])), &theta(1.0), 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_detected() {
        let err = grad_check(
            |p| {
                let x = p.tensors[0].data[0];
                Ok((x * x, vec![Some(vec![x])]))
            },
            &theta(3.0),
            1e-5,
        )
        .unwrap();
        assert!(err > 0.4);
    }

    #[test]
    fn non_finite_loss_is_error() {
        let r = grad_check(|_| Ok((f64::NAN, vec![None])), &theta(1.0), 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
