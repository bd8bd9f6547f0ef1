//! Central finite-difference gradient checking.

use super::mlp::MlpModel;
use super::rng::SeededRng;
use crate::error::{ensure_dims, Error, Result};

/// Anything whose parameters can be viewed as one flat vector.
pub trait Parameterized {
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()>;
}

impl Parameterized for MlpModel {
    fn flat_params(&self) -> Vec<f64> {
        MlpModel::flat_params(self)
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        MlpModel::set_flat_params(self, flat)
    }
}

/// Relative error used throughout: `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare `analytic` against central differences of `f` at `point`, on
/// `probes` coordinates (all of them when `probes >= point.len()`, otherwise
/// a seeded random subset). Returns the maximum relative error.
pub fn check_gradient<F>(
    point: &[f64],
    analytic: &[f64],
    probes: usize,
    epsilon: f64,
    rng: &mut SeededRng,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    ensure_dims(point.len(), analytic.len(), "analytic gradient")?;
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let indices: Vec<usize> = if probes >= point.len() {
        (0..point.len()).collect()
    } else {
        rng.sample_indices(point.len(), probes)
    };
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in indices {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = f(&x)?;
        x[i] = orig - epsilon;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at probe {i}")));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check over the parameters of a model. `loss_and_grad` returns
/// the loss and its analytic gradient in [`Parameterized::flat_params`]
/// order.
pub fn grad_check<M, F>(
    model: &M,
    probes: usize,
    epsilon: f64,
    rng: &mut SeededRng,
    loss_and_grad: F,
) -> Result<f64>
where
    M: Parameterized + Clone,
    F: Fn(&M) -> Result<(f64, Vec<f64>)>,
{
    let (loss, analytic) = loss_and_grad(model)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let point = model.flat_params();
    let mut probe = model.clone();
    check_gradient(&point, &analytic, probes, epsilon, rng, |p| {
        probe.set_flat_params(p)?;
        loss_and_grad(&probe).map(|(l, _)| l)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::cross_entropy_grad;
    use crate::nn::matrix::DenseMatrix;
    use crate::nn::mlp::MlpGradients;
    use crate::nn::vector::dot;

    fn squared_loss(m: &MlpModel, data: &[(Vec<f64>, Vec<f64>)]) -> Result<(f64, Vec<f64>)> {
        let mut g = MlpGradients::zeros_like(m);
        let mut loss = 0.0;
        for (x, y) in data {
            let c = m.forward(x, None)?;
            let r: Vec<f64> = c.output().iter().zip(y).map(|(a, b)| a - b).collect();
            loss += dot(&r, &r);
            let go: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
            m.backward_into(&c, &go, &mut g)?;
        }
        Ok((loss, g.flat()))
    }

    #[test]
    fn linear_squared_loss_is_exact() {
        let mut rng = SeededRng::new(1);
        let m = MlpModel::init(&[4, 3], None, &mut rng).unwrap();
        let data: Vec<_> = (0..5)
            .map(|_| (rng.normal_vec(4, 1.0), rng.normal_vec(3, 1.0)))
            .collect();
        let err = grad_check(&m, usize::MAX, 1e-5, &mut rng, |m| squared_loss(m, &data)).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    fn ce_loss(
        m: &MlpModel,
        xs: &[Vec<f64>],
        conds: &[Vec<f64>],
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let caches: Vec<_> = xs
            .iter()
            .zip(conds)
            .map(|(x, c)| m.forward(x, Some(c)))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<f64>> = caches.iter().map(|c| c.output().to_vec()).collect();
        let (loss, grad) = cross_entropy_grad(&DenseMatrix::from_rows(&rows)?, labels)?;
        let mut g = MlpGradients::zeros_like(m);
        for (i, c) in caches.iter().enumerate() {
            m.backward_into(c, grad.row(i), &mut g)?;
        }
        Ok((loss, g.flat()))
    }

    #[test]
    fn relu_net_cross_entropy() {
        let mut rng = SeededRng::new(2);
        let m = MlpModel::init(&[5, 8, 6, 4], Some(3), &mut rng).unwrap();
        let xs: Vec<_> = (0..6).map(|_| rng.normal_vec(5, 1.0)).collect();
        let cs: Vec<_> = (0..6).map(|_| rng.normal_vec(3, 1.0)).collect();
        let labels = vec![0, 1, 2, 3, 0, 1];
        let err = grad_check(&m, usize::MAX, 1e-6, &mut rng, |m| ce_loss(m, &xs, &cs, &labels))
            .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let mut rng = SeededRng::new(3);
        let m = MlpModel::init(&[4, 3], None, &mut rng).unwrap();
        let data: Vec<_> = (0..5)
            .map(|_| (rng.normal_vec(4, 1.0), rng.normal_vec(3, 1.0)))
            .collect();
        let err = grad_check(&m, usize::MAX, 1e-5, &mut rng, |m| {
            squared_loss(m, &data).map(|(l, g)| (l, g.into_iter().map(|v| 2.0 * v).collect()))
        })
        .unwrap();
        // |2a − a| / max(|2a|, |a|) = 1/2
        assert!(err > 0.1);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut rng = SeededRng::new(4);
        let r = check_gradient(&[1.0], &[0.0], 1, 1e-3, &mut rng, |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
