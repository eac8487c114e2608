//! The differentiable log-density contract shared by models and samplers.

use crate::ad::{value_and_gradient, Real};
use crate::error::{Error, Result};
use crate::space::ParameterSpace;

/// A model written once, generically over the scalar type.
///
/// `log_density_real` receives unconstrained coordinates and must include the
/// log-Jacobian of every non-identity transform. Points outside the model's
/// support evaluate to negative infinity.
pub trait Model: Send + Sync {
    fn space(&self) -> &ParameterSpace;
    fn log_density_real<R: Real>(&self, v: &[R]) -> R;
}

/// Object-safe view of a model, as consumed by the sampler.
pub trait Target: Send + Sync {
    fn space(&self) -> &ParameterSpace;

    fn log_density(&self, v: &[f64]) -> f64;

    /// Value and gradient. The gradient is meaningless when the value is not
    /// finite.
    fn log_density_and_gradient(&self, v: &[f64]) -> (f64, Vec<f64>);

    fn dim(&self) -> usize {
        self.space().dim()
    }

    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        self.log_density_and_gradient(v).1
    }
}

impl<M: Model> Target for M {
    fn space(&self) -> &ParameterSpace {
        Model::space(self)
    }

    fn log_density(&self, v: &[f64]) -> f64 {
        self.log_density_real::<f64>(v)
    }

    fn log_density_and_gradient(&self, v: &[f64]) -> (f64, Vec<f64>) {
        value_and_gradient(v, |x| self.log_density_real(x))
    }
}

/// Maximum over coordinates of `|analytic - central FD| / max(1, |analytic|)`.
///
/// The finite-difference step for coordinate `i` is `step * max(1, |v_i|)`.
pub fn check_gradient(model: &dyn Target, v: &[f64], step: f64) -> Result<f64> {
    if v.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: v.len(),
        });
    }
    let (value, grad) = model.log_density_and_gradient(v);
    let mut worst: f64 = 0.0;
    let mut x = v.to_vec();
    for i in 0..v.len() {
        let h = step * v[i].abs().max(1.0);
        x[i] = v[i] + h;
        let up = model.log_density(&x);
        x[i] = v[i] - h;
        let dn = model.log_density(&x);
        x[i] = v[i];
        if !(value.is_finite() && up.is_finite() && dn.is_finite()) {
            return Err(Error::GradientCheck { coordinate: i });
        }
        let fd = (up - dn) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}


#[cfg(test)]
mod tests {
    use super::testing::StdNormal;
    use super::*;
    use crate::space::TransformKind;

    #[test]
    fn quadratic_is_exact() {
        let m = StdNormal::new(3);
        let err = check_gradient(&m, &[0.3, -1.7, 4.2], 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    struct Nowhere(ParameterSpace);

    impl Model for Nowhere {
        fn space(&self) -> &ParameterSpace {
            &self.0
        }
        fn log_density_real<R: Real>(&self, _v: &[R]) -> R {
            R::from_f64(f64::NEG_INFINITY)
        }
    }

    #[test]
    fn support_violation_reports_coordinate() {
        let m = Nowhere(ParameterSpace::new(vec![("x", 2, TransformKind::Identity)]).unwrap());
        match check_gradient(&m, &[0.0, 0.0], 1e-5) {
            Err(Error::GradientCheck { coordinate }) => assert_eq!(coordinate, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_length_is_rejected() {
        let m = StdNormal::new(2);
        assert!(matches!(
            check_gradient(&m, &[0.0], 1e-5),
            Err(Error::Dimension { .. })
        ));
    }
}
