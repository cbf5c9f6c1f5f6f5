use crate::error::{Error, Result};

/// Gradient of a scalar loss, one flat tensor per parameter tensor and in the
/// same order as the parameter set it differentiates.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    tensors: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn new(tensors: Vec<Vec<f64>>) -> Self {
        Gradient { tensors }
    }

    pub fn zeros_like(params: &[&[f64]]) -> Self {
        Gradient {
            tensors: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    /// True when this gradient has one tensor of matching length per
    /// parameter tensor.
    pub fn is_congruent(&self, params: &[&[f64]]) -> bool {
        self.tensors.len() == params.len()
            && self.tensors.iter().zip(params).all(|(g, p)| g.len() == p.len())
    }

    pub fn add_assign(&mut self, other: &Gradient) -> Result<()> {
        if self.tensors.len() != other.tensors.len()
            || self
                .tensors
                .iter()
                .zip(&other.tensors)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::shape("gradient layouts differ"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// A scalar objective over a mutable parameter set, with an analytic
/// gradient.
pub trait Differentiable {
    /// Parameter tensors in gradient order.
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn loss(&self) -> Result<f64>;

    fn gradient(&self) -> Result<Gradient>;
}

/// Floor on the denominator of the relative error; gradients smaller than
/// this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient with central differences of step `h` and
/// returns `max |analytic − numeric| / max(|analytic|, |numeric|, floor)`.
///
/// Parameters are restored exactly after each probe.
pub fn grad_check<D: Differentiable + ?Sized>(objective: &mut D, h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let analytic = objective.gradient()?;
    let layout: Vec<usize> = objective.params_mut().iter().map(|p| p.len()).collect();
    if analytic.tensors.len() != layout.len()
        || analytic.tensors.iter().zip(&layout).any(|(g, &n)| g.len() != n)
    {
        return Err(Error::shape("analytic gradient is not congruent with parameters"));
    }

    let mut worst = 0.0f64;
    for (t, &len) in layout.iter().enumerate() {
        for i in 0..len {
            let original = objective.params_mut()[t][i];
            objective.params_mut()[t][i] = original + h;
            let plus = objective.loss()?;
            objective.params_mut()[t][i] = original - h;
            let minus = objective.loss()?;
            objective.params_mut()[t][i] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.tensors[t][i];
            let denom = a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
