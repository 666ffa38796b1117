use super::params::{ParamStore, Session};
use super::tape::Var;
use crate::error::{Error, Result};

/// Finite-difference comparison for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub step: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| !t.flagged)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(|t| t.flagged)
    }
}

/// Central-difference gradient checker.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Gradients smaller than this are compared on an absolute scale.
    pub floor: f64,
    /// Multiplier applied to the analytic adjoint; anything but 1.0 turns the
    /// checker into a negative control.
    pub adjoint_scale: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            adjoint_scale: 1.0,
        }
    }
}

impl GradCheck {
    pub fn new(step: f64, tol: f64) -> Self {
        Self {
            step,
            tol,
            ..Self::default()
        }
    }

    pub fn corrupt_adjoint(mut self, factor: f64) -> Self {
        self.adjoint_scale = factor;
        self
    }

    /// Compares `backward` against central differences of `loss_fn` for every
    /// entry of every tensor in `params`.
    pub fn run<F>(&self, params: &ParamStore, loss_fn: F) -> Result<GradCheckReport>
    where
        F: Fn(&mut Session) -> Result<Var>,
    {
        let eval = |p: &ParamStore| -> Result<f64> {
            let mut s = Session::inference(p);
            let loss = loss_fn(&mut s)?;
            Ok(s.scalar(loss))
        };

        let (base, analytic) = {
            let mut s = Session::new(params);
            let loss = loss_fn(&mut s)?;
            (s.scalar(loss), s.backward(loss)?)
        };
        let again = eval(params)?;
        if base.to_bits() != again.to_bits() {
            return Err(Error::Numerical(format!(
                "loss is not deterministic: {base} then {again}"
            )));
        }

        let mut work = params.clone();
        let names: Vec<String> = params.names().cloned().collect();
        let mut tensors = Vec::with_capacity(names.len());
        for name in names {
            let n = params.get(&name)?.len();
            let mut max_rel: f64 = 0.0;
            let mut max_abs: f64 = 0.0;
            #[allow(clippy::needless_range_loop)]
            for i in 0..n {
                let orig = params.get(&name)?.data()[i];
                work.get_mut(&name)?.data_mut()[i] = orig + self.step;
                let up = eval(&work)?;
                work.get_mut(&name)?.data_mut()[i] = orig - self.step;
                let down = eval(&work)?;
                work.get_mut(&name)?.data_mut()[i] = orig;

                let numeric = (up - down) / (2.0 * self.step);
                let exact = analytic[&name][i] * self.adjoint_scale;
                let abs = (numeric - exact).abs();
                let denom = numeric.abs().max(exact.abs()).max(self.floor);
                max_abs = max_abs.max(abs);
                max_rel = max_rel.max(abs / denom);
            }
            tensors.push(TensorCheck {
                name,
                max_rel_error: max_rel,
                max_abs_error: max_abs,
                flagged: max_rel > self.tol,
            });
        }
        Ok(GradCheckReport {
            tol: self.tol,
            step: self.step,
            tensors,
        })
    }
}
