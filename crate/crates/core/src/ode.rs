//! Fixed-step explicit integrators over flat state vectors.

use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rk4" => Ok(Method::Rk4),
            "euler" => Ok(Method::Euler),
            other => Err(Error::config(format!("unknown integrator '{other}'"))),
        }
    }
}

/// Number of uniform steps covering `[0, horizon]` and the effective step size.
///
/// The requested step is shrunk so that an integer number of steps lands
/// exactly on the horizon.
pub fn uniform_grid(horizon: f64, step: f64) -> Result<(usize, f64)> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::config(format!(
            "horizon must be finite and >= 0, got {horizon}"
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::config(format!(
            "step must be finite and > 0, got {step}"
        )));
    }
    if horizon == 0.0 {
        return Ok((0, step));
    }
    let ratio = horizon / step;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    };
    let n = n.max(1);
    Ok((n, horizon / n as f64))
}

/// Reusable buffers for one system size.
pub struct Stepper {
    method: Method,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(method: Method, dim: usize) -> Self {
        let z = vec![0.0; dim];
        Self {
            method,
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    /// Advances `y` in place by one step of size `h` from time `t`.
    pub fn step<F>(&mut self, t: f64, y: &mut [f64], h: f64, rhs: &mut F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        match self.method {
            Method::Euler => {
                rhs(t, y, &mut self.k1);
                for (yi, k) in y.iter_mut().zip(&self.k1) {
                    *yi += h * k;
                }
            }
            Method::Rk4 => {
                rhs(t, y, &mut self.k1);
                for i in 0..y.len() {
                    self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
                }
                rhs(t + 0.5 * h, &self.tmp, &mut self.k2);
                for i in 0..y.len() {
                    self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
                }
                rhs(t + 0.5 * h, &self.tmp, &mut self.k3);
                for i in 0..y.len() {
                    self.tmp[i] = y[i] + h * self.k3[i];
                }
                rhs(t + h, &self.tmp, &mut self.k4);
                for i in 0..y.len() {
                    y[i] +=
                        h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
                }
            }
        }
    }
}
