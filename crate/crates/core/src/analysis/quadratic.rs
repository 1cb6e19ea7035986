use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f(x) = curvature / 2 * (x - a)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quadratic1D {
    pub a: f64,
    pub curvature: f64,
}

impl Quadratic1D {
    pub fn new(a: f64, curvature: f64) -> Result<Self> {
        if !(curvature > 0.0) || !a.is_finite() || !curvature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "need finite a and positive curvature, got a={a}, curvature={curvature}"
            )));
        }
        Ok(Self { a, curvature })
    }

    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.curvature * (x - self.a).powi(2)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.curvature * (x - self.a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incompatibility {
    pub x_f: f64,
    pub x_g: f64,
    /// Minimizer of `f + g`.
    pub x_star: f64,
    /// `g'(x_f)` and `f'(x_g)`.
    pub g_slope_at_x_f: f64,
    pub f_slope_at_x_g: f64,
    pub is_incompatible: bool,
    pub minimizer_distinct: bool,
}

pub fn incompatibility_check(f: Quadratic1D, g: Quadratic1D) -> Result<Incompatibility> {
    let f = Quadratic1D::new(f.a, f.curvature)?;
    let g = Quadratic1D::new(g.a, g.curvature)?;
    // offset form: exactly f.a when the minimizers coincide
    let x_star = f.a + g.curvature * (g.a - f.a) / (f.curvature + g.curvature);
    Ok(Incompatibility {
        x_f: f.a,
        x_g: g.a,
        x_star,
        g_slope_at_x_f: g.derivative(f.a),
        f_slope_at_x_g: f.derivative(g.a),
        is_incompatible: f.a != g.a,
        minimizer_distinct: x_star != f.a && x_star != g.a,
    })
}
