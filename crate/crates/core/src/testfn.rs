//! Radial test functions `φ(x) = F(|x − c|²)` with analytic derivatives,
//! used by the weak-form residual and the continuity modulus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// A Gaussian counts as supported within this many widths of its centre.
const GAUSSIAN_REACH: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunction {
    /// `exp(−|x−c|²/(2w²))`
    Gaussian { center: Vec<f64>, width: f64 },
    /// `exp(−1/(1 − |x−c|²/r²))` inside the ball of radius `r`.
    Bump { center: Vec<f64>, radius: f64 },
}

impl TestFunction {
    pub fn gaussian(center: &[f64], width: f64) -> Self {
        TestFunction::Gaussian {
            center: center.to_vec(),
            width,
        }
    }

    pub fn bump(center: &[f64], radius: f64) -> Self {
        TestFunction::Bump {
            center: center.to_vec(),
            radius,
        }
    }

    fn center(&self) -> &[f64] {
        match self {
            TestFunction::Gaussian { center, .. } | TestFunction::Bump { center, .. } => center,
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            TestFunction::Gaussian { width, .. } => GAUSSIAN_REACH * width,
            TestFunction::Bump { radius, .. } => *radius,
        }
    }

    /// Fails unless the support stays strictly inside the box.
    pub fn check(&self, grid: &Grid) -> Result<()> {
        let c = self.center();
        if c.len() != grid.dim() {
            return Err(Error::TestFunction(format!(
                "centre has {} coordinates on a {}-d grid",
                c.len(),
                grid.dim()
            )));
        }
        let r = self.support_radius();
        if !(r > 0.0) {
            return Err(Error::TestFunction("support radius must be positive".into()));
        }
        for (k, ax) in grid.axes().iter().enumerate() {
            if c[k] - r <= ax.min || c[k] + r >= ax.max {
                return Err(Error::TestFunction(format!(
                    "support [{}, {}] touches the boundary along axis {k}",
                    c[k] - r,
                    c[k] + r
                )));
            }
        }
        Ok(())
    }

    /// `(F, F', F'')` as functions of `s = |x − c|²`.
    fn profile(&self, s: f64) -> (f64, f64, f64) {
        match self {
            TestFunction::Gaussian { width, .. } => {
                let k = 1.0 / (2.0 * width * width);
                let f = (-k * s).exp();
                (f, -k * f, k * k * f)
            }
            TestFunction::Bump { radius, .. } => {
                let r2 = radius * radius;
                let q = 1.0 - s / r2;
                if q <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let f = (-1.0 / q).exp();
                // d/ds of −1/q is −1/(q² r²)
                let g = -1.0 / (q * q * r2);
                let dg = -2.0 / (q * q * q * r2 * r2);
                (f, f * g, f * (g * g + dg))
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let c = self.center();
        let s: f64 = x.iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum();
        self.profile(s).0
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let c = self.center();
        let s: f64 = x.iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum();
        let (_, f1, _) = self.profile(s);
        let mut g = [0.0; 2];
        for k in 0..x.len() {
            g[k] = 2.0 * f1 * (x[k] - c[k]);
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> [[f64; 2]; 2] {
        let c = self.center();
        let s: f64 = x.iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum();
        let (_, f1, f2) = self.profile(s);
        let mut h = [[0.0; 2]; 2];
        for i in 0..x.len() {
            for j in 0..x.len() {
                h[i][j] = 4.0 * f2 * (x[i] - c[i]) * (x[j] - c[j]) + if i == j { 2.0 * f1 } else { 0.0 };
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::central_difference;

    #[test]
    fn derivatives_match_finite_differences() {
        let fns = [
            TestFunction::gaussian(&[0.2, -0.1], 0.7),
            TestFunction::bump(&[0.1, 0.3], 1.5),
        ];
        let x = [0.45, -0.32];
        for f in &fns {
            let g = f.gradient(&x);
            let h = f.hessian(&x);
            for k in 0..2 {
                let fd = central_difference(|y| f.value(y), &x, k);
                assert!((fd - g[k]).abs() < 1e-9, "{f:?}");
                for j in 0..2 {
                    let fd = central_difference(|y| f.gradient(y)[j], &x, k);
                    assert!((fd - h[j][k]).abs() < 1e-8, "{f:?}");
                }
            }
        }
    }

    #[test]
    fn support_check() {
        let g = Grid::uniform_1d(-4.0, 4.0, 64).unwrap();
        TestFunction::gaussian(&[0.0], 0.4).check(&g).unwrap();
        assert!(matches!(
            TestFunction::gaussian(&[0.0], 0.6).check(&g),
            Err(Error::TestFunction(_))
        ));
        assert!(TestFunction::bump(&[3.5], 0.5).check(&g).is_err());
        assert_eq!(TestFunction::bump(&[0.0], 1.0).value(&[1.0]), 0.0);
    }
}
