//! Convex functions `Q` vanishing at the base minimum `a₁`.

use crate::vecops::{norm, sub};

/// Finite-difference step for default Hessians.
pub const FD_STEP: f64 = 1e-5;

/// Convex `Q: D̄ → ℝ` with `Q(a₁) = 0`.
pub trait QFunction: Send + Sync {
    fn dim(&self) -> usize;

    /// The base minimum `a₁`.
    fn base(&self) -> &[f64];

    fn value(&self, u: &[f64]) -> f64;

    fn grad(&self, u: &[f64], out: &mut [f64]);

    /// Row-major Hessian; central differences of [`QFunction::grad`] by default.
    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let mut up = u.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for j in 0..n {
            up[j] = u[j] + FD_STEP;
            self.grad(&up, &mut gp);
            up[j] = u[j] - FD_STEP;
            self.grad(&up, &mut gm);
            up[j] = u[j];
            for i in 0..n {
                out[i * n + j] = (gp[i] - gm[i]) / (2.0 * FD_STEP);
            }
        }
        for i in 0..n {
            for j in 0..i {
                let m = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = m;
                out[j * n + i] = m;
            }
        }
    }

    /// True when level sets are spheres around `a₁`, so the polar map is a straight ray.
    fn is_radial(&self) -> bool {
        false
    }

    fn label(&self) -> String;
}

/// `Q(u) = |u − a₁|`.
#[derive(Debug, Clone)]
pub struct RadialQ {
    a1: Vec<f64>,
}

impl RadialQ {
    pub fn new(a1: &[f64]) -> Self {
        Self { a1: a1.to_vec() }
    }
}

impl QFunction for RadialQ {
    fn dim(&self) -> usize {
        self.a1.len()
    }

    fn base(&self) -> &[f64] {
        &self.a1
    }

    fn value(&self, u: &[f64]) -> f64 {
        crate::vecops::dist(u, &self.a1)
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        let v = sub(u, &self.a1);
        let r = norm(&v);
        for (o, x) in out.iter_mut().zip(&v) {
            *o = if r > 0.0 { x / r } else { 0.0 };
        }
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let v = sub(u, &self.a1);
        let r = norm(&v);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = if r > 0.0 {
                    (if i == j { 1.0 } else { 0.0 } - v[i] * v[j] / (r * r)) / r
                } else {
                    0.0
                };
            }
        }
    }

    fn is_radial(&self) -> bool {
        true
    }

    fn label(&self) -> String {
        "radial".into()
    }
}

/// `Q(u) = |Λ(u − a₁)|` with diagonal `Λ`.
///
/// Convex with elliptic level sets. Unless every scale equals 1 it is not
/// first-order normalized at `a₁`, so it serves to exercise the polar map on
/// curved trajectories rather than to drive a flow.
#[derive(Debug, Clone)]
pub struct AnisotropicQ {
    a1: Vec<f64>,
    scales: Vec<f64>,
}

impl AnisotropicQ {
    pub fn new(a1: &[f64], scales: &[f64]) -> Self {
        assert_eq!(a1.len(), scales.len());
        assert!(scales.iter().all(|s| *s > 0.0));
        Self {
            a1: a1.to_vec(),
            scales: scales.to_vec(),
        }
    }

    fn scaled(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.a1)
            .zip(&self.scales)
            .map(|((x, a), s)| s * (x - a))
            .collect()
    }
}

impl QFunction for AnisotropicQ {
    fn dim(&self) -> usize {
        self.a1.len()
    }

    fn base(&self) -> &[f64] {
        &self.a1
    }

    fn value(&self, u: &[f64]) -> f64 {
        norm(&self.scaled(u))
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        let w = self.scaled(u);
        let r = norm(&w);
        for i in 0..out.len() {
            out[i] = if r > 0.0 { self.scales[i] * w[i] / r } else { 0.0 };
        }
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let n = self.dim();
        let w = self.scaled(u);
        let r = norm(&w);
        if r == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        for i in 0..n {
            for j in 0..n {
                let li = self.scales[i];
                let lj = self.scales[j];
                let diag = if i == j { li * li / r } else { 0.0 };
                out[i * n + j] = diag - (li * w[i]) * (lj * w[j]) / (r * r * r);
            }
        }
    }

    fn label(&self) -> String {
        format!("anisotropic{:?}", self.scales)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FdOnly(AnisotropicQ);

    impl QFunction for FdOnly {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn base(&self) -> &[f64] {
            self.0.base()
        }
        fn value(&self, u: &[f64]) -> f64 {
            self.0.value(u)
        }
        fn grad(&self, u: &[f64], out: &mut [f64]) {
            self.0.grad(u, out)
        }
        fn label(&self) -> String {
            "fd".into()
        }
    }

    #[test]
    fn default_hessian_matches_closed_form() {
        let q = AnisotropicQ::new(&[1.0, 0.0], &[1.0, 2.5]);
        let fd = FdOnly(q.clone());
        let u = [1.7, -0.4];
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        q.hess(&u, &mut a);
        fd.hess(&u, &mut b);
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() < 1e-8, "{a:?} {b:?}");
        }
    }

    #[test]
    fn radial_hessian_is_projector_over_distance() {
        let q = RadialQ::new(&[0.0, 0.0, 0.0]);
        let mut h = [0.0; 9];
        q.hess(&[2.0, 0.0, 0.0], &mut h);
        assert_eq!(h, [0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5]);
    }
}
