//! Closed-form potentials with analytic gradients and Hessians.

use super::Evaluator;

/// `W(u) = |u|⁴ + 2u₁u₂² − (2/3)u₁³ − |u|² + 2/3`, wells at the cube roots of unity.
#[derive(Debug, Clone, Copy, Default)]
pub struct TripleWell;

impl Evaluator for TripleWell {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, u: &[f64]) -> f64 {
        let (a, b) = (u[0], u[1]);
        let s = a * a + b * b;
        s * s + 2.0 * a * b * b - (2.0 / 3.0) * a * a * a - s + 2.0 / 3.0
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        let (a, b) = (u[0], u[1]);
        let s = a * a + b * b;
        out[0] = 4.0 * s * a + 2.0 * b * b - 2.0 * a * a - 2.0 * a;
        out[1] = 4.0 * s * b + 4.0 * a * b - 2.0 * b;
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let (a, b) = (u[0], u[1]);
        let s = a * a + b * b;
        out[0] = 4.0 * s + 8.0 * a * a - 4.0 * a - 2.0;
        out[1] = 8.0 * a * b + 4.0 * b;
        out[2] = out[1];
        out[3] = 4.0 * s + 8.0 * b * b + 4.0 * a - 2.0;
    }

    fn value_grad(&self, u: &[f64], out: &mut [f64]) -> f64 {
        let (a, b) = (u[0], u[1]);
        let s = a * a + b * b;
        out[0] = 4.0 * s * a + 2.0 * b * b - 2.0 * a * a - 2.0 * a;
        out[1] = 4.0 * s * b + 4.0 * a * b - 2.0 * b;
        s * s + 2.0 * a * b * b - (2.0 / 3.0) * a * a * a - s + 2.0 / 3.0
    }
}

/// `W(u) = |u|⁴ − (4/√3)(u₁² − u₂²)u₃ − (2/3)|u|² + 5/9`, wells at the
/// vertices of a regular tetrahedron.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadrupleWell;

const K4: f64 = 2.309_401_076_758_503; // 4/√3

impl Evaluator for QuadrupleWell {
    fn dim(&self) -> usize {
        3
    }

    fn value(&self, u: &[f64]) -> f64 {
        let (a, b, c) = (u[0], u[1], u[2]);
        let s = a * a + b * b + c * c;
        s * s - K4 * (a * a - b * b) * c - (2.0 / 3.0) * s + 5.0 / 9.0
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        let (a, b, c) = (u[0], u[1], u[2]);
        let s = a * a + b * b + c * c;
        out[0] = 4.0 * s * a - 2.0 * K4 * a * c - (4.0 / 3.0) * a;
        out[1] = 4.0 * s * b + 2.0 * K4 * b * c - (4.0 / 3.0) * b;
        out[2] = 4.0 * s * c - K4 * (a * a - b * b) - (4.0 / 3.0) * c;
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let (a, b, c) = (u[0], u[1], u[2]);
        let s = a * a + b * b + c * c;
        out[0] = 4.0 * s + 8.0 * a * a - 2.0 * K4 * c - 4.0 / 3.0;
        out[4] = 4.0 * s + 8.0 * b * b + 2.0 * K4 * c - 4.0 / 3.0;
        out[8] = 4.0 * s + 8.0 * c * c - 4.0 / 3.0;
        out[1] = 8.0 * a * b;
        out[2] = 8.0 * a * c - 2.0 * K4 * a;
        out[5] = 8.0 * b * c + 2.0 * K4 * b;
        out[3] = out[1];
        out[6] = out[2];
        out[7] = out[5];
    }

    fn value_grad(&self, u: &[f64], out: &mut [f64]) -> f64 {
        let (a, b, c) = (u[0], u[1], u[2]);
        let s = a * a + b * b + c * c;
        out[0] = 4.0 * s * a - 2.0 * K4 * a * c - (4.0 / 3.0) * a;
        out[1] = 4.0 * s * b + 2.0 * K4 * b * c - (4.0 / 3.0) * b;
        out[2] = 4.0 * s * c - K4 * (a * a - b * b) - (4.0 / 3.0) * c;
        s * s - K4 * (a * a - b * b) * c - (2.0 / 3.0) * s + 5.0 / 9.0
    }
}

/// `W(u) = ¼(u² − 1)²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleWell;

impl Evaluator for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn value(&self, u: &[f64]) -> f64 {
        let d = u[0] * u[0] - 1.0;
        0.25 * d * d
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        out[0] = u[0] * u[0] * u[0] - u[0];
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 3.0 * u[0] * u[0] - 1.0;
    }

    fn value_grad(&self, u: &[f64], out: &mut [f64]) -> f64 {
        let d = u[0] * u[0] - 1.0;
        out[0] = u[0] * d;
        0.25 * d * d
    }
}

/// Evaluator assembled from user-supplied closures.
pub struct ClosureEvaluator {
    dim: usize,
    value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    grad: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    hess: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl ClosureEvaluator {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hess: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            value: Box::new(value),
            grad: Box::new(grad),
            hess: Box::new(hess),
        }
    }
}

impl Evaluator for ClosureEvaluator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, u: &[f64]) -> f64 {
        (self.value)(u)
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        (self.grad)(u, out)
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        (self.hess)(u, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triple_well_values() {
        let w = TripleWell;
        assert_eq!(w.value(&[1.0, 0.0]), 0.0);
        assert!((w.value(&[0.0, 0.0]) - 2.0 / 3.0).abs() < 1e-15);
        let mut h = [0.0; 4];
        w.hess(&[1.0, 0.0], &mut h);
        assert_eq!(h, [6.0, 0.0, 0.0, 6.0]);
        let mut g = [1.0; 2];
        w.grad(&[0.0, 0.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn quadruple_well_vanishes_at_a1() {
        let a1 = [(2.0f64 / 3.0).sqrt(), 0.0, 1.0 / 3f64.sqrt()];
        assert!(QuadrupleWell.value(&a1).abs() < 1e-15);
        let mut g = [0.0; 3];
        QuadrupleWell.grad(&a1, &mut g);
        assert!(g.iter().all(|x| x.abs() < 1e-14));
        assert!((K4 - 4.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn double_well_closed_form() {
        let mut g = [0.0];
        let v = DoubleWell.value_grad(&[0.5], &mut g);
        assert!((v - 0.25 * 0.75 * 0.75).abs() < 1e-16);
        assert!((g[0] - (0.125 - 0.5)).abs() < 1e-16);
    }
}
