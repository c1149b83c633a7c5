//! Network parameters, the logistic activation, and the quartic/cubic/quadratic
//! cost family with its exact derivatives and a-priori bounds.

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Logistic sigmoid `1 / (1 + e^-u)`, evaluated without overflow for large `|u|`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `g(u)(1 - g(u))`, written in terms of `e^-|u|` so saturation does not cancel.
pub fn sigmoid_derivative(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    let s = 1.0 + e;
    e / (s * s)
}

/// Closed form of the integral of the inverse sigmoid `ln(s / (1 - s))` over `(0, y)`,
/// i.e. `y ln y + (1 - y) ln(1 - y)`. The endpoint limits are both zero.
pub fn inverse_sigmoid_integral(y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain {
            what: "inverse_sigmoid_integral",
            value: y,
        });
    }
    let xlogx = |v: f64| if v <= 0.0 { 0.0 } else { v * v.ln() };
    Ok(xlogx(y) + xlogx(1.0 - y))
}

/// Dense row-major square matrix. Networks here are small, so nothing fancier is needed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// `(A + A^T) / 2`
    pub fn symmetrized(&self) -> Self {
        let mut s = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                s.set(i, j, 0.5 * (self.get(i, j) + self.get(j, i)));
            }
        }
        s
    }

    pub fn scaled(&self, k: f64) -> Self {
        SquareMatrix {
            n: self.n,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Largest singular value by power iteration on `A^T A`, started from the normalized
    /// all-ones vector. Stops when the estimate changes by less than `1e-10` (relative)
    /// or after 10 000 iterations.
    pub fn spectral_norm(&self) -> f64 {
        const TOL: f64 = 1e-10;
        const MAX_ITER: usize = 10_000;
        let n = self.n;
        if n == 0 {
            return 0.0;
        }
        let at = self.transpose();
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut estimate = 0.0;
        for _ in 0..MAX_ITER {
            let w = at.mul_vec(&self.mul_vec(&v));
            let norm = dot(&w, &w).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            // Rayleigh quotient of A^T A at the unit vector v is ||A v||^2.
            let next = norm.sqrt();
            v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / norm);
            if (next - estimate).abs() <= TOL * next {
                return next;
            }
            estimate = next;
        }
        estimate
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f(y) = sum_i (quartic y_i^4 + cubic y_i^3) - y^T W y / 2 + b^T y`.
///
/// The coupling matrix may be nonsymmetric; derivatives always go through
/// `S = (W + W^T) / 2`, which is the only matrix the quadratic form actually sees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostFunction {
    quartic: f64,
    cubic: f64,
    coupling: SquareMatrix,
    linear: Vec<f64>,
    #[serde(skip)]
    sym: SquareMatrix,
}

impl CostFunction {
    pub fn new(quartic: f64, cubic: f64, coupling: SquareMatrix, linear: Vec<f64>) -> Result<Self> {
        if linear.len() != coupling.dim() {
            return Err(Error::DimensionMismatch {
                expected: coupling.dim(),
                got: linear.len(),
            });
        }
        if !quartic.is_finite() || !cubic.is_finite() {
            return Err(invalid("cost", "polynomial coefficients must be finite"));
        }
        if coupling.data.iter().chain(&linear).any(|v| !v.is_finite()) {
            return Err(invalid("cost", "coupling and linear terms must be finite"));
        }
        let sym = coupling.symmetrized();
        Ok(CostFunction {
            quartic,
            cubic,
            coupling,
            linear,
            sym,
        })
    }

    /// The all-zero cost on `n` coordinates.
    pub fn zero(n: usize) -> Self {
        Self::new(0.0, 0.0, SquareMatrix::zeros(n), vec![0.0; n]).expect("zero cost is valid")
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn quartic(&self) -> f64 {
        self.quartic
    }

    pub fn cubic(&self) -> f64 {
        self.cubic
    }

    pub fn coupling(&self) -> &SquareMatrix {
        &self.coupling
    }

    pub fn symmetric_coupling(&self) -> &SquareMatrix {
        &self.sym
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    fn check_dim(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, y: &[f64]) -> Result<f64> {
        self.check_dim(y)?;
        let poly: f64 = y
            .iter()
            .map(|&v| v * v * v * (self.quartic * v + self.cubic))
            .sum();
        let quad = dot(y, &self.coupling.mul_vec(y));
        Ok(poly - 0.5 * quad + dot(&self.linear, y))
    }

    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y)?;
        Ok((0..self.dim()).map(|i| self.gradient_component(y, i)).collect())
    }

    /// Component `i` of the gradient; `y` is assumed to have the right length.
    #[inline]
    pub fn gradient_component(&self, y: &[f64], i: usize) -> f64 {
        let v = y[i];
        4.0 * self.quartic * v * v * v + 3.0 * self.cubic * v * v - dot(self.sym.row(i), y)
            + self.linear[i]
    }

    pub fn hessian(&self, y: &[f64]) -> Result<SquareMatrix> {
        self.check_dim(y)?;
        let mut h = self.sym.scaled(-1.0);
        for (i, &v) in y.iter().enumerate() {
            h.set(i, i, h.get(i, i) + self.diagonal_curvature(v));
        }
        Ok(h)
    }

    #[inline]
    fn diagonal_curvature(&self, v: f64) -> f64 {
        12.0 * self.quartic * v * v + 6.0 * self.cubic * v
    }

    /// `max |12 c4 y^2 + 6 c3 y|` over `y in [0, 1]`.
    pub fn diagonal_curvature_bound(&self) -> f64 {
        let mut candidates = vec![0.0, 1.0];
        if self.quartic != 0.0 {
            let v = -self.cubic / (4.0 * self.quartic);
            if v > 0.0 && v < 1.0 {
                candidates.push(v);
            }
        }
        candidates
            .into_iter()
            .map(|v| self.diagonal_curvature(v).abs())
            .fold(0.0, f64::max)
    }

    /// Upper bound on `||hess f(y)||_2` over the unit cube:
    /// `||S||_2 + max |diagonal curvature|` by the triangle inequality.
    pub fn hessian_sup_bound(&self) -> f64 {
        self.sym.spectral_norm() + self.diagonal_curvature_bound()
    }

    /// Bound on `|[grad f(y)]_i|` over the unit cube.
    pub fn gradient_component_bound(&self, i: usize) -> f64 {
        let poly = |v: f64| 4.0 * self.quartic * v * v * v + 3.0 * self.cubic * v * v;
        let mut candidates = vec![0.0, 1.0];
        if self.quartic != 0.0 {
            let v = -self.cubic / (2.0 * self.quartic);
            if v > 0.0 && v < 1.0 {
                candidates.push(v);
            }
        }
        let poly_max = candidates
            .into_iter()
            .map(|v| poly(v).abs())
            .fold(0.0, f64::max);
        let coupling: f64 = self.sym.row(i).iter().map(|s| s.abs()).sum();
        poly_max + coupling + self.linear[i].abs()
    }

    /// Whether neurons `i` and `j` share a synaptic link (`S_ij != 0`).
    pub fn linked(&self, i: usize, j: usize) -> bool {
        self.sym.get(i, j) != 0.0
    }

    /// Same cost with the coupling matrix multiplied by `k`.
    pub fn with_scaled_coupling(&self, k: f64) -> Self {
        Self::new(self.quartic, self.cubic, self.coupling.scaled(k), self.linear.clone())
            .expect("scaling keeps a valid cost valid")
    }
}

/// `x' = -D x - grad f(g(Lambda x)) + theta`, with per-neuron self-inhibition `D`,
/// activation slopes `Lambda` and constant input `theta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkModel {
    self_inhibition: Vec<f64>,
    slopes: Vec<f64>,
    input: Vec<f64>,
    cost: CostFunction,
}

impl NetworkModel {
    pub fn new(
        self_inhibition: Vec<f64>,
        slopes: Vec<f64>,
        input: Vec<f64>,
        cost: CostFunction,
    ) -> Result<Self> {
        let n = cost.dim();
        if n == 0 {
            return Err(invalid("n", "the network needs at least one neuron"));
        }
        for (name, v) in [("d", &self_inhibition), ("lambda", &slopes), ("theta", &input)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(name, "entries must be finite"));
            }
        }
        if self_inhibition.iter().any(|&d| d <= 0.0) {
            return Err(invalid("d", "self-inhibition must be strictly positive"));
        }
        if slopes.iter().any(|&l| l <= 0.0) {
            return Err(invalid("lambda", "slopes must be strictly positive"));
        }
        Ok(NetworkModel {
            self_inhibition,
            slopes,
            input,
            cost,
        })
    }

    /// Unit self-inhibition and unit slopes.
    pub fn with_unit_rates(input: Vec<f64>, cost: CostFunction) -> Result<Self> {
        let n = cost.dim();
        Self::new(vec![1.0; n], vec![1.0; n], input, cost)
    }

    pub fn n(&self) -> usize {
        self.cost.dim()
    }

    pub fn self_inhibition(&self) -> &[f64] {
        &self.self_inhibition
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    pub fn d_max(&self) -> f64 {
        self.self_inhibition.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn d_min(&self) -> f64 {
        self.self_inhibition.iter().copied().fold(f64::MAX, f64::min)
    }

    pub fn lambda_max(&self) -> f64 {
        self.slopes.iter().copied().fold(f64::MIN, f64::max)
    }

    /// Same network with every slope replaced by `lambda`.
    pub fn with_uniform_slope(&self, lambda: f64) -> Result<Self> {
        Self::new(
            self.self_inhibition.clone(),
            vec![lambda; self.n()],
            self.input.clone(),
            self.cost.clone(),
        )
    }

    pub fn with_input(&self, input: Vec<f64>) -> Result<Self> {
        Self::new(
            self.self_inhibition.clone(),
            self.slopes.clone(),
            input,
            self.cost.clone(),
        )
    }

    pub(crate) fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `y = g(Lambda x)`
    pub fn outputs(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.slopes)
            .map(|(&xi, &l)| sigmoid(l * xi))
            .collect()
    }

    /// Gradient of the cost evaluated at the outputs of `x`.
    pub fn feedback(&self, x: &[f64]) -> Vec<f64> {
        let y = self.outputs(x);
        (0..self.n())
            .map(|i| self.cost.gradient_component(&y, i))
            .collect()
    }

    /// The undelayed vector field `-D x - grad f(g(Lambda x)) + theta`.
    pub fn vector_field(&self, x: &[f64]) -> Vec<f64> {
        let y = self.outputs(x);
        (0..self.n())
            .map(|i| {
                -self.self_inhibition[i] * x[i] - self.cost.gradient_component(&y, i)
                    + self.input[i]
            })
            .collect()
    }

    /// Equilibrium residual `||-D x - grad f(g(Lambda x)) + theta||_inf`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.vector_field(x)
            .into_iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Radius of the box every trajectory enters and stays in:
    /// `max_i (|theta_i| + B_i) / d_i`, where `B_i` bounds the i-th feedback.
    pub fn invariant_radius(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                (self.input[i].abs() + self.cost.gradient_component_bound(i))
                    / self.self_inhibition[i]
            })
            .fold(0.0, f64::max)
    }

    /// `sqrt(n) * max_i lambda_i * sup ||hess f||`, the default Lipschitz-type constant
    /// for the drift of the measurement error.
    pub fn error_rate_bound(&self) -> f64 {
        (self.n() as f64).sqrt() * self.lambda_max() * self.cost.hessian_sup_bound()
    }
}
