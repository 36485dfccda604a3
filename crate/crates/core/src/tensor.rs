//! Dense row-major `f64` matrices with per-operation backward rules.
//!
//! Column vectors are `n x 1` tensors. The slice kernels at the bottom of the
//! module are what the recurrent model uses in its inner loops; the
//! `Tensor`-level operations are thin wrappers over the same kernels.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Builds a tensor from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        check_same("add_scaled", self, other)?;
        axpy(scale, &other.data, &mut self.data);
        Ok(())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!(
                "{what}: non-finite value {} at ({}, {})",
                self.data[i],
                i / self.cols,
                i % self.cols
            ))),
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn checked(t: Tensor, op: &str) -> Result<Tensor> {
    if cfg!(debug_assertions) {
        t.ensure_finite(op)?;
    }
    Ok(t)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols != b.rows {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    // Row-by-row dot products share the kernel used by the model's matvecs.
    let bt = b.transpose();
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            out.data[i * b.cols + j] = dot(a.row(i), bt.row(j));
        }
    }
    checked(out, "matmul")
}

/// Gradients of `C = A B` given `dC`: returns `(dA, dB) = (dC Bᵀ, Aᵀ dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    if dc.shape() != (a.rows, b.cols) || a.cols != b.rows {
        return Err(Error::Dimension {
            op: "matmul_backward",
            left: (a.rows, b.cols),
            right: dc.shape(),
        });
    }
    let da = matmul(dc, &b.transpose())?;
    let db = matmul(&a.transpose(), dc)?;
    Ok((da, db))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Add,
    Hadamard,
}

impl Elementwise {
    pub fn arity(self) -> usize {
        match self {
            Elementwise::Sigmoid | Elementwise::Tanh => 1,
            Elementwise::Add | Elementwise::Hadamard => 2,
        }
    }
}

pub fn elementwise(op: Elementwise, args: &[&Tensor]) -> Result<Tensor> {
    check_arity(op, args)?;
    let a = args[0];
    let mut out = a.clone();
    match op {
        Elementwise::Sigmoid => out.data.iter_mut().for_each(|x| *x = sigmoid(*x)),
        Elementwise::Tanh => out.data.iter_mut().for_each(|x| *x = x.tanh()),
        Elementwise::Add => {
            check_same("add", a, args[1])?;
            out.data
                .iter_mut()
                .zip(&args[1].data)
                .for_each(|(x, y)| *x += y);
        }
        Elementwise::Hadamard => {
            check_same("hadamard", a, args[1])?;
            out.data
                .iter_mut()
                .zip(&args[1].data)
                .for_each(|(x, y)| *x *= y);
        }
    }
    checked(out, "elementwise")
}

/// One gradient per argument, given the upstream gradient `dout`.
pub fn elementwise_backward(op: Elementwise, args: &[&Tensor], dout: &Tensor) -> Result<Vec<Tensor>> {
    check_arity(op, args)?;
    check_same("elementwise_backward", args[0], dout)?;
    let zip_map = |t: &Tensor, f: &dyn Fn(f64, f64) -> f64| {
        let data = t.data.iter().zip(&dout.data).map(|(&x, &g)| f(x, g)).collect();
        Tensor {
            rows: t.rows,
            cols: t.cols,
            data,
        }
    };
    Ok(match op {
        Elementwise::Sigmoid => vec![zip_map(args[0], &|x, g| {
            let s = sigmoid(x);
            g * s * (1.0 - s)
        })],
        Elementwise::Tanh => vec![zip_map(args[0], &|x, g| {
            let t = x.tanh();
            g * (1.0 - t * t)
        })],
        Elementwise::Add => {
            check_same("add", args[0], args[1])?;
            vec![dout.clone(), dout.clone()]
        }
        Elementwise::Hadamard => {
            check_same("hadamard", args[0], args[1])?;
            vec![
                zip_map(args[1], &|y, g| g * y),
                zip_map(args[0], &|x, g| g * x),
            ]
        }
    })
}

fn check_arity(op: Elementwise, args: &[&Tensor]) -> Result<()> {
    if args.len() != op.arity() {
        return Err(Error::Argument(format!(
            "{op:?} takes {} operand(s), got {}",
            op.arity(),
            args.len()
        )));
    }
    Ok(())
}

/// Cross-entropy of a single logit vector (`1 x V` or `V x 1`) against a
/// target index. Returns the loss and `softmax(logits) - onehot(target)` in
/// the shape of `logits`.
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    if logits.rows != 1 && logits.cols != 1 {
        return Err(Error::Dimension {
            op: "softmax_cross_entropy",
            left: logits.shape(),
            right: (1, logits.len()),
        });
    }
    if target >= logits.len() {
        return Err(Error::Index {
            index: target,
            size: logits.len(),
        });
    }
    logits.ensure_finite("softmax_cross_entropy logits")?;
    let mut grad = logits.clone();
    let loss = softmax_xent_in_place(&mut grad.data, target);
    Ok((loss, grad))
}

/// Overwrites `logits` with `softmax - onehot(target)` and returns the loss.
#[inline]
pub(crate) fn softmax_xent_in_place(logits: &mut [f64], target: usize) -> f64 {
    let (argmax, max) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, &x)| if x > bm { (i, x) } else { (bi, bm) });
    let target_logit = logits[target];
    // log-sum-exp = max + ln(1 + rest), rest excluding the argmax term.
    let mut rest = 0.0;
    for (i, x) in logits.iter_mut().enumerate() {
        *x = (*x - max).exp();
        if i != argmax {
            rest += *x;
        }
    }
    let sum = 1.0 + rest;
    for x in logits.iter_mut() {
        *x /= sum;
    }
    logits[target] -= 1.0;
    ((max - target_logit) + rest.ln_1p()).max(0.0)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---- slice kernels -------------------------------------------------------

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// `out += W x` for a `rows x cols` matrix `W`.
#[inline]
pub(crate) fn matvec_acc(w: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(w.row(r), x);
    }
}

/// `dx += Wᵀ dv`
#[inline]
pub(crate) fn matvec_t_acc(w: &Tensor, dv: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(w.rows, dv.len());
    debug_assert_eq!(w.cols, dx.len());
    for (r, &g) in dv.iter().enumerate() {
        if g != 0.0 {
            axpy(g, w.row(r), dx);
        }
    }
}

/// `G += dv xᵀ`
#[inline]
pub(crate) fn outer_acc(g: &mut Tensor, dv: &[f64], x: &[f64]) {
    debug_assert_eq!(g.rows, dv.len());
    debug_assert_eq!(g.cols, x.len());
    let cols = g.cols;
    for (r, &d) in dv.iter().enumerate() {
        if d != 0.0 {
            axpy(d, x, &mut g.data[r * cols..(r + 1) * cols]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    // Central differences of sum(dout ⊙ f(x)) w.r.t. every entry of `x`.
    fn numeric_grad(x: &Tensor, dout: &Tensor, f: &dyn Fn(&Tensor) -> Tensor) -> Tensor {
        let eps = 1e-5;
        let mut g = Tensor::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += eps;
            let mut minus = x.clone();
            minus.data_mut()[i] -= eps;
            let fp: f64 = f(&plus).data().iter().zip(dout.data()).map(|(a, b)| a * b).sum();
            let fm: f64 = f(&minus).data().iter().zip(dout.data()).map(|(a, b)| a * b).sum();
            g.data_mut()[i] = (fp - fm) / (2.0 * eps);
        }
        g
    }

    fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn matmul_identity_and_literal() {
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(
            matmul(&a, &b).unwrap(),
            Tensor::from_rows(&[&[19.0, 22.0], &[43.0, 50.0]])
        );
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
        assert!(matches!(err, Error::Dimension { left: (2, 3), right: (2, 3), .. }));
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(3, 4, &mut rng);
        let b = random(4, 2, &mut rng);
        let dc = random(3, 2, &mut rng);
        let (da, db) = matmul_backward(&a, &b, &dc).unwrap();
        let na = numeric_grad(&a, &dc, &|x| matmul(x, &b).unwrap());
        let nb = numeric_grad(&b, &dc, &|x| matmul(&a, x).unwrap());
        assert!(max_rel_err(&da, &na) < 1e-6);
        assert!(max_rel_err(&db, &nb) < 1e-6);
    }

    #[test]
    fn activations_at_zero() {
        let z = Tensor::zeros(2, 3);
        let s = elementwise(Elementwise::Sigmoid, &[&z]).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.5));
        let t = elementwise(Elementwise::Tanh, &[&z]).unwrap();
        assert!(t.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(2, 3, &mut rng);
            let y = random(2, 3, &mut rng);
            let dout = random(2, 3, &mut rng);

            let g = elementwise_backward(Elementwise::Hadamard, &[&x, &y], &dout).unwrap();
            let nx = numeric_grad(&x, &dout, &|t| elementwise(Elementwise::Hadamard, &[t, &y]).unwrap());
            let ny = numeric_grad(&y, &dout, &|t| elementwise(Elementwise::Hadamard, &[&x, t]).unwrap());
            assert!(max_rel_err(&g[0], &nx) < 1e-6);
            assert!(max_rel_err(&g[1], &ny) < 1e-6);

            for op in [Elementwise::Sigmoid, Elementwise::Tanh] {
                let g = elementwise_backward(op, &[&x], &dout).unwrap();
                let n = numeric_grad(&x, &dout, &|t| elementwise(op, &[t]).unwrap());
                assert!(max_rel_err(&g[0], &n) < 1e-4, "{op:?}");
            }
            let g = elementwise_backward(Elementwise::Add, &[&x, &y], &dout).unwrap();
            assert_eq!(g[0], dout);
            assert_eq!(g[1], dout);
        }
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let err = elementwise(Elementwise::Add, &[&Tensor::zeros(2, 2), &Tensor::zeros(2, 3)]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, _) = softmax_cross_entropy(&Tensor::filled(1, 4, 0.3), 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);

        let (loss, g) = softmax_cross_entropy(&Tensor::from_rows(&[&[10.0, -10.0]]), 0).unwrap();
        // -ln σ(20) = ln(1 + e^-20)
        let expected = (-20f64).exp().ln_1p();
        assert!((loss - expected).abs() < 1e-18, "{loss} vs {expected}");
        assert!((loss - 2.06e-9).abs() < 1e-11);
        assert!(g.data().iter().sum::<f64>().abs() < 1e-12);

        assert!(matches!(
            softmax_cross_entropy(&Tensor::zeros(1, 3), 3),
            Err(Error::Index { index: 3, size: 3 })
        ));
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = random(1, 6, &mut rng);
        let (_, g) = softmax_cross_entropy(&logits, 4).unwrap();
        let one = Tensor::filled(1, 1, 1.0);
        let n = numeric_grad(&logits, &one, &|t| {
            Tensor::filled(1, 1, softmax_cross_entropy(t, 4).unwrap().0)
        });
        assert!(max_rel_err(&g, &n) < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cross_entropy_nonnegative_and_grad_sums_to_zero(
                logits in proptest::collection::vec(-50.0f64..50.0, 1..40),
                pick in 0usize..1000,
            ) {
                let target = pick % logits.len();
                let t = Tensor::from_vec(1, logits.len(), logits).unwrap();
                let (loss, g) = softmax_cross_entropy(&t, target).unwrap();
                prop_assert!(loss >= 0.0);
                prop_assert!(g.data().iter().sum::<f64>().abs() < 1e-12);
            }

            #[test]
            fn matmul_identity_is_exact(
                rows in 1usize..6,
                cols in 1usize..6,
                seed in any::<u64>(),
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random(rows, cols, &mut rng);
                prop_assert_eq!(matmul(&a, &Tensor::identity(cols)).unwrap(), a.clone());
                prop_assert_eq!(matmul(&Tensor::identity(rows), &a).unwrap(), a);
            }
        }
    }
}
