//! Two-block system description: dichotomy blocks, coupling nonlinearities
//! and their validation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::num::{rf, Real};
use crate::series::norm2;

/// State of the two-block system: expanding block `x` in R^n, contracting
/// block `y` in R^m.
#[derive(Debug, Clone, PartialEq)]
pub struct State<R: Real> {
    pub x: Vec<R>,
    pub y: Vec<R>,
}

impl<R: Real> State<R> {
    pub fn new(x: Vec<R>, y: Vec<R>) -> Self {
        Self { x, y }
    }

    /// Convenience constructor for scalar blocks.
    pub fn scalar(x: R, y: R) -> Self {
        Self {
            x: vec![x],
            y: vec![y],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.y.iter().all(|v| v.is_finite())
    }

    /// Block-sum norm `|x| + |y|`.
    pub fn block_norm(&self) -> R {
        norm2(&self.x) + norm2(&self.y)
    }
}

/// Coupling nonlinearity registry. Every entry vanishes at the origin and
/// is globally Lipschitz; entries are nameable so run configurations can
/// reconstruct them.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity<R: Real> {
    /// Identically zero.
    Zero,
    /// `eps * |x|` (Euclidean norm of the x-block) into the first output
    /// component.
    AbsCoupling { eps: R },
    /// `eps * sin(|x|)` into the first output component.
    SinCoupling { eps: R },
    /// Linear map `cx * x + cy * y`; `cx` is out_dim x n, `cy` out_dim x m,
    /// both row-major.
    Linear {
        out_dim: usize,
        cx: Vec<R>,
        cy: Vec<R>,
    },
}

impl<R: Real> Nonlinearity<R> {
    /// Registry name.
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::AbsCoupling { .. } => "abs-coupling",
            Nonlinearity::SinCoupling { .. } => "sin-coupling",
            Nonlinearity::Linear { .. } => "linear",
        }
    }

    /// All registry names (for error messages).
    pub fn registry() -> &'static [&'static str] {
        &["zero", "abs-coupling", "sin-coupling", "linear"]
    }

    pub fn eval(&self, x: &[R], y: &[R], out: &mut [R]) {
        for v in out.iter_mut() {
            *v = R::zero();
        }
        match self {
            Nonlinearity::Zero => {}
            Nonlinearity::AbsCoupling { eps } => {
                out[0] = *eps * norm2(x);
            }
            Nonlinearity::SinCoupling { eps } => {
                out[0] = *eps * norm2(x).sin();
            }
            Nonlinearity::Linear { out_dim, cx, cy } => {
                let n = x.len();
                let m = y.len();
                for i in 0..*out_dim {
                    let mut acc = R::zero();
                    for (j, &xj) in x.iter().enumerate() {
                        acc += cx[i * n + j] * xj;
                    }
                    for (j, &yj) in y.iter().enumerate() {
                        acc += cy[i * m + j] * yj;
                    }
                    out[i] = acc;
                }
            }
        }
    }

    fn check_dims(&self, n: usize, m: usize, out_len: usize, what: &str) -> Result<()> {
        if let Nonlinearity::Linear { out_dim, cx, cy } = self {
            if *out_dim != out_len || cx.len() != out_dim * n || cy.len() != out_dim * m {
                return Err(Error::ParameterDomain(format!(
                    "{what}: linear coupling shape mismatch (out_dim {out_dim}, cx {}, cy {})",
                    cx.len(),
                    cy.len()
                )));
            }
        }
        let _ = (n, m, out_len);
        Ok(())
    }
}

/// Full description of the two-block system.
#[derive(Debug, Clone)]
pub struct SystemSpec<R: Real> {
    n: usize,
    m: usize,
    a_mat: Mat<R>,
    b_mat: Mat<R>,
    a: R,
    b: R,
    f: Nonlinearity<R>,
    g: Nonlinearity<R>,
    k: R,
    alpha: R,
}

impl<R: Real> SystemSpec<R> {
    /// Validates the dichotomy rates, the vanishing-at-origin and sampled
    /// Lipschitz properties of the couplings, and the semigroup bounds
    /// |e^{At} x| <= e^{at}|x| (t <= 0), |e^{Bt} y| <= e^{bt}|y| (t >= 0).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        a_mat: Mat<R>,
        b_mat: Mat<R>,
        a: R,
        b: R,
        f: Nonlinearity<R>,
        g: Nonlinearity<R>,
        k: R,
        alpha: R,
    ) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::ParameterDomain(
                "system: block dimensions must be positive".into(),
            ));
        }
        if a_mat.dim() != n || b_mat.dim() != m {
            return Err(Error::ParameterDomain(format!(
                "system: matrix dims ({}, {}) do not match blocks ({n}, {m})",
                a_mat.dim(),
                b_mat.dim()
            )));
        }
        if !(b < R::zero() && R::zero() < a) {
            return Err(Error::ParameterDomain(format!(
                "system: dichotomy rates need b < 0 < a, got a = {a}, b = {b}"
            )));
        }
        if !(k >= R::zero()) {
            return Err(Error::ParameterDomain(format!(
                "system.k: Lipschitz constant must be nonnegative, got {k}"
            )));
        }
        if !(alpha > R::one() && alpha < rf::<R>(2.0)) {
            return Err(Error::ParameterDomain(format!(
                "system.alpha: must lie in the open interval (1, 2), got {alpha}"
            )));
        }
        f.check_dims(n, m, n, "system.f")?;
        g.check_dims(n, m, m, "system.g")?;

        let spec = Self {
            n,
            m,
            a_mat,
            b_mat,
            a,
            b,
            f,
            g,
            k,
            alpha,
        };
        spec.check_origin()?;
        spec.check_lipschitz()?;
        spec.check_dichotomy()?;
        Ok(spec)
    }

    fn check_origin(&self) -> Result<()> {
        let x0 = vec![R::zero(); self.n];
        let y0 = vec![R::zero(); self.m];
        let mut fo = vec![R::zero(); self.n];
        let mut go = vec![R::zero(); self.m];
        self.f.eval(&x0, &y0, &mut fo);
        self.g.eval(&x0, &y0, &mut go);
        if norm2(&fo) != R::zero() || norm2(&go) != R::zero() {
            return Err(Error::ParameterDomain(
                "system: couplings must vanish at the origin".into(),
            ));
        }
        Ok(())
    }

    fn check_lipschitz(&self) -> Result<()> {
        let mut rng = ChaCha12Rng::seed_from_u64(0x5eed);
        let mut worst = R::zero();
        let mut f1 = vec![R::zero(); self.n];
        let mut f2 = vec![R::zero(); self.n];
        let mut g1 = vec![R::zero(); self.m];
        let mut g2 = vec![R::zero(); self.m];
        for _ in 0..256 {
            let draw = |rng: &mut ChaCha12Rng, d: usize| -> Vec<R> {
                (0..d)
                    .map(|_| rf::<R>(rng.random::<f64>() * 6.0 - 3.0))
                    .collect()
            };
            let (xa, ya) = (draw(&mut rng, self.n), draw(&mut rng, self.m));
            let (xb, yb) = (draw(&mut rng, self.n), draw(&mut rng, self.m));
            let denom = norm2(&xa.iter().zip(&xb).map(|(&p, &q)| p - q).collect::<Vec<_>>())
                + norm2(&ya.iter().zip(&yb).map(|(&p, &q)| p - q).collect::<Vec<_>>());
            if denom == R::zero() {
                continue;
            }
            self.f.eval(&xa, &ya, &mut f1);
            self.f.eval(&xb, &yb, &mut f2);
            self.g.eval(&xa, &ya, &mut g1);
            self.g.eval(&xb, &yb, &mut g2);
            let df = norm2(&f1.iter().zip(&f2).map(|(&p, &q)| p - q).collect::<Vec<_>>());
            let dg = norm2(&g1.iter().zip(&g2).map(|(&p, &q)| p - q).collect::<Vec<_>>());
            worst = worst.max(df / denom).max(dg / denom);
        }
        if worst > self.k * (R::one() + rf::<R>(1e-6)) {
            return Err(Error::ParameterDomain(format!(
                "system.k: sampled Lipschitz estimate {worst} exceeds K = {}",
                self.k
            )));
        }
        Ok(())
    }

    fn check_dichotomy(&self) -> Result<()> {
        // Diagonal fast path: exact eigenvalue inspection.
        if self.a_mat.is_diagonal() {
            for i in 0..self.n {
                if self.a_mat.get(i, i) < self.a {
                    return Err(Error::ParameterDomain(format!(
                        "system.a_matrix: diagonal entry {} < a = {} breaks the expansion bound",
                        self.a_mat.get(i, i),
                        self.a
                    )));
                }
            }
        } else {
            self.check_semigroup_bound(&self.a_mat, self.a, true, "system.a_matrix")?;
        }
        if self.b_mat.is_diagonal() {
            for i in 0..self.m {
                if self.b_mat.get(i, i) > self.b {
                    return Err(Error::ParameterDomain(format!(
                        "system.b_matrix: diagonal entry {} > b = {} breaks the contraction bound",
                        self.b_mat.get(i, i),
                        self.b
                    )));
                }
            }
        } else {
            self.check_semigroup_bound(&self.b_mat, self.b, false, "system.b_matrix")?;
        }
        Ok(())
    }

    fn check_semigroup_bound(&self, mat: &Mat<R>, rate: R, backward: bool, what: &str) -> Result<()> {
        let dim = mat.dim();
        let mut rng = ChaCha12Rng::seed_from_u64(0xd1c0);
        let slack = R::one() + rf::<R>(1e-9);
        for &tmag in &[0.1, 0.5, 1.0, 2.0] {
            let t = if backward { -rf::<R>(tmag) } else { rf::<R>(tmag) };
            let e = mat.scale(t).expm();
            let bound = (rate * t).exp();
            let mut out = vec![R::zero(); dim];
            for _ in 0..16 {
                let mut v: Vec<R> = (0..dim)
                    .map(|_| rf::<R>(rng.random::<f64>() * 2.0 - 1.0))
                    .collect();
                let nv = norm2(&v);
                if nv == R::zero() {
                    continue;
                }
                for c in v.iter_mut() {
                    *c /= nv;
                }
                e.matvec(&v, &mut out);
                if norm2(&out) > bound * slack {
                    return Err(Error::ParameterDomain(format!(
                        "{what}: |e^(Mt)v| = {} exceeds e^(rate*t) = {} at t = {t}",
                        norm2(&out),
                        bound
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn a_mat(&self) -> &Mat<R> {
        &self.a_mat
    }

    #[inline]
    pub fn b_mat(&self) -> &Mat<R> {
        &self.b_mat
    }

    #[inline]
    pub fn a(&self) -> R {
        self.a
    }

    #[inline]
    pub fn b(&self) -> R {
        self.b
    }

    #[inline]
    pub fn f(&self) -> &Nonlinearity<R> {
        &self.f
    }

    #[inline]
    pub fn g(&self) -> &Nonlinearity<R> {
        &self.g
    }

    #[inline]
    pub fn lipschitz(&self) -> R {
        self.k
    }

    #[inline]
    pub fn alpha(&self) -> R {
        self.alpha
    }

    /// The scalar benchmark system `dx = x + x dW`, `dy = -y + eps|x| + y dW`
    /// with expansion/contraction rates 1/-1 and K = eps (K = 1 at eps = 1).
    pub fn abs_coupling_example(eps: R, alpha: R) -> Result<Self> {
        let k = if eps == R::zero() { R::zero() } else { eps.abs() };
        Self::new(
            1,
            1,
            Mat::diagonal(&[R::one()]),
            Mat::diagonal(&[-R::one()]),
            R::one(),
            -R::one(),
            Nonlinearity::Zero,
            Nonlinearity::AbsCoupling { eps },
            k,
            alpha,
        )
    }
}
