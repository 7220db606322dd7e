//! Small dense matrices: just enough linear algebra for block dynamics.
//!
//! Block dimensions here are tiny (a handful at most), so a row-major
//! `Vec`-backed matrix with partial-pivot LU and a scaling-and-squaring
//! Padé exponential covers everything without pulling in a linear-algebra
//! dependency.

use crate::error::{Error, Result};
use crate::num::{rf, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<R: Real> {
    n: usize,
    data: Vec<R>,
}

impl<R: Real> Mat<R> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![R::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = R::one();
        }
        m
    }

    /// Build from a row-major slice of length `n*n`.
    pub fn from_row_major(n: usize, data: &[R]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ParameterDomain(format!(
                "matrix: expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::ParameterDomain(
                "matrix: entries must be finite".into(),
            ));
        }
        Ok(Self {
            n,
            data: data.to_vec(),
        })
    }

    pub fn diagonal(diag: &[R]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = diag[i];
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> R {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn is_diagonal(&self) -> bool {
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j && self.data[i * self.n + j] != R::zero() {
                    return false;
                }
            }
        }
        true
    }

    /// `out = self * v`; `v` and `out` must not alias.
    #[inline]
    pub fn matvec(&self, v: &[R], out: &mut [R]) {
        debug_assert_eq!(v.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            let mut acc = R::zero();
            for j in 0..self.n {
                acc += row[j] * v[j];
            }
            out[i] = acc;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == R::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn scale(&self, s: R) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    /// Max row sum (infinity norm).
    pub fn norm_inf(&self) -> R {
        let n = self.n;
        let mut best = R::zero();
        for i in 0..n {
            let s = self.data[i * n..(i + 1) * n]
                .iter()
                .map(|x| x.abs())
                .fold(R::zero(), |a, b| a + b);
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Solve `self * X = B` in place of `B` via partial-pivot LU.
    pub fn solve_into(&self, b: &mut Mat<R>) -> Result<()> {
        assert_eq!(self.n, b.n);
        let n = self.n;
        let mut a = self.data.clone();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in col + 1..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == R::zero() || !best.is_finite() {
                return Err(Error::ParameterDomain(
                    "matrix: singular system in LU solve".into(),
                ));
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                    b.data.swap(col * n + j, piv * n + j);
                }
            }
            let d = a[col * n + col];
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                if f == R::zero() {
                    continue;
                }
                for j in col..n {
                    let v = a[col * n + j];
                    a[r * n + j] -= f * v;
                }
                for j in 0..n {
                    let v = b.data[col * n + j];
                    b.data[r * n + j] -= f * v;
                }
            }
        }
        for col in (0..n).rev() {
            let d = a[col * n + col];
            for j in 0..n {
                b.data[col * n + j] /= d;
            }
            for r in 0..col {
                let f = a[r * n + col];
                if f == R::zero() {
                    continue;
                }
                for j in 0..n {
                    let v = b.data[col * n + j];
                    b.data[r * n + j] -= f * v;
                }
            }
        }
        Ok(())
    }

    /// Matrix exponential.
    ///
    /// Diagonal matrices get the exact elementwise path; everything else
    /// goes through scaling-and-squaring with the degree-13 Padé
    /// approximant.
    pub fn expm(&self) -> Self {
        if self.is_diagonal() {
            let diag: Vec<R> = (0..self.n).map(|i| self.get(i, i).exp()).collect();
            return Self::diagonal(&diag);
        }
        self.expm_pade13()
    }

    fn expm_pade13(&self) -> Self {
        let n = self.n;
        // theta_13 for double precision (Higham 2005)
        let theta13 = rf::<R>(5.371920351148152);
        let norm = self.norm_inf();
        let mut squarings = 0usize;
        let mut a = self.clone();
        if norm > theta13 {
            let s = (crate::num::to_f64(norm / theta13)).log2().ceil() as usize;
            squarings = s;
            a = self.scale(rf::<R>(0.5f64.powi(s as i32)));
        }

        const B: [f64; 14] = [
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ];
        let b: Vec<R> = B.iter().map(|&c| rf::<R>(c)).collect();

        let id = Self::identity(n);
        let a2 = a.matmul(&a);
        let a4 = a2.matmul(&a2);
        let a6 = a2.matmul(&a4);

        // U = A in (A6 (b13 A6 + b11 A4 + b9 A2) + b7 A6 + b5 A4 + b3 A2 + b1 I)
        let w1 = a6.scale(b[13]).add(&a4.scale(b[11])).add(&a2.scale(b[9]));
        let w2 = a6
            .scale(b[7])
            .add(&a4.scale(b[5]))
            .add(&a2.scale(b[3]))
            .add(&id.scale(b[1]));
        let u = a.matmul(&a6.matmul(&w1).add(&w2));
        // V = A6 (b12 A6 + b10 A4 + b8 A2) + b6 A6 + b4 A4 + b2 A2 + b0 I
        let z1 = a6.scale(b[12]).add(&a4.scale(b[10])).add(&a2.scale(b[8]));
        let v = a6
            .matmul(&z1)
            .add(&a6.scale(b[6]))
            .add(&a4.scale(b[4]))
            .add(&a2.scale(b[2]))
            .add(&id.scale(b[0]));

        // (V - U) X = (V + U)
        let vm = v.add(&u.scale(-R::one()));
        let mut vp = v.add(&u);
        vm.solve_into(&mut vp).expect("Pade denominator singular");
        let mut e = vp;
        for _ in 0..squarings {
            e = e.matmul(&e);
        }
        e
    }
}
