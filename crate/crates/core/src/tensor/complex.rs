use num_complex::Complex64;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Complex matrix stored as two real tensors of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    re: Tensor,
    im: Tensor,
}

impl ComplexMatrix {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Shape(format!(
                "real part {:?} vs imaginary part {:?}",
                re.shape(),
                im.shape()
            )));
        }
        re.dims()?;
        Ok(Self { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Tensor::zeros(rows, cols),
            im: Tensor::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            re: Tensor::identity(n),
            im: Tensor::zeros(n, n),
        }
    }

    pub fn from_complex(rows: usize, cols: usize, data: &[Complex64]) -> Result<Self> {
        Self::new(
            Tensor::matrix(rows, cols, data.iter().map(|z| z.re).collect())?,
            Tensor::matrix(rows, cols, data.iter().map(|z| z.im).collect())?,
        )
    }

    pub fn column(data: &[Complex64]) -> Self {
        Self {
            re: Tensor::column(data.iter().map(|z| z.re).collect()),
            im: Tensor::column(data.iter().map(|z| z.im).collect()),
        }
    }

    pub fn diag(entries: &[Complex64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n, n);
        for (i, z) in entries.iter().enumerate() {
            m.set(i, i, *z);
        }
        m
    }

    pub fn re(&self) -> &Tensor {
        &self.re
    }

    pub fn im(&self) -> &Tensor {
        &self.im
    }

    pub fn rows(&self) -> usize {
        self.re.rows()
    }

    pub fn cols(&self) -> usize {
        self.re.cols()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        Complex64::new(self.re.get(r, c), self.im.get(r, c))
    }

    pub fn set(&mut self, r: usize, c: usize, z: Complex64) {
        self.re.set(r, c, z.re);
        self.im.set(r, c, z.im);
    }

    /// Flat row-major element `i`.
    pub fn at(&self, i: usize) -> Complex64 {
        Complex64::new(self.re.data()[i], self.im.data()[i])
    }

    pub fn to_vec(&self) -> Vec<Complex64> {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let v: Vec<Complex64> = self.to_vec().into_iter().map(f).collect();
        Self::from_complex(self.rows(), self.cols(), &v).expect("shape preserved")
    }

    pub fn conj(&self) -> Self {
        Self {
            re: self.re.clone(),
            im: self.im.map(|x| -x),
        }
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> Self {
        Self {
            re: self.re.transpose().expect("rank 2"),
            im: self.im.transpose().expect("rank 2").map(|x| -x),
        }
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        Ok(Self {
            re: self.re.reshape(vec![rows, cols])?,
            im: self.im.reshape(vec![rows, cols])?,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.re.shape() != other.re.shape() {
            return Err(Error::Shape(format!(
                "complex add {:?} vs {:?}",
                self.re.shape(),
                other.re.shape()
            )));
        }
        let v: Vec<Complex64> = self
            .to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| a + b)
            .collect();
        Self::from_complex(self.rows(), self.cols(), &v)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        self.map(|z| z * s)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let rr = self.re.matmul(&other.re)?;
        let ii = self.im.matmul(&other.im)?;
        let ri = self.re.matmul(&other.im)?;
        let ir = self.im.matmul(&other.re)?;
        let re: Vec<f64> = rr
            .data()
            .iter()
            .zip(ii.data())
            .map(|(a, b)| a - b)
            .collect();
        let im: Vec<f64> = ri
            .data()
            .iter()
            .zip(ir.data())
            .map(|(a, b)| a + b)
            .collect();
        let (m, n) = rr.dims()?;
        Self::new(Tensor::matrix(m, n, re)?, Tensor::matrix(m, n, im)?)
    }

    /// Σ |z|² over all entries.
    pub fn norm_sqr(&self) -> f64 {
        self.re
            .data()
            .iter()
            .chain(self.im.data())
            .map(|x| x * x)
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.re.all_finite() && self.im.all_finite()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.to_vec()
            .iter()
            .zip(other.to_vec())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `(Mr + jMi)(vr + jvi) = (Mr·vr − Mi·vi) + j(Mr·vi + Mi·vr)`.
pub fn complex_matvec(m: &ComplexMatrix, v: &ComplexMatrix) -> Result<ComplexMatrix> {
    if v.cols() != 1 {
        return Err(Error::Shape(format!(
            "complex_matvec needs a column vector, got {}x{}",
            v.rows(),
            v.cols()
        )));
    }
    m.matmul(v)
}

/// Complex value on a [`Tape`] as a pair of real variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl CVar {
    pub fn constant(tape: &mut Tape, m: &ComplexMatrix) -> Self {
        Self {
            re: tape.constant(m.re.clone()),
            im: tape.constant(m.im.clone()),
        }
    }

    pub fn matmul(tape: &mut Tape, a: Self, b: Self) -> Result<Self> {
        let rr = tape.matmul(a.re, b.re)?;
        let ii = tape.matmul(a.im, b.im)?;
        let ri = tape.matmul(a.re, b.im)?;
        let ir = tape.matmul(a.im, b.re)?;
        Ok(Self {
            re: tape.sub(rr, ii)?,
            im: tape.add(ri, ir)?,
        })
    }

    pub fn add(tape: &mut Tape, a: Self, b: Self) -> Result<Self> {
        Ok(Self {
            re: tape.add(a.re, b.re)?,
            im: tape.add(a.im, b.im)?,
        })
    }

    /// Elementwise product.
    pub fn mul(tape: &mut Tape, a: Self, b: Self) -> Result<Self> {
        let rr = tape.mul(a.re, b.re)?;
        let ii = tape.mul(a.im, b.im)?;
        let ri = tape.mul(a.re, b.im)?;
        let ir = tape.mul(a.im, b.re)?;
        Ok(Self {
            re: tape.sub(rr, ii)?,
            im: tape.add(ri, ir)?,
        })
    }

    /// Elementwise |z|².
    pub fn abs2(tape: &mut Tape, a: Self) -> Result<Var> {
        let r2 = tape.square(a.re)?;
        let i2 = tape.square(a.im)?;
        tape.add(r2, i2)
    }

    pub fn value(tape: &Tape, a: Self) -> Result<ComplexMatrix> {
        ComplexMatrix::new(tape.value(a.re).clone(), tape.value(a.im).clone())
    }
}
