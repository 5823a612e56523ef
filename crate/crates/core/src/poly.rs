//! Exact sparse multivariate polynomials and polynomial vector fields.
//!
//! Coefficients are arbitrary-precision rationals so that structural
//! identities (energy conservation, zero divergence, Jacobi) are decided
//! exactly. Terms are kept in a `BTreeMap` keyed by exponent vector, which
//! makes the representation canonical: two polynomials are equal iff their
//! maps are equal.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Exact rational from an `f64`. Every finite double is a dyadic rational.
pub fn rational_from_f64(v: f64) -> Rational {
    BigRational::from_float(v).expect("finite float")
}

pub fn rational_from_int(v: i64) -> Rational {
    BigRational::from_integer(BigInt::from(v))
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Parse `"p"`, `"p/q"` or a decimal literal into an exact rational.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().ok()?;
        let d: BigInt = den.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(BigRational::new(n, d));
    }
    if let Ok(n) = s.parse::<BigInt>() {
        return Some(BigRational::from_integer(n));
    }
    // decimal such as -0.125 or 1e-3: go through the exact decimal expansion
    let v: f64 = s.parse().ok()?;
    if !v.is_finite() {
        return None;
    }
    let (mantissa, exp10) = split_decimal(s)?;
    let ten = BigInt::from(10);
    let r = if exp10 >= 0 {
        BigRational::from_integer(mantissa * num_traits::pow(ten, exp10 as usize))
    } else {
        BigRational::new(mantissa, num_traits::pow(ten, (-exp10) as usize))
    };
    Some(r)
}

fn split_decimal(s: &str) -> Option<(BigInt, i64)> {
    let (body, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i64>().ok()?),
        None => (s, 0),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    let digits = format!("{int_part}{frac_part}");
    let mantissa: BigInt = digits.parse().ok()?;
    Some((mantissa, exp - frac_part.len() as i64))
}

pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Sparse polynomial in `nvars` variables with exact rational coefficients.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, Rational>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: Rational) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn variable(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut p = Self::zero(nvars);
        p.add_term(e, Rational::one());
        p
    }

    pub fn monomial(exponents: Vec<u32>, c: Rational) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &Rational)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, exponents: &[u32]) -> Rational {
        self.terms.get(exponents).cloned().unwrap_or_else(Rational::zero)
    }

    /// Accumulate `c * x^exponents`, dropping the entry if it cancels.
    pub fn add_term(&mut self, exponents: Vec<u32>, c: Rational) {
        assert_eq!(exponents.len(), self.nvars, "exponent length");
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exponents) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }

    pub fn scale(&self, s: &Rational) -> Self {
        if s.is_zero() {
            return Self::zero(self.nvars);
        }
        Self {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    pub fn partial(&self, var: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[var] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[var] -= 1;
            out.add_term(e2, c * rational_from_int(e[var] as i64));
        }
        out
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    /// Common total degree of all terms, `None` if mixed or zero.
    pub fn homogeneous_degree(&self) -> Option<u32> {
        let mut degs = self.terms.keys().map(|e| e.iter().sum::<u32>());
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| rational_to_f64(c) * monomial_value(e, x))
            .sum()
    }

    /// Exact evaluation at a rational point.
    pub fn eval_exact(&self, x: &[Rational]) -> Rational {
        let mut acc = Rational::zero();
        for (e, c) in &self.terms {
            let mut t = c.clone();
            for (xi, &p) in x.iter().zip(e) {
                for _ in 0..p {
                    t *= xi;
                }
            }
            acc += t;
        }
        acc
    }

    pub fn first_term(&self) -> Option<(&Vec<u32>, &Rational)> {
        self.terms.iter().next()
    }
}

fn monomial_value(e: &[u32], x: &[f64]) -> f64 {
    let mut v = 1.0;
    for (&p, &xi) in e.iter().zip(x) {
        match p {
            0 => {}
            1 => v *= xi,
            2 => v *= xi * xi,
            _ => v *= xi.powi(p as i32),
        }
    }
    v
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{}", format_rational(c))?;
            for (i, &p) in e.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, p)?,
                }
            }
        }
        Ok(())
    }
}

/// Polynomial vector field on R^dim, one polynomial per coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolyVectorField {
    dim: usize,
    components: Vec<Polynomial>,
}

impl PolyVectorField {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            components: vec![Polynomial::zero(dim); dim],
        }
    }

    pub fn from_components(components: Vec<Polynomial>) -> Result<Self> {
        let dim = components.len();
        if let Some(bad) = components.iter().find(|p| p.nvars() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.nvars(),
            });
        }
        Ok(Self { dim, components })
    }

    pub fn constant(c: &[Rational]) -> Self {
        let dim = c.len();
        Self {
            dim,
            components: c.iter().map(|ci| Polynomial::constant(dim, ci.clone())).collect(),
        }
    }

    /// Unit coordinate field `e_i`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut c = vec![Rational::zero(); dim];
        c[i] = Rational::one();
        Self::constant(&c)
    }

    /// The linear field `x -> M x` for a square matrix given row by row.
    pub fn linear(m: &[Vec<Rational>]) -> Self {
        let dim = m.len();
        let components = m
            .iter()
            .map(|row| {
                let mut p = Polynomial::zero(dim);
                for (j, mij) in row.iter().enumerate() {
                    let mut e = vec![0; dim];
                    e[j] = 1;
                    p.add_term(e, mij.clone());
                }
                p
            })
            .collect();
        Self { dim, components }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn add_term(&mut self, component: usize, exponents: Vec<u32>, c: Rational) {
        self.components[component].add_term(exponents, c);
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Polynomial::is_zero)
    }

    pub fn is_constant(&self) -> bool {
        self.max_degree() == 0
    }

    pub fn num_terms(&self) -> usize {
        self.components.iter().map(Polynomial::num_terms).sum()
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.sub(b))
                .collect(),
        })
    }

    pub fn scale(&self, s: &Rational) -> Self {
        Self {
            dim: self.dim,
            components: self.components.iter().map(|p| p.scale(s)).collect(),
        }
    }

    /// `(D self) X`, the derivative of `self` along `x`.
    pub fn derivative_along(&self, x: &Self) -> Result<Self> {
        self.check_dim(x)?;
        let components = self
            .components
            .iter()
            .map(|yi| {
                let mut acc = Polynomial::zero(self.dim);
                for (k, xk) in x.components.iter().enumerate() {
                    if xk.is_zero() {
                        continue;
                    }
                    let d = yi.partial(k);
                    if d.is_zero() {
                        continue;
                    }
                    acc = acc.add(&xk.mul(&d));
                }
                acc
            })
            .collect();
        Ok(Self {
            dim: self.dim,
            components,
        })
    }

    /// Divergence `sum_i d_i X_i`.
    pub fn divergence(&self) -> Polynomial {
        let mut acc = Polynomial::zero(self.dim);
        for (i, p) in self.components.iter().enumerate() {
            acc = acc.add(&p.partial(i));
        }
        acc
    }

    /// `X(x) . x` as a polynomial.
    pub fn dot_position(&self) -> Polynomial {
        let mut acc = Polynomial::zero(self.dim);
        for (i, p) in self.components.iter().enumerate() {
            acc = acc.add(&p.mul(&Polynomial::variable(self.dim, i)));
        }
        acc
    }

    pub fn max_degree(&self) -> u32 {
        self.components.iter().map(Polynomial::max_degree).max().unwrap_or(0)
    }

    /// Common degree of every term of every component.
    pub fn homogeneous_degree(&self) -> Option<u32> {
        let mut deg = None;
        for p in &self.components {
            if p.is_zero() {
                continue;
            }
            let d = p.homogeneous_degree()?;
            match deg {
                None => deg = Some(d),
                Some(d0) if d0 != d => return None,
                _ => {}
            }
        }
        deg
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.eval(x)).collect()
    }

    pub fn eval_exact(&self, x: &[Rational]) -> Vec<Rational> {
        self.components.iter().map(|p| p.eval_exact(x)).collect()
    }

    /// Canonical representative of the ray `{ s * self : s != 0 }`.
    ///
    /// The field is divided by the coefficient of its first stored term so
    /// that scalar multiples map to the same key. Returns `None` for zero.
    pub fn ray_key(&self) -> Option<Self> {
        let lead = self
            .components
            .iter()
            .find_map(|p| p.first_term().map(|(_, c)| c.clone()))?;
        Some(self.scale(&lead.recip()))
    }

    pub fn compile(&self) -> CompiledField {
        CompiledField::new(self)
    }
}

/// Lie bracket `[X, Y] = (DY) X - (DX) Y`.
pub fn lie_bracket(x: &PolyVectorField, y: &PolyVectorField) -> Result<PolyVectorField> {
    let dy_x = y.derivative_along(x)?;
    let dx_y = x.derivative_along(y)?;
    dy_x.sub(&dx_y)
}

impl fmt::Display for PolyVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

/// Flat floating-point form of a polynomial field for hot loops.
///
/// Monomials are summed directly (no Horner nesting), so the rounding error
/// of each term is bounded by a few ulps of its magnitude.
#[derive(Clone, Debug)]
pub struct CompiledField {
    dim: usize,
    terms: Vec<CompiledTerm>,
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    component: usize,
    coeff: f64,
    factors: Vec<(usize, u32)>,
}

impl CompiledField {
    fn new(field: &PolyVectorField) -> Self {
        let mut terms = Vec::new();
        for (component, p) in field.components().iter().enumerate() {
            for (e, c) in p.terms() {
                let factors = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(v, &k)| (v, k))
                    .collect();
                terms.push(CompiledTerm {
                    component,
                    coeff: rational_to_f64(c),
                    factors,
                });
            }
        }
        Self {
            dim: field.dim(),
            terms,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Writes `field(x)` into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for t in &self.terms {
            let mut v = t.coeff;
            for &(var, pow) in &t.factors {
                let xv = x[var];
                v *= match pow {
                    1 => xv,
                    2 => xv * xv,
                    _ => xv.powi(pow as i32),
                };
            }
            out[t.component] += v;
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }
}

/// Returns `true` when `a` and `b` are nonzero scalar multiples of each other.
pub fn is_scalar_multiple(a: &PolyVectorField, b: &PolyVectorField) -> bool {
    match (a.ray_key(), b.ray_key()) {
        (Some(ka), Some(kb)) => ka == kb,
        _ => false,
    }
}

/// Magnitude helper for display and tolerance checks.
pub fn rational_abs(r: &Rational) -> Rational {
    r.abs()
}
