//! Exact coefficient arithmetic for the deformed calculus.
//!
//! Scalars form the fraction field of polynomials over the Gaussian rationals
//! in the deformation parameter `q` (with signed exponents), the speed of
//! light `c`, the mass parameter `M`, the energy symbol `E`, and the charge
//! symbol `e`. All arithmetic is exact: numerators are sparse Laurent
//! polynomials and denominators are multisets of canonical monic factors, so
//! every identity in the verification layers reduces to an exact zero test.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

use crate::error::{Error, Result};

/// A Gaussian rational: `re + im·i` with exact rational parts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GaussRat {
    /// Real part.
    pub re: BigRational,
    /// Imaginary part.
    pub im: BigRational,
}

impl GaussRat {
    /// Builds `re + im·i` from integer parts.
    pub fn new(re: i64, im: i64) -> Self {
        GaussRat {
            re: BigRational::from_integer(BigInt::from(re)),
            im: BigRational::from_integer(BigInt::from(im)),
        }
    }

    /// Builds the rational `num/den` (no imaginary part).
    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator in GaussRat::ratio");
        GaussRat {
            re: BigRational::new(BigInt::from(num), BigInt::from(den)),
            im: BigRational::zero(),
        }
    }

    /// Additive zero.
    pub fn zero() -> Self {
        GaussRat::new(0, 0)
    }

    /// Multiplicative one.
    pub fn one() -> Self {
        GaussRat::new(1, 0)
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        GaussRat::new(0, 1)
    }

    /// True when both parts vanish.
    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    /// Complex conjugate.
    pub fn conj(&self) -> Self {
        GaussRat {
            re: self.re.clone(),
            im: -self.im.clone(),
        }
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let norm = &self.re * &self.re + &self.im * &self.im;
        Some(GaussRat {
            re: &self.re / &norm,
            im: -(&self.im / &norm),
        })
    }
}

impl Add for GaussRat {
    type Output = GaussRat;
    fn add(self, rhs: GaussRat) -> GaussRat {
        GaussRat {
            re: self.re + rhs.re,
            im: self.im + rhs.im,
        }
    }
}

impl Sub for GaussRat {
    type Output = GaussRat;
    fn sub(self, rhs: GaussRat) -> GaussRat {
        GaussRat {
            re: self.re - rhs.re,
            im: self.im - rhs.im,
        }
    }
}

impl Neg for GaussRat {
    type Output = GaussRat;
    fn neg(self) -> GaussRat {
        GaussRat {
            re: -self.re,
            im: -self.im,
        }
    }
}

impl Mul for GaussRat {
    type Output = GaussRat;
    fn mul(self, rhs: GaussRat) -> GaussRat {
        GaussRat {
            re: &self.re * &rhs.re - &self.im * &rhs.im,
            im: &self.re * &rhs.im + &self.im * &rhs.re,
        }
    }
}

fn rat_to_string(r: &BigRational) -> String {
    if r.denom().is_one() {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            write!(f, "{}", rat_to_string(&self.re))
        } else if self.re.is_zero() {
            if self.im.is_one() {
                write!(f, "i")
            } else if (-self.im.clone()).is_one() {
                write!(f, "-i")
            } else {
                write!(f, "{}i", rat_to_string(&self.im))
            }
        } else {
            let im = if self.im.is_positive() {
                format!("+{}i", rat_to_string(&self.im))
            } else {
                format!("{}i", rat_to_string(&self.im))
            };
            write!(f, "({}{})", rat_to_string(&self.re), im)
        }
    }
}

/// Symbols of the coefficient ring, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sym {
    /// Deformation parameter (signed exponents allowed).
    Q = 0,
    /// Speed of light.
    C = 1,
    /// Mass parameter (the product of mass and c).
    M = 2,
    /// Energy symbol used by the momentum-space propagator.
    En = 3,
    /// Charge symbol used by the gauge layer.
    Ch = 4,
}

/// All symbols in canonical order.
pub const SYMS: [Sym; 5] = [Sym::Q, Sym::C, Sym::M, Sym::En, Sym::Ch];

const SYM_NAMES: [&str; 5] = ["q", "c", "M", "E", "e"];

/// Exponent vector of one polynomial term, ordered `(q, c, M, E, e)`.
///
/// The ordering is graded lexicographic so leading-term division is
/// well-founded on proper polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PExp(pub [i32; 5]);

impl PExp {
    fn total(&self) -> i64 {
        self.0.iter().map(|&e| e as i64).sum()
    }

    fn add(&self, other: &PExp) -> PExp {
        let mut out = [0i32; 5];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.0[k] + other.0[k];
        }
        PExp(out)
    }

    fn sub(&self, other: &PExp) -> PExp {
        let mut out = [0i32; 5];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.0[k] - other.0[k];
        }
        PExp(out)
    }

    fn divides(&self, other: &PExp) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }

    fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }
}

impl PartialOrd for PExp {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for PExp {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        self.total()
            .cmp(&other.total())
            .then_with(|| self.0.cmp(&other.0))
    }
}

/// Sparse Laurent polynomial over the Gaussian rationals.
///
/// Only `q` legitimately takes negative exponents in the engine, but the
/// representation does not enforce that: all five symbols are stored with
/// signed exponents and canonicalization shifts factors to proper form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Poly {
    terms: BTreeMap<PExp, GaussRat>,
}

impl Poly {
    /// The zero polynomial.
    pub fn zero() -> Self {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    /// The constant one.
    pub fn one() -> Self {
        Poly::constant(GaussRat::one())
    }

    /// A constant polynomial.
    pub fn constant(c: GaussRat) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(PExp([0; 5]), c);
        }
        Poly { terms }
    }

    /// The monomial `c · q^e0 c^e1 M^e2 E^e3 e^e4`.
    pub fn monomial(exp: PExp, c: GaussRat) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(exp, c);
        }
        Poly { terms }
    }

    /// The bare symbol `s` to the given (possibly negative) power.
    pub fn sym_pow(s: Sym, k: i32) -> Self {
        let mut exp = [0i32; 5];
        exp[s as usize] = k;
        Poly::monomial(PExp(exp), GaussRat::one())
    }

    /// True when no terms are stored.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of stored terms.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Iterates over `(exponents, coefficient)` pairs in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&PExp, &GaussRat)> {
        self.terms.iter()
    }

    fn insert_add(&mut self, exp: PExp, c: GaussRat) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(exp) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get().clone() + c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    /// Leading term under the graded-lexicographic order.
    fn leading(&self) -> Option<(&PExp, &GaussRat)> {
        self.terms.iter().next_back()
    }

    /// Per-symbol minimum exponent over all terms (zero polynomial: zeros).
    fn min_exps(&self) -> PExp {
        let mut min = [i32::MAX; 5];
        for exp in self.terms.keys() {
            for (k, m) in min.iter_mut().enumerate() {
                *m = (*m).min(exp.0[k]);
            }
        }
        if self.terms.is_empty() {
            return PExp([0; 5]);
        }
        PExp(min)
    }

    /// Multiplies all exponents of `s` appearing in this polynomial by -1.
    pub fn substitute_q_inverse(&self) -> Poly {
        let mut out = Poly::zero();
        for (exp, c) in &self.terms {
            let mut e = *exp;
            e.0[Sym::Q as usize] = -e.0[Sym::Q as usize];
            out.insert_add(e, c.clone());
        }
        out
    }

    /// Conjugates every coefficient (symbols are treated as real).
    pub fn conj(&self) -> Poly {
        let mut out = Poly::zero();
        for (exp, c) in &self.terms {
            out.insert_add(*exp, c.conj());
        }
        out
    }

    /// Evaluates at q = 1 by collapsing the q exponent.
    pub fn eval_q_one(&self) -> Poly {
        let mut out = Poly::zero();
        for (exp, c) in &self.terms {
            let mut e = *exp;
            e.0[Sym::Q as usize] = 0;
            out.insert_add(e, c.clone());
        }
        out
    }

    /// Exact division; `None` when `self` is not a multiple of `f`.
    ///
    /// Both operands may be Laurent; they are shifted to proper form first.
    pub fn div_exact(&self, f: &Poly) -> Option<Poly> {
        assert!(!f.is_zero(), "division by the zero polynomial");
        if self.is_zero() {
            return Some(Poly::zero());
        }
        let self_shift = self.min_exps();
        let f_shift = f.min_exps();
        let mut rem = self.shift(&PExp([0; 5]).sub(&self_shift));
        let fp = f.shift(&PExp([0; 5]).sub(&f_shift));
        let mut quot = Poly::zero();
        let (flt_exp, flt_coef) = {
            let (e, c) = fp.leading().expect("nonzero divisor");
            (*e, c.clone())
        };
        let flt_inv = flt_coef.inv().expect("nonzero leading coefficient");
        while !rem.is_zero() {
            let (rlt_exp, rlt_coef) = {
                let (e, c) = rem.leading().expect("nonzero remainder");
                (*e, c.clone())
            };
            if !flt_exp.divides(&rlt_exp) {
                return None;
            }
            let qe = rlt_exp.sub(&flt_exp);
            let qc = rlt_coef * flt_inv.clone();
            quot.insert_add(qe, qc.clone());
            let piece = fp.mul(&Poly::monomial(qe, qc));
            rem = rem.sub_poly(&piece);
        }
        // Undo the proper-form shifts.
        let net = self_shift.sub(&f_shift);
        Some(quot.shift(&net))
    }

    fn shift(&self, by: &PExp) -> Poly {
        if by.is_zero() {
            return self.clone();
        }
        let mut out = Poly::zero();
        for (exp, c) in &self.terms {
            out.insert_add(exp.add(by), c.clone());
        }
        out
    }

    fn add_poly(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (exp, c) in &other.terms {
            out.insert_add(*exp, c.clone());
        }
        out
    }

    fn sub_poly(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (exp, c) in &other.terms {
            out.insert_add(*exp, c.clone().neg());
        }
        out
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                out.insert_add(ea.add(eb), ca.clone() * cb.clone());
            }
        }
        out
    }

    fn pow(&self, k: u32) -> Poly {
        let mut out = Poly::one();
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Splits into `(monomial unit, canonical monic factor)`.
    ///
    /// The canonical factor has min exponents zero and leading coefficient
    /// one; the unit carries the extracted monomial and scale so that
    /// `self = unit · canonical`.
    fn canonicalize(&self) -> (Poly, Poly) {
        assert!(!self.is_zero(), "cannot canonicalize zero");
        let shift = self.min_exps();
        let proper = self.shift(&PExp([0; 5]).sub(&shift));
        let lc = proper.leading().expect("nonzero").1.clone();
        let lc_inv = lc.inv().expect("nonzero leading coefficient");
        let monic = proper.mul(&Poly::constant(lc_inv));
        let unit = Poly::monomial(shift, lc);
        (unit, monic)
    }

    fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self
                .terms
                .get(&PExp([0; 5]))
                .map(|c| c.clone() - GaussRat::one())
                .map(|d| d.is_zero())
                .unwrap_or(false)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        // Descending graded-lex order: leading term first.
        for (exp, c) in self.terms.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let mut parts: Vec<String> = Vec::new();
            for (k, &e) in exp.0.iter().enumerate() {
                if e == 1 {
                    parts.push(SYM_NAMES[k].to_string());
                } else if e != 0 {
                    parts.push(format!("{}^{}", SYM_NAMES[k], e));
                }
            }
            if parts.is_empty() {
                write!(f, "{}", c)?;
            } else {
                write!(f, "{} {}", c, parts.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Element of the exact coefficient field.
///
/// Stored as `num / Π factor^mult` with canonical monic denominator factors.
/// Equality is decided by cross-multiplication, so correctness never depends
/// on how far a value has been reduced.
#[derive(Debug, Clone)]
pub struct Scalar {
    num: Poly,
    den: BTreeMap<Poly, u32>,
}

impl Scalar {
    /// Additive zero.
    pub fn zero() -> Self {
        Scalar {
            num: Poly::zero(),
            den: BTreeMap::new(),
        }
    }

    /// Multiplicative one.
    pub fn one() -> Self {
        Scalar {
            num: Poly::one(),
            den: BTreeMap::new(),
        }
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        Scalar::from_gauss(GaussRat::i())
    }

    /// Embeds an integer.
    pub fn from_int(n: i64) -> Self {
        Scalar::from_gauss(GaussRat::new(n, 0))
    }

    /// Embeds the exact rational `num/den`.
    pub fn from_ratio(num: i64, den: i64) -> Self {
        Scalar::from_gauss(GaussRat::ratio(num, den))
    }

    /// Embeds a Gaussian rational.
    pub fn from_gauss(c: GaussRat) -> Self {
        Scalar {
            num: Poly::constant(c),
            den: BTreeMap::new(),
        }
    }

    /// Embeds a polynomial.
    pub fn from_poly(p: Poly) -> Self {
        Scalar {
            num: p,
            den: BTreeMap::new(),
        }
    }

    /// The symbol `s` to the given (possibly negative) power.
    pub fn sym_pow(s: Sym, k: i32) -> Self {
        Scalar::from_poly(Poly::sym_pow(s, k))
    }

    /// `q^k` for any integer `k`.
    pub fn q_pow(k: i32) -> Self {
        Scalar::sym_pow(Sym::Q, k)
    }

    /// True when the numerator is the zero polynomial.
    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// True when the value equals one.
    pub fn is_one(&self) -> bool {
        self.eq(&Scalar::one())
    }

    /// Numerator view (for degree bookkeeping in boundary classification).
    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    /// Iterates over canonical denominator factors with multiplicities.
    pub fn den_factors(&self) -> impl Iterator<Item = (&Poly, u32)> {
        self.den.iter().map(|(f, m)| (f, *m))
    }

    /// True when no denominator factor involves the given symbol.
    pub fn denominator_free_of(&self, s: Sym) -> bool {
        self.den
            .keys()
            .all(|f| f.iter().all(|(exp, _)| exp.0[s as usize] == 0))
    }

    /// Minimum exponent of `s` over all numerator terms.
    ///
    /// Returns `None` for zero. Callers in boundary classification must first
    /// check `denominator_free_of(s)`.
    pub fn min_sym_degree(&self, s: Sym) -> Option<i32> {
        self.num.iter().map(|(exp, _)| exp.0[s as usize]).min()
    }

    fn normalize(mut self) -> Self {
        if self.num.is_zero() {
            self.den.clear();
            return self;
        }
        // Trial-division cancellation of denominator factors into the
        // numerator. Factors are canonical and non-monomial, so any exact
        // quotient strictly shrinks the denominator.
        let mut den = BTreeMap::new();
        for (factor, mult) in std::mem::take(&mut self.den) {
            let mut remaining = mult;
            while remaining > 0 {
                match self.num.div_exact(&factor) {
                    Some(q) => {
                        self.num = q;
                        remaining -= 1;
                    }
                    None => break,
                }
            }
            if remaining > 0 {
                den.insert(factor, remaining);
            }
        }
        self.den = den;
        self
    }

    /// One extra reduction pass (the optional reduction flag of the harness).
    pub fn reduce(self) -> Self {
        self.normalize()
    }

    fn den_poly(&self) -> Poly {
        let mut out = Poly::one();
        for (factor, mult) in &self.den {
            out = out.mul(&factor.pow(*mult));
        }
        out
    }

    /// Adds a canonical factor to the denominator, folding units into `num`.
    fn divide_by_poly(mut self, p: &Poly) -> Self {
        assert!(!p.is_zero(), "scalar division by zero polynomial");
        let (unit, monic) = p.canonicalize();
        // 1/unit = shift^-1 scaled by the inverse coefficient.
        let (uexp, ucoef) = {
            let (e, c) = unit.leading().expect("unit is a monomial");
            (*e, c.clone())
        };
        let inv_unit = Poly::monomial(
            PExp([0; 5]).sub(&uexp),
            ucoef.inv().expect("unit coefficient nonzero"),
        );
        self.num = self.num.mul(&inv_unit);
        if !monic.is_one() {
            *self.den.entry(monic).or_insert(0) += 1;
        }
        self.normalize()
    }

    /// Exact equality by cross-multiplication.
    pub fn eq(&self, other: &Scalar) -> bool {
        let lhs = self.num.mul(&other.den_poly());
        let rhs = other.num.mul(&self.den_poly());
        lhs == rhs
    }

    /// Multiplicative inverse.
    pub fn recip(&self) -> Result<Scalar> {
        if self.is_zero() {
            return Err(Error::DivisionByZero);
        }
        let mut out = Scalar::from_poly(self.den_poly());
        out = out.divide_by_poly(&self.num);
        Ok(out)
    }

    /// Integer power (negative powers require a nonzero base).
    pub fn pow(&self, k: i32) -> Scalar {
        if k < 0 {
            let inv = self.recip().expect("negative power of zero scalar");
            return inv.pow(-k);
        }
        let mut out = Scalar::one();
        for _ in 0..k {
            out = out * self.clone();
        }
        out
    }

    /// Conjugates coefficients; `q`, `c`, `M`, `E`, `e` are fixed.
    pub fn conj(&self) -> Scalar {
        let mut den = BTreeMap::new();
        let mut num = self.num.conj();
        for (factor, mult) in &self.den {
            // Conjugating a monic canonical factor can break monicity when
            // the leading coefficient is complex; re-canonicalize.
            let cf = factor.conj();
            let (unit, monic) = cf.canonicalize();
            let (uexp, ucoef) = {
                let (e, c) = unit.leading().expect("monomial unit");
                (*e, c.clone())
            };
            let inv_unit = Poly::monomial(
                PExp([0; 5]).sub(&uexp),
                ucoef.inv().expect("unit coefficient nonzero"),
            );
            for _ in 0..*mult {
                num = num.mul(&inv_unit);
            }
            if !monic.is_one() {
                *den.entry(monic).or_insert(0) += *mult;
            }
        }
        Scalar { num, den }.normalize()
    }

    /// Replaces `q` by `q^-1` everywhere, renormalizing the fraction.
    pub fn substitute_q_inverse(&self) -> Scalar {
        let mut den = BTreeMap::new();
        let mut num = self.num.substitute_q_inverse();
        for (factor, mult) in &self.den {
            let sf = factor.substitute_q_inverse();
            let (unit, monic) = sf.canonicalize();
            let (uexp, ucoef) = {
                let (e, c) = unit.leading().expect("monomial unit");
                (*e, c.clone())
            };
            let inv_unit = Poly::monomial(
                PExp([0; 5]).sub(&uexp),
                ucoef.inv().expect("unit coefficient nonzero"),
            );
            for _ in 0..*mult {
                num = num.mul(&inv_unit);
            }
            if !monic.is_one() {
                *den.entry(monic).or_insert(0) += *mult;
            }
        }
        Scalar { num, den }.normalize()
    }

    /// Evaluates at q = 1; errors when a denominator factor vanishes there.
    pub fn classical_limit(&self) -> Result<Scalar> {
        let num = self.num.eval_q_one();
        let mut out = Scalar::from_poly(num);
        for (factor, mult) in &self.den {
            let fq1 = factor.eval_q_one();
            if fq1.is_zero() {
                return Err(Error::ClassicalPole {
                    factor: factor.to_string(),
                });
            }
            for _ in 0..*mult {
                out = out.divide_by_poly(&fq1);
            }
        }
        Ok(out)
    }
}

impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        Scalar::eq(self, other)
    }
}

impl Eq for Scalar {}

impl Add for Scalar {
    type Output = Scalar;
    fn add(self, rhs: Scalar) -> Scalar {
        // Denominator least common multiple as a factor bag.
        let mut lcm: BTreeMap<Poly, u32> = self.den.clone();
        for (factor, mult) in &rhs.den {
            let cur = lcm.entry(factor.clone()).or_insert(0);
            *cur = (*cur).max(*mult);
        }
        let mut self_scale = Poly::one();
        for (factor, mult) in &lcm {
            let have = self.den.get(factor).copied().unwrap_or(0);
            self_scale = self_scale.mul(&factor.pow(mult - have));
        }
        let mut rhs_scale = Poly::one();
        for (factor, mult) in &lcm {
            let have = rhs.den.get(factor).copied().unwrap_or(0);
            rhs_scale = rhs_scale.mul(&factor.pow(mult - have));
        }
        let num = self.num.mul(&self_scale).add_poly(&rhs.num.mul(&rhs_scale));
        Scalar { num, den: lcm }.normalize()
    }
}

impl Sub for Scalar {
    type Output = Scalar;
    fn sub(self, rhs: Scalar) -> Scalar {
        self + (-rhs)
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        Scalar {
            num: Poly::zero().sub_poly(&self.num),
            den: self.den,
        }
    }
}

impl Mul for Scalar {
    type Output = Scalar;
    fn mul(self, rhs: Scalar) -> Scalar {
        let num = self.num.mul(&rhs.num);
        let mut den = self.den;
        for (factor, mult) in rhs.den {
            *den.entry(factor).or_insert(0) += mult;
        }
        Scalar { num, den }.normalize()
    }
}

impl Div for Scalar {
    type Output = Scalar;
    fn div(self, rhs: Scalar) -> Scalar {
        assert!(!rhs.is_zero(), "scalar division by zero");
        let mut out = self;
        for (factor, mult) in &rhs.den {
            for _ in 0..*mult {
                out.num = out.num.mul(factor);
            }
        }
        out.divide_by_poly(&rhs.num)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_empty() {
            return write!(f, "{}", self.num);
        }
        let den: Vec<String> = self
            .den
            .iter()
            .map(|(factor, mult)| {
                if *mult == 1 {
                    format!("({})", factor)
                } else {
                    format!("({})^{}", factor, mult)
                }
            })
            .collect();
        write!(f, "[{}] / [{}]", self.num, den.join(" "))
    }
}

/// `λ = q - q^-1`.
pub fn lambda() -> Scalar {
    Scalar::q_pow(1) - Scalar::q_pow(-1)
}

/// `λ₊ = q + q^-1`.
pub fn lambda_plus() -> Scalar {
    Scalar::q_pow(1) + Scalar::q_pow(-1)
}

/// The basic q-number `[[a]]_{q^base} = (1 - q^{base·a}) / (1 - q^base)`.
///
/// For `a ≥ 0` this is the polynomial `Σ_{j<a} q^{base·j}`; negative `a`
/// uses `[[-m]] = -q^{-base·m}·[[m]]`.
pub fn q_number(a: i64, base: i64) -> Scalar {
    if a < 0 {
        let m = -a;
        return -(Scalar::q_pow((-base * m) as i32) * q_number(m, base));
    }
    let mut out = Scalar::zero();
    for j in 0..a {
        out = out + Scalar::q_pow((base * j) as i32);
    }
    out
}

/// `[[n]]_{q^base}! = [[1]]·[[2]]···[[n]]`.
pub fn q_factorial(n: u32, base: i64) -> Scalar {
    let mut out = Scalar::one();
    for j in 1..=n as i64 {
        out = out * q_number(j, base);
    }
    out
}

/// Falling product `[[n]][[n-1]]···[[n-k+1]]` in the given base.
pub fn falling_q_factorial(n: i64, k: u32, base: i64) -> Scalar {
    let mut out = Scalar::one();
    for j in 0..k as i64 {
        out = out * q_number(n - j, base);
    }
    out
}

/// Gauss binomial via the Pascal recurrence (always a polynomial in q).
pub fn q_binomial(n: u32, k: u32, base: i64) -> Scalar {
    if k > n {
        return Scalar::zero();
    }
    // Row-by-row Pascal recurrence: C[n][k] = C[n-1][k-1] + q^{base·k} C[n-1][k].
    let mut row: Vec<Scalar> = vec![Scalar::one()];
    for _ in 1..=n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(Scalar::one());
        for j in 1..row.len() {
            let val = row[j - 1].clone() + Scalar::q_pow((base * j as i64) as i32) * row[j].clone();
            next.push(val);
        }
        next.push(Scalar::one());
        row = next;
    }
    row[k as usize].clone()
}

/// Even double factorial `[[n]]·[[n-2]]···[[2]]` in the given base.
pub fn q_double_factorial(n: i64, base: i64) -> Result<Scalar> {
    if n < 0 || n % 2 != 0 {
        return Err(Error::OddDoubleFactorial(n));
    }
    let mut out = Scalar::one();
    let mut j = n;
    while j >= 2 {
        out = out * q_number(j, base);
        j -= 2;
    }
    Ok(out)
}

/// Undeformed generalized binomial coefficient `α(α-1)···(α-k+1)/k!`.
pub fn rational_binomial(alpha_num: i64, alpha_den: i64, k: u32) -> Scalar {
    let alpha = GaussRat::ratio(alpha_num, alpha_den);
    let mut acc = GaussRat::one();
    for j in 0..k as i64 {
        let factor = alpha.clone() - GaussRat::new(j, 0);
        acc = acc * factor;
    }
    let mut kfac = GaussRat::one();
    for j in 1..=k as i64 {
        kfac = kfac * GaussRat::new(j, 0);
    }
    Scalar::from_gauss(acc * kfac.inv().expect("k! nonzero"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q() -> Scalar {
        Scalar::q_pow(1)
    }

    #[test]
    fn q_number_small_values() {
        assert_eq!(q_number(0, 1), Scalar::zero());
        assert_eq!(q_number(1, 1), Scalar::one());
        assert_eq!(q_number(2, 1), Scalar::one() + q());
        assert_eq!(
            q_number(3, 2),
            Scalar::one() + Scalar::q_pow(2) + Scalar::q_pow(4)
        );
    }

    #[test]
    fn q_number_negative_argument_matches_fraction_form() {
        // [[a]] = (1 - q^{base a}) / (1 - q^base) for all integer a.
        for a in -4..=4i64 {
            for base in [-4i64, -2, -1, 1, 2, 4] {
                let frac = (Scalar::one() - Scalar::q_pow((base * a) as i32))
                    / (Scalar::one() - Scalar::q_pow(base as i32));
                assert_eq!(q_number(a, base), frac, "a={a} base={base}");
            }
        }
    }

    #[test]
    fn q_number_addition_law() {
        for a in 0..5i64 {
            for b in 0..5i64 {
                for base in [1i64, 2, 4, -2] {
                    let lhs = q_number(a + b, base);
                    let rhs =
                        q_number(a, base) + Scalar::q_pow((base * a) as i32) * q_number(b, base);
                    assert_eq!(lhs, rhs, "a={a} b={b} base={base}");
                }
            }
        }
    }

    #[test]
    fn q_binomial_matches_factorial_ratio() {
        for n in 0..=6u32 {
            for k in 0..=n {
                for base in [2i64, 4, -2] {
                    let pascal = q_binomial(n, k, base);
                    let ratio = q_factorial(n, base)
                        / (q_factorial(k, base) * q_factorial(n - k, base));
                    assert_eq!(pascal, ratio, "n={n} k={k} base={base}");
                }
            }
        }
    }

    #[test]
    fn q_binomial_examples() {
        assert_eq!(q_binomial(2, 1, 4), Scalar::one() + Scalar::q_pow(4));
        assert_eq!(q_binomial(5, 5, 4), Scalar::one());
    }

    #[test]
    fn rational_binomial_examples() {
        assert_eq!(rational_binomial(1, 2, 0), Scalar::one());
        assert_eq!(rational_binomial(1, 2, 1), Scalar::from_ratio(1, 2));
        assert_eq!(rational_binomial(1, 2, 2), Scalar::from_ratio(-1, 8));
        assert_eq!(rational_binomial(1, 2, 3), Scalar::from_ratio(1, 16));
        assert_eq!(rational_binomial(1, 2, 4), Scalar::from_ratio(-5, 128));
    }

    #[test]
    fn q_double_factorial_examples() {
        assert_eq!(q_double_factorial(0, -2).unwrap(), Scalar::one());
        assert_eq!(
            q_double_factorial(2, -2).unwrap(),
            Scalar::one() + Scalar::q_pow(-2)
        );
        let four = q_double_factorial(4, -2).unwrap();
        let expected = (Scalar::one() + Scalar::q_pow(-2))
            * (Scalar::one() + Scalar::q_pow(-2) + Scalar::q_pow(-4) + Scalar::q_pow(-6));
        assert_eq!(four, expected);
        assert!(q_double_factorial(3, -2).is_err());
    }

    #[test]
    fn classical_values_at_q_one() {
        for n in 0..6u32 {
            let qf = q_factorial(n, 4).classical_limit().unwrap();
            let mut fact = 1i64;
            for j in 1..=n as i64 {
                fact *= j;
            }
            assert_eq!(qf, Scalar::from_int(fact), "n={n}");
        }
        for n in 0..6u32 {
            for k in 0..=n {
                let qb = q_binomial(n, k, 2).classical_limit().unwrap();
                let mut num = 1i64;
                let mut den = 1i64;
                for j in 0..k as i64 {
                    num *= n as i64 - j;
                    den *= j + 1;
                }
                assert_eq!(qb, Scalar::from_int(num / den), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn lambda_substitution_flips_sign() {
        assert_eq!(lambda().substitute_q_inverse(), -lambda());
        assert_eq!(lambda_plus().substitute_q_inverse(), lambda_plus());
        assert_eq!(
            q_number(2, 1).substitute_q_inverse(),
            Scalar::one() + Scalar::q_pow(-1)
        );
    }

    #[test]
    fn conjugate_is_involution_and_commutes_with_substitution() {
        let sample = (Scalar::i() * q() + Scalar::from_ratio(3, 2))
            / (Scalar::one() + Scalar::q_pow(2))
            * Scalar::sym_pow(Sym::C, -1)
            + Scalar::sym_pow(Sym::M, 2) * Scalar::i();
        assert_eq!(sample.conj().conj(), sample);
        assert_eq!(
            sample.conj().substitute_q_inverse(),
            sample.substitute_q_inverse().conj()
        );
        assert_eq!(Scalar::i().conj(), -Scalar::i());
        let mixed = q() + Scalar::i() * Scalar::q_pow(-1);
        assert_eq!(mixed.conj(), q() - Scalar::i() * Scalar::q_pow(-1));
    }

    #[test]
    fn substitution_is_involution() {
        let sample =
            (q() + Scalar::from_int(2)) / (Scalar::one() + Scalar::q_pow(4)) + Scalar::q_pow(-3);
        assert_eq!(sample.substitute_q_inverse().substitute_q_inverse(), sample);
    }

    #[test]
    fn field_axioms_on_samples() {
        let a = (q() + Scalar::from_int(1)) / (Scalar::one() + Scalar::q_pow(2));
        let b = Scalar::sym_pow(Sym::En, 2) - Scalar::sym_pow(Sym::C, 2) * Scalar::sym_pow(Sym::M, 2);
        let c = Scalar::i() * Scalar::q_pow(-2) + Scalar::from_ratio(1, 3);
        // Associativity and distributivity.
        assert_eq!(
            (a.clone() + b.clone()) + c.clone(),
            a.clone() + (b.clone() + c.clone())
        );
        assert_eq!(
            (a.clone() * b.clone()) * c.clone(),
            a.clone() * (b.clone() * c.clone())
        );
        assert_eq!(
            a.clone() * (b.clone() + c.clone()),
            a.clone() * b.clone() + a.clone() * c.clone()
        );
        // Inverses.
        let prod = b.clone() * b.clone().recip().unwrap();
        assert!(prod.is_one());
        assert!((a.clone() - a.clone()).is_zero());
        // Division round-trip.
        assert_eq!((a.clone() / b.clone()) * b.clone(), a);
    }

    #[test]
    fn propagator_style_denominators_cancel() {
        let shell = Scalar::sym_pow(Sym::En, 2)
            - Scalar::sym_pow(Sym::C, 2) * Scalar::sym_pow(Sym::M, 2);
        let x = Scalar::one() / shell.clone();
        let back = x * shell;
        assert!(back.is_one());
    }

    #[test]
    fn classical_limit_reports_poles() {
        let bad = Scalar::one() / lambda();
        match bad.classical_limit() {
            Err(Error::ClassicalPole { .. }) => {}
            other => panic!("expected pole report, got {other:?}"),
        }
        let good = lambda() / (Scalar::one() + q());
        assert_eq!(good.classical_limit().unwrap(), Scalar::zero());
    }

    #[test]
    fn min_degree_tracks_charge_symbol() {
        let s = Scalar::sym_pow(Sym::Ch, 2) * q() + Scalar::sym_pow(Sym::Ch, 3);
        assert_eq!(s.min_sym_degree(Sym::Ch), Some(2));
        assert!(s.denominator_free_of(Sym::Ch));
    }
}
