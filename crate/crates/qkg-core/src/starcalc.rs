//! Star-product calculus on normal-ordered coordinate series.
//!
//! Functions on the deformed space are represented by their normal-ordered
//! coefficient series: sparse sums of commutative monomials in three
//! coordinate triples (`x`, `y`, `p`), a central time variable `t`, and
//! exact scalar coefficients. The star product composes two such series so
//! that the result is again normal ordered; two orderings are supported,
//! related by inverting the deformation parameter and swapping the factors.

use std::cmp::Ordering as CmpOrdering;
use std::collections::BTreeMap;
use std::fmt;

use crate::coeffring::{falling_q_factorial, lambda, q_factorial, GaussRat, Scalar, Sym};
use crate::error::{Error, Result};

/// Coordinate symbols, in canonical storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    /// `x+`
    XP = 0,
    /// `x3`
    X3 = 1,
    /// `x-`
    XM = 2,
    /// `t`
    T = 3,
    /// `y+`
    YP = 4,
    /// `y3`
    Y3 = 5,
    /// `y-`
    YM = 6,
    /// `p+`
    PP = 7,
    /// `p3`
    P3 = 8,
    /// `p-`
    PM = 9,
}

/// All coordinate symbols in storage order.
pub const VARS: [Var; 10] = [
    Var::XP,
    Var::X3,
    Var::XM,
    Var::T,
    Var::YP,
    Var::Y3,
    Var::YM,
    Var::PP,
    Var::P3,
    Var::PM,
];

/// Canonical names used by the text form.
pub const VAR_NAMES: [&str; 10] = ["x+", "x3", "x-", "t", "y+", "y3", "y-", "p+", "p3", "p-"];

/// One coordinate triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// Position coordinates `x+`, `x3`, `x-`.
    X,
    /// Auxiliary position coordinates `y+`, `y3`, `y-` used by translations.
    Y,
    /// Momentum coordinates `p+`, `p3`, `p-`.
    P,
}

/// All coordinate triples.
pub const GROUPS: [Group; 3] = [Group::X, Group::Y, Group::P];

impl Group {
    fn base(self) -> usize {
        match self {
            Group::X => 0,
            Group::Y => 4,
            Group::P => 7,
        }
    }

    /// The `+` coordinate of this triple.
    pub fn plus(self) -> Var {
        match self {
            Group::X => Var::XP,
            Group::Y => Var::YP,
            Group::P => Var::PP,
        }
    }

    /// The `3` coordinate of this triple.
    pub fn three(self) -> Var {
        match self {
            Group::X => Var::X3,
            Group::Y => Var::Y3,
            Group::P => Var::P3,
        }
    }

    /// The `-` coordinate of this triple.
    pub fn minus(self) -> Var {
        match self {
            Group::X => Var::XM,
            Group::Y => Var::YM,
            Group::P => Var::PM,
        }
    }
}

/// Spatial index of a coordinate or derivative within a triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Idx {
    /// The `+` direction.
    Plus,
    /// The `3` direction.
    Three,
    /// The `-` direction.
    Minus,
}

/// All spatial indices.
pub const IDXS: [Idx; 3] = [Idx::Plus, Idx::Three, Idx::Minus];

impl Idx {
    /// The coordinate symbol for this index within a triple.
    pub fn var(self, group: Group) -> Var {
        match self {
            Idx::Plus => group.plus(),
            Idx::Three => group.three(),
            Idx::Minus => group.minus(),
        }
    }
}

/// Metric component `g_{AB}` (equal to `g^{AB}`), indices ordered `+,3,-`.
pub fn metric(a: Idx, b: Idx) -> Scalar {
    match (a, b) {
        (Idx::Plus, Idx::Minus) => -Scalar::q_pow(1),
        (Idx::Three, Idx::Three) => Scalar::one(),
        (Idx::Minus, Idx::Plus) => -Scalar::q_pow(-1),
        _ => Scalar::zero(),
    }
}

/// Which factor ordering the star product normal-orders to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarOrdering {
    /// Plus coordinates leftmost, minus coordinates rightmost.
    Standard,
    /// The opposite normal ordering, equivalent to inverting `q` and
    /// swapping the factors.
    Reversed,
}

/// Exponent vector of one monomial over the ten coordinate symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mono(pub [u16; 10]);

impl Mono {
    /// The empty monomial.
    pub fn unit() -> Self {
        Mono([0; 10])
    }

    /// Monomial with a single symbol raised to `n`.
    pub fn of(v: Var, n: u16) -> Self {
        let mut m = [0u16; 10];
        m[v as usize] = n;
        Mono(m)
    }

    /// Exponent of one symbol.
    pub fn exp(&self, v: Var) -> u16 {
        self.0[v as usize]
    }

    /// Sum of all exponents.
    pub fn total_degree(&self) -> u32 {
        self.0.iter().map(|&e| e as u32).sum()
    }

    /// Sum of exponents within one triple.
    pub fn group_degree(&self, g: Group) -> u32 {
        let b = g.base();
        self.0[b] as u32 + self.0[b + 1] as u32 + self.0[b + 2] as u32
    }

    /// Exponent of the time symbol.
    pub fn t_degree(&self) -> u32 {
        self.0[Var::T as usize] as u32
    }

    fn add(&self, other: &Mono) -> Mono {
        let mut out = [0u16; 10];
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.0[k] + other.0[k];
        }
        Mono(out)
    }

    fn group_exps(&self, g: Group) -> [u16; 3] {
        let b = g.base();
        [self.0[b], self.0[b + 1], self.0[b + 2]]
    }

    fn with_group(&self, g: Group, exps: [u16; 3]) -> Mono {
        let mut out = *self;
        let b = g.base();
        out.0[b] = exps[0];
        out.0[b + 1] = exps[1];
        out.0[b + 2] = exps[2];
        out
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

/// Variable charts accepted at the input boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// Position-space functions: `x`, `y`, and `t`.
    Position,
    /// Momentum-space functions: `p` and `t`.
    Momentum,
}

impl Chart {
    fn name(self) -> &'static str {
        match self {
            Chart::Position => "position",
            Chart::Momentum => "momentum",
        }
    }

    fn allows(self, v: Var) -> bool {
        match self {
            Chart::Position => !matches!(v, Var::PP | Var::P3 | Var::PM),
            Chart::Momentum => matches!(v, Var::PP | Var::P3 | Var::PM | Var::T),
        }
    }
}

/// Normal-ordered coefficient series with exact scalar coefficients.
///
/// `cap` records an optional total-degree truncation: terms above the cap
/// are dropped and the cap propagates through sums and products, so a capped
/// series stays a faithful truncation of the exact result.
#[derive(Debug, Clone)]
pub struct Series {
    terms: BTreeMap<Mono, Scalar>,
    cap: Option<u32>,
}

impl Series {
    /// The zero series.
    pub fn zero() -> Self {
        Series {
            terms: BTreeMap::new(),
            cap: None,
        }
    }

    /// The constant one.
    pub fn one() -> Self {
        Series::constant(Scalar::one())
    }

    /// A constant series.
    pub fn constant(s: Scalar) -> Self {
        let mut out = Series::zero();
        out.insert(Mono::unit(), s);
        out
    }

    /// The single-symbol series `v`.
    pub fn var(v: Var) -> Self {
        Series::var_pow(v, 1)
    }

    /// The power `v^n`.
    pub fn var_pow(v: Var, n: u16) -> Self {
        let mut out = Series::zero();
        out.insert(Mono::of(v, n), Scalar::one());
        out
    }

    /// A single monomial with coefficient.
    pub fn monomial(m: Mono, s: Scalar) -> Self {
        let mut out = Series::zero();
        out.insert(m, s);
        out
    }

    /// Builds a series from term pairs, summing duplicates.
    pub fn from_terms(terms: impl IntoIterator<Item = (Mono, Scalar)>) -> Self {
        let mut out = Series::zero();
        for (m, s) in terms {
            out.insert(m, s);
        }
        out
    }

    /// True when no terms are stored.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of stored terms.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// The truncation cap, when one is set.
    pub fn cap(&self) -> Option<u32> {
        self.cap
    }

    /// Iterates over `(monomial, coefficient)` in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&Mono, &Scalar)> {
        self.terms.iter()
    }

    /// Coefficient of one monomial (zero when absent).
    pub fn coeff(&self, m: &Mono) -> Scalar {
        self.terms.get(m).cloned().unwrap_or_else(Scalar::zero)
    }

    /// Largest total degree among stored terms (`None` when zero).
    pub fn max_total_degree(&self) -> Option<u32> {
        self.terms.keys().map(Mono::total_degree).max()
    }

    fn insert(&mut self, m: Mono, s: Scalar) {
        if s.is_zero() {
            return;
        }
        if let Some(cap) = self.cap {
            if m.total_degree() > cap {
                return;
            }
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(s);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get().clone() + s;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    fn merged_cap(a: Option<u32>, b: Option<u32>) -> Option<u32> {
        match (a, b) {
            (None, c) | (c, None) => c,
            (Some(x), Some(y)) => Some(x.min(y)),
        }
    }

    /// Drops terms above the given total degree and records the cap.
    pub fn truncate(&self, cap: u32) -> Series {
        let mut out = Series::zero();
        out.cap = Some(Self::merged_cap(self.cap, Some(cap)).expect("some cap"));
        for (m, s) in &self.terms {
            out.insert(*m, s.clone());
        }
        out
    }

    /// Sum of two series.
    pub fn add(&self, other: &Series) -> Series {
        let mut out = Series::zero();
        out.cap = Self::merged_cap(self.cap, other.cap);
        for (m, s) in &self.terms {
            out.insert(*m, s.clone());
        }
        for (m, s) in &other.terms {
            out.insert(*m, s.clone());
        }
        out
    }

    /// Difference of two series.
    pub fn sub(&self, other: &Series) -> Series {
        self.add(&other.neg())
    }

    /// Additive inverse.
    pub fn neg(&self) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, s) in &self.terms {
            out.insert(*m, -s.clone());
        }
        out
    }

    /// Multiplies every coefficient by a scalar.
    pub fn scalar_mul(&self, s: &Scalar) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            out.insert(*m, c.clone() * s.clone());
        }
        out
    }

    /// Commutative product of the coefficient series (exponents add).
    ///
    /// This is the product of the underlying symbols, not the star product;
    /// it is what multiplication of normal-ordered expressions means before
    /// deformation and is the classical limit of both star orderings.
    pub fn mul_pointwise(&self, other: &Series) -> Series {
        let mut out = Series::zero();
        out.cap = Self::merged_cap(self.cap, other.cap);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.insert(ma.add(mb), ca.clone() * cb.clone());
            }
        }
        out
    }

    /// Commutative power of the series.
    pub fn pow_pointwise(&self, n: u32) -> Series {
        let mut out = Series::one();
        for _ in 0..n {
            out = out.mul_pointwise(self);
        }
        out
    }

    /// Star product in the standard ordering.
    pub fn star(&self, other: &Series) -> Series {
        self.star_ordered(other, StarOrdering::Standard)
    }

    /// Star product in the given ordering.
    pub fn star_ordered(&self, other: &Series, ordering: StarOrdering) -> Series {
        let mut out = Series::zero();
        out.cap = Self::merged_cap(self.cap, other.cap);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                // Time and scalar symbols are central; each coordinate
                // triple contributes an independent correction sum.
                let base = ca.clone() * cb.clone();
                let t_exp = ma.exp(Var::T) + mb.exp(Var::T);
                let mut partial: Vec<(Mono, Scalar)> =
                    vec![(Mono::of(Var::T, t_exp), base)];
                for g in GROUPS {
                    let a = ma.group_exps(g);
                    let b = mb.group_exps(g);
                    let contributions = star_group(a, b, ordering);
                    let mut next = Vec::with_capacity(partial.len() * contributions.len());
                    for (m, s) in &partial {
                        for (ge, gs) in &contributions {
                            next.push((m.with_group(g, *ge), s.clone() * gs.clone()));
                        }
                    }
                    partial = next;
                }
                for (m, s) in partial {
                    out.insert(m, s);
                }
            }
        }
        out
    }

    /// Star power in the standard ordering.
    pub fn star_pow(&self, n: u32) -> Series {
        let mut out = Series::one();
        for _ in 0..n {
            out = out.star(self);
        }
        out
    }

    /// Conjugation: an involution that reverses star products.
    ///
    /// On each triple it mirrors the `+` and `-` exponents and contributes
    /// `(-q)^{n_+}(-1/q)^{n_-}` computed from the original exponents; time
    /// is fixed and coefficients are conjugated.
    pub fn conjugate(&self) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            let mut coeff = c.conj();
            let mut mono = *m;
            for g in GROUPS {
                let [np, n3, nm] = m.group_exps(g);
                let sign = if (np + nm) % 2 == 0 {
                    Scalar::one()
                } else {
                    -Scalar::one()
                };
                coeff = coeff * sign * Scalar::q_pow(np as i32 - nm as i32);
                mono = mono.with_group(g, [nm, n3, np]);
            }
            out.insert(mono, coeff);
        }
        out
    }

    /// Replaces `q` by `1/q` in every coefficient.
    pub fn substitute_q_inverse(&self) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            out.insert(*m, c.substitute_q_inverse());
        }
        out
    }

    /// Evaluates coefficients at q = 1.
    pub fn classical_limit(&self) -> Result<Series> {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            out.insert(*m, c.classical_limit()?);
        }
        Ok(out)
    }

    /// Multiplies each term by `q^{k·n}` where `n` is the exponent of `v`.
    pub fn scale_var(&self, v: Var, k: i32) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            let n = m.exp(v) as i32;
            out.insert(*m, c.clone() * Scalar::q_pow(k * n));
        }
        out
    }

    /// Evaluates at `v = 0` by dropping terms containing `v`.
    pub fn set_var_zero(&self, v: Var) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            if m.exp(v) == 0 {
                out.insert(*m, c.clone());
            }
        }
        out
    }

    /// Evaluates at zero in all three coordinates of a triple.
    pub fn set_group_zero(&self, g: Group) -> Series {
        self.set_var_zero(g.plus())
            .set_var_zero(g.three())
            .set_var_zero(g.minus())
    }

    /// Moves all exponents of one triple onto another (which must be unused).
    pub fn rename_group(&self, from: Group, to: Group) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            let src = m.group_exps(from);
            let dst = m.group_exps(to);
            assert!(
                dst == [0, 0, 0],
                "rename target triple already carries exponents"
            );
            let mono = m.with_group(from, [0, 0, 0]).with_group(to, src);
            out.insert(mono, c.clone());
        }
        out
    }

    /// Simultaneous monomial substitution `v ↦ s·w` for each listed entry.
    ///
    /// A term with exponent `n` in `v` picks up the factor `s^n` and the
    /// exponent moves to `w`. All listed substitutions read the original
    /// exponents, so mirror swaps within a triple are well defined.
    pub fn substitute_vars(&self, map: &[(Var, Scalar, Var)]) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            let mut coeff = c.clone();
            let mut exps = m.0;
            for (v, _, _) in map {
                exps[*v as usize] = 0;
            }
            for (v, s, w) in map {
                let n = m.exp(*v);
                if n > 0 {
                    coeff = coeff * s.pow(n as i32);
                    exps[*w as usize] += n;
                }
            }
            out.insert(Mono(exps), coeff);
        }
        out
    }

    /// Applies a scalar map to every coefficient.
    pub fn map_coeffs(&self, f: impl Fn(&Scalar) -> Scalar) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            out.insert(*m, f(c));
        }
        out
    }

    /// Rebuilds every term through a map that may change both the monomial
    /// and the coefficient.
    pub fn map_terms(&self, f: impl Fn(&Mono, &Scalar) -> (Mono, Scalar)) -> Series {
        let mut out = Series::zero();
        out.cap = self.cap;
        for (m, c) in &self.terms {
            let (nm, nc) = f(m, c);
            out.insert(nm, nc);
        }
        out
    }

    /// Checks that every symbol appearing lies in the chart.
    pub fn validate_chart(&self, chart: Chart) -> Result<()> {
        for m in self.terms.keys() {
            for v in VARS {
                if m.exp(v) > 0 && !chart.allows(v) {
                    return Err(Error::ChartMismatch {
                        expected: chart.name().to_string(),
                        found: VAR_NAMES[v as usize].to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Smallest exponent of `v` over stored terms (`None` when zero).
    pub fn min_var_degree(&self, v: Var) -> Option<u32> {
        self.terms.keys().map(|m| m.exp(v) as u32).min()
    }

    /// Largest exponent of `v` over stored terms (`None` when zero).
    pub fn max_var_degree(&self, v: Var) -> Option<u32> {
        self.terms.keys().map(|m| m.exp(v) as u32).max()
    }

    /// Smallest triple degree over stored terms (`None` when zero).
    pub fn min_group_degree(&self, g: Group) -> Option<u32> {
        self.terms.keys().map(|m| m.group_degree(g)).min()
    }

    /// Largest triple degree over stored terms (`None` when zero).
    pub fn max_group_degree(&self, g: Group) -> Option<u32> {
        self.terms.keys().map(|m| m.group_degree(g)).max()
    }
}

impl PartialEq for Series {
    fn eq(&self, other: &Self) -> bool {
        self.sub(other).is_zero()
    }
}

impl Eq for Series {}

/// One triple's star correction sum for a single monomial pair.
///
/// Exponents are `[n_+, n_3, n_-]`; every contribution preserves the triple's
/// total degree.
fn star_group(a: [u16; 3], b: [u16; 3], ordering: StarOrdering) -> Vec<([u16; 3], Scalar)> {
    let [ap, a3, am] = [a[0] as i64, a[1] as i64, a[2] as i64];
    let [bp, b3, bm] = [b[0] as i64, b[1] as i64, b[2] as i64];
    let mut out = Vec::new();
    match ordering {
        StarOrdering::Standard => {
            let kmax = am.min(bp);
            for k in 0..=kmax {
                let coef = lambda().pow(k as i32)
                    / q_factorial(k as u32, 4)
                    * falling_q_factorial(am, k as u32, 4)
                    * falling_q_factorial(bp, k as u32, 4)
                    * Scalar::q_pow((2 * (a3 * (bp - k) + (am - k) * b3)) as i32);
                let exps = [
                    (ap + bp - k) as u16,
                    (a3 + b3 + 2 * k) as u16,
                    (am + bm - k) as u16,
                ];
                if !coef.is_zero() {
                    out.push((exps, coef));
                }
            }
        }
        StarOrdering::Reversed => {
            let kmax = ap.min(bm);
            for k in 0..=kmax {
                let coef = (-lambda()).pow(k as i32)
                    / q_factorial(k as u32, -4)
                    * falling_q_factorial(ap, k as u32, -4)
                    * falling_q_factorial(bm, k as u32, -4)
                    * Scalar::q_pow((-2 * (a3 * (bm - k) + (ap - k) * b3)) as i32);
                let exps = [
                    (ap + bp - k) as u16,
                    (a3 + b3 + 2 * k) as u16,
                    (am + bm - k) as u16,
                ];
                if !coef.is_zero() {
                    out.push((exps, coef));
                }
            }
        }
    }
    out
}

/// Coordinate series with raised or lowered index.
///
/// Lowering contracts with the metric: the `+` component becomes `-q` times
/// the raised `-` coordinate, and symmetrically.
pub fn coord_series(group: Group, idx: Idx, raised: bool) -> Series {
    if raised {
        return Series::var(idx.var(group));
    }
    match idx {
        Idx::Plus => Series::var(group.minus()).scalar_mul(&(-Scalar::q_pow(1))),
        Idx::Three => Series::var(group.three()),
        Idx::Minus => Series::var(group.plus()).scalar_mul(&(-Scalar::q_pow(-1))),
    }
}

// ---------------------------------------------------------------------------
// Canonical text form.
// ---------------------------------------------------------------------------

const SCALAR_SYM_NAMES: [&str; 5] = ["q", "c", "M", "E", "e"];

fn rat_text(r: &num::rational::BigRational) -> String {
    if num::One::is_one(r.denom()) {
        format!("{}", r.numer())
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn gauss_text(g: &GaussRat) -> String {
    use num::{One, Zero};
    if g.im.is_zero() {
        return rat_text(&g.re);
    }
    let im_txt = if g.im.is_one() {
        "i".to_string()
    } else if (-g.im.clone()).is_one() {
        "-i".to_string()
    } else {
        format!("{}*i", rat_text(&g.im))
    };
    if g.re.is_zero() {
        im_txt
    } else if let Some(rest) = im_txt.strip_prefix('-') {
        format!("({} - {})", rat_text(&g.re), rest)
    } else {
        format!("({} + {})", rat_text(&g.re), im_txt)
    }
}

fn poly_term_text(exp: &[i32; 5], coef: &GaussRat) -> String {
    let mut factors: Vec<String> = Vec::new();
    for (k, &e) in exp.iter().enumerate() {
        if e == 1 {
            factors.push(SCALAR_SYM_NAMES[k].to_string());
        } else if e != 0 {
            factors.push(format!("{}^{}", SCALAR_SYM_NAMES[k], e));
        }
    }
    let coef_txt = gauss_text(coef);
    if factors.is_empty() {
        coef_txt
    } else if coef_txt == "1" {
        factors.join("*")
    } else if coef_txt == "-1" {
        format!("-{}", factors.join("*"))
    } else {
        format!("{}*{}", coef_txt, factors.join("*"))
    }
}

fn poly_text(p: &crate::coeffring::Poly) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut parts: Vec<String> = Vec::new();
    for (exp, coef) in p.iter() {
        parts.push(poly_term_text(&exp.0, coef));
    }
    join_signed(&parts)
}

fn join_signed(parts: &[String]) -> String {
    let mut out = String::new();
    for (k, part) in parts.iter().enumerate() {
        if k == 0 {
            out.push_str(part);
        } else if let Some(rest) = part.strip_prefix('-') {
            out.push_str(" - ");
            out.push_str(rest);
        } else {
            out.push_str(" + ");
            out.push_str(part);
        }
    }
    out
}

fn scalar_text(s: &Scalar) -> String {
    let num = s.numerator();
    let num_txt = poly_text(num);
    let den_parts = scalar_den_text(s);
    let num_wrapped = if num.term_count() > 1 {
        format!("({})", num_txt)
    } else {
        num_txt
    };
    match den_parts {
        None => num_wrapped,
        Some(d) => format!("{}/({})", num_wrapped, d),
    }
}

fn scalar_den_text(s: &Scalar) -> Option<String> {
    let mut parts: Vec<String> = Vec::new();
    for (factor, mult) in s.den_factors() {
        let base = format!("({})", poly_text(factor));
        if mult == 1 {
            parts.push(base);
        } else {
            parts.push(format!("{}^{}", base, mult));
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("*"))
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut parts: Vec<String> = Vec::new();
        for (m, c) in &self.terms {
            let mut vars: Vec<String> = Vec::new();
            for v in VARS {
                let e = m.exp(v);
                if e == 1 {
                    vars.push(VAR_NAMES[v as usize].to_string());
                } else if e > 1 {
                    vars.push(format!("{}^{}", VAR_NAMES[v as usize], e));
                }
            }
            let coef = scalar_text(c);
            let part = if vars.is_empty() {
                coef
            } else if coef == "1" {
                vars.join("*")
            } else if coef == "-1" {
                format!("-{}", vars.join("*"))
            } else {
                format!("{}*{}", coef, vars.join("*"))
            };
            parts.push(part);
        }
        write!(f, "{}", join_signed(&parts))
    }
}

// ---------------------------------------------------------------------------
// Expression parser for the canonical text form (and a superset of it).
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(u64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = input.chars().collect();
    let mut toks = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let ch = chars[k];
        if ch.is_whitespace() {
            k += 1;
            continue;
        }
        let at = k;
        match ch {
            '+' => {
                toks.push((Tok::Plus, at));
                k += 1;
            }
            '-' => {
                toks.push((Tok::Minus, at));
                k += 1;
            }
            '*' => {
                toks.push((Tok::Star, at));
                k += 1;
            }
            '/' => {
                toks.push((Tok::Slash, at));
                k += 1;
            }
            '^' => {
                toks.push((Tok::Caret, at));
                k += 1;
            }
            '(' => {
                toks.push((Tok::LParen, at));
                k += 1;
            }
            ')' => {
                toks.push((Tok::RParen, at));
                k += 1;
            }
            '0'..='9' => {
                let mut val: u64 = 0;
                while k < chars.len() && chars[k].is_ascii_digit() {
                    val = val
                        .checked_mul(10)
                        .and_then(|v| v.checked_add(chars[k] as u64 - '0' as u64))
                        .ok_or(Error::Parse {
                            msg: "integer literal too large".to_string(),
                            at,
                        })?;
                    k += 1;
                }
                toks.push((Tok::Num(val), at));
            }
            'x' | 'y' | 'p' => {
                let suffix = chars.get(k + 1).copied();
                match suffix {
                    Some('+') | Some('-') | Some('3') => {
                        toks.push((Tok::Ident(format!("{}{}", ch, suffix.unwrap())), at));
                        k += 2;
                    }
                    _ => {
                        return Err(Error::Parse {
                            msg: format!("coordinate '{}' needs a '+', '3', or '-' suffix", ch),
                            at,
                        })
                    }
                }
            }
            'q' | 'c' | 'M' | 'E' | 'e' | 'i' | 't' => {
                toks.push((Tok::Ident(ch.to_string()), at));
                k += 1;
            }
            _ => {
                return Err(Error::Parse {
                    msg: format!("unexpected character '{}'", ch),
                    at,
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn at(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|&(_, at)| at)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        let at = self.at();
        match self.bump() {
            Some(t) if t == tok => Ok(()),
            other => Err(Error::Parse {
                msg: format!("expected {:?}, found {:?}", tok, other),
                at,
            }),
        }
    }

    fn expr(&mut self) -> Result<Series> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = acc.add(&rhs);
                }
                Some(Tok::Minus) => {
                    self.bump();
                    let rhs = self.term()?;
                    acc = acc.sub(&rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Series> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    let rhs = self.unary()?;
                    acc = acc.mul_pointwise(&rhs);
                }
                Some(Tok::Slash) => {
                    let at = self.at();
                    self.bump();
                    let rhs = self.unary()?;
                    let inv = Self::invert_scalar_series(&rhs).ok_or(Error::Parse {
                        msg: "division requires a nonzero coefficient expression".to_string(),
                        at,
                    })?;
                    acc = acc.scalar_mul(&inv);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn invert_scalar_series(s: &Series) -> Option<Scalar> {
        if s.term_count() != 1 {
            return None;
        }
        let (m, c) = s.iter().next()?;
        if m.total_degree() != 0 {
            return None;
        }
        c.recip().ok()
    }

    fn unary(&mut self) -> Result<Series> {
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            let inner = self.unary()?;
            return Ok(inner.neg());
        }
        self.power()
    }

    fn power(&mut self) -> Result<Series> {
        let base = self.atom()?;
        if !matches!(self.peek(), Some(Tok::Caret)) {
            return Ok(base);
        }
        let at = self.at();
        self.bump();
        let mut sign = 1i64;
        if matches!(self.peek(), Some(Tok::Minus)) {
            self.bump();
            sign = -1;
        }
        let exp = match self.bump() {
            Some(Tok::Num(n)) => sign * n as i64,
            other => {
                return Err(Error::Parse {
                    msg: format!("expected integer exponent, found {:?}", other),
                    at,
                })
            }
        };
        if exp >= 0 {
            return Ok(base.pow_pointwise(exp as u32));
        }
        let inv = Self::invert_scalar_series(&base).ok_or(Error::Parse {
            msg: "negative powers require a coefficient expression".to_string(),
            at,
        })?;
        Ok(Series::constant(inv.pow((-exp) as i32)))
    }

    fn atom(&mut self) -> Result<Series> {
        let at = self.at();
        match self.bump() {
            Some(Tok::Num(n)) => Ok(Series::constant(Scalar::from_int(n as i64))),
            Some(Tok::Ident(name)) => match name.as_str() {
                "q" => Ok(Series::constant(Scalar::sym_pow(Sym::Q, 1))),
                "c" => Ok(Series::constant(Scalar::sym_pow(Sym::C, 1))),
                "M" => Ok(Series::constant(Scalar::sym_pow(Sym::M, 1))),
                "E" => Ok(Series::constant(Scalar::sym_pow(Sym::En, 1))),
                "e" => Ok(Series::constant(Scalar::sym_pow(Sym::Ch, 1))),
                "i" => Ok(Series::constant(Scalar::i())),
                other => {
                    let idx = VAR_NAMES.iter().position(|&n| n == other);
                    match idx {
                        Some(k) => Ok(Series::var(VARS[k])),
                        None => Err(Error::Parse {
                            msg: format!("unknown symbol '{}'", other),
                            at,
                        }),
                    }
                }
            },
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            other => Err(Error::Parse {
                msg: format!("expected a value, found {:?}", other),
                at,
            }),
        }
    }
}

/// Parses the canonical text form (or any expression over the same symbols).
pub fn parse_series(input: &str) -> Result<Series> {
    let toks = tokenize(input)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: input.chars().count(),
    };
    let out = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(Error::Parse {
            msg: "trailing input after expression".to_string(),
            at: p.at(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffring::{lambda, lambda_plus};

    fn xp() -> Series {
        Series::var(Var::XP)
    }
    fn x3() -> Series {
        Series::var(Var::X3)
    }
    fn xm() -> Series {
        Series::var(Var::XM)
    }

    fn q_pow(k: i32) -> Scalar {
        Scalar::q_pow(k)
    }

    #[test]
    fn star_generator_table() {
        // Diagonal products are undeformed.
        assert_eq!(xp().star(&xp()), Series::var_pow(Var::XP, 2));
        assert_eq!(x3().star(&x3()), Series::var_pow(Var::X3, 2));
        assert_eq!(xm().star(&xm()), Series::var_pow(Var::XM, 2));
        // Mixed products in normal order stay plain or pick up q factors.
        assert_eq!(xp().star(&x3()), xp().mul_pointwise(&x3()));
        assert_eq!(xp().star(&xm()), xp().mul_pointwise(&xm()));
        assert_eq!(x3().star(&xm()), x3().mul_pointwise(&xm()));
        assert_eq!(
            x3().star(&xp()),
            xp().mul_pointwise(&x3()).scalar_mul(&q_pow(2))
        );
        assert_eq!(
            xm().star(&x3()),
            x3().mul_pointwise(&xm()).scalar_mul(&q_pow(2))
        );
        // The reordered product generates the correction term.
        let expected = xp()
            .mul_pointwise(&xm())
            .add(&Series::var_pow(Var::X3, 2).scalar_mul(&lambda()));
        assert_eq!(xm().star(&xp()), expected);
    }

    #[test]
    fn star_degree_two_oracle() {
        // (x-)^2 ⊛ x+ reordered by hand through the generator relations:
        // x+ (x-)^2 + λ(1+q^4) (x3)^2 x-.
        let lhs = Series::var_pow(Var::XM, 2).star(&xp());
        let mut expected = Series::zero();
        expected = expected.add(&Series::monomial(
            Mono([1, 0, 2, 0, 0, 0, 0, 0, 0, 0]),
            Scalar::one(),
        ));
        expected = expected.add(&Series::monomial(
            Mono([0, 2, 1, 0, 0, 0, 0, 0, 0, 0]),
            lambda() * (Scalar::one() + Scalar::q_pow(4)),
        ));
        assert_eq!(lhs, expected);
    }

    #[test]
    fn reversed_star_generator_checks() {
        let lhs = xp().star_ordered(&x3(), StarOrdering::Reversed);
        assert_eq!(lhs, xp().mul_pointwise(&x3()).scalar_mul(&q_pow(-2)));
        let lhs = xp().star_ordered(&xm(), StarOrdering::Reversed);
        let expected = xp()
            .mul_pointwise(&xm())
            .sub(&Series::var_pow(Var::X3, 2).scalar_mul(&lambda()));
        assert_eq!(lhs, expected);
    }

    #[test]
    fn reversed_star_is_swapped_inverse_q_star() {
        let samples = [
            xp(),
            x3().add(&xm().scalar_mul(&lambda_plus())),
            Series::var_pow(Var::XM, 2).mul_pointwise(&x3()),
            Series::var(Var::PP).mul_pointwise(&Series::var(Var::P3)),
            Series::var(Var::T).mul_pointwise(&xp()).add(&Series::one()),
        ];
        for f in &samples {
            for g in &samples {
                let direct = f.star_ordered(g, StarOrdering::Reversed);
                let via = g
                    .substitute_q_inverse()
                    .star(&f.substitute_q_inverse())
                    .substitute_q_inverse();
                assert_eq!(direct, via);
            }
        }
    }

    #[test]
    fn star_is_associative_on_generators() {
        let gens = [xp(), x3(), xm(), Series::var(Var::T)];
        for a in &gens {
            for b in &gens {
                for c in &gens {
                    let left = a.star(b).star(c);
                    let right = a.star(&b.star(c));
                    assert_eq!(left, right);
                }
            }
        }
        // One deeper case mixing all three spatial symbols twice.
        let f = xm().mul_pointwise(&xm());
        let g = xp().mul_pointwise(&x3());
        let h = xm().mul_pointwise(&xp());
        assert_eq!(f.star(&g).star(&h), f.star(&g.star(&h)));
    }

    #[test]
    fn star_groups_are_independent() {
        // Momentum obeys the same algebra, and position factors commute
        // through momentum factors.
        let pm_pp = Series::var(Var::PM).star(&Series::var(Var::PP));
        let expected = Series::var(Var::PP)
            .mul_pointwise(&Series::var(Var::PM))
            .add(&Series::var_pow(Var::P3, 2).scalar_mul(&lambda()));
        assert_eq!(pm_pp, expected);
        let mixed = xm()
            .mul_pointwise(&Series::var(Var::PM))
            .star(&xp().mul_pointwise(&Series::var(Var::PP)));
        let x_part = xm().star(&xp());
        let p_part = Series::var(Var::PM).star(&Series::var(Var::PP));
        assert_eq!(mixed, x_part.mul_pointwise(&p_part));
    }

    #[test]
    fn star_preserves_group_degree() {
        let f = Series::var_pow(Var::XM, 2).mul_pointwise(&x3());
        let g = Series::var_pow(Var::XP, 3);
        let prod = f.star(&g);
        for (m, _) in prod.iter() {
            assert_eq!(m.group_degree(Group::X), 6);
        }
    }

    #[test]
    fn conjugation_on_generators() {
        assert_eq!(xp().conjugate(), xm().scalar_mul(&(-q_pow(1))));
        assert_eq!(xm().conjugate(), xp().scalar_mul(&(-q_pow(-1))));
        assert_eq!(x3().conjugate(), x3());
        assert_eq!(Series::var(Var::T).conjugate(), Series::var(Var::T));
        let iconst = Series::constant(Scalar::i());
        assert_eq!(iconst.conjugate(), Series::constant(-Scalar::i()));
    }

    #[test]
    fn conjugation_involution_and_antihomomorphism() {
        let samples = [
            xp(),
            xm().mul_pointwise(&x3()),
            Series::var_pow(Var::XP, 2).add(&x3().scalar_mul(&Scalar::i())),
            Series::var(Var::PM).mul_pointwise(&Series::var(Var::T)),
        ];
        for f in &samples {
            assert_eq!(f.conjugate().conjugate(), *f);
        }
        for f in &samples {
            for g in &samples {
                let lhs = f.star(g).conjugate();
                let rhs = g.conjugate().star(&f.conjugate());
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn lowered_coordinates_conjugate_to_raised() {
        // The conjugate of each lowered coordinate is the raised one.
        for idx in IDXS {
            let lowered = coord_series(Group::X, idx, false);
            let raised = coord_series(Group::X, idx, true);
            assert_eq!(lowered.conjugate(), raised);
        }
    }

    #[test]
    fn metric_contractions() {
        // g^{AC} g_{CB} = δ^A_B.
        for a in IDXS {
            for b in IDXS {
                let mut sum = Scalar::zero();
                for c in IDXS {
                    sum = sum + metric(a, c) * metric(c, b);
                }
                let expected = if matches!((a, b), (Idx::Plus, Idx::Plus))
                    || matches!((a, b), (Idx::Three, Idx::Three))
                    || matches!((a, b), (Idx::Minus, Idx::Minus))
                {
                    Scalar::one()
                } else {
                    Scalar::zero()
                };
                assert_eq!(sum, expected, "{:?} {:?}", a, b);
            }
        }
        // g^{AC} g_{BC} is the diagonal (q^2, 1, q^-2).
        let diag = [q_pow(2), Scalar::one(), q_pow(-2)];
        for (ka, a) in IDXS.iter().enumerate() {
            for (kb, b) in IDXS.iter().enumerate() {
                let mut sum = Scalar::zero();
                for c in IDXS {
                    sum = sum + metric(*a, c) * metric(*b, c);
                }
                let expected = if ka == kb {
                    diag[ka].clone()
                } else {
                    Scalar::zero()
                };
                assert_eq!(sum, expected);
            }
        }
    }

    #[test]
    fn classical_limit_collapses_star_to_pointwise() {
        let f = xm().mul_pointwise(&x3()).add(&xp());
        let g = Series::var_pow(Var::XP, 2).add(&Series::var(Var::T));
        let starred = f.star(&g).classical_limit().unwrap();
        let pointwise = f
            .classical_limit()
            .unwrap()
            .mul_pointwise(&g.classical_limit().unwrap());
        assert_eq!(starred, pointwise);
    }

    #[test]
    fn truncation_is_coherent_with_star() {
        let f = xm().add(&Series::var_pow(Var::X3, 2));
        let g = xp().add(&Series::var_pow(Var::XM, 3));
        for cap in 0..6u32 {
            let full = f.star(&g).truncate(cap);
            let capped = f.truncate(cap).star(&g.truncate(cap)).truncate(cap);
            assert_eq!(full, capped, "cap={cap}");
        }
    }

    #[test]
    fn chart_validation() {
        let pos = xp().mul_pointwise(&Series::var(Var::T));
        assert!(pos.validate_chart(Chart::Position).is_ok());
        assert!(pos.validate_chart(Chart::Momentum).is_err());
        let mom = Series::var(Var::P3).mul_pointwise(&Series::var(Var::T));
        assert!(mom.validate_chart(Chart::Momentum).is_ok());
        assert!(mom.validate_chart(Chart::Position).is_err());
    }

    #[test]
    fn substitution_helpers() {
        let f = xp().mul_pointwise(&x3());
        let scaled = f.scale_var(Var::XP, 2);
        assert_eq!(scaled, f.scalar_mul(&q_pow(2)));
        let swapped = f.substitute_vars(&[
            (Var::XP, Scalar::one(), Var::XM),
            (Var::XM, Scalar::one(), Var::XP),
        ]);
        assert_eq!(swapped, xm().mul_pointwise(&x3()));
        let renamed = f.rename_group(Group::X, Group::Y);
        assert_eq!(
            renamed,
            Series::var(Var::YP).mul_pointwise(&Series::var(Var::Y3))
        );
        assert_eq!(renamed.set_group_zero(Group::Y), Series::zero());
        assert_eq!(f.set_var_zero(Var::XM), f);
    }

    #[test]
    fn text_round_trip() {
        let samples = [
            Series::zero(),
            Series::one(),
            xm().scalar_mul(&(-q_pow(1))),
            xm().star(&xp()),
            Series::var_pow(Var::XM, 2)
                .star(&xp())
                .scalar_mul(&(Scalar::i() / (Scalar::one() + Scalar::q_pow(4)))),
            Series::var(Var::P3)
                .mul_pointwise(&Series::var(Var::T))
                .scalar_mul(&Scalar::sym_pow(Sym::C, -2)),
            Series::constant(
                (Scalar::one() + Scalar::q_pow(2)).recip().unwrap()
                    * Scalar::sym_pow(Sym::En, 2),
            ),
        ];
        for f in &samples {
            let text = f.to_string();
            let parsed = parse_series(&text).unwrap_or_else(|e| {
                panic!("failed to parse {:?}: {:?}", text, e);
            });
            assert_eq!(&parsed, f, "round trip through {:?}", text);
        }
    }

    #[test]
    fn parser_accepts_hand_written_input() {
        let f = parse_series("q^2*x+*x3 - (1 + q^4)*t^2/(1 + q^2) + i*p-").unwrap();
        let expected = xp()
            .mul_pointwise(&x3())
            .scalar_mul(&q_pow(2))
            .sub(&Series::var_pow(Var::T, 2).scalar_mul(
                &((Scalar::one() + Scalar::q_pow(4)) / (Scalar::one() + Scalar::q_pow(2))),
            ))
            .add(&Series::var(Var::PM).scalar_mul(&Scalar::i()));
        assert_eq!(f, expected);
    }

    #[test]
    fn parser_rejects_malformed_input() {
        assert!(parse_series("x").is_err());
        assert!(parse_series("x+ +").is_err());
        assert!(parse_series("(x+").is_err());
        assert!(parse_series("x+^-1").is_err());
        assert!(parse_series("1/x+").is_err());
        assert!(parse_series("w").is_err());
    }
}
