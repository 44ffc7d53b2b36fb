//! Truncated deformed exponentials and momentum eigenfunctions.
//!
//! The basic exponential pairs a position word with a momentum word so that
//! each partial derivative acts on it with a momentum eigenvalue. Eight
//! kinds are built here: the two argument orders, their `q -> 1/q` images,
//! and the four duals obtained from the images by rescaling every momentum
//! degree with `q^{±6}`. All kinds are finite sums truncated at a joint
//! degree, so every eigenvalue, addition, and inversion law holds up to
//! terms that sit exactly on the truncation boundary; the residual
//! functions in this module return those boundary terms for inspection.
//!
//! Momentum eigenfunctions are the same bodies with the (divergent) volume
//! normalization set to one; every identity checked downstream is
//! normalization independent. The time phase used by plane waves is also
//! built here, from a caller-supplied energy series.

use crate::coeffring::{q_factorial, Scalar};
use crate::error::Result;
use crate::qcalculus::{
    act, coproduct_product, invert, natural_pairing, translate, ActionKind, DerivFamily,
    DerivSym,
};
use crate::starcalc::{coord_series, Group, Idx, Mono, Series, StarOrdering, Var, IDXS};

/// The eight exponential kinds.
///
/// `PositionFirst` writes the position word to the left of the momentum
/// word; `MomentumFirst` writes the momenta (with inverse-i factors) first
/// and the lowered position word second. `Bar` kinds substitute `q -> 1/q`
/// in the fully expanded series. Dual kinds rescale the momenta of the
/// opposite-family kind with the same argument order by `q^{±6}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpKind {
    /// Position word left, `i` times lowered momenta right.
    PositionFirst,
    /// Inverse-`i` momenta left, lowered position word right.
    MomentumFirst,
    /// `q -> 1/q` image of `PositionFirst`.
    BarPositionFirst,
    /// `q -> 1/q` image of `MomentumFirst`.
    BarMomentumFirst,
    /// `BarMomentumFirst` with momenta rescaled by `q^6`.
    DualMomentumFirst,
    /// `BarPositionFirst` with momenta rescaled by `q^6`.
    DualPositionFirst,
    /// `MomentumFirst` with momenta rescaled by `q^-6`.
    BarDualMomentumFirst,
    /// `PositionFirst` with momenta rescaled by `q^-6`.
    BarDualPositionFirst,
}

/// All exponential kinds.
pub const EXP_KINDS: [ExpKind; 8] = [
    ExpKind::PositionFirst,
    ExpKind::MomentumFirst,
    ExpKind::BarPositionFirst,
    ExpKind::BarMomentumFirst,
    ExpKind::DualMomentumFirst,
    ExpKind::DualPositionFirst,
    ExpKind::BarDualMomentumFirst,
    ExpKind::BarDualPositionFirst,
];

/// Core series for the two plain-family argument orders.
///
/// Expanding the lowered coordinates in raised ones leaves, for the triple
/// `(n+, n3, n-)`, the weight `(-q)^{n+} (-1/q)^{n-} i^{±n}` over the
/// factorial denominators, with the raised triple sitting on the first
/// argument's group and the index-swapped triple on the second's.
fn plain_body(momenta_first: bool, order: u32) -> Series {
    let mut terms: Vec<(Mono, Scalar)> = Vec::new();
    let iunit = if momenta_first {
        Scalar::i().conj()
    } else {
        Scalar::i()
    };
    for np in 0..=order {
        for n3 in 0..=(order - np) {
            for nm in 0..=(order - np - n3) {
                let ntot = np + n3 + nm;
                let denom = q_factorial(np, 4) * q_factorial(n3, 2) * q_factorial(nm, 4);
                let weight = (-Scalar::q_pow(1)).pow(np as i32)
                    * (-Scalar::q_pow(-1)).pow(nm as i32)
                    * iunit.pow(ntot as i32);
                let coeff = weight * denom.recip().expect("nonzero deformed factorial");
                let (own, other) = if momenta_first {
                    (Group::P, Group::X)
                } else {
                    (Group::X, Group::P)
                };
                let mut e = [0u16; 10];
                e[own.plus() as usize] = np as u16;
                e[own.three() as usize] = n3 as u16;
                e[own.minus() as usize] = nm as u16;
                e[other.plus() as usize] = nm as u16;
                e[other.three() as usize] = n3 as u16;
                e[other.minus() as usize] = np as u16;
                terms.push((Mono(e), coeff));
            }
        }
    }
    Series::from_terms(terms)
}

/// Multiplies every term by `q^{k·d}` where `d` is its momentum degree.
fn scale_momentum(f: &Series, k: i32) -> Series {
    f.map_terms(|m, c| {
        let d = m.group_degree(Group::P) as i32;
        (*m, c.clone() * Scalar::q_pow(k * d))
    })
}

/// Builds the exponential of the given kind, truncated at joint degree
/// `order` (equal position and momentum degree per term).
pub fn build_exponential(kind: ExpKind, order: u32) -> Series {
    match kind {
        ExpKind::PositionFirst => plain_body(false, order),
        ExpKind::MomentumFirst => plain_body(true, order),
        ExpKind::BarPositionFirst => plain_body(false, order).substitute_q_inverse(),
        ExpKind::BarMomentumFirst => plain_body(true, order).substitute_q_inverse(),
        ExpKind::DualMomentumFirst => {
            scale_momentum(&build_exponential(ExpKind::BarMomentumFirst, order), 6)
        }
        ExpKind::DualPositionFirst => {
            scale_momentum(&build_exponential(ExpKind::BarPositionFirst, order), 6)
        }
        ExpKind::BarDualMomentumFirst => {
            scale_momentum(&build_exponential(ExpKind::MomentumFirst, order), -6)
        }
        ExpKind::BarDualPositionFirst => {
            scale_momentum(&build_exponential(ExpKind::PositionFirst, order), -6)
        }
    }
}

/// Momentum eigenfunction of the given kind: the matching exponential with
/// the volume normalization set to one.
pub fn momentum_eigenfunction(kind: ExpKind, order: u32) -> Series {
    build_exponential(kind, order)
}

/// Which metric dresses an equation's index raising and lowering.
///
/// All three flavors share the antidiagonal shape of the metric and differ
/// only in the power of `q` on the off-diagonal entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFlavor {
    /// The metric as given.
    Standard,
    /// The metric with `q -> 1/q`, used by left hat-family equations.
    Inverted,
    /// The metric with `q -> q^3`, used by right hat-family equations;
    /// conjugation maps inverted-lowered momenta onto this flavor.
    Crossed,
}

impl MetricFlavor {
    fn power(self) -> i32 {
        match self {
            MetricFlavor::Standard => 1,
            MetricFlavor::Inverted => -1,
            MetricFlavor::Crossed => 3,
        }
    }
}

/// Metric component in the requested flavor.
fn metric_flavored(a: Idx, b: Idx, flavor: MetricFlavor) -> Scalar {
    let k = flavor.power();
    match (a, b) {
        (Idx::Plus, Idx::Minus) => -Scalar::q_pow(k),
        (Idx::Three, Idx::Three) => Scalar::one(),
        (Idx::Minus, Idx::Plus) => -Scalar::q_pow(-k),
        _ => Scalar::zero(),
    }
}

/// One eigenvalue equation: which derivative symbol and action the kind
/// responds to, on which side the momentum lands, and which metric and
/// star ordering dress the equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EigenRow {
    /// Family of the derivative symbol written in the equation.
    pub sym_family: DerivFamily,
    /// Module action the symbol acts through.
    pub action: ActionKind,
    /// True when the eigenvalue multiplies from the right.
    pub momentum_on_right: bool,
    /// Metric used to lower the eigenvalue and raise the equation.
    pub metric: MetricFlavor,
    /// Star ordering between the eigenvalue and the exponential.
    pub ordering: StarOrdering,
}

/// The eigenvalue equation satisfied by each kind.
///
/// The four basic kinds respond to their own family's derivatives through
/// the matching one-sided action. The duals respond to the opposite
/// family's action while keeping their own symbol, which is what the
/// momentum rescaling by `q^{±6}` compensates. Plain-family actions pair
/// with the standard star and metric. Left hat-family equations live in
/// the full `q -> 1/q` image of the calculus and carry the reversed star
/// with the inverted metric; reading them with the standard dressing fails
/// already at momentum degree one, with the leading eigenvalue off by
/// `q^{±2}`. Right hat-family equations are the conjugation transports of
/// the left ones, and conjugation turns the inverted-metric lowering into
/// the crossed one.
pub fn eigen_row(kind: ExpKind) -> EigenRow {
    let (sym_family, action, momentum_on_right) = match kind {
        ExpKind::PositionFirst => (DerivFamily::Plain, ActionKind::LeftPlain, true),
        ExpKind::MomentumFirst => (DerivFamily::Plain, ActionKind::RightPlain, false),
        ExpKind::BarPositionFirst => (DerivFamily::Hat, ActionKind::LeftHat, true),
        ExpKind::BarMomentumFirst => (DerivFamily::Hat, ActionKind::RightHat, false),
        ExpKind::DualMomentumFirst => (DerivFamily::Plain, ActionKind::RightHat, false),
        ExpKind::DualPositionFirst => (DerivFamily::Plain, ActionKind::LeftHat, true),
        ExpKind::BarDualMomentumFirst => (DerivFamily::Hat, ActionKind::RightPlain, false),
        ExpKind::BarDualPositionFirst => (DerivFamily::Hat, ActionKind::LeftPlain, true),
    };
    let (metric, ordering) = match (action, natural_pairing(action).ordering) {
        (_, StarOrdering::Standard) => (MetricFlavor::Standard, StarOrdering::Standard),
        (ActionKind::LeftHat, StarOrdering::Reversed) => {
            (MetricFlavor::Inverted, StarOrdering::Reversed)
        }
        (_, StarOrdering::Reversed) => (MetricFlavor::Crossed, StarOrdering::Reversed),
    };
    EigenRow {
        sym_family,
        action,
        momentum_on_right,
        metric,
        ordering,
    }
}

/// Lowered-index eigenvalue residual for one derivative index.
fn eigen_residual_lowered(e: &Series, row: EigenRow, b: Idx) -> Series {
    let d = DerivSym::space(row.sym_family, b, false);
    let acted = act(e, d, row.action).scalar_mul(&-Scalar::i());
    let mut p_low = Series::zero();
    for c in IDXS {
        let g = metric_flavored(b, c, row.metric);
        if !g.is_zero() {
            p_low = p_low.add(&coord_series(Group::P, c, true).scalar_mul(&g));
        }
    }
    let expected = if row.momentum_on_right {
        e.star_ordered(&p_low, row.ordering)
    } else {
        p_low.star_ordered(e, row.ordering)
    };
    acted.sub(&expected)
}

/// Eigenvalue residual for one raised derivative index.
///
/// Returns `i^{-1} ∂^a(e) − e ⊛ p^a` (momentum side, star ordering, and
/// metric dressing per the kind's row). Every surviving term has momentum
/// degree exactly `order + 1`.
pub fn eigen_residual(kind: ExpKind, order: u32, a: Idx) -> Series {
    let e = build_exponential(kind, order);
    let row = eigen_row(kind);
    let mut out = Series::zero();
    for b in IDXS {
        let g = metric_flavored(a, b, row.metric);
        if !g.is_zero() {
            let r = eigen_residual_lowered(&e, row, b);
            out = out.add(&r.scalar_mul(&g));
        }
    }
    out
}

/// The position-first kind whose laws use the family's addition and
/// inversion: the plain family for the barred addition law, the barred
/// exponential for the unbarred one.
fn family_kind(family: DerivFamily) -> ExpKind {
    match family {
        DerivFamily::Plain => ExpKind::PositionFirst,
        DerivFamily::Hat => ExpKind::BarPositionFirst,
    }
}

/// `i` times the lowered momentum component in the requested metric flavor.
fn momentum_letter(idx: Idx, flavor: MetricFlavor) -> Series {
    let mut out = Series::zero();
    for c in IDXS {
        let g = metric_flavored(idx, c, flavor);
        if !g.is_zero() {
            out = out.add(&coord_series(Group::P, c, true).scalar_mul(&(g * Scalar::i())));
        }
    }
    out
}

/// Star power under an explicit ordering.
fn star_pow_ordered(f: &Series, n: u32, ordering: StarOrdering) -> Series {
    let mut out = Series::one();
    for _ in 0..n {
        out = out.star_ordered(f, ordering);
    }
    out
}

/// Addition-theorem residual for the family's position-first kind.
///
/// Translating the position argument must equal feeding the composite
/// momentum `e(y) ⊛ i p` back into the exponential's momentum slot, which
/// expands to one copy of the second-argument exponential inserted between
/// each position word and its momentum word. The plain law multiplies with
/// the standard product, lowers the momentum letters with the metric, and
/// writes them minus-three-plus; the hatted law carries the reversed
/// product, the inverted-metric lowering, and the flipped written order.
/// Both sides agree below the boundary: every residual term has momentum
/// degree at least `order + 1`, and the `y = 0` slices agree exactly.
pub fn addition_residual(family: DerivFamily, order: u32) -> Series {
    let e = build_exponential(family_kind(family), order);
    let lhs = translate(&e, family);
    let ordering = coproduct_product(family);
    let flavor = match family {
        DerivFamily::Plain => MetricFlavor::Standard,
        DerivFamily::Hat => MetricFlavor::Inverted,
    };
    let ey = e.rename_group(Group::X, Group::Y);
    let letter = |idx: Idx| momentum_letter(idx, flavor);
    let (w_plus, w_three, w_minus) = (letter(Idx::Plus), letter(Idx::Three), letter(Idx::Minus));
    let (b4, b2) = match family {
        DerivFamily::Plain => (4, 2),
        DerivFamily::Hat => (-4, -2),
    };
    let mut rhs = Series::zero();
    for np in 0..=order {
        for n3 in 0..=(order - np) {
            for nm in 0..=(order - np - n3) {
                let denom = q_factorial(np, b4) * q_factorial(n3, b2) * q_factorial(nm, b4);
                let p_pow = star_pow_ordered(&w_plus, np, ordering);
                let t_pow = star_pow_ordered(&w_three, n3, ordering);
                let m_pow = star_pow_ordered(&w_minus, nm, ordering);
                let word = match family {
                    DerivFamily::Plain => m_pow
                        .star_ordered(&t_pow, ordering)
                        .star_ordered(&p_pow, ordering),
                    DerivFamily::Hat => p_pow
                        .star_ordered(&t_pow, ordering)
                        .star_ordered(&m_pow, ordering),
                };
                let mut exps = [0u16; 10];
                exps[Var::XP as usize] = np as u16;
                exps[Var::X3 as usize] = n3 as u16;
                exps[Var::XM as usize] = nm as u16;
                let pre = Series::monomial(
                    Mono(exps),
                    denom.recip().expect("nonzero deformed factorial"),
                );
                let tail = ey.star_ordered(&word, ordering);
                rhs = rhs.add(&pre.star_ordered(&tail, ordering));
            }
        }
    }
    lhs.sub(&rhs)
}

/// Inverse-law residual: the exponential evaluated at the sum of the
/// position argument and its inversion, minus one.
///
/// The law holds exactly (not merely below the boundary) because the
/// antipode cancellation is exact on every position monomial.
pub fn inversion_residual(family: DerivFamily, order: u32) -> Result<Series> {
    let e = build_exponential(family_kind(family), order);
    let translated = translate(&e, family);
    let product = coproduct_product(family);
    let mut out = Series::zero();
    for (m, c) in translated.iter() {
        let mut xm = [0u16; 10];
        let mut ym = [0u16; 10];
        let mut rest = [0u16; 10];
        for (slot, &n) in m.0.iter().enumerate() {
            match slot {
                s if s == Var::XP as usize || s == Var::X3 as usize || s == Var::XM as usize => {
                    xm[slot] = n
                }
                s if s == Var::YP as usize || s == Var::Y3 as usize || s == Var::YM as usize => {
                    ym[slot] = n
                }
                _ => rest[slot] = n,
            }
        }
        let second = Series::monomial(Mono(ym), Scalar::one()).rename_group(Group::Y, Group::X);
        let inverted = invert(&second, family)?;
        let piece = Series::monomial(Mono(xm), c.clone()).star_ordered(&inverted, product);
        out = out.add(&piece.mul_pointwise(&Series::monomial(Mono(rest), Scalar::one())));
    }
    Ok(out.sub(&Series::one()))
}

/// Sign of the time phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSign {
    /// `exp(+i t E)`.
    Plus,
    /// `exp(-i t E)`.
    Minus,
}

/// Truncated time phase `Σ_{n ≤ order} (±i t)^n E^{⊛n} / n!`.
///
/// The energy argument is any momentum-space series; time is central, so
/// the terms are plain products of `t^n` with star powers of the energy.
pub fn plane_phase(sign: PhaseSign, order: u32, energy: &Series) -> Series {
    let iunit = match sign {
        PhaseSign::Plus => Scalar::i(),
        PhaseSign::Minus => -Scalar::i(),
    };
    let mut out = Series::zero();
    let mut epow = Series::one();
    let mut factorial = Scalar::one();
    for n in 0..=order {
        if n > 0 {
            epow = epow.star(energy);
            factorial = factorial * Scalar::from_int(n as i64);
        }
        let coeff = iunit.pow(n as i32) * factorial.recip().expect("nonzero factorial");
        let tn = Series::monomial(Mono::of(Var::T, n as u16), coeff);
        out = out.add(&tn.mul_pointwise(&epow));
    }
    out
}
