//! Deformed differential calculi on the coordinate algebra.
//!
//! Two families of partial derivatives act on normal-ordered series: a plain
//! family and a hatted family related by inverting the deformation parameter
//! and exchanging the `+` and `-` directions. Each family carries left and
//! right actions, antiderivatives, vector-field matrices entering the
//! deformed Leibniz rules, a translation coproduct, and a coordinate
//! inversion (antipode). Raised and lowered derivative indices are related
//! through the metric, and the two families are identified on raised spatial
//! indices up to a fixed power of `q`, so every symbol can act through every
//! action kind.

use std::collections::BTreeMap;

use crate::coeffring::{lambda, lambda_plus, q_double_factorial, q_factorial, q_number, Scalar};
use crate::error::{Error, Result};
use crate::starcalc::{Group, Idx, Mono, Series, StarOrdering, Var, IDXS};

/// The two derivative families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivFamily {
    /// The family whose lowered `+` derivative is the plain Jackson
    /// derivative in `x+`.
    Plain,
    /// The mirror family whose lowered `-` derivative is the plain Jackson
    /// derivative in `x-`.
    Hat,
}

/// Spatial or time index of a derivative symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivIndex {
    /// One of the three spatial directions.
    Space(Idx),
    /// The central time direction.
    Time,
}

/// A derivative symbol: family, index, and index position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivSym {
    /// Which family the symbol belongs to.
    pub family: DerivFamily,
    /// Spatial direction or time.
    pub index: DerivIndex,
    /// Raised (`true`) or lowered (`false`) spatial index; ignored for time.
    pub raised: bool,
}

impl DerivSym {
    /// Spatial derivative symbol.
    pub fn space(family: DerivFamily, idx: Idx, raised: bool) -> Self {
        DerivSym {
            family,
            index: DerivIndex::Space(idx),
            raised,
        }
    }

    /// Time derivative symbol (the same in both families).
    pub fn time(family: DerivFamily) -> Self {
        DerivSym {
            family,
            index: DerivIndex::Time,
            raised: false,
        }
    }
}

/// The four module actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionKind {
    /// Left action of the plain family.
    LeftPlain,
    /// Left action of the hatted family.
    LeftHat,
    /// Right action conjugate to the plain left action.
    RightPlain,
    /// Right action conjugate to the hatted left action.
    RightHat,
}

/// All action kinds.
pub const ACTION_KINDS: [ActionKind; 4] = [
    ActionKind::LeftPlain,
    ActionKind::LeftHat,
    ActionKind::RightPlain,
    ActionKind::RightHat,
];

impl ActionKind {
    /// The family whose symbols act without a conversion factor.
    pub fn native_family(self) -> DerivFamily {
        match self {
            ActionKind::LeftPlain | ActionKind::RightPlain => DerivFamily::Plain,
            ActionKind::LeftHat | ActionKind::RightHat => DerivFamily::Hat,
        }
    }

    /// True for the two left actions.
    pub fn is_left(self) -> bool {
        matches!(self, ActionKind::LeftPlain | ActionKind::LeftHat)
    }

    fn left_counterpart(self) -> ActionKind {
        match self {
            ActionKind::RightPlain => ActionKind::LeftPlain,
            ActionKind::RightHat => ActionKind::LeftHat,
            left => left,
        }
    }
}

/// Jackson derivative in one symbol: `v^n ↦ [[n]]_{q^base} v^{n-1}`.
pub fn jackson(f: &Series, v: Var, base: i64) -> Series {
    Series::from_terms(f.iter().filter_map(|(m, c)| {
        let n = m.exp(v);
        if n == 0 {
            return None;
        }
        let mut e = m.0;
        e[v as usize] = n - 1;
        Some((Mono(e), c.clone() * q_number(n as i64, base)))
    }))
}

/// Jackson antiderivative: `v^n ↦ v^{n+1} / [[n+1]]_{q^base}`.
pub fn jackson_antiderivative(f: &Series, v: Var, base: i64) -> Series {
    Series::from_terms(f.iter().map(|(m, c)| {
        let n = m.exp(v);
        let mut e = m.0;
        e[v as usize] = n + 1;
        (Mono(e), c.clone() / q_number(n as i64 + 1, base))
    }))
}

/// Ordinary derivative in the time symbol: `t^n ↦ n t^{n-1}`.
pub fn time_derivative(f: &Series) -> Series {
    Series::from_terms(f.iter().filter_map(|(m, c)| {
        let n = m.exp(Var::T);
        if n == 0 {
            return None;
        }
        let mut e = m.0;
        e[Var::T as usize] = n - 1;
        Some((Mono(e), c.clone() * Scalar::from_int(n as i64)))
    }))
}

/// Ordinary antiderivative in the time symbol: `t^n ↦ t^{n+1}/(n+1)`.
pub fn time_antiderivative(f: &Series) -> Series {
    Series::from_terms(f.iter().map(|(m, c)| {
        let n = m.exp(Var::T);
        let mut e = m.0;
        e[Var::T as usize] = n + 1;
        (Mono(e), c.clone() / Scalar::from_int(n as i64 + 1))
    }))
}

fn left_plain_lowered(f: &Series, idx: Idx, g: Group) -> Series {
    match idx {
        Idx::Plus => jackson(f, g.plus(), 4),
        Idx::Three => jackson(&f.scale_var(g.plus(), 2), g.three(), 2),
        Idx::Minus => {
            let first = jackson(&f.scale_var(g.three(), 2), g.minus(), 4);
            let second = jackson(&jackson(f, g.three(), 2), g.three(), 2)
                .mul_pointwise(&Series::var(g.plus()))
                .scalar_mul(&lambda());
            first.add(&second)
        }
    }
}

fn left_hat_lowered(f: &Series, idx: Idx, g: Group) -> Series {
    match idx {
        Idx::Minus => jackson(f, g.minus(), -4),
        Idx::Three => jackson(&f.scale_var(g.minus(), -2), g.three(), -2),
        Idx::Plus => {
            let first = jackson(&f.scale_var(g.three(), -2), g.plus(), -4);
            let second = jackson(&jackson(f, g.three(), -2), g.three(), -2)
                .mul_pointwise(&Series::var(g.minus()))
                .scalar_mul(&lambda());
            first.sub(&second)
        }
    }
}

/// Applies a derivative symbol to a series through one of the four actions,
/// differentiating the `x` coordinates.
pub fn act(f: &Series, d: DerivSym, kind: ActionKind) -> Series {
    act_on_group(f, d, kind, Group::X)
}

/// Applies a derivative symbol, differentiating the chosen coordinate triple.
///
/// Symbols of the non-native family convert through the raised-index
/// identification (hatted spatial symbols are `q^6` times plain ones); time
/// derivatives are shared by both families.
pub fn act_on_group(f: &Series, d: DerivSym, kind: ActionKind, g: Group) -> Series {
    let native = kind.native_family();
    let mut scale = Scalar::one();
    if d.family != native && matches!(d.index, DerivIndex::Space(_)) {
        scale = match d.family {
            DerivFamily::Hat => Scalar::q_pow(6),
            DerivFamily::Plain => Scalar::q_pow(-6),
        };
    }
    let nat = DerivSym {
        family: native,
        ..d
    };
    act_native(f, nat, kind, g).scalar_mul(&scale)
}

fn act_native(f: &Series, d: DerivSym, kind: ActionKind, g: Group) -> Series {
    match d.index {
        DerivIndex::Time => {
            let df = time_derivative(f);
            if kind.is_left() {
                df
            } else {
                df.neg()
            }
        }
        DerivIndex::Space(idx) => {
            if d.raised {
                let (coef, lowered) = match idx {
                    Idx::Plus => (-Scalar::q_pow(1), Idx::Minus),
                    Idx::Three => (Scalar::one(), Idx::Three),
                    Idx::Minus => (-Scalar::q_pow(-1), Idx::Plus),
                };
                let sym = DerivSym::space(d.family, lowered, false);
                act_native(f, sym, kind, g).scalar_mul(&coef)
            } else {
                match kind {
                    ActionKind::LeftPlain => left_plain_lowered(f, idx, g),
                    ActionKind::LeftHat => left_hat_lowered(f, idx, g),
                    ActionKind::RightPlain | ActionKind::RightHat => {
                        let raised = DerivSym::space(d.family, idx, true);
                        act_native(&f.conjugate(), raised, kind.left_counterpart(), g)
                            .conjugate()
                            .neg()
                    }
                }
            }
        }
    }
}

/// Applies a word of derivative symbols through one action.
///
/// Left actions apply the rightmost symbol first; right actions apply the
/// leftmost symbol first, matching how operator words compose on each side.
pub fn act_word(f: &Series, word: &[DerivSym], kind: ActionKind, g: Group) -> Series {
    let mut out = f.clone();
    if kind.is_left() {
        for d in word.iter().rev() {
            out = act_on_group(&out, *d, kind, g);
        }
    } else {
        for d in word {
            out = act_on_group(&out, *d, kind, g);
        }
    }
    out
}

/// The metric-contracted second-derivative string `g_{BC} ∂^B ∂^C` of the
/// action's native family, applied through the given action kind.
pub fn laplacian_act(f: &Series, kind: ActionKind) -> Series {
    let fam = kind.native_family();
    let mut out = Series::zero();
    for b in IDXS {
        for c in IDXS {
            let gbc = crate::starcalc::metric(b, c);
            if gbc.is_zero() {
                continue;
            }
            let word = [
                DerivSym::space(fam, b, true),
                DerivSym::space(fam, c, true),
            ];
            out = out.add(&act_word(f, &word, kind, Group::X).scalar_mul(&gbc));
        }
    }
    out
}

/// Inverts the left action of a lowered derivative of the given family.
///
/// For every family and index, `act` after `antiderivative` is the identity
/// on polynomial series.
pub fn antiderivative(f: &Series, family: DerivFamily, index: DerivIndex, g: Group) -> Series {
    match (family, index) {
        (_, DerivIndex::Time) => time_antiderivative(f),
        (DerivFamily::Plain, DerivIndex::Space(Idx::Plus)) => {
            jackson_antiderivative(f, g.plus(), 4)
        }
        (DerivFamily::Plain, DerivIndex::Space(Idx::Three)) => {
            jackson_antiderivative(&f.scale_var(g.plus(), -2), g.three(), 2)
        }
        (DerivFamily::Plain, DerivIndex::Space(Idx::Minus)) => {
            let deg3 = f.max_var_degree(g.three()).unwrap_or(0);
            let mut out = Series::zero();
            for k in 0..=(deg3 / 2) as i32 {
                let scaled = f.scale_var(g.three(), -2 * (k + 1));
                let mut term = jackson_antiderivative(&scaled, g.minus(), 4);
                for _ in 0..k {
                    let d2 = jackson(&jackson(&term, g.three(), 2), g.three(), 2);
                    term = jackson_antiderivative(&d2, g.minus(), 4)
                        .mul_pointwise(&Series::var(g.plus()))
                        .scalar_mul(&(-lambda()));
                }
                out = out.add(&term.scalar_mul(&Scalar::q_pow(2 * k * (k + 1))));
            }
            out
        }
        (DerivFamily::Hat, DerivIndex::Space(Idx::Minus)) => {
            jackson_antiderivative(f, g.minus(), -4)
        }
        (DerivFamily::Hat, DerivIndex::Space(Idx::Three)) => {
            jackson_antiderivative(&f.scale_var(g.minus(), 2), g.three(), -2)
        }
        (DerivFamily::Hat, DerivIndex::Space(Idx::Plus)) => {
            let deg3 = f.max_var_degree(g.three()).unwrap_or(0);
            let mut out = Series::zero();
            for k in 0..=(deg3 / 2) as i32 {
                let scaled = f.scale_var(g.three(), 2 * (k + 1));
                let mut term = jackson_antiderivative(&scaled, g.plus(), -4);
                for _ in 0..k {
                    let d2 = jackson(&jackson(&term, g.three(), -2), g.three(), -2);
                    term = jackson_antiderivative(&d2, g.plus(), -4)
                        .mul_pointwise(&Series::var(g.minus()))
                        .scalar_mul(&lambda());
                }
                out = out.add(&term.scalar_mul(&Scalar::q_pow(-2 * k * (k + 1))));
            }
            out
        }
    }
}

/// Applies the scaling operator to the power `num/den`.
///
/// Each term of spatial degree `d` in the `x` triple is multiplied by
/// `q^{4·(num/den)·d}`; the exponent must come out integral, which holds for
/// the half-integer powers the engine uses. Time and momentum are untouched.
pub fn scale_operator(f: &Series, num: i64, den: i64) -> Series {
    assert!(den != 0, "scaling operator with zero denominator");
    f.map_terms(|m, c| {
        let d = m.group_degree(Group::X) as i64;
        let raw = 4 * num * d;
        assert!(
            raw % den == 0,
            "scaling power {}/{} on degree {} is not integral",
            num,
            den,
            d
        );
        (*m, c.clone() * Scalar::q_pow((raw / den) as i32))
    })
}

/// An action kind together with the star ordering its Leibniz rule uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    /// Which module action the rule expands.
    pub kind: ActionKind,
    /// Which star ordering appears in the rule.
    pub ordering: StarOrdering,
}

/// The star ordering under which each action's Leibniz rule closes.
///
/// The plain-family actions close with the standard ordering and the hatted
/// ones with the reversed ordering, as the pairing audit verifies.
pub fn natural_pairing(kind: ActionKind) -> Pairing {
    let ordering = match kind.native_family() {
        DerivFamily::Plain => StarOrdering::Standard,
        DerivFamily::Hat => StarOrdering::Reversed,
    };
    Pairing { kind, ordering }
}

/// Extracts the vector-field matrix entry `L^a_b` applied to `u`.
///
/// The entry is read off from the Leibniz rule by probing with the lowered
/// degree-one coordinates: the probe response `∂^c` on `x_d` is verified to
/// be diagonal at runtime and the `b` response divides the commutator-style
/// numerator. Left actions are probed in the second product slot, where the
/// rule parks the bare derivative; right actions mirror the rule, so the
/// probe goes into the first slot and the matrix entry acts on the second
/// factor instead.
pub fn l_matrix_action(pairing: Pairing, a: Idx, b: Idx, u: &Series) -> Result<Series> {
    let kind = pairing.kind;
    let fam = kind.native_family();
    let mut d_b = Scalar::zero();
    for c in IDXS {
        for d in IDXS {
            let probe = crate::starcalc::coord_series(Group::X, d, false);
            let resp = act(&probe, DerivSym::space(fam, c, true), kind);
            let is_const = resp.iter().all(|(m, _)| m.total_degree() == 0);
            if !is_const {
                return Err(Error::ExtractionInconsistency {
                    detail: format!(
                        "derivative probe response is not constant for ({:?},{:?})",
                        c, d
                    ),
                });
            }
            let val = resp.coeff(&Mono::unit());
            if c == d {
                if val.is_zero() {
                    return Err(Error::ExtractionInconsistency {
                        detail: format!("vanishing diagonal probe response at {:?}", c),
                    });
                }
                if c == b {
                    d_b = val;
                }
            } else if !val.is_zero() {
                return Err(Error::ExtractionInconsistency {
                    detail: format!("off-diagonal probe response at ({:?},{:?})", c, d),
                });
            }
        }
    }
    let probe_b = crate::starcalc::coord_series(Group::X, b, false);
    let da = DerivSym::space(fam, a, true);
    let num = if kind.is_left() {
        let lhs = act(&u.star_ordered(&probe_b, pairing.ordering), da, kind);
        let rhs = act(u, da, kind).star_ordered(&probe_b, pairing.ordering);
        lhs.sub(&rhs)
    } else {
        let lhs = act(&probe_b.star_ordered(u, pairing.ordering), da, kind);
        let rhs = probe_b.star_ordered(&act(u, da, kind), pairing.ordering);
        lhs.sub(&rhs)
    };
    Ok(num.scalar_mul(&d_b.recip().expect("nonzero diagonal response")))
}

/// Residual of the deformed Leibniz rule for one derivative index.
///
/// For a left action the bare derivative lands on the first factor and the
/// matrix-dressed derivative on the second; the right-action rule is the
/// conjugate image of the left one, so the two factor roles swap. Zero
/// exactly when the pairing's star ordering matches the action.
pub fn leibniz_residual(pairing: Pairing, a: Idx, u: &Series, v: &Series) -> Result<Series> {
    let kind = pairing.kind;
    let fam = kind.native_family();
    let da = DerivSym::space(fam, a, true);
    let uv = u.star_ordered(v, pairing.ordering);
    let mut res = if kind.is_left() {
        act(&uv, da, kind).sub(&act(u, da, kind).star_ordered(v, pairing.ordering))
    } else {
        act(&uv, da, kind).sub(&u.star_ordered(&act(v, da, kind), pairing.ordering))
    };
    for b in IDXS {
        let db = DerivSym::space(fam, b, true);
        if kind.is_left() {
            let l = l_matrix_action(pairing, a, b, u)?;
            res = res.sub(&l.star_ordered(&act(v, db, kind), pairing.ordering));
        } else {
            let l = l_matrix_action(pairing, a, b, v)?;
            res = res.sub(&act(u, db, kind).star_ordered(&l, pairing.ordering));
        }
    }
    Ok(res)
}

/// Residual of the exchange rule between metric-contracted derivatives and
/// the vector-field matrix: `g_{BD} ∂^B ∘ L^D_c − q^{-2} g_{BD} L^B_c ∘ ∂^D`.
pub fn l_matrix_derivative_exchange_residual(
    pairing: Pairing,
    c: Idx,
    u: &Series,
) -> Result<Series> {
    let kind = pairing.kind;
    let fam = kind.native_family();
    let mut lhs = Series::zero();
    let mut rhs = Series::zero();
    for b in IDXS {
        for d in IDXS {
            let gbd = crate::starcalc::metric(b, d);
            if gbd.is_zero() {
                continue;
            }
            let l_then_d = act(
                &l_matrix_action(pairing, d, c, u)?,
                DerivSym::space(fam, b, true),
                kind,
            );
            lhs = lhs.add(&l_then_d.scalar_mul(&gbd));
            let d_then_l = l_matrix_action(
                pairing,
                b,
                c,
                &act(u, DerivSym::space(fam, d, true), kind),
            )?;
            rhs = rhs.add(&d_then_l.scalar_mul(&gbd));
        }
    }
    Ok(lhs.sub(&rhs.scalar_mul(&Scalar::q_pow(-2))))
}

// ---------------------------------------------------------------------------
// Translations and inversions.
// ---------------------------------------------------------------------------

/// Which end of a derivative word acts first in the translation operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOrder {
    /// The rightmost symbol of the written word acts first.
    RightmostFirst,
    /// The leftmost symbol acts first.
    LeftmostFirst,
}

/// Whether closed-form substitutions apply before or after the Jackson
/// derivatives they are written next to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstOrder {
    /// Rescale the arguments first, then differentiate.
    BeforeDerivatives,
    /// Differentiate first, then rescale the arguments.
    AfterDerivatives,
}

/// Frozen convention for the operator word in each family's translation.
///
/// Within the written word `(minus)^{n-} (three)^{n3} (plus)^{n+}`, the
/// plain family applies the plus symbol first and the hatted family the
/// minus symbol first. Both counit laws fail for the opposite choices.
pub fn default_slot_order(family: DerivFamily) -> SlotOrder {
    match family {
        DerivFamily::Plain => SlotOrder::RightmostFirst,
        DerivFamily::Hat => SlotOrder::LeftmostFirst,
    }
}

/// Frozen convention: the closed-form translation rescales arguments after
/// the Jackson derivatives have acted.
pub fn default_translation_subst_order() -> SubstOrder {
    SubstOrder::AfterDerivatives
}

/// Frozen convention: the closed-form inversion rescales arguments before
/// the Jackson derivatives act.
pub fn default_inversion_subst_order() -> SubstOrder {
    SubstOrder::BeforeDerivatives
}

/// The star ordering used as multiplication in each family's antipode
/// cancellation law.
pub fn coproduct_product(family: DerivFamily) -> StarOrdering {
    match family {
        DerivFamily::Plain => StarOrdering::Standard,
        DerivFamily::Hat => StarOrdering::Reversed,
    }
}

/// Translates `f(x)` to `f(x ⊕ y)` with the family's addition law.
pub fn translate(f: &Series, family: DerivFamily) -> Series {
    translate_general(f, Group::X, Group::Y, family, default_slot_order(family))
}

/// Translation with an explicit source triple, fresh triple, and slot order.
///
/// The input's `src` coordinates move to the `fresh` triple and the result
/// depends on both: term by term it is `Σ f_(1)(src) · f_(2)(fresh)`.
/// Coordinates outside `src` ride along as constants.
pub fn translate_general(
    f: &Series,
    src: Group,
    fresh: Group,
    family: DerivFamily,
    slot: SlotOrder,
) -> Series {
    assert!(
        f.max_group_degree(fresh).unwrap_or(0) == 0,
        "translation target triple already in use"
    );
    let fy = f.rename_group(src, fresh);
    let deg = f.max_group_degree(src).unwrap_or(0);
    let kind = match family {
        DerivFamily::Plain => ActionKind::LeftPlain,
        DerivFamily::Hat => ActionKind::LeftHat,
    };
    let (b4, b2) = match family {
        DerivFamily::Plain => (4, 2),
        DerivFamily::Hat => (-4, -2),
    };
    let mut out = Series::zero();
    for np in 0..=deg {
        for n3 in 0..=(deg - np) {
            for nm in 0..=(deg - np - n3) {
                let mut g = fy.clone();
                // The written word is (minus)^{nm} (three)^{n3} (plus)^{np}.
                let apply = |g: &Series, idx: Idx| {
                    act_on_group(g, DerivSym::space(family, idx, false), kind, fresh)
                };
                let order: [(Idx, u32); 3] = match slot {
                    SlotOrder::RightmostFirst => {
                        [(Idx::Plus, np), (Idx::Three, n3), (Idx::Minus, nm)]
                    }
                    SlotOrder::LeftmostFirst => {
                        [(Idx::Minus, nm), (Idx::Three, n3), (Idx::Plus, np)]
                    }
                };
                for (idx, count) in order {
                    for _ in 0..count {
                        g = apply(&g, idx);
                    }
                    if g.is_zero() {
                        break;
                    }
                }
                if g.is_zero() {
                    continue;
                }
                let denom = q_factorial(np, b4) * q_factorial(n3, b2) * q_factorial(nm, b4);
                let mut pre = [0u16; 10];
                pre[src.plus() as usize] = np as u16;
                pre[src.three() as usize] = n3 as u16;
                pre[src.minus() as usize] = nm as u16;
                let prefactor =
                    Series::monomial(Mono(pre), denom.recip().expect("factorial nonzero"));
                out = out.add(&prefactor.mul_pointwise(&g));
            }
        }
    }
    out
}

/// Closed-form hatted-family translation, as a double sum over Jackson
/// derivatives with argument rescalings.
pub fn translate_hat_closed_form(f: &Series, subst: SubstOrder) -> Series {
    assert!(
        f.max_group_degree(Group::Y).unwrap_or(0) == 0,
        "translation target triple already in use"
    );
    let fy = f.rename_group(Group::X, Group::Y);
    let dp = fy.max_var_degree(Var::YP).unwrap_or(0);
    let d3 = fy.max_var_degree(Var::Y3).unwrap_or(0);
    let dm = fy.max_var_degree(Var::YM).unwrap_or(0);
    let mut out = Series::zero();
    for ip in 0..=dp {
        for i3 in 0..=d3 {
            for im in 0..=dm {
                for k in 0..=i3 {
                    if i3 + k > d3 {
                        continue;
                    }
                    let mut g = fy.clone();
                    let scale =
                        |g: &Series| g.scale_var(Var::YM, 2 * (k as i32 - i3 as i32))
                            .scale_var(Var::Y3, -2 * ip as i32);
                    let derive = |g: &Series| {
                        let mut h = g.clone();
                        for _ in 0..im {
                            h = jackson(&h, Var::YM, -4);
                        }
                        for _ in 0..(i3 + k) {
                            h = jackson(&h, Var::Y3, -2);
                        }
                        for _ in 0..ip {
                            h = jackson(&h, Var::YP, -4);
                        }
                        h
                    };
                    g = match subst {
                        SubstOrder::BeforeDerivatives => derive(&scale(&g)),
                        SubstOrder::AfterDerivatives => scale(&derive(&g)),
                    };
                    if g.is_zero() {
                        continue;
                    }
                    let coef = (-Scalar::q_pow(-1) * lambda() * lambda_plus()).pow(k as i32)
                        / q_double_factorial(2 * k as i64, -2).expect("even argument")
                        / (q_factorial(im, -4) * q_factorial(i3 - k, -2) * q_factorial(ip, -4));
                    let mut pre = [0u16; 10];
                    pre[Var::XM as usize] = im as u16;
                    pre[Var::X3 as usize] = (i3 - k) as u16;
                    pre[Var::XP as usize] = (ip + k) as u16;
                    pre[Var::YM as usize] = k as u16;
                    let prefactor = Series::monomial(Mono(pre), coef);
                    out = out.add(&prefactor.mul_pointwise(&g));
                }
            }
        }
    }
    out
}

fn monomial_weight(f: &Series, w: impl Fn(i64, i64, i64) -> i64) -> Series {
    f.map_terms(|m, c| {
        let mp = m.exp(Var::XP) as i64;
        let m3 = m.exp(Var::X3) as i64;
        let mm = m.exp(Var::XM) as i64;
        (*m, c.clone() * Scalar::q_pow(w(mp, m3, mm) as i32))
    })
}

/// The transition map between the two normal-ordered coefficient
/// representations of the same algebra element.
pub fn ordering_transition(f: &Series) -> Series {
    let kmax = f
        .max_var_degree(Var::XP)
        .unwrap_or(0)
        .min(f.max_var_degree(Var::XM).unwrap_or(0));
    let mut out = Series::zero();
    for k in 0..=kmax {
        let mut g = f.clone();
        for _ in 0..k {
            g = jackson(&g, Var::XM, -4);
        }
        for _ in 0..k {
            g = jackson(&g, Var::XP, -4);
        }
        let g = monomial_weight(&g, |mp, m3, mm| -2 * m3 * (mp + mm + k as i64));
        let coef = (-lambda()).pow(k as i32) / q_factorial(k, -4);
        let pre = Series::monomial(Mono::of(Var::X3, 2 * k as u16), coef);
        out = out.add(&pre.mul_pointwise(&g));
    }
    out
}

/// Inverse of [`ordering_transition`].
pub fn ordering_transition_inverse(f: &Series) -> Series {
    let kmax = f
        .max_var_degree(Var::XP)
        .unwrap_or(0)
        .min(f.max_var_degree(Var::XM).unwrap_or(0));
    let mut out = Series::zero();
    for k in 0..=kmax {
        let mut g = f.clone();
        for _ in 0..k {
            g = jackson(&g, Var::XM, 4);
        }
        for _ in 0..k {
            g = jackson(&g, Var::XP, 4);
        }
        let g = monomial_weight(&g, |mp, m3, mm| 2 * m3 * (mp + mm + k as i64));
        let coef = lambda().pow(k as i32) / q_factorial(k, 4);
        let pre = Series::monomial(Mono::of(Var::X3, 2 * k as u16), coef);
        out = out.add(&pre.mul_pointwise(&g));
    }
    out
}

/// Closed-form hatted-family coordinate inversion `f(x) ↦ f(⊖x)`.
pub fn invert_hat_closed_form(f: &Series, subst: SubstOrder) -> Series {
    let d3 = f.max_var_degree(Var::X3).unwrap_or(0);
    let mut inner = Series::zero();
    for i in 0..=(d3 / 2) {
        let sub = |g: &Series| {
            g.substitute_vars(&[
                (Var::XP, -Scalar::q_pow(2 - 4 * i as i32), Var::XP),
                (Var::X3, -Scalar::q_pow(1 - 2 * i as i32), Var::X3),
                (Var::XM, -Scalar::q_pow(2 - 4 * i as i32), Var::XM),
            ])
        };
        let derive = |g: &Series| {
            let mut h = g.clone();
            for _ in 0..(2 * i) {
                h = jackson(&h, Var::X3, -2);
            }
            h
        };
        let g = match subst {
            SubstOrder::BeforeDerivatives => derive(&sub(f)),
            SubstOrder::AfterDerivatives => sub(&derive(f)),
        };
        if g.is_zero() {
            continue;
        }
        let g = monomial_weight(&g, |mp, m3, mm| {
            -2 * mp * (mp + m3) - 2 * mm * (mm + m3) - m3 * m3
        });
        let coef = (-Scalar::q_pow(1) * lambda() * lambda_plus()).pow(i as i32)
            / q_double_factorial(2 * i as i64, -2).expect("even argument");
        let mut pre = [0u16; 10];
        pre[Var::XP as usize] = i as u16;
        pre[Var::XM as usize] = i as u16;
        inner = inner.add(&Series::monomial(Mono(pre), coef).mul_pointwise(&g));
    }
    ordering_transition(&inner)
}

/// Coordinate inversion by the antipode recursion of the family's coproduct.
///
/// Solves `Σ S(f_(1)) ⊛ f_(2) = f(0)` degree by degree; errors when the
/// chosen conventions break the counit normalization the recursion needs.
pub fn invert_recursive(
    f: &Series,
    family: DerivFamily,
    slot: SlotOrder,
    product: StarOrdering,
) -> Result<Series> {
    for (m, _) in f.iter() {
        assert!(
            m.group_degree(Group::Y) == 0 && m.group_degree(Group::P) == 0,
            "inversion input must use only the x triple and time"
        );
    }
    let mut memo: BTreeMap<[u16; 3], Series> = BTreeMap::new();
    let mut out = Series::zero();
    for (m, c) in f.iter() {
        let xe = [m.exp(Var::XP), m.exp(Var::X3), m.exp(Var::XM)];
        let s = antipode_mono(xe, family, slot, product, &mut memo)?;
        let carried = Series::monomial(Mono::of(Var::T, m.exp(Var::T)), c.clone());
        out = out.add(&carried.mul_pointwise(&s));
    }
    Ok(out)
}

fn antipode_mono(
    xe: [u16; 3],
    family: DerivFamily,
    slot: SlotOrder,
    product: StarOrdering,
    memo: &mut BTreeMap<[u16; 3], Series>,
) -> Result<Series> {
    if xe == [0, 0, 0] {
        return Ok(Series::one());
    }
    if let Some(hit) = memo.get(&xe) {
        return Ok(hit.clone());
    }
    let deg = (xe[0] + xe[1] + xe[2]) as u32;
    let mut mono = [0u16; 10];
    mono[Var::XP as usize] = xe[0];
    mono[Var::X3 as usize] = xe[1];
    mono[Var::XM as usize] = xe[2];
    let u = Series::monomial(Mono(mono), Scalar::one());
    let t = translate_general(&u, Group::X, Group::Y, family, slot);
    let mut acc = Series::zero();
    let mut own_coeff = Scalar::zero();
    for (m, c) in t.iter() {
        let a = [m.exp(Var::XP), m.exp(Var::X3), m.exp(Var::XM)];
        let ydeg = m.group_degree(Group::Y);
        if ydeg == 0 {
            if a == xe {
                own_coeff = own_coeff + c.clone();
                continue;
            }
            if (a[0] + a[1] + a[2]) as u32 >= deg {
                return Err(Error::ExtractionInconsistency {
                    detail: "translation is not degree graded".to_string(),
                });
            }
            let sa = antipode_mono(a, family, slot, product, memo)?;
            acc = acc.add(&sa.scalar_mul(c));
            continue;
        }
        if (a[0] + a[1] + a[2]) as u32 >= deg {
            return Err(Error::ExtractionInconsistency {
                detail: "translation is not degree graded".to_string(),
            });
        }
        let sa = antipode_mono(a, family, slot, product, memo)?;
        let mut bmono = [0u16; 10];
        bmono[Var::XP as usize] = m.exp(Var::YP);
        bmono[Var::X3 as usize] = m.exp(Var::Y3);
        bmono[Var::XM as usize] = m.exp(Var::YM);
        let b = Series::monomial(Mono(bmono), Scalar::one());
        acc = acc.add(&sa.star_ordered(&b, product).scalar_mul(c));
    }
    if own_coeff.is_zero() {
        return Err(Error::ExtractionInconsistency {
            detail: "counit term missing in translation".to_string(),
        });
    }
    let s = acc.neg().scalar_mul(&own_coeff.recip().expect("nonzero counit term"));
    memo.insert(xe, s.clone());
    Ok(s)
}

/// Coordinate inversion with the frozen conventions.
///
/// The hatted family uses its closed form; the plain family uses the
/// antipode recursion of its own translation.
pub fn invert(f: &Series, family: DerivFamily) -> Result<Series> {
    match family {
        DerivFamily::Hat => Ok(invert_hat_closed_form(
            f,
            default_inversion_subst_order(),
        )),
        DerivFamily::Plain => invert_recursive(
            f,
            family,
            default_slot_order(family),
            coproduct_product(family),
        ),
    }
}

// ---------------------------------------------------------------------------
// Law residuals used to validate the conventions.
// ---------------------------------------------------------------------------

/// Residuals of the two counit laws: evaluating the translation at zero in
/// either slot must give back the input.
pub fn counit_residuals(f: &Series, family: DerivFamily, slot: SlotOrder) -> (Series, Series) {
    let t = translate_general(f, Group::X, Group::Y, family, slot);
    let second_zero = t.set_group_zero(Group::Y).sub(f);
    let first_zero = t
        .set_group_zero(Group::X)
        .rename_group(Group::Y, Group::X)
        .sub(f);
    (second_zero, first_zero)
}

/// Residual of coassociativity: translating the second slot against
/// translating the first slot of an already translated series.
pub fn coassociativity_residual(f: &Series, family: DerivFamily, slot: SlotOrder) -> Series {
    let t1 = translate_general(f, Group::X, Group::Y, family, slot);
    let lhs = translate_general(&t1, Group::Y, Group::P, family, slot);
    let shifted = t1.rename_group(Group::Y, Group::P);
    let rhs = translate_general(&shifted, Group::X, Group::Y, family, slot);
    lhs.sub(&rhs)
}

/// Which side of the coproduct the antipode multiplies in the cancellation
/// law.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntipodeSide {
    /// `Σ S(f_(1)) ⊛ f_(2) = f(0)`.
    First,
    /// `Σ f_(1) ⊛ S(f_(2)) = f(0)`.
    Second,
}

/// Residual of the antipode cancellation law on one side.
///
/// The input must not carry time factors, since the translation adds only
/// spatial coordinates.
pub fn antipode_residual(
    f: &Series,
    family: DerivFamily,
    slot: SlotOrder,
    product: StarOrdering,
    side: AntipodeSide,
) -> Result<Series> {
    for (m, _) in f.iter() {
        assert!(m.t_degree() == 0, "antipode law corpus must be time free");
    }
    let t = translate_general(f, Group::X, Group::Y, family, slot);
    let mut acc = Series::zero();
    for (m, c) in t.iter() {
        let mut amono = [0u16; 10];
        amono[Var::XP as usize] = m.exp(Var::XP);
        amono[Var::X3 as usize] = m.exp(Var::X3);
        amono[Var::XM as usize] = m.exp(Var::XM);
        let a = Series::monomial(Mono(amono), Scalar::one());
        let mut bmono = [0u16; 10];
        bmono[Var::XP as usize] = m.exp(Var::YP);
        bmono[Var::X3 as usize] = m.exp(Var::Y3);
        bmono[Var::XM as usize] = m.exp(Var::YM);
        let b = Series::monomial(Mono(bmono), Scalar::one());
        let piece = match side {
            AntipodeSide::First => invert_recursive(&a, family, slot, product)?
                .star_ordered(&b, product),
            AntipodeSide::Second => {
                a.star_ordered(&invert_recursive(&b, family, slot, product)?, product)
            }
        };
        acc = acc.add(&piece.scalar_mul(c));
    }
    Ok(acc.sub(&f.set_group_zero(Group::X)))
}
