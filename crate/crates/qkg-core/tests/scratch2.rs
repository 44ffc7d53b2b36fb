//! Temporary probe: structure of the braiding-matrix actions.

use qkg_core::qcalculus::{l_matrix_action, natural_pairing, ActionKind};
use qkg_core::starcalc::{parse_series, Series, IDXS};

fn series(text: &str) -> Series {
    parse_series(text).expect("parse")
}

#[test]
fn probe_l_structure() {
    let probes = [
        ("1", series("1")),
        ("t", series("t")),
        ("p+", series("p+")),
        ("p3", series("p3")),
        ("p-", series("p-")),
        ("x+", series("x+")),
        ("x3", series("x3")),
        ("x-", series("x-")),
        ("x+*x-", series("x+*x-")),
        ("x3^2", series("x3^2")),
        ("x+*t", series("x+*t")),
        ("x3*p+", series("x3*p+")),
    ];
    for kind in [ActionKind::LeftPlain, ActionKind::LeftHat] {
        let pairing = natural_pairing(kind);
        for (label, u) in &probes {
            for a in IDXS {
                for b in IDXS {
                    let l = l_matrix_action(pairing, a, b, u).expect("extract");
                    if !l.is_zero() {
                        println!("{:?} L[{:?}][{:?}] ({label}) = {}", kind, a, b, l);
                    }
                }
            }
        }
        println!("---");
    }
}
