//! Exact symbolic engine for a q-deformed Euclidean space with time.
//!
//! The crate builds up in layers: an exact coefficient field, a star-product
//! calculus over noncommuting coordinate triples, deformed derivatives with
//! translations and inversions, q-exponentials, and a Klein-Gordon layer with
//! gauge couplings, densities, and a momentum-space propagator. A harness
//! module drives seeded verification suites over all of it.

pub mod coeffring;
pub mod error;
pub mod kleingordon;
pub mod qcalculus;
pub mod qexp;
pub mod starcalc;
