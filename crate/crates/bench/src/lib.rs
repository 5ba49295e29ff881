//! Benchmark fixtures.

use asv_core::data::{generate_synthetic, split, SplitSpec, SyntheticKind, SyntheticSpec};
use asv_core::Splits;

pub fn synthetic_splits(kind: SyntheticKind, n: usize) -> Splits {
    let d = generate_synthetic(&SyntheticSpec { kind, n, seed: 7 }).expect("synthetic data");
    split(&d, &SplitSpec::standard(7)).expect("split")
}
