//! Print the synthetic fixture corpus as JSONL.
//!
//! ```text
//! cargo run -p guardqa --example synthetic_corpus -- [seed] [groups] > corpus.jsonl
//! ```

use guardqa::synthetic::{generate, to_jsonl, SyntheticSpec};

fn main() {
    let mut args = std::env::args().skip(1);
    let mut spec = SyntheticSpec::default();
    if let Some(seed) = args.next() {
        spec.seed = seed.parse().expect("seed must be an integer");
    }
    if let Some(groups) = args.next() {
        spec.groups = groups.parse().expect("groups must be an integer");
    }
    print!("{}", to_jsonl(&generate(&spec)));
}
