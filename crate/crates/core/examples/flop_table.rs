//! Attention cost of each scheme over a range of clip lengths.

use dsta::attention::{attention_flops, attention_pairs, AttentionScheme};
use dsta::model::ModelConfig;

fn main() {
    let n = 196;
    println!("{:>6} {:>12} {:>12} {:>12} {:>8}", "frames", "space", "joint", "divided", "d/j");
    for f in [1, 2, 4, 8, 16, 32] {
        let pairs = AttentionScheme::ALL.map(|s| attention_pairs(f, n, s));
        println!(
            "{f:>6} {:>12} {:>12} {:>12} {:>8.4}",
            pairs[0],
            pairs[1],
            pairs[2],
            pairs[2] as f64 / pairs[1] as f64
        );
    }
    let base = ModelConfig::base();
    for s in AttentionScheme::ALL {
        println!("base {s}: {} flops per block", attention_flops(&base, s));
    }
}
