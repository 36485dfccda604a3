//! Corpus BLEU-4 and the one-sided paired bootstrap test.
//!
//! ```text
//! cargo run --example bleu_significance
//! ```

use ftforge::evaluation::{bleu, bootstrap_significance};

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn main() -> ftforge::Result<()> {
    let short = bleu(&[words("a b c d")], &[words("a b c d e")])?;
    println!("hyp `a b c d` vs ref `a b c d e`:\n{short}");

    let refs: Vec<Vec<&str>> = (0..60)
        .map(|i| words(if i % 3 == 0 { "the cat sat on the mat" } else { "a dog ran in the park today" }))
        .collect();
    let good: Vec<Vec<&str>> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| if i % 4 == 0 { words("the cat sat on a mat") } else { r.clone() })
        .collect();
    let weak: Vec<Vec<&str>> = refs
        .iter()
        .enumerate()
        .map(|(i, r)| if i % 2 == 0 { words("a dog sat in the mat") } else { r.clone() })
        .collect();

    let result = bootstrap_significance(&good, &weak, &refs, 1000, 17)?;
    println!("system A vs system B:\n{}", result.to_key_values());
    let same = bootstrap_significance(&good, &good, &refs, 1000, 17)?;
    println!("system A against itself: p = {}", same.p_value);
    Ok(())
}
