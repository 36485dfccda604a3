//! Generates the two synthetic domains and shows how they differ.
//!
//! ```text
//! cargo run --example gen_data -- [n-pairs] [out-dir]
//! ```

use std::path::PathBuf;

use ftforge::data::{generate, write_corpus, DomainId, DomainSpec};

fn main() -> ftforge::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(5), |s| s.parse()).expect("n-pairs must be an integer");
    let out = args.next().map(PathBuf::from);

    let a = DomainSpec::default();
    let b = a.with_domain(DomainId::B);
    let vocab = a.vocab();
    let (map_a, map_b) = (a.bijection()?, b.bijection()?);
    let shared = map_a.iter().zip(&map_b).filter(|(x, y)| x == y).count();
    println!(
        "{} content tokens, {} mapped identically in both domains, vocabulary of {}",
        a.vocab_size,
        shared,
        vocab.len()
    );

    // Same seed, same sources: only the targets differ between domains.
    let corpus_a = generate(&a, n, 7)?;
    let corpus_b = generate(&b, n, 7)?;
    for (pa, pb) in corpus_a.pairs.iter().zip(&corpus_b.pairs) {
        println!("src   {}", vocab.decode(&pa.src).join(" "));
        println!("  A → {}", vocab.decode(&pa.tgt).join(" "));
        println!("  B → {}", vocab.decode(&pb.tgt).join(" "));
    }

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| ftforge::Error::Io { path: dir.clone(), source: e })?;
        vocab.write(&dir.join("vocab.txt"))?;
        write_corpus(&vocab.decode_corpus(&corpus_a), &dir.join("a.src"), &dir.join("a.tgt"))?;
        write_corpus(&vocab.decode_corpus(&corpus_b), &dir.join("b.src"), &dir.join("b.tgt"))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
