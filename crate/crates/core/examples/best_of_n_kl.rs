//! Best-of-N selection on a categorical base distribution and its KL bound.

use qchunk::policy::{best_of_n_categorical, kl_upper_bound};

fn main() -> qchunk::Result<()> {
    let probs = [0.4, 0.3, 0.2, 0.1];
    let scores = [0.0, 1.0, 3.0, 2.0];
    println!("base     {probs:?}");
    for n in [1, 2, 4, 8, 16, 32] {
        let q = best_of_n_categorical(&probs, &scores, n)?;
        let kl: f64 = q.iter().zip(&probs).filter(|(a, _)| **a > 0.0).map(|(a, p)| a * (a / p).ln()).sum();
        let shown: Vec<String> = q.iter().map(|x| format!("{x:.3}")).collect();
        println!("N={n:<3} [{}]  KL {kl:.4} <= {:.4}", shown.join(", "), kl_upper_bound(n)?);
    }
    Ok(())
}
