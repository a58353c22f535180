use orlicz_kls::*;
use std::time::Instant;
fn main() {
    // Criterion 1 runtime probe across n = 2,4,8,16 at high accuracy.
    let total = Instant::now();
    for n in [2usize, 4, 8, 16] {
        let t = Instant::now();
        let raws: Vec<_> = (0..n).map(|_| RawPotential::laplace()).collect();
        let prod = ProductPotential::assemble(&raws, 1e-10).unwrap();
        let profile = build_profile(&prod, &GridSpec::high_accuracy()).unwrap();
        let (tp, mp) = profile.peak();
        println!(
            "n={n:2} len={} h={:.2e} t_peak={tp:.8} m_peak={mp:.6e} mass={:.12} elapsed={:?}",
            profile.len(), profile.spacing(), profile.total_mass(), t.elapsed()
        );
    }
    println!("TOTAL {:?}", total.elapsed());
}
