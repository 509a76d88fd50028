use dbflow::emulator::{group_commutator_component, repeated_step};
use dbflow::flow::GeneratorKind;
use dbflow::models::build_tlfim;
use dbflow::operator::conjugate;
use std::time::Instant;

fn main() {
    let h = build_tlfim(9, 2.0).unwrap().to_hermitian().unwrap();
    let sigma0 = h.op().offdiag().hs_norm();
    println!("sigma0 = {sigma0:.4}");
    let t0 = Instant::now();
    for s in [0.002f64, 0.005, 0.01] {
        let run = repeated_step(&h, &GeneratorKind::Canonical, s, 10).unwrap();
        let decs: Vec<String> = run
            .offdiag_norms
            .iter()
            .map(|n| format!("{:.3}", sigma0 - n))
            .collect();
        println!("reps s={s}: cumulative decreases {:?}", decs);
    }
    println!("repeated sweeps took {:?}", t0.elapsed());
    let t1 = Instant::now();
    for total in [0.02f64, 0.05, 0.1] {
        let (u, _) = group_commutator_component(&h, total).unwrap();
        let flowed = conjugate(h.op(), &u).unwrap();
        println!(
            "single GC at s={total}: sigma decrease {:.4}",
            sigma0 - flowed.offdiag().hs_norm()
        );
    }
    println!("singles took {:?}", t1.elapsed());
}
