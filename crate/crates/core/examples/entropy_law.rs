//! First-order entropy change of a softmax bandit: a natural-gradient step
//! moves entropy by `-eta * Cov(log pi, A)`, a plain gradient step by
//! `-eta * Cov(log pi, pi * A)` once `A` is centered under `pi`.

use rand::Rng as _;

use cwgrpo::diagnostics::bandit;
use cwgrpo::rng;

fn main() {
    let mut r = rng::stream(4, &[]);
    let v = 8;
    let logits: Vec<f64> = (0..v).map(|_| r.gen_range(-2.0..2.0)).collect();
    let raw: Vec<f64> = (0..v).map(|_| r.gen_range(-1.0..1.0)).collect();
    let h0 = bandit::entropy(&logits);
    let p = cwgrpo::policy::softmax(&logits, 1.0);
    let mean: f64 = p.iter().zip(&raw).map(|(p, a)| p * a).sum();
    let adv: Vec<f64> = raw.iter().map(|a| a - mean).collect();
    let pa: Vec<f64> = p.iter().zip(&adv).map(|(p, a)| p * a).collect();
    let cov_nat = bandit::policy_covariance(&logits, &adv);
    let cov_pg = bandit::policy_covariance(&logits, &pa);
    println!("H = {h0:.6}, Cov(log pi, A) = {cov_nat:.6}, Cov(log pi, pi A) = {cov_pg:.6}");
    println!("{:>8} {:>13} {:>13} {:>13} {:>13}", "eta", "dH natural", "predicted", "dH vanilla", "predicted");
    for k in 0..6 {
        let eta = 0.1 / 2f64.powi(k);
        let dn = bandit::entropy(&bandit::natural_step(&logits, &adv, eta)) - h0;
        let dv = bandit::entropy(&bandit::vanilla_step(&logits, &adv, eta)) - h0;
        println!("{eta:>8.5} {dn:>13.4e} {:>13.4e} {dv:>13.4e} {:>13.4e}", -eta * cov_nat, -eta * cov_pg);
    }
}
