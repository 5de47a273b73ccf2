use popfind::aft::{AftChain, SamplerConfig};
use popfind::polya::{correction_factor, PolyaTreeSpec};
use popfind::sim::*;

fn main() {
    let mut spec = scenario(ScenarioId::E(2), 0.40, 0.0);
    calibrate_scenario(&mut spec, 300_000, 99).unwrap();
    // Replicate seed 3000 with chain seed 700 and c=6 stuck at ~0.001.
    let mut drng = rand_chacha::ChaCha8Rng::seed_from_u64(3000);
    use rand::SeedableRng as _;
    let data = generate_dataset(&spec, 400, 10, 0.10, &mut drng).unwrap();
    let cfg = SamplerConfig {
        iterations: 1000,
        burn_in: 500,
        thin: 5,
        seed: 700,
        pt_depth: 3,
        pt_c: 6.0,
        ..Default::default()
    };
    let mut chain = AftChain::new(&data, &cfg);
    for it in 0..400 {
        chain.step_mu();
        let acc = chain.step_sigma();
        chain.step_impute();
        if it % 40 == 0 {
            let u: Vec<f64> = chain.residuals().to_vec();
            let var_u: f64 = u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64;
            let corr_cur = correction_factor(&u, &chain.spec);
            // corr at the conjugate-location variance for comparison
            let spec_conj = PolyaTreeSpec::new(3, 6.0, var_u);
            let corr_conj = correction_factor(&u, &spec_conj);
            println!(
                "it {it}: sigma2={:.4} var_u={:.4} corr(cur)={:.2} corr(conj loc)={:.2} accepted={acc}",
                chain.sigma2, var_u, corr_cur, corr_conj
            );
        }
    }
}
