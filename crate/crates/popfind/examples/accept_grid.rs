use popfind::sim::*;

fn main() {
    for c in [5.0f64] {
        let mut spec = scenario(ScenarioId::E(2), 0.40, 0.0);
        calibrate_scenario(&mut spec, 300_000, 99).unwrap();
        let mut cfg = HarnessConfig::desk_scale(0xACCE0008);
        cfg.reps = 100;
        cfg.truth_mc = 300_000;
        cfg.mcmc.pt_depth = 3;
        cfg.mcmc.pt_c = c;
        let (summary, _) = run_replicates(&spec, &cfg).unwrap();
        println!(
            "c={c}: mean mu={:.3} sigma={:.3} (TDR={:.3})",
            summary.mean_accept_mu, summary.mean_accept_sigma, summary.tdr
        );
    }
}
