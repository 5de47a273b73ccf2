use popfind::sim::*;
use popfind::actions::{SubgroupAction, Subset};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut spec = scenario(ScenarioId::E(2), 0.40, 0.0);
    calibrate_scenario(&mut spec, 1_000_000, 99).unwrap();
    println!("calibrate 1e6: {:?}", t0.elapsed());

    let t1 = Instant::now();
    let tradeoff = popfind::decision::TradeoffSpec::new(0.2, 0.0, 90.0);
    let params = popfind::decision::UtilityParams::new(0.25, 0.15, -0.304);
    let a = true_subgroup(&spec, 10, 400, &tradeoff, &params, 1_000_000, 3);
    println!("truth 1e6: {:?} -> {:?}", t1.elapsed(), a);

    let cfg = HarnessConfig::desk_scale(42);
    let truth = SubgroupAction::OneCov { cov: 0, subset: Subset(0b110) };
    let t2 = Instant::now();
    let o = run_one_replicate(&spec, &cfg, &truth, 0).unwrap();
    println!("one replicate n=400 (1500 iters, 50 trees): {:?}", t2.elapsed());
    println!("accept_mu={:.3} accept_sigma={:.3} true_in_top={} max_u={:.3}", o.accept_mu, o.accept_sigma, o.true_in_top, o.max_nonnull_utility);

    // combo replicate with tox chain
    let mut spec2 = scenario(ScenarioId::Combo{e:1,t:1}, 0.40, 0.25);
    calibrate_scenario(&mut spec2, 1_000_000, 99).unwrap();
    let mut cfg2 = HarnessConfig::desk_scale(42);
    cfg2.tradeoff = popfind::decision::TradeoffSpec::new(0.2, 1.5, 90.0);
    let t3 = Instant::now();
    let o2 = run_one_replicate(&spec2, &cfg2, &truth, 0).unwrap();
    println!("one combo replicate (tte+tox): {:?}", t3.elapsed());
    println!("accept_mu={:.3} accept_sigma={:.3}", o2.accept_mu, o2.accept_sigma);
}
