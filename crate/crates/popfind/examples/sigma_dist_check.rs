// Distribution check for the sigma^2 step: with residuals held fixed, the
// step's stationary law must match p(s2) * G_mg(u | s2), computable by
// quadrature from the marginal likelihood.
use popfind::aft::{AftChain, SamplerConfig};
use popfind::data::{CovariateMeta, TrialDataset};
use popfind::polya::{marginal_loglik, PolyaTreeSpec};

fn main() {
    let n = 24;
    // Fixed synthetic residual-like responses, no censoring: the chain's
    // residuals u = y - eta stay constant if we freeze the forest (no
    // step_mu calls) and there is nothing to impute.
    let us: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 / n as f64) * 2.0 - 1.0;
            1.3 * t + 0.3 * (7.0 * t).sin()
        })
        .collect();
    let mean: f64 = us.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = us.iter().map(|u| u + 4.0).collect();
    let _ = mean;
    let data = TrialDataset::from_parts(
        vec![0; n],
        vec![0.0; n],
        vec![CovariateMeta { name: "x".into() }],
        y,
        vec![1; n],
        None,
    )
    .unwrap();
    let depth = 3;
    let c = 1.0;
    let shape = 3.0;
    let scale = 2.0;
    let cfg = SamplerConfig {
        pt_depth: depth,
        pt_c: c,
        sigma2_shape: shape,
        sigma2_scale: Some(scale),
        forest: popfind::bart::ForestHyper { n_trees: 1, ..Default::default() },
        ..Default::default()
    };
    let mut chain = AftChain::new(&data, &cfg);
    // Residuals the chain actually carries (y - initial root forest fit).
    let u0: Vec<f64> = chain.residuals().to_vec();

    let mut samples = Vec::new();
    let mut accepted = 0usize;
    let iters = 200_000;
    for _ in 0..iters {
        if chain.step_sigma() {
            accepted += 1;
        }
        samples.push(chain.sigma2);
    }
    println!("acceptance: {:.3}", accepted as f64 / iters as f64);

    // Quadrature target on a log-spaced grid.
    let grid: Vec<f64> = (0..4000).map(|k| 0.02 * (1.003f64).powi(k)).collect();
    let logpost: Vec<f64> = grid
        .iter()
        .map(|&s2| {
            let spec = PolyaTreeSpec::new(depth, c, s2);
            let prior = -(shape + 1.0) * s2.ln() - scale / s2;
            prior + marginal_loglik(&u0, &spec)
        })
        .collect();
    let maxlp = logpost.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logpost.iter().map(|lp| (lp - maxlp).exp()).collect();
    // Trapezoid normalization, then CDF at chain quantiles.
    let mut cdf = vec![0.0];
    for k in 1..grid.len() {
        let inc = 0.5 * (dens[k] + dens[k - 1]) * (grid[k] - grid[k - 1]);
        cdf.push(cdf[k - 1] + inc);
    }
    let total = *cdf.last().unwrap();
    let target_cdf = |s2: f64| -> f64 {
        match grid.binary_search_by(|g| g.partial_cmp(&s2).unwrap()) {
            Ok(k) => cdf[k] / total,
            Err(k) if k == 0 => 0.0,
            Err(k) if k >= grid.len() => 1.0,
            Err(k) => {
                let f = (s2 - grid[k - 1]) / (grid[k] - grid[k - 1]);
                (cdf[k - 1] + f * (cdf[k] - cdf[k - 1])) / total
            }
        }
    };
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut max_gap: f64 = 0.0;
    for q in 1..20 {
        let p = q as f64 / 20.0;
        let emp = sorted[(p * sorted.len() as f64) as usize];
        let gap = (target_cdf(emp) - p).abs();
        max_gap = max_gap.max(gap);
        if q % 4 == 0 {
            println!("p={p:.2}: chain quantile {emp:.4}, target CDF there {:.4}", target_cdf(emp));
        }
    }
    println!("max CDF gap: {max_gap:.4}");
}
