//! Self-contained Bayesian sum-of-trees regression sampler.
//!
//! A forest of `m` small binary trees carries the mean function; a
//! regularization prior keeps individual trees shallow (split probability
//! a/(1+depth)^b) and leaf values small (independent N(0, sigma_mu^2)).
//! One Gibbs sweep updates each tree in turn: a structural move
//! (grow/prune/change/swap) accepted by Metropolis-Hastings under the
//! Gaussian working likelihood on partial residuals with leaf values
//! integrated out, followed by a conjugate draw of the leaf values.
//!
//! The treatment indicator enters as feature 0 alongside the covariates, so
//! treatment-by-covariate interactions arise from ordinary tree paths.
//!
//! Responses are centered and scaled to [-0.5, 0.5] internally for prior
//! calibration; the recorded transform maps predictions back to the
//! original scale.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::stats::normal_logpdf;

/// Sum-of-trees hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHyper {
    /// Number of trees in the ensemble.
    pub n_trees: usize,
    /// Split-probability base: P(split at depth d) = a_split / (1+d)^b_split.
    pub a_split: f64,
    pub b_split: f64,
    /// Leaf prior scale factor k: sigma_mu = 0.5 / (k * sqrt(n_trees)) on
    /// the internal scale, so k standard deviations of the ensemble cover
    /// half the centered response range.
    pub leaf_prior_k: f64,
    pub p_grow: f64,
    pub p_prune: f64,
    pub p_change: f64,
    pub p_swap: f64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: 50,
            a_split: 0.95,
            b_split: 2.0,
            leaf_prior_k: 2.0,
            p_grow: 0.25,
            p_prune: 0.25,
            p_change: 0.40,
            p_swap: 0.10,
        }
    }
}

impl ForestHyper {
    fn sigma_mu(&self) -> f64 {
        0.5 / (self.leaf_prior_k * (self.n_trees as f64).sqrt())
    }

    fn p_split(&self, depth: usize) -> f64 {
        self.a_split / (1.0 + depth as f64).powf(self.b_split)
    }
}

/// Affine map between the original response scale and the internal
/// [-0.5, 0.5] scale used for prior calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseTransform {
    pub shift: f64,
    pub scale: f64,
}

impl ResponseTransform {
    fn from_range(y: &[f64]) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in y {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let scale = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
        Self { shift: 0.5 * (lo + hi), scale }
    }

    #[inline]
    pub fn to_internal(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    #[inline]
    pub fn to_external(&self, v: f64) -> f64 {
        self.shift + self.scale * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
        depth: u16,
    },
    Internal {
        var: usize,
        split: f64,
        left: usize,
        right: usize,
        depth: u16,
    },
}

impl Node {
    fn is_leaf(&self) -> bool {
        matches!(self, Node::Leaf { .. })
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { depth, .. } | Node::Internal { depth, .. } => *depth as usize,
        }
    }
}

/// One binary decision tree stored in an index arena; pruned slots are
/// recycled through a free list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
    free: Vec<usize>,
}

impl Tree {
    fn new_root(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, depth: 0 }],
            free: Vec::new(),
        }
    }

    fn alloc(&mut self, node: Node) -> usize {
        if let Some(idx) = self.free.pop() {
            self.nodes[idx] = node;
            idx
        } else {
            self.nodes.push(node);
            self.nodes.len() - 1
        }
    }

    /// Leaf index reached from `start` by a feature lookup closure.
    fn descend(&self, start: usize, feat: &impl Fn(usize) -> f64) -> usize {
        let mut idx = start;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Internal { var, split, left, right, .. } => {
                    idx = if feat(*var) < *split { *left } else { *right };
                }
            }
        }
    }

    fn leaf_value_with(&self, feat: &impl Fn(usize) -> f64) -> f64 {
        match &self.nodes[self.descend(0, feat)] {
            Node::Leaf { value, .. } => *value,
            Node::Internal { .. } => unreachable!(),
        }
    }

    /// Internal nodes whose children are both leaves.
    fn bottom_internal(&self) -> Vec<usize> {
        self.live_nodes()
            .filter(|&i| match &self.nodes[i] {
                Node::Internal { left, right, .. } => {
                    self.nodes[*left].is_leaf() && self.nodes[*right].is_leaf()
                }
                _ => false,
            })
            .collect()
    }

    /// (parent, internal child) pairs for swap proposals.
    fn internal_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in self.live_nodes() {
            if let Node::Internal { left, right, .. } = &self.nodes[i] {
                if !self.nodes[*left].is_leaf() {
                    pairs.push((i, *left));
                }
                if !self.nodes[*right].is_leaf() {
                    pairs.push((i, *right));
                }
            }
        }
        pairs
    }

    /// Indices of nodes reachable from the root (the free list leaves
    /// stale entries in the arena).
    fn live_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        let mut live = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            live[i] = true;
            if let Node::Internal { left, right, .. } = &self.nodes[i] {
                stack.push(*left);
                stack.push(*right);
            }
        }
        (0..self.nodes.len()).filter(move |i| live[*i])
    }

    fn leaf_indices(&self) -> Vec<usize> {
        self.live_nodes().filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    /// Leaves under `node`, in walk order.
    fn subtree_leaves(&self, node: usize) -> Vec<usize> {
        let mut leaves = Vec::new();
        let mut stack = vec![node];
        while let Some(i) = stack.pop() {
            match &self.nodes[i] {
                Node::Leaf { .. } => leaves.push(i),
                Node::Internal { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        leaves
    }

    /// Canonical nested rendering used to compare topologies in tests.
    pub fn structure_signature(&self) -> String {
        fn rec(t: &Tree, i: usize, out: &mut String) {
            match &t.nodes[i] {
                Node::Leaf { .. } => out.push('L'),
                Node::Internal { var, split, left, right, .. } => {
                    out.push_str(&format!("({var}:{split:.12}"));
                    rec(t, *left, out);
                    rec(t, *right, out);
                    out.push(')');
                }
            }
        }
        let mut s = String::new();
        rec(self, 0, &mut s);
        s
    }
}

/// Feature matrix for the sampler: column 0 is the treatment arm, the rest
/// are the covariates.
#[derive(Debug, Clone)]
pub struct Design {
    n: usize,
    n_features: usize,
    feats: Vec<f64>,
}

impl Design {
    pub fn new(z: &[u8], x: &[f64], n: usize, p: usize) -> Self {
        assert_eq!(z.len(), n);
        assert_eq!(x.len(), n * p);
        let n_features = p + 1;
        let mut feats = vec![0.0; n * n_features];
        for i in 0..n {
            feats[i * n_features] = z[i] as f64;
            feats[i * n_features + 1..i * n_features + n_features].copy_from_slice(&x[i * p..(i + 1) * p]);
        }
        Self { n, n_features, feats }
    }

    pub fn from_dataset(d: &TrialDataset) -> Self {
        let p = d.p();
        let mut x = Vec::with_capacity(d.n() * p);
        for i in 0..d.n() {
            x.extend_from_slice(d.covariate_row(i));
        }
        Self::new(&d.z, &x, d.n(), p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn feature(&self, i: usize, f: usize) -> f64 {
        self.feats[i * self.n_features + f]
    }
}

/// The sum-of-trees model state: tree topologies, split rules, leaf values,
/// hyperparameters, and the response transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestState {
    pub trees: Vec<Tree>,
    pub hyper: ForestHyper,
    pub transform: ResponseTransform,
}

impl ForestState {
    /// Regression forest: transform fitted to the initial responses, every
    /// tree a root leaf contributing an equal share of the response mean.
    pub fn new_regression(hyper: ForestHyper, y_init: &[f64]) -> Self {
        let transform = ResponseTransform::from_range(y_init);
        let mean = y_init.iter().sum::<f64>() / y_init.len() as f64;
        let mean_int = transform.to_internal(mean);
        let trees = (0..hyper.n_trees)
            .map(|_| Tree::new_root(mean_int / hyper.n_trees as f64))
            .collect();
        Self { trees, hyper, transform }
    }

    /// Probit forest: fixed transform putting the internal +-0.5 range at
    /// +-3 on the latent scale, root leaves at zero.
    pub fn new_probit(hyper: ForestHyper) -> Self {
        let trees = (0..hyper.n_trees).map(|_| Tree::new_root(0.0)).collect();
        Self {
            trees,
            hyper,
            transform: ResponseTransform { shift: 0.0, scale: 6.0 },
        }
    }

    /// Mean prediction for arm `z` and covariate row `x`, on the original
    /// response scale. Pure: repeated calls agree bit-exactly.
    pub fn predict(&self, z: u8, x: &[f64]) -> f64 {
        let feat = |f: usize| if f == 0 { z as f64 } else { x[f - 1] };
        let sum: f64 = self.trees.iter().map(|t| t.leaf_value_with(&feat)).sum();
        self.transform.to_external(sum)
    }
}

/// Per-design runtime state for a forest: leaf assignment of each
/// observation in each tree, and the per-observation sum of leaf values on
/// the internal scale. Cloned alongside the forest for propose/reject.
#[derive(Debug, Clone)]
pub struct ForestFit {
    obs_leaf: Vec<Vec<u32>>,
    sums: Vec<f64>,
}

impl ForestFit {
    pub fn new(forest: &ForestState, design: &Design) -> Self {
        let mut obs_leaf = Vec::with_capacity(forest.trees.len());
        let mut sums = vec![0.0; design.n()];
        for tree in &forest.trees {
            let mut assign = Vec::with_capacity(design.n());
            for i in 0..design.n() {
                let feat = |f: usize| design.feature(i, f);
                let leaf = tree.descend(0, &feat);
                assign.push(leaf as u32);
                if let Node::Leaf { value, .. } = &tree.nodes[leaf] {
                    sums[i] += value;
                }
            }
            obs_leaf.push(assign);
        }
        Self { obs_leaf, sums }
    }

    /// Fitted mean for observation `i` on the original scale.
    #[inline]
    pub fn eta(&self, i: usize, transform: &ResponseTransform) -> f64 {
        transform.to_external(self.sums[i])
    }
}

#[derive(Clone, Copy, Default)]
struct LeafStat {
    n: u32,
    sum: f64,
}

/// Log marginal-likelihood contribution of one leaf (terms that do not
/// cancel between trees sharing the same data).
#[inline]
fn leaf_loglik(stat: &LeafStat, sigma2: f64, sigma_mu2: f64) -> f64 {
    let n = stat.n as f64;
    let denom = sigma2 + n * sigma_mu2;
    0.5 * (sigma2 / denom).ln() + sigma_mu2 * stat.sum * stat.sum / (2.0 * sigma2 * denom)
}

/// One full Gibbs sweep over all trees under the Gaussian working model:
/// for each tree a structural Metropolis-Hastings move on the partial
/// residuals, then conjugate leaf-value draws. `y` and `sigma2` are on the
/// original response scale. Deterministic given the RNG state.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    forest: &mut ForestState,
    fit: &mut ForestFit,
    design: &Design,
    y: &[f64],
    sigma2: f64,
    rng: &mut R,
) {
    let n = design.n();
    assert_eq!(y.len(), n);
    assert!(sigma2 > 0.0, "sigma2 must be positive");
    let transform = forest.transform;
    let s2 = sigma2 / (transform.scale * transform.scale);
    let sigma_mu2 = forest.hyper.sigma_mu().powi(2);
    let hyper = forest.hyper.clone();

    let mut resid = vec![0.0; n];
    for t in 0..forest.trees.len() {
        // Remove this tree's contribution; what is left of y is the partial
        // residual the tree must explain.
        for i in 0..n {
            let leaf = fit.obs_leaf[t][i] as usize;
            if let Node::Leaf { value, .. } = &forest.trees[t].nodes[leaf] {
                fit.sums[i] -= value;
            }
            resid[i] = transform.to_internal(y[i]) - fit.sums[i];
        }

        propose_move(
            &mut forest.trees[t],
            &mut fit.obs_leaf[t],
            design,
            &resid,
            s2,
            sigma_mu2,
            &hyper,
            rng,
        );

        // Conjugate leaf draws given the (possibly updated) structure.
        let tree = &mut forest.trees[t];
        let mut stats = vec![LeafStat::default(); tree.nodes.len()];
        for i in 0..n {
            let leaf = fit.obs_leaf[t][i] as usize;
            stats[leaf].n += 1;
            stats[leaf].sum += resid[i];
        }
        for (idx, stat) in stats.iter().enumerate() {
            if stat.n == 0 {
                continue;
            }
            if let Node::Leaf { value, .. } = &mut tree.nodes[idx] {
                let var = 1.0 / (1.0 / sigma_mu2 + stat.n as f64 / s2);
                let mean = var * stat.sum / s2;
                let z: f64 = StandardNormal.sample(rng);
                *value = mean + var.sqrt() * z;
            }
        }

        // Restore this tree's (new) contribution.
        for i in 0..n {
            let leaf = fit.obs_leaf[t][i] as usize;
            if let Node::Leaf { value, .. } = &forest.trees[t].nodes[leaf] {
                fit.sums[i] += value;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn propose_move<R: Rng + ?Sized>(
    tree: &mut Tree,
    obs_leaf: &mut [u32],
    design: &Design,
    resid: &[f64],
    s2: f64,
    sigma_mu2: f64,
    hyper: &ForestHyper,
    rng: &mut R,
) {
    let u: f64 = rng.random();
    if u < hyper.p_grow {
        grow_move(tree, obs_leaf, design, resid, s2, sigma_mu2, hyper, rng);
    } else if u < hyper.p_grow + hyper.p_prune {
        prune_move(tree, obs_leaf, resid, s2, sigma_mu2, hyper, rng);
    } else if u < hyper.p_grow + hyper.p_prune + hyper.p_change {
        change_move(tree, obs_leaf, design, resid, s2, sigma_mu2, rng);
    } else {
        swap_move(tree, obs_leaf, design, resid, s2, sigma_mu2, rng);
    }
}

fn leaf_stats(tree: &Tree, obs_leaf: &[u32], resid: &[f64]) -> Vec<LeafStat> {
    let mut stats = vec![LeafStat::default(); tree.nodes.len()];
    for (i, &leaf) in obs_leaf.iter().enumerate() {
        stats[leaf as usize].n += 1;
        stats[leaf as usize].sum += resid[i];
    }
    stats
}

/// Distinct observed values of `var` among `obs`, excluding the minimum;
/// splitting at any of these leaves both children nonempty.
fn split_menu(design: &Design, obs: &[usize], var: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = obs.iter().map(|&i| design.feature(i, var)).collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    vals.remove(0);
    vals
}

fn obs_in_leaf(obs_leaf: &[u32], leaf: usize) -> Vec<usize> {
    obs_leaf
        .iter()
        .enumerate()
        .filter(|(_, &l)| l as usize == leaf)
        .map(|(i, _)| i)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn grow_move<R: Rng + ?Sized>(
    tree: &mut Tree,
    obs_leaf: &mut [u32],
    design: &Design,
    resid: &[f64],
    s2: f64,
    sigma_mu2: f64,
    hyper: &ForestHyper,
    rng: &mut R,
) {
    let stats = leaf_stats(tree, obs_leaf, resid);
    let growable: Vec<usize> = tree
        .leaf_indices()
        .into_iter()
        .filter(|&l| stats[l].n >= 2)
        .collect();
    if growable.is_empty() {
        return;
    }
    let leaf = growable[rng.random_range(0..growable.len())];
    let var = rng.random_range(0..design.n_features);
    let members = obs_in_leaf(obs_leaf, leaf);
    let menu = split_menu(design, &members, var);
    if menu.is_empty() {
        return;
    }
    let split = menu[rng.random_range(0..menu.len())];

    let mut left = LeafStat::default();
    let mut right = LeafStat::default();
    for &i in &members {
        if design.feature(i, var) < split {
            left.n += 1;
            left.sum += resid[i];
        } else {
            right.n += 1;
            right.sum += resid[i];
        }
    }
    debug_assert!(left.n > 0 && right.n > 0);

    let depth = tree.nodes[leaf].depth();
    let lik = leaf_loglik(&left, s2, sigma_mu2) + leaf_loglik(&right, s2, sigma_mu2)
        - leaf_loglik(&stats[leaf], s2, sigma_mu2);
    let p_d = hyper.p_split(depth);
    let p_d1 = hyper.p_split(depth + 1);
    let prior = p_d.ln() + 2.0 * (1.0 - p_d1).ln() - (1.0 - p_d).ln();
    // Reverse prune picks uniformly among bottom internal nodes of the new
    // tree: the grown node joins, its parent leaves the set when the
    // sibling is a leaf.
    let mut n_prunable_new = tree.bottom_internal().len() + 1;
    if let Some((_, sibling)) = parent_and_sibling(tree, leaf) {
        if tree.nodes[sibling].is_leaf() {
            n_prunable_new -= 1;
        }
    }
    let proposal = (hyper.p_prune / hyper.p_grow).ln() + (growable.len() as f64).ln()
        - (n_prunable_new as f64).ln();

    if accept(lik + prior + proposal, rng) {
        let d = depth as u16 + 1;
        let l = tree.alloc(Node::Leaf { value: 0.0, depth: d });
        let r = tree.alloc(Node::Leaf { value: 0.0, depth: d });
        tree.nodes[leaf] = Node::Internal {
            var,
            split,
            left: l,
            right: r,
            depth: depth as u16,
        };
        for &i in &members {
            obs_leaf[i] = if design.feature(i, var) < split { l as u32 } else { r as u32 };
        }
    }
}

fn parent_and_sibling(tree: &Tree, node: usize) -> Option<(usize, usize)> {
    for i in tree.live_nodes() {
        if let Node::Internal { left, right, .. } = &tree.nodes[i] {
            if *left == node {
                return Some((i, *right));
            }
            if *right == node {
                return Some((i, *left));
            }
        }
    }
    None
}

fn prune_move<R: Rng + ?Sized>(
    tree: &mut Tree,
    obs_leaf: &mut [u32],
    resid: &[f64],
    s2: f64,
    sigma_mu2: f64,
    hyper: &ForestHyper,
    rng: &mut R,
) {
    let prunable = tree.bottom_internal();
    if prunable.is_empty() {
        return;
    }
    let node = prunable[rng.random_range(0..prunable.len())];
    let (left, right, depth) = match &tree.nodes[node] {
        Node::Internal { left, right, depth, .. } => (*left, *right, *depth as usize),
        _ => unreachable!(),
    };
    let stats = leaf_stats(tree, obs_leaf, resid);
    let merged = LeafStat {
        n: stats[left].n + stats[right].n,
        sum: stats[left].sum + stats[right].sum,
    };
    let lik = leaf_loglik(&merged, s2, sigma_mu2)
        - leaf_loglik(&stats[left], s2, sigma_mu2)
        - leaf_loglik(&stats[right], s2, sigma_mu2);
    let p_d = hyper.p_split(depth);
    let p_d1 = hyper.p_split(depth + 1);
    let prior = (1.0 - p_d).ln() - p_d.ln() - 2.0 * (1.0 - p_d1).ln();
    // Reverse grow picks uniformly among growable leaves of the pruned
    // tree: current growable leaves, minus the two children if they
    // qualified, plus the merged leaf (its count is >= 2 by construction).
    let growable_now = tree
        .leaf_indices()
        .into_iter()
        .filter(|&l| stats[l].n >= 2)
        .count();
    let n_growable_new =
        growable_now - [left, right].iter().filter(|&&c| stats[c].n >= 2).count() + 1;
    let proposal = (hyper.p_grow / hyper.p_prune).ln() + (prunable.len() as f64).ln()
        - (n_growable_new as f64).ln();

    if accept(lik + prior + proposal, rng) {
        tree.nodes[node] = Node::Leaf { value: 0.0, depth: depth as u16 };
        tree.free.push(left);
        tree.free.push(right);
        for leaf in obs_leaf.iter_mut() {
            if *leaf as usize == left || *leaf as usize == right {
                *leaf = node as u32;
            }
        }
    }
}

fn change_move<R: Rng + ?Sized>(
    tree: &mut Tree,
    obs_leaf: &mut [u32],
    design: &Design,
    resid: &[f64],
    s2: f64,
    sigma_mu2: f64,
    rng: &mut R,
) {
    let eligible = tree.bottom_internal();
    if eligible.is_empty() {
        return;
    }
    let node = eligible[rng.random_range(0..eligible.len())];
    let (left, right) = match &tree.nodes[node] {
        Node::Internal { left, right, .. } => (*left, *right),
        _ => unreachable!(),
    };
    let stats = leaf_stats(tree, obs_leaf, resid);
    let mut members = obs_in_leaf(obs_leaf, left);
    members.extend(obs_in_leaf(obs_leaf, right));
    let var = rng.random_range(0..design.n_features);
    let menu = split_menu(design, &members, var);
    if menu.is_empty() {
        return;
    }
    let split = menu[rng.random_range(0..menu.len())];

    let mut new_left = LeafStat::default();
    let mut new_right = LeafStat::default();
    for &i in &members {
        if design.feature(i, var) < split {
            new_left.n += 1;
            new_left.sum += resid[i];
        } else {
            new_right.n += 1;
            new_right.sum += resid[i];
        }
    }
    let lik = leaf_loglik(&new_left, s2, sigma_mu2) + leaf_loglik(&new_right, s2, sigma_mu2)
        - leaf_loglik(&stats[left], s2, sigma_mu2)
        - leaf_loglik(&stats[right], s2, sigma_mu2);

    if accept(lik, rng) {
        if let Node::Internal { var: v, split: s, .. } = &mut tree.nodes[node] {
            *v = var;
            *s = split;
        }
        for &i in &members {
            obs_leaf[i] = if design.feature(i, var) < split { left as u32 } else { right as u32 };
        }
    }
}

fn swap_move<R: Rng + ?Sized>(
    tree: &mut Tree,
    obs_leaf: &mut [u32],
    design: &Design,
    resid: &[f64],
    s2: f64,
    sigma_mu2: f64,
    rng: &mut R,
) {
    let pairs = tree.internal_pairs();
    if pairs.is_empty() {
        return;
    }
    let (parent, child) = pairs[rng.random_range(0..pairs.len())];
    let stats = leaf_stats(tree, obs_leaf, resid);
    let leaves = tree.subtree_leaves(parent);
    let old_lik: f64 = leaves
        .iter()
        .map(|&l| leaf_loglik(&stats[l], s2, sigma_mu2))
        .sum();
    let members: Vec<usize> = leaves.iter().flat_map(|&l| obs_in_leaf(obs_leaf, l)).collect();

    // Swap the two rules, re-route the subtree, and keep or revert.
    swap_rules(tree, parent, child);
    let mut new_assign = Vec::with_capacity(members.len());
    let mut new_stats = vec![LeafStat::default(); tree.nodes.len()];
    for &i in &members {
        let feat = |f: usize| design.feature(i, f);
        let leaf = tree.descend(parent, &feat);
        new_assign.push(leaf as u32);
        new_stats[leaf].n += 1;
        new_stats[leaf].sum += resid[i];
    }
    let empty = leaves.iter().any(|&l| new_stats[l].n == 0);
    let new_lik: f64 = leaves
        .iter()
        .map(|&l| leaf_loglik(&new_stats[l], s2, sigma_mu2))
        .sum();

    if !empty && accept(new_lik - old_lik, rng) {
        for (slot, &i) in new_assign.iter().zip(members.iter()) {
            obs_leaf[i] = *slot;
        }
    } else {
        swap_rules(tree, parent, child);
    }
}

fn swap_rules(tree: &mut Tree, a: usize, b: usize) {
    let (va, sa) = match &tree.nodes[a] {
        Node::Internal { var, split, .. } => (*var, *split),
        _ => unreachable!(),
    };
    let (vb, sb) = match &tree.nodes[b] {
        Node::Internal { var, split, .. } => (*var, *split),
        _ => unreachable!(),
    };
    if let Node::Internal { var, split, .. } = &mut tree.nodes[a] {
        *var = vb;
        *split = sb;
    }
    if let Node::Internal { var, split, .. } = &mut tree.nodes[b] {
        *var = va;
        *split = sa;
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Sum of log N(y_i; mean_i, sigma2). Panics if sigma2 <= 0 or the lengths
/// disagree.
pub fn gaussian_loglik(y: &[f64], means: &[f64], sigma2: f64) -> f64 {
    assert!(sigma2 > 0.0, "sigma2 must be positive");
    assert_eq!(y.len(), means.len());
    y.iter()
        .zip(means.iter())
        .map(|(&yi, &mi)| normal_logpdf(yi, mi, sigma2))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_design(n: usize, p: usize, seed: u64) -> (Design, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let x: Vec<f64> = (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        (Design::new(&z, &x, n, p), x)
    }

    #[test]
    fn predict_root_only_and_additive() {
        let hyper = ForestHyper { n_trees: 1, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &[0.0, 1.0]);
        forest.transform = ResponseTransform { shift: 0.0, scale: 1.0 };
        forest.trees[0] = Tree::new_root(0.7);
        assert_eq!(forest.predict(0, &[1.0, 2.0]), 0.7);
        assert_eq!(forest.predict(1, &[-3.0]), 0.7);

        let hyper2 = ForestHyper { n_trees: 2, ..Default::default() };
        let mut f2 = ForestState::new_regression(hyper2, &[0.0, 1.0]);
        f2.transform = ResponseTransform { shift: 0.0, scale: 1.0 };
        f2.trees[0] = Tree::new_root(0.3);
        f2.trees[1] = Tree::new_root(0.4);
        assert!((f2.predict(0, &[0.0]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn predict_single_split_on_arm() {
        let hyper = ForestHyper { n_trees: 1, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &[0.0, 1.0]);
        forest.transform = ResponseTransform { shift: 0.0, scale: 1.0 };
        let mut tree = Tree::new_root(0.0);
        let l = tree.alloc(Node::Leaf { value: -0.2, depth: 1 });
        let r = tree.alloc(Node::Leaf { value: 0.5, depth: 1 });
        tree.nodes[0] = Node::Internal { var: 0, split: 0.5, left: l, right: r, depth: 0 };
        forest.trees[0] = tree;
        let x = [1.0];
        assert!((forest.predict(1, &x) - forest.predict(0, &x) - 0.7).abs() < 1e-15);
        // Purity: repeated calls agree bit-exactly.
        assert_eq!(forest.predict(1, &x).to_bits(), forest.predict(1, &x).to_bits());
    }

    #[test]
    fn gaussian_loglik_closed_forms() {
        let n = 7;
        let y = vec![1.3; n];
        let sigma2 = 0.49;
        let expect = -(n as f64 / 2.0) * (2.0 * std::f64::consts::PI * sigma2).ln();
        assert!((gaussian_loglik(&y, &y, sigma2) - expect).abs() < 1e-12);

        let got = gaussian_loglik(&[1.0 + 0.7], &[1.0], 0.49);
        let expect1 = -0.5 * (2.0 * std::f64::consts::PI * 0.49).ln() - 0.5;
        assert!((got - expect1).abs() < 1e-12);
    }

    #[test]
    fn gaussian_loglik_matches_independent_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y: Vec<f64> = (0..11).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m: Vec<f64> = (0..11).map(|_| StandardNormal.sample(&mut rng)).collect();
        let sigma2 = 1.7;
        // Hand formula assembled differently: -n/2 log(2 pi s2) - RSS/(2 s2).
        let rss: f64 = y.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum();
        let expect = -(y.len() as f64) / 2.0 * (2.0 * std::f64::consts::PI * sigma2).ln() - rss / (2.0 * sigma2);
        assert!((gaussian_loglik(&y, &m, sigma2) - expect).abs() < 1e-10);
    }

    #[test]
    #[should_panic(expected = "sigma2 must be positive")]
    fn gaussian_loglik_rejects_bad_sigma() {
        gaussian_loglik(&[0.0], &[0.0], 0.0);
    }

    #[test]
    fn sweeps_are_deterministic_under_fixed_seed() {
        let (design, _) = toy_design(60, 3, 10);
        let y: Vec<f64> = (0..60).map(|i| (i as f64 / 60.0).sin()).collect();
        let hyper = ForestHyper { n_trees: 10, ..Default::default() };
        let run = |seed: u64| {
            let mut forest = ForestState::new_regression(hyper.clone(), &y);
            let mut fit = ForestFit::new(&forest, &design);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..30 {
                gibbs_sweep(&mut forest, &mut fit, &design, &y, 0.25, &mut rng);
            }
            forest
        };
        let a = run(99);
        let b = run(99);
        assert_eq!(a, b);
    }

    #[test]
    fn constant_response_concentrates_at_constant() {
        let (design, _) = toy_design(50, 2, 3);
        let c = 2.5;
        let y = vec![c; 50];
        let hyper = ForestHyper { n_trees: 1, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &y);
        let mut fit = ForestFit::new(&forest, &design);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut preds = Vec::new();
        for it in 0..600 {
            gibbs_sweep(&mut forest, &mut fit, &design, &y, 0.01, &mut rng);
            if it >= 100 {
                preds.push(fit.eta(0, &forest.transform));
            }
        }
        let mean: f64 = preds.iter().sum::<f64>() / preds.len() as f64;
        assert!((mean - c).abs() < 0.02, "posterior mean {mean} vs {c}");
    }

    #[test]
    fn root_only_leaf_matches_conjugate_posterior_moments() {
        // With a single root-only tree (grow suppressed), the stationary
        // distribution of the fitted value is the conjugate normal posterior
        // of an intercept under the internal scaling.
        let (design, _) = toy_design(40, 1, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y: Vec<f64> = (0..40)
            .map(|_| 1.0 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let sigma2 = 0.25;
        let hyper = ForestHyper {
            n_trees: 1,
            p_grow: 0.0,
            p_prune: 0.0,
            p_change: 0.0,
            p_swap: 1.0,
            ..Default::default()
        };
        let mut forest = ForestState::new_regression(hyper.clone(), &y);
        let transform = forest.transform;
        let mut fit = ForestFit::new(&forest, &design);
        // Closed-form posterior of the internal-scale intercept.
        let s2 = sigma2 / (transform.scale * transform.scale);
        let sigma_mu2 = hyper.sigma_mu().powi(2);
        let sum_int: f64 = y.iter().map(|&v| transform.to_internal(v)).sum();
        let post_var = 1.0 / (1.0 / sigma_mu2 + y.len() as f64 / s2);
        let post_mean = post_var * sum_int / s2;

        let draws = 30_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            gibbs_sweep(&mut forest, &mut fit, &design, &y, sigma2, &mut rng);
            let v = match &forest.trees[0].nodes[0] {
                Node::Leaf { value, .. } => *value,
                _ => unreachable!(),
            };
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / draws as f64;
        let var = sumsq / draws as f64 - mean * mean;
        // Draws are iid here, so the MC standard error is sqrt(var/draws).
        let mcse = (var / draws as f64).sqrt();
        assert!((mean - post_mean).abs() < 3.0 * mcse, "{mean} vs {post_mean}");
        assert!((var - post_var).abs() / post_var < 0.05, "{var} vs {post_var}");
    }

    #[test]
    fn fits_step_function_below_noise_floor() {
        let n = 500;
        let (design, x) = toy_design(n, 2, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sigma = 0.3;
        let truth: Vec<f64> = (0..n).map(|i| if x[i * 2] > 0.0 { 1.0 } else { -1.0 }).collect();
        let y: Vec<f64> = truth
            .iter()
            .map(|&t| t + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let hyper = ForestHyper { n_trees: 50, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &y);
        let mut fit = ForestFit::new(&forest, &design);
        for _ in 0..300 {
            gibbs_sweep(&mut forest, &mut fit, &design, &y, sigma * sigma, &mut rng);
        }
        // Average fitted surface over a further 100 sweeps.
        let mut avg = vec![0.0; n];
        for _ in 0..100 {
            gibbs_sweep(&mut forest, &mut fit, &design, &y, sigma * sigma, &mut rng);
            for i in 0..n {
                avg[i] += fit.eta(i, &forest.transform) / 100.0;
            }
        }
        let rmse = (avg
            .iter()
            .zip(truth.iter())
            .map(|(a, t)| (a - t) * (a - t))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rmse < sigma, "in-sample RMSE {rmse} should beat sigma {sigma}");
    }

    #[test]
    fn grow_then_prune_restores_topology() {
        let (design, _) = toy_design(30, 2, 5);
        let y: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        let hyper = ForestHyper { n_trees: 1, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &y);
        let mut fit = ForestFit::new(&forest, &design);
        let before = forest.trees[0].structure_signature();
        let before_assign = fit.obs_leaf[0].clone();

        // Force a grow by hand, then the matching prune; bookkeeping must
        // restore both the topology and the observation assignments.
        let resid: Vec<f64> = y.clone();
        let members: Vec<usize> = (0..30).collect();
        let menu = split_menu(&design, &members, 1);
        let split = menu[menu.len() / 2];
        let tree = &mut forest.trees[0];
        let l = tree.alloc(Node::Leaf { value: 0.0, depth: 1 });
        let r = tree.alloc(Node::Leaf { value: 0.0, depth: 1 });
        tree.nodes[0] = Node::Internal { var: 1, split, left: l, right: r, depth: 0 };
        for &i in &members {
            fit.obs_leaf[0][i] = if design.feature(i, 1) < split { l as u32 } else { r as u32 };
        }
        assert_ne!(tree.structure_signature(), before);

        tree.nodes[0] = Node::Leaf { value: 0.0, depth: 0 };
        tree.free.push(l);
        tree.free.push(r);
        for i in 0..30 {
            fit.obs_leaf[0][i] = 0;
        }
        assert_eq!(forest.trees[0].structure_signature(), before);
        assert_eq!(fit.obs_leaf[0], before_assign);
        let _ = resid;
    }

    #[test]
    fn assignments_stay_consistent_over_sweeps() {
        let (design, _) = toy_design(80, 3, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y: Vec<f64> = (0..80).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let hyper = ForestHyper { n_trees: 8, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &y);
        let mut fit = ForestFit::new(&forest, &design);
        for _ in 0..50 {
            gibbs_sweep(&mut forest, &mut fit, &design, &y, 0.5, &mut rng);
            let fresh = ForestFit::new(&forest, &design);
            assert_eq!(fresh.obs_leaf, fit.obs_leaf);
            for i in 0..80 {
                assert!((fresh.sums[i] - fit.sums[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forest_serializes_round_trip() {
        let (design, _) = toy_design(40, 2, 44);
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let y: Vec<f64> = (0..40).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let hyper = ForestHyper { n_trees: 4, ..Default::default() };
        let mut forest = ForestState::new_regression(hyper, &y);
        let mut fit = ForestFit::new(&forest, &design);
        for _ in 0..20 {
            gibbs_sweep(&mut forest, &mut fit, &design, &y, 0.5, &mut rng);
        }
        let json = serde_json::to_string(&forest).unwrap();
        let back: ForestState = serde_json::from_str(&json).unwrap();
        assert_eq!(forest, back);
        assert_eq!(forest.predict(1, &[0.3, -0.7]), back.predict(1, &[0.3, -0.7]));
    }
}
