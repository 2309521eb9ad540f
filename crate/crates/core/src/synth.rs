//! Synthetic heterophily benchmark: nonlinear class manifolds with a shared
//! mean, on a ring lattice rewired through a class-transition matrix.
//!
//! Feature recipe per node of class k: draw angles on the (n_h-1)-sphere,
//! embed via hyperspherical sine-cosine coordinates, truncate/tile to n_data,
//! multiply elementwise by the class prototype v_k, mean-center globally,
//! then add N(0, sigma^2) noise. Centering happens before noise, so at
//! sigma = 0 the column means are exactly zero.
//!
//! Graph recipe: contiguous label blocks, a ring lattice of degree K, then
//! for each node's K/2 rightmost edges, with probability p, resample the far
//! endpoint: target class from the transition-matrix row of the node's class,
//! target node uniform among that class's non-adjacent non-self members.

use std::collections::HashSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Feature-dimension presets for the two benchmark panels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(alias = "risnn")]
    RiSNN,
    #[serde(alias = "diff")]
    Diff,
}

impl Regime {
    /// Default feature dimension when the spec does not override `n_data`.
    pub fn default_n_data(self) -> usize {
        match self {
            Regime::RiSNN => 15,
            Regime::Diff => 3,
        }
    }
}

/// Full description of one synthetic dataset instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    /// Ring-lattice degree; each node gets `base_degree / 2` rightmost
    /// neighbors, so odd values round down to the even degree below.
    pub base_degree: usize,
    pub num_classes: usize,
    /// Target inter-class edge fraction, in [0, 1].
    pub heterophily: f64,
    /// Feature noise sigma, >= 0.
    pub feat_noise: f64,
    /// Feature dimension; defaults to the regime preset when absent.
    pub n_data: Option<usize>,
    /// Latent sphere dimension, >= 2.
    pub n_h: usize,
    /// Per-edge rewiring probability. Defaults to 1: the target inter-class
    /// fraction equals `heterophily` only when every rightmost edge is
    /// resampled.
    pub rewire_prob: f64,
    pub regime: Regime,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_nodes: 500,
            base_degree: 4,
            num_classes: 3,
            heterophily: 0.5,
            feat_noise: 0.0,
            n_data: None,
            n_h: 2,
            rewire_prob: 1.0,
            regime: Regime::RiSNN,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn feature_dim(&self) -> usize {
        self.n_data.unwrap_or_else(|| self.regime.default_n_data())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.num_nodes < self.num_classes {
            return Err(Error::Config(format!(
                "num_nodes {} cannot hold {} nonempty classes",
                self.num_nodes, self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.heterophily) {
            return Err(Error::Config(format!(
                "heterophily must lie in [0, 1], got {}",
                self.heterophily
            )));
        }
        if !(0.0..=1.0).contains(&self.rewire_prob) {
            return Err(Error::Config(format!(
                "rewire_prob must lie in [0, 1], got {}",
                self.rewire_prob
            )));
        }
        if !self.feat_noise.is_finite() || self.feat_noise < 0.0 {
            return Err(Error::Config(format!(
                "feat_noise must be a finite nonnegative sigma, got {}",
                self.feat_noise
            )));
        }
        if self.base_degree < 2 || self.base_degree >= self.num_nodes {
            return Err(Error::Config(format!(
                "base_degree must satisfy 2 <= K < num_nodes, got K={} N={}",
                self.base_degree, self.num_nodes
            )));
        }
        if self.n_h < 2 {
            return Err(Error::Config(format!(
                "n_h must be at least 2, got {}",
                self.n_h
            )));
        }
        if self.feature_dim() == 0 {
            return Err(Error::Config("n_data must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Row-stochastic class-transition matrix: diagonal 1-het, off-diagonal
/// het/(n_c-1).
pub fn class_transition_matrix(het: f64, n_c: usize) -> Result<DMatrix<f64>> {
    if n_c < 2 {
        return Err(Error::Config(format!(
            "class transition matrix needs at least 2 classes, got {n_c}"
        )));
    }
    if !(0.0..=1.0).contains(&het) {
        return Err(Error::Config(format!(
            "heterophily must lie in [0, 1], got {het}"
        )));
    }
    let off = het / (n_c as f64 - 1.0);
    Ok(DMatrix::from_fn(
        n_c,
        n_c,
        |i, j| if i == j { 1.0 - het } else { off },
    ))
}

/// Contiguous label blocks of size floor(N/n_c), remainder spread over the
/// first classes: N=101, n_c=5 gives sizes 21,20,20,20,20.
pub fn gen_labels(num_nodes: usize, num_classes: usize) -> Vec<usize> {
    let base = num_nodes / num_classes;
    let rem = num_nodes % num_classes;
    let mut labels = Vec::with_capacity(num_nodes);
    for c in 0..num_classes {
        let size = base + usize::from(c < rem);
        labels.extend(std::iter::repeat(c).take(size));
    }
    labels
}

/// Counters from the rewiring pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RewireDiagnostics {
    /// Edges whose rewire coin came up and a target was found.
    pub rewired: usize,
    /// Rewires skipped because the sampled class had no eligible node.
    pub skipped_no_target: usize,
    /// Duplicate pairs dropped by the final cleanup pass. The adjacency
    /// check keeps pairs unique throughout, so this stays 0; counted anyway.
    pub duplicates_removed: usize,
    pub self_loops_removed: usize,
}

/// Ring lattice plus class-aware rewiring. Returns the graph and the
/// rewiring counters.
pub fn gen_graph(
    spec: &SyntheticSpec,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Graph, RewireDiagnostics)> {
    spec.validate()?;
    let n = spec.num_nodes;
    if labels.len() != n {
        return Err(Error::Config(format!(
            "{} labels for {} nodes",
            labels.len(),
            n
        )));
    }
    let half = spec.base_degree / 2;
    let transition = class_transition_matrix(spec.heterophily, spec.num_classes)?;

    let mut class_members: Vec<Vec<usize>> = vec![Vec::new(); spec.num_classes];
    for (node, &l) in labels.iter().enumerate() {
        class_members[l].push(node);
    }
    if let Some(c) = class_members.iter().position(|m| m.is_empty()) {
        return Err(Error::Config(format!("class {c} has no nodes")));
    }

    // Rightmost ring edges, one owner node each; K < N keeps pairs unique.
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n * half);
    for i in 0..n {
        for s in 1..=half {
            edges.push((i, (i + s) % n));
        }
    }
    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    for &(u, v) in &edges {
        adj[u].insert(v);
        adj[v].insert(u);
    }

    let mut diag = RewireDiagnostics::default();
    for idx in 0..edges.len() {
        if rng.gen::<f64>() >= spec.rewire_prob {
            continue;
        }
        let (i, old) = edges[idx];
        let row = transition.row(labels[i]);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut target_class = spec.num_classes - 1;
        for (c, &w) in row.iter().enumerate() {
            acc += w;
            if u < acc {
                target_class = c;
                break;
            }
        }
        let eligible: Vec<usize> = class_members[target_class]
            .iter()
            .copied()
            .filter(|&j| j != i && !adj[i].contains(&j))
            .collect();
        if eligible.is_empty() {
            diag.skipped_no_target += 1;
            continue;
        }
        let new = eligible[rng.gen_range(0..eligible.len())];
        adj[i].remove(&old);
        adj[old].remove(&i);
        adj[i].insert(new);
        adj[new].insert(i);
        edges[idx] = (i, new);
        diag.rewired += 1;
    }

    // Cleanup pass from the recipe; the adjacency bookkeeping above already
    // rules both cases out, so the counters double as an invariant check.
    let mut seen: HashSet<(usize, usize)> = HashSet::with_capacity(edges.len());
    let mut cleaned = Vec::with_capacity(edges.len());
    for &(u, v) in &edges {
        if u == v {
            diag.self_loops_removed += 1;
            continue;
        }
        if !seen.insert((u.min(v), u.max(v))) {
            diag.duplicates_removed += 1;
            continue;
        }
        cleaned.push((u, v));
    }
    Ok((Graph::build(n, &cleaned)?, diag))
}

/// Point on the (k)-sphere from k hyperspherical angles.
fn sphere_point(angles: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; angles.len() + 1];
    let mut sin_prod = 1.0;
    for (k, &a) in angles.iter().enumerate() {
        s[k] = sin_prod * a.cos();
        sin_prod *= a.sin();
    }
    s[angles.len()] = sin_prod;
    s
}

/// Class-manifold features. Draw order: prototypes (class major, coordinate
/// minor), then each node's angles in node order, then noise (node major)
/// when sigma > 0; sigma = 0 draws nothing from the noise stream.
pub fn gen_features(
    spec: &SyntheticSpec,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.num_nodes;
    let n_data = spec.feature_dim();
    let num_angles = spec.n_h - 1;

    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..n_data).map(|_| rng.gen::<f64>()).collect())
        .collect();

    let mut x = DMatrix::zeros(n, n_data);
    for i in 0..n {
        let mut angles = Vec::with_capacity(num_angles);
        for a in 0..num_angles {
            let span = if a + 1 < num_angles {
                std::f64::consts::PI
            } else {
                2.0 * std::f64::consts::PI
            };
            angles.push(rng.gen::<f64>() * span);
        }
        let s = sphere_point(&angles);
        let v = &prototypes[labels[i]];
        for m in 0..n_data {
            x[(i, m)] = v[m] * s[m % spec.n_h];
        }
    }

    // Shared mean across classes: center before noise.
    for m in 0..n_data {
        let mu = x.column(m).sum() / n as f64;
        for i in 0..n {
            x[(i, m)] -= mu;
        }
    }

    if spec.feat_noise > 0.0 {
        let normal = Normal::new(0.0, spec.feat_noise)
            .map_err(|e| Error::Config(format!("feat_noise: {e}")))?;
        for i in 0..n {
            for m in 0..n_data {
                x[(i, m)] += normal.sample(rng);
            }
        }
    }
    Ok(x)
}

/// Per-class 48/32/20 splits with a seed-stable shuffle; masks come back
/// sorted, disjoint, and covering.
pub fn gen_splits(
    labels: &[usize],
    num_classes: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let m = members.len();
        let n_train = (m as f64 * 0.48).round() as usize;
        let n_val = ((m as f64 * 0.32).round() as usize).min(m - n_train);
        train.extend(&members[..n_train]);
        val.extend(&members[n_train..n_train + n_val]);
        test.extend(&members[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    (train, val, test)
}

/// Generate the full dataset. Independent RNG streams keep the three
/// stages decoupled: stream 0 rewires the graph, stream 1 draws features,
/// stream 2 shuffles the splits.
pub fn gen_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let (ds, _) = gen_dataset_with_diagnostics(spec)?;
    Ok(ds)
}

pub fn gen_dataset_with_diagnostics(
    spec: &SyntheticSpec,
) -> Result<(Dataset, RewireDiagnostics)> {
    spec.validate()?;
    let labels = gen_labels(spec.num_nodes, spec.num_classes);

    let mut graph_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    graph_rng.set_stream(0);
    let (graph, diag) = gen_graph(spec, &labels, &mut graph_rng)?;

    let mut feat_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    feat_rng.set_stream(1);
    let features = gen_features(spec, &labels, &mut feat_rng)?;

    let mut split_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    split_rng.set_stream(2);
    let (train_mask, val_mask, test_mask) = gen_splits(&labels, spec.num_classes, &mut split_rng);

    let ds = Dataset {
        graph,
        features,
        labels,
        num_classes: spec.num_classes,
        train_mask,
        val_mask,
        test_mask,
    };
    ds.validate()?;
    Ok((ds, diag))
}

/// Fraction of edges whose endpoints share a label; 1.0 on an edgeless
/// graph (vacuously homophilous).
pub fn homophily(graph: &Graph, labels: &[usize]) -> f64 {
    if graph.num_edges() == 0 {
        return 1.0;
    }
    let same = graph
        .edges()
        .iter()
        .filter(|&&(u, v)| labels[u as usize] == labels[v as usize])
        .count();
    same as f64 / graph.num_edges() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, k: usize, n_c: usize, het: f64) -> SyntheticSpec {
        SyntheticSpec {
            num_nodes: n,
            base_degree: k,
            num_classes: n_c,
            heterophily: het,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn transition_matrix_known_cases() {
        let id = class_transition_matrix(0.0, 3).unwrap();
        assert_eq!(id, DMatrix::identity(3, 3));
        let swap = class_transition_matrix(1.0, 2).unwrap();
        assert_eq!(swap, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        let half = class_transition_matrix(0.5, 2).unwrap();
        assert_eq!(half, DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]));
        assert!(matches!(
            class_transition_matrix(0.5, 1),
            Err(Error::Config(_))
        ));
        let r = class_transition_matrix(0.3, 5).unwrap();
        for i in 0..5 {
            assert!((r.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn label_blocks() {
        let l = gen_labels(100, 5);
        for c in 0..5 {
            assert_eq!(l.iter().filter(|&&x| x == c).count(), 20);
        }
        let l = gen_labels(101, 5);
        let sizes: Vec<usize> = (0..5).map(|c| l.iter().filter(|&&x| x == c).count()).collect();
        assert_eq!(sizes, vec![21, 20, 20, 20, 20]);
        assert_eq!(l[0], 0);
        assert_eq!(l[100], 4);
    }

    #[test]
    fn no_rewiring_gives_exact_cycle() {
        let mut s = spec(6, 2, 2, 0.5);
        s.rewire_prob = 0.0;
        let labels = gen_labels(6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (g, diag) = gen_graph(&s, &labels, &mut rng).unwrap();
        // Graph::build stores edges in canonical (min, max) sorted order.
        let expect = [(0, 1), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)];
        assert_eq!(g.edges(), expect.as_slice());
        assert_eq!(diag.rewired, 0);
        assert_eq!(diag.duplicates_removed, 0);
    }

    #[test]
    fn rewiring_tracks_heterophily() {
        // Monte-Carlo over 20 seeds at N=400: empirical inter-class fraction
        // lands near the requested coefficient at both extremes.
        let cases: [(f64, fn(f64) -> bool); 2] = [
            (1.0, |inter| (0.95..=1.0).contains(&inter)),
            (0.0, |inter| inter <= 0.05),
        ];
        for (het, check) in cases {
            let mut mean = 0.0;
            for seed in 0..20u64 {
                let mut s = spec(400, 4, 2, het);
                s.seed = seed;
                let labels = gen_labels(400, 2);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (g, _) = gen_graph(&s, &labels, &mut rng).unwrap();
                mean += 1.0 - homophily(&g, &labels);
            }
            mean /= 20.0;
            assert!(check(mean), "het={het} gave inter-class fraction {mean}");
        }
    }

    #[test]
    fn degree_preserved_after_cleanup() {
        let s = spec(400, 6, 4, 0.5);
        let labels = gen_labels(400, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (g, diag) = gen_graph(&s, &labels, &mut rng).unwrap();
        let mean_degree = 2.0 * g.num_edges() as f64 / 400.0;
        assert!((mean_degree - 6.0).abs() / 6.0 < 0.05, "mean degree {mean_degree}");
        assert_eq!(diag.duplicates_removed, 0);
        assert_eq!(diag.self_loops_removed, 0);
    }

    #[test]
    fn centering_exact_without_noise() {
        let s = spec(120, 4, 3, 0.5);
        let labels = gen_labels(120, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gen_features(&s, &labels, &mut rng).unwrap();
        for m in 0..x.ncols() {
            assert!(x.column(m).sum().abs() / 120.0 <= 1e-12);
        }
    }

    #[test]
    fn features_match_plain_reimplementation() {
        // Same RNG stream, independently restated pipeline: prototypes,
        // angles, hyperspherical point, truncate/tile, prototype product,
        // global centering.
        let s = SyntheticSpec {
            n_h: 4,
            ..spec(30, 4, 3, 0.5)
        };
        let labels = gen_labels(30, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = gen_features(&s, &labels, &mut rng).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n_data = 15;
        let mut protos = [[0.0f64; 15]; 3];
        for p in protos.iter_mut() {
            for v in p.iter_mut() {
                *v = rng.gen();
            }
        }
        let mut raw = vec![[0.0f64; 15]; 30];
        for (i, row) in raw.iter_mut().enumerate() {
            let t0: f64 = rng.gen::<f64>() * std::f64::consts::PI;
            let t1: f64 = rng.gen::<f64>() * std::f64::consts::PI;
            let t2: f64 = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let sphere = [
                t0.cos(),
                t0.sin() * t1.cos(),
                t0.sin() * t1.sin() * t2.cos(),
                t0.sin() * t1.sin() * t2.sin(),
            ];
            for m in 0..n_data {
                row[m] = protos[labels[i]][m] * sphere[m % 4];
            }
        }
        for m in 0..n_data {
            let mu: f64 = raw.iter().map(|r| r[m]).sum::<f64>() / 30.0;
            for r in raw.iter_mut() {
                r[m] -= mu;
            }
        }
        for i in 0..30 {
            for m in 0..n_data {
                assert_eq!(x[(i, m)], raw[i][m], "node {i} coordinate {m}");
            }
        }
    }

    #[test]
    fn splits_disjoint_covering_and_sized() {
        let labels = gen_labels(100, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (train, val, test) = gen_splits(&labels, 5, &mut rng);
        assert_eq!(train.len(), 50);
        assert_eq!(val.len(), 30);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn dataset_deterministic_under_seed() {
        let s = spec(80, 4, 4, 0.7);
        let a = gen_dataset(&s).unwrap();
        let b = gen_dataset(&s).unwrap();
        assert_eq!(a.graph.edges(), b.graph.edges());
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.train_mask, b.train_mask);
        assert_eq!(a.val_mask, b.val_mask);
        assert_eq!(a.test_mask, b.test_mask);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let err = SyntheticSpec::from_toml_str(
            "num_nodes = 50\nbase_degree = 4\nellipsoids = false\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("ellipsoids")));
    }

    #[test]
    fn homophily_trivial_cases() {
        let g = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(homophily(&g, &[0, 0, 0]), 1.0);
        let g2 = Graph::build(2, &[(0, 1)]).unwrap();
        assert_eq!(homophily(&g2, &[0, 1]), 0.0);
        let empty = Graph::build(2, &[]).unwrap();
        assert_eq!(homophily(&empty, &[0, 1]), 1.0);
    }

    #[test]
    fn spec_validation_rejects_bad_fields() {
        assert!(spec(10, 4, 1, 0.5).validate().is_err());
        assert!(spec(10, 4, 2, 1.5).validate().is_err());
        assert!(spec(10, 12, 2, 0.5).validate().is_err());
        let mut s = spec(10, 4, 2, 0.5);
        s.n_h = 1;
        assert!(s.validate().is_err());
        s = spec(10, 4, 2, 0.5);
        s.feat_noise = -1.0;
        assert!(s.validate().is_err());
        assert!(spec(10, 4, 2, 0.5).validate().is_ok());
    }
}
