//! Acceptance gate: one test per release criterion, each printing a single
//! verdict line (PASS, FAIL, or SKIP with the reason). Sizes, corpora, and
//! tolerances are stated inline next to each check; runtime budgets are
//! asserted where a criterion carries one.

use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polynsd::cochain::Cochain;
use polynsd::dataset::Dataset;
use polynsd::graph::Graph;
use polynsd::grad::finite_difference_report;
use polynsd::laplacian::{assemble_laplacian, normalize_laplacian, BlockSparseOperator};
use polynsd::layer::{nsd_dense_operator, nsd_to_polynsd, polynsd_dense_operator, SheafLearner};
use polynsd::model::{param_count_formula, LayerKind, ModelConfig, ModelParams};
use polynsd::oracle::SpectralOracle;
use polynsd::sheaf::{MapKind, SheafStructure};
use polynsd::spectral::{
    cheb_apply, dirichlet_energy, gershgorin_bound, lambda_max, monomial_apply,
    operator_norm_estimate, power_iteration, rescale, softmax, LambdaMaxStrategy,
};
use polynsd::synth::{gen_dataset, homophily, Regime, SyntheticSpec};
use polynsd::train::{train, RunStatus};

const KINDS: [MapKind; 3] = [MapKind::Diagonal, MapKind::Orthogonal, MapKind::General];

/// Several criteria carry wall-clock budgets or fit timing curves, so the
/// whole suite runs serialized regardless of the harness thread count. The
/// lock tolerates poisoning: a failed criterion must not mask the others.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn pass(id: &str, detail: &str) {
    println!("acceptance {id}: PASS ({detail})");
}

fn fail(id: &str, detail: &str) -> ! {
    println!("acceptance {id}: FAIL ({detail})");
    panic!("acceptance {id} failed: {detail}");
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((v - 1, v));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            edges.push((u, v));
        }
    }
    Graph::build(n, &edges).unwrap()
}

fn random_cochain(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Cochain {
    let data = (0..n * d * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Cochain::from_vec(n, d, c, data).unwrap()
}

fn convex_theta(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let eta: Vec<f64> = (0..=k).map(|_| rng.gen_range(-2.0..2.0)).collect();
    softmax(&eta)
}

/// Scalar Chebyshev mixture p(xi) = sum theta_k T_k(xi).
fn cheb_scalar(theta: &[f64], xi: f64) -> f64 {
    let mut acc = theta[0];
    if theta.len() > 1 {
        let (mut prev, mut cur) = (1.0, xi);
        acc += theta[1] * cur;
        for &t in &theta[2..] {
            let next = 2.0 * xi * cur - prev;
            acc += t * next;
            prev = cur;
            cur = next;
        }
    }
    acc
}

// Over 200 random sheaves (N <= 30, d in 1..=5, all three map kinds) every
// eigenvalue of the degree-normalized Laplacian lies in [-1e-8, 2 + 1e-8],
// in under 30 seconds.
#[test]
fn a01_normalized_spectrum_enclosed_on_random_corpus() {
    let _serial = serial();
    let id = "a01 normalized-spectrum-enclosure";
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for trial in 0..200 {
        let n = rng.gen_range(2..=30);
        let d = rng.gen_range(1..=5);
        let graph = random_graph(&mut rng, n);
        let sheaf = SheafStructure::random(graph, d, KINDS[trial % 3], 1.0, &mut rng);
        let l = assemble_laplacian(&sheaf).unwrap();
        let norm = normalize_laplacian(&l, 1e-8).unwrap();
        let oracle = SpectralOracle::new(&norm).unwrap();
        lo = lo.min(oracle.lambda_min());
        hi = hi.max(oracle.lambda_max());
    }
    let t = start.elapsed().as_secs_f64();
    if lo < -1e-8 || hi > 2.0 + 1e-8 {
        fail(id, &format!("spectrum [{lo:.3e}, {hi}] escapes [-1e-8, 2+1e-8]"));
    }
    if t >= 30.0 {
        fail(id, &format!("runtime {t:.1}s exceeds 30s budget"));
    }
    pass(id, &format!("200 sheaves, spectrum within [{lo:.2e}, {hi:.9}], {t:.1}s"));
}

// On 200 learner-generated sheaves the Gershgorin block bound dominates the
// dense-oracle lambda_max on every instance, and always dominates the
// power-iteration estimate.
#[test]
fn a02_gershgorin_dominates_oracle_and_power_on_learner_sheaves() {
    let _serial = serial();
    let id = "a02 gershgorin-bound-validity";
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_margin = f64::INFINITY;
    for trial in 0..200 {
        let n = rng.gen_range(2..=30);
        let d = rng.gen_range(1..=5);
        let graph = random_graph(&mut rng, n);
        let learner = SheafLearner::random(KINDS[trial % 3], d, 8, &mut rng);
        let x = random_cochain(&mut rng, n, d, 3);
        let sheaf = polynsd::layer::sheaf_learner_forward(&graph, &x, &learner).unwrap();
        let l = assemble_laplacian(&sheaf).unwrap();
        let bound = gershgorin_bound(&l);
        let truth = SpectralOracle::new(&l).unwrap().lambda_max();
        let power = power_iteration(&l, 100, 1e-6).value;
        if bound < truth - 1e-9 * truth.max(1.0) {
            fail(id, &format!("trial {trial}: bound {bound} below oracle {truth}"));
        }
        if bound < power - 1e-12 {
            fail(id, &format!("trial {trial}: bound {bound} below power {power}"));
        }
        worst_margin = worst_margin.min(bound - truth);
    }
    pass(
        id,
        &format!("200 learner sheaves, min(bound - oracle) = {worst_margin:.3e}"),
    );
}

// cheb_apply agrees with the dense functional calculus U p(Lambda) U^T x to
// 1e-10 relative, for K in 1..=16 with several random instances per degree.
#[test]
fn a03_chebyshev_filter_matches_spectral_oracle() {
    let _serial = serial();
    let id = "a03 chebyshev-vs-oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut max_rel: f64 = 0.0;
    let mut instances = 0;
    for k in 1..=16usize {
        for _ in 0..4 {
            let n = rng.gen_range(2..=15);
            let d = rng.gen_range(1..=3);
            let graph = random_graph(&mut rng, n);
            let kind = KINDS[instances % 3];
            let sheaf = SheafStructure::random(graph, d, kind, 1.0, &mut rng);
            let l = assemble_laplacian(&sheaf).unwrap();
            let norm = normalize_laplacian(&l, 1e-8).unwrap();
            let rescaled = rescale(&norm, 2.0).unwrap();
            let theta = convex_theta(&mut rng, k);
            let x = random_cochain(&mut rng, n, d, 2);
            let via_filter = cheb_apply(&rescaled, &theta, &x).unwrap();
            let oracle = SpectralOracle::new(&rescaled).unwrap();
            let via_oracle = oracle.apply_multiplier(|xi| cheb_scalar(&theta, xi), &x).unwrap();
            let mut diff = via_filter.clone();
            diff.axpy(-1.0, &via_oracle);
            let rel = diff.norm() / via_oracle.norm().max(1e-12);
            max_rel = max_rel.max(rel);
            instances += 1;
        }
    }
    if max_rel > 1e-10 {
        fail(id, &format!("max relative error {max_rel:.3e} exceeds 1e-10"));
    }
    pass(
        id,
        &format!("{instances} instances over K=1..16, max relative error {max_rel:.3e}"),
    );
}

fn bfs_distances(graph: &Graph, source: usize) -> Vec<usize> {
    let n = graph.num_nodes();
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in graph.edges() {
        adj[u as usize].push(v as usize);
        adj[v as usize].push(u as usize);
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::from([source]);
    dist[source] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn dense_cheb_filter(rescaled: &BlockSparseOperator, theta: &[f64]) -> DMatrix<f64> {
    let nd = rescaled.dim();
    let eye = DMatrix::<f64>::identity(nd, nd);
    let lt = rescaled.to_dense();
    let mut acc = &eye * theta[0];
    if theta.len() > 1 {
        let mut prev = eye;
        let mut cur = lt.clone();
        acc += &cur * theta[1];
        for &t in &theta[2..] {
            let next = &lt * &cur * 2.0 - &prev;
            acc += &next * t;
            prev = cur;
            cur = next;
        }
    }
    acc
}

// Degree-K filters couple no node pairs beyond graph distance K: the dense
// materialization has exactly-zero (<= 1e-12) off-pattern blocks on path,
// ring, and random sparse graphs for K in {1, 2, 3}.
#[test]
fn a04_filters_are_k_hop_local() {
    let _serial = serial();
    let id = "a04 k-hop-locality";
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let path: Vec<(usize, usize)> = (1..12).map(|v| (v - 1, v)).collect();
    let mut ring = path.clone();
    ring.push((11, 0));
    let mut sparse = vec![(0usize, 1usize)];
    for v in 2..14 {
        sparse.push((rng.gen_range(0..v), v));
    }
    let graphs = [
        ("path", Graph::build(12, &path).unwrap()),
        ("ring", Graph::build(12, &ring).unwrap()),
        ("sparse", Graph::build(14, &sparse).unwrap()),
    ];
    let mut worst: f64 = 0.0;
    for (name, graph) in &graphs {
        let n = graph.num_nodes();
        let d = 2;
        for k in 1..=3usize {
            let sheaf = SheafStructure::random(graph.clone(), d, MapKind::General, 1.0, &mut rng);
            let l = assemble_laplacian(&sheaf).unwrap();
            let norm = normalize_laplacian(&l, 1e-8).unwrap();
            let rescaled = rescale(&norm, 2.0).unwrap();
            let filt = dense_cheb_filter(&rescaled, &convex_theta(&mut rng, k));
            for u in 0..n {
                let dist = bfs_distances(graph, u);
                for v in 0..n {
                    if dist[v] != usize::MAX && dist[v] <= k {
                        continue;
                    }
                    for i in 0..d {
                        for j in 0..d {
                            let entry = filt[(u * d + i, v * d + j)].abs();
                            worst = worst.max(entry);
                            if entry > 1e-12 {
                                fail(
                                    id,
                                    &format!(
                                        "{name} K={k}: coupling {entry:.3e} at distance {} pair ({u},{v})",
                                        dist[v]
                                    ),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    pass(id, &format!("path/ring/sparse, K in 1..3, max off-range coupling {worst:.2e}"));
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

// Polynomial functional calculus behaves like polynomials: p(L)q(L) equals
// (pq)(L) to 1e-9 relative, and filters whose multiplier lies in [0, 1] on
// the spectrum never increase Dirichlet energy (within 1e-10).
#[test]
fn a05_polynomials_commute_and_diffusion_contracts_energy() {
    let _serial = serial();
    let id = "a05 commutation-and-energy-monotonicity";
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut max_comm: f64 = 0.0;
    for trial in 0..30 {
        let n = rng.gen_range(3..=12);
        let d = rng.gen_range(1..=3);
        let graph = random_graph(&mut rng, n);
        let sheaf = SheafStructure::random(graph, d, KINDS[trial % 3], 1.0, &mut rng);
        let l = assemble_laplacian(&sheaf).unwrap();
        let norm = normalize_laplacian(&l, 1e-8).unwrap();

        // Commutation through the operator path, product by convolution.
        let p: Vec<f64> = (0..=rng.gen_range(1..=4)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..=rng.gen_range(1..=4)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut pq = vec![0.0; p.len() + q.len() - 1];
        for (i, a) in p.iter().enumerate() {
            for (j, b) in q.iter().enumerate() {
                pq[i + j] += a * b;
            }
        }
        let x = random_cochain(&mut rng, n, d, 2);
        let composed = monomial_apply(&norm, &p, &monomial_apply(&norm, &q, &x).unwrap()).unwrap();
        let direct = monomial_apply(&norm, &pq, &x).unwrap();
        let mut diff = composed.clone();
        diff.axpy(-1.0, &direct);
        let rel = diff.norm() / direct.norm().max(1e-12);
        max_comm = max_comm.max(rel);
        if rel > 1e-9 {
            fail(id, &format!("trial {trial}: commutation error {rel:.3e} exceeds 1e-9"));
        }

        // Heat-style filters (1 - lambda/2)^m: multiplier in [0, 1] on the
        // normalized spectrum, oracle-verified, then energy compared.
        let oracle = SpectralOracle::new(&norm).unwrap();
        let base_energy = dirichlet_energy(&norm, &x).unwrap();
        for m in 1..=3usize {
            let coeffs: Vec<f64> = (0..=m).map(|j| binomial(m, j) * (-0.5f64).powi(j as i32)).collect();
            for &lam in oracle.eigenvalues() {
                let val = coeffs.iter().rev().fold(0.0, |acc, c| acc * lam + c);
                if !(-1e-12..=1.0 + 1e-12).contains(&val) {
                    fail(id, &format!("heat multiplier {val} at lambda {lam} leaves [0,1]"));
                }
            }
            let y = monomial_apply(&norm, &coeffs, &x).unwrap();
            let energy = dirichlet_energy(&norm, &y).unwrap();
            for (after, before) in energy.iter().zip(&base_energy) {
                if *after > before + 1e-10 {
                    fail(
                        id,
                        &format!("heat m={m}: energy rose {before} -> {after}"),
                    );
                }
            }
        }

        // Squared convex Chebyshev mixtures: p^2 lands in [0, 1] on the
        // rescaled spectrum, applied as filter-of-filter.
        let rescaled = rescale(&norm, 2.0).unwrap();
        let theta = convex_theta(&mut rng, 4);
        let y = cheb_apply(&rescaled, &theta, &cheb_apply(&rescaled, &theta, &x).unwrap()).unwrap();
        let energy = dirichlet_energy(&norm, &y).unwrap();
        for (after, before) in energy.iter().zip(&base_energy) {
            if *after > before + 1e-10 {
                fail(id, &format!("squared filter: energy rose {before} -> {after}"));
            }
        }
    }
    pass(id, &format!("30 instances, max commutation error {max_comm:.3e}, energy never rose"));
}

// Convex Chebyshev mixtures are nonexpansive: the measured operator norm of
// p_theta(rescaled L) stays at or below 1 + 1e-6 for 100 random theta under
// every lambda_max strategy.
#[test]
fn a06_convex_filters_are_nonexpansive_under_every_lambda_strategy() {
    let _serial = serial();
    let id = "a06 convex-filter-nonexpansiveness";
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.gen_range(2..=12);
        let d = rng.gen_range(1..=2);
        let graph = random_graph(&mut rng, n);
        let sheaf = SheafStructure::random(graph, d, KINDS[trial % 3], 1.0, &mut rng);
        let raw = assemble_laplacian(&sheaf).unwrap();
        let norm = normalize_laplacian(&raw, 1e-8).unwrap();
        let k = rng.gen_range(1..=8);
        let theta = convex_theta(&mut rng, k);
        for strategy in [
            LambdaMaxStrategy::AnalyticNormalized,
            LambdaMaxStrategy::Gershgorin,
            LambdaMaxStrategy::power_default(),
        ] {
            // The analytic bound is only a contract for normalized operators.
            let op = if matches!(strategy, LambdaMaxStrategy::AnalyticNormalized) {
                &norm
            } else {
                &raw
            };
            let mut est = lambda_max(op, strategy);
            if !est.converged {
                est = power_iteration(op, 50_000, 1e-12);
            }
            if est.value <= 0.0 {
                continue;
            }
            let rescaled = rescale(op, est.value).unwrap();
            let measured = operator_norm_estimate(
                n,
                d,
                |x| cheb_apply(&rescaled, &theta, x).unwrap(),
                200,
                trial as u64,
            );
            worst = worst.max(measured);
            if measured > 1.0 + 1e-6 {
                fail(
                    id,
                    &format!("trial {trial} {strategy:?}: filter norm {measured} expands"),
                );
            }
        }
    }
    pass(id, &format!("100 theta draws x 3 strategies, max norm {worst:.9}"));
}

// A first-order polynomial layer can impersonate the baseline diffusion
// x -> Ax - BLx: converted parameters reproduce the dense operator to 1e-10
// on 100 random representable (A, B) pairs. The canonical worked pair
// (A=1, B=1, lambda_max=2) with claimed output theta=(0.5, 0.5) is also
// checked verbatim.
#[test]
fn a07_first_order_equivalence_with_nsd() {
    let _serial = serial();
    let id = "a07 nsd-equivalence-k1";
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut max_rel: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.gen_range(2..=12);
        let d = rng.gen_range(1..=3);
        let graph = random_graph(&mut rng, n);
        let sheaf = SheafStructure::random(graph, d, KINDS[trial % 3], 1.0, &mut rng);
        let l = assemble_laplacian(&sheaf).unwrap();
        let norm = normalize_laplacian(&l, 1e-8).unwrap();
        let lambda = 2.0;
        let b = rng.gen_range(0.05..0.95) * 2.0 / lambda;
        let a = b * lambda + rng.gen_range(-0.99..0.99);
        let m = nsd_to_polynsd(a, b, lambda).unwrap();
        let via_poly =
            polynsd_dense_operator(&norm, &m.theta, m.alpha_hp, m.epsilon_gate, lambda).unwrap();
        let via_nsd = nsd_dense_operator(&norm, a, b);
        let num = (&via_poly - &via_nsd).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = via_nsd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let rel = num / den;
        max_rel = max_rel.max(rel);
        if rel > 1e-10 {
            fail(
                id,
                &format!("trial {trial} (A={a:.3}, B={b:.3}): operator mismatch {rel:.3e}"),
            );
        }
    }
    pass(
        id,
        &format!("100 random (A, B) round trips, max operator mismatch {max_rel:.3e}"),
    );

    // Named worked pair. theta1 = B*lambda_max/2 = 1 sits on the closed end
    // of the simplex, so the conversion rejects it; the claimed output
    // theta = (0.5, 0.5) materializes x - 0.5*Lx, not x - Lx. The two halves
    // of the expectation contradict each other, so this sub-check cannot be
    // satisfied by any implementation whose round trip is exact; it is
    // reported failed rather than silently weakened.
    let id_named = "a07 named-case (A=1,B=1,lambda=2) -> theta=(0.5,0.5)";
    match nsd_to_polynsd(1.0, 1.0, 2.0) {
        Ok(m) if (m.theta[0] - 0.5).abs() <= 1e-12 && (m.theta[1] - 0.5).abs() <= 1e-12 => {
            pass(id_named, "reproduced exactly");
        }
        Ok(m) => fail(
            id_named,
            &format!("conversion returned theta=({:.3}, {:.3})", m.theta[0], m.theta[1]),
        ),
        Err(e) => fail(
            id_named,
            &format!(
                "target rejected: {e}; theta=(0.5, 0.5) would realize B=0.5, not B=1, \
                 so the expected output cannot coexist with the exact round-trip \
                 requirement above"
            ),
        ),
    }
}

// Central finite differences confirm every sampled analytic gradient (at
// least 500 samples across both layer kinds, K=3, L=2) at 1e-4 relative
// tolerance, within a two-minute budget.
#[test]
fn a08_analytic_gradients_match_finite_differences() {
    let _serial = serial();
    let id = "a08 gradient-checks";
    let start = Instant::now();
    let spec = SyntheticSpec {
        num_nodes: 12,
        num_classes: 2,
        heterophily: 0.3,
        seed: 108,
        ..SyntheticSpec::default()
    };
    let ds = gen_dataset(&spec).unwrap();
    let mask: Vec<usize> = (0..ds.num_nodes()).collect();
    let mut total_checked = 0;
    let mut max_rel: f64 = 0.0;
    for kind in [LayerKind::PolyNsd, LayerKind::Nsd] {
        let cfg = ModelConfig {
            layer_kind: kind,
            num_layers: 2,
            degree: 3,
            stalk_dim: 2,
            hidden_channels: 7,
            learner_hidden: 12,
            ..ModelConfig::default()
        };
        let mut prng = ChaCha8Rng::seed_from_u64(208);
        let params = ModelParams::init(&cfg, ds.num_features(), ds.num_classes, &mut prng);
        // Central-difference step 2.5e-6 balances O(h^2) truncation from the
        // saturated tanh units against eps/h roundoff; 1e-5 already shows
        // visible truncation on the most curved coordinates.
        let report = finite_difference_report(
            &params,
            &ds.graph,
            &ds.features,
            &ds.labels,
            &mask,
            cfg.layer_settings(),
            1,
            2.5e-6,
            1e-4,
        )
        .unwrap();
        if report.failed > 0 {
            fail(
                id,
                &format!(
                    "{kind:?}: {} of {} sampled gradients disagree (max rel err {:.3e})",
                    report.failed, report.checked, report.max_rel_err
                ),
            );
        }
        total_checked += report.checked;
        max_rel = max_rel.max(report.max_rel_err);
    }
    let t = start.elapsed().as_secs_f64();
    if total_checked < 500 {
        fail(id, &format!("only {total_checked} gradients cleared the check floor"));
    }
    if t >= 120.0 {
        fail(id, &format!("runtime {t:.1}s exceeds 120s budget"));
    }
    pass(
        id,
        &format!("{total_checked} gradients across both layer kinds, max rel err {max_rel:.2e}, {t:.1}s"),
    );
}

// The rewiring recipe is calibrated: at N=1000 and rewire probability 1 the
// inter-class edge fraction, averaged over 20 seeds, tracks the requested
// heterophily within 0.03 at het in {0, 0.25, 0.5, 0.75, 1}.
#[test]
fn a09_synthetic_heterophily_is_calibrated() {
    let _serial = serial();
    let id = "a09 heterophily-calibration";
    let mut worst: f64 = 0.0;
    for (i, het) in [0.0, 0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
        let mut total = 0.0;
        for s in 0..20u64 {
            let spec = SyntheticSpec {
                num_nodes: 1000,
                heterophily: het,
                seed: 1000 * (i as u64 + 1) + s,
                ..SyntheticSpec::default()
            };
            let ds = gen_dataset(&spec).unwrap();
            total += 1.0 - homophily(&ds.graph, &ds.labels);
        }
        let mean = total / 20.0;
        let err = (mean - het).abs();
        worst = worst.max(err);
        if err > 0.03 {
            fail(id, &format!("het={het}: mean inter-class fraction {mean:.4} off by {err:.4}"));
        }
    }
    pass(id, &format!("five het levels x 20 seeds at N=1000, max deviation {worst:.4}"));
}

// Scaled-down stress test: the diagonal polynomial model (d=2, C=16, K=8,
// L=2) reaches mean test accuracy >= 0.90 over 3 seeds on the heterophilic
// synthetic benchmark (N=500, n_c=3, K_deg=5, het=0.9, sigma=0) within 1500
// epochs, beats the graph-blind perceptron (L=0) by >= 5 points on the same
// data, and finishes inside 10 minutes.
#[test]
fn a10_stress_training_beats_target_and_perceptron() {
    let _serial = serial();
    let id = "a10 heterophilic-stress-training";
    let start = Instant::now();
    let spec = SyntheticSpec {
        num_nodes: 500,
        base_degree: 5,
        num_classes: 3,
        heterophily: 0.9,
        feat_noise: 0.0,
        regime: Regime::RiSNN,
        seed: 100,
        ..SyntheticSpec::default()
    };
    let model = ModelConfig {
        layer_kind: LayerKind::PolyNsd,
        num_layers: 2,
        stalk_dim: 2,
        hidden_channels: 16,
        degree: 8,
        map_kind: MapKind::Diagonal,
        input_dropout: 0.2,
        layer_dropout: 0.2,
        learning_rate: 0.02,
        max_epochs: 1500,
        patience: 100,
        seed: 1,
        ..ModelConfig::default()
    };
    let mean_acc = |cfg: &ModelConfig| -> f64 {
        let mut total = 0.0;
        for s in 0..3u64 {
            let mut spec_s = spec.clone();
            spec_s.seed = spec.seed.wrapping_add(s);
            let ds = gen_dataset(&spec_s).unwrap();
            let mut cfg_s = cfg.clone();
            cfg_s.seed = cfg.seed.wrapping_add(s);
            let out = train(&cfg_s, &ds).unwrap();
            if out.report.status != RunStatus::Ok {
                fail(id, &format!("seed {s}: run ended {:?}", out.report.status));
            }
            if out.report.epochs.len() > 1500 {
                fail(id, &format!("seed {s}: {} epochs exceeds 1500", out.report.epochs.len()));
            }
            total += out.report.test_accuracy;
        }
        total / 3.0
    };
    let poly = mean_acc(&model);
    let perceptron = mean_acc(&ModelConfig {
        num_layers: 0,
        ..model.clone()
    });
    let t = start.elapsed().as_secs_f64();
    if poly < 0.90 {
        fail(id, &format!("mean test accuracy {poly:.4} below 0.90"));
    }
    if poly - perceptron < 0.05 {
        fail(
            id,
            &format!("margin over perceptron {:.4} below 5 points", poly - perceptron),
        );
    }
    if t >= 600.0 {
        fail(id, &format!("runtime {t:.1}s exceeds 600s budget"));
    }
    pass(
        id,
        &format!("mean accuracy {poly:.4} vs perceptron {perceptron:.4}, {t:.0}s"),
    );
}

// Sanity floor on real data: when Cora files are supplied (POLYNSD_CORA_DIR
// or data/cora at the repository root), the default diagonal model reaches
// >= 0.75 test accuracy on split 0 and the measured homophily is 0.81 +-
// 0.01. Skipped, not failed, when the files are absent.
#[test]
fn a11_cora_sanity_floor_when_files_present() {
    let _serial = serial();
    let id = "a11 cora-sanity-floor";
    let dir = std::env::var("POLYNSD_CORA_DIR").map(std::path::PathBuf::from).unwrap_or_else(|_| {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora")
    });
    if !dir.join("edges.tsv").is_file() {
        println!("acceptance {id}: SKIP (no dataset at {}; set POLYNSD_CORA_DIR)", dir.display());
        return;
    }
    let paths = polynsd::dataset::DatasetPaths {
        edges: dir.join("edges.tsv"),
        features: dir.join("features.csv"),
        labels: dir.join("labels.txt"),
        splits: dir.join("splits.json"),
        split_index: 0,
    };
    let ds = Dataset::load(&paths).unwrap();
    let h = homophily(&ds.graph, &ds.labels);
    if !(0.80..=0.82).contains(&h) {
        fail(id, &format!("homophily {h:.4} outside 0.81 +- 0.01"));
    }
    let out = train(&ModelConfig::default(), &ds).unwrap();
    let acc = out.report.test_accuracy;
    if acc < 0.75 {
        fail(id, &format!("test accuracy {acc:.4} below the 0.75 floor"));
    }
    pass(id, &format!("split 0 accuracy {acc:.4}, homophily {h:.4}"));
}

// Filter cost is linear in the degree: wall time of cheb_apply over
// K in {1, 2, 4, 8, 16, 32} on a 5000-node sparse instance fits a line with
// R^2 >= 0.95, and the parameter count grows by exactly num_layers per unit
// of K.
#[test]
fn a12_filter_cost_scales_linearly_in_degree() {
    let _serial = serial();
    let id = "a12 degree-cost-scaling";
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let n = 5000;
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (v - 1, v)).collect();
    for _ in 0..2 * n {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            edges.push((u, v));
        }
    }
    let graph = Graph::build(n, &edges).unwrap();
    let sheaf = SheafStructure::random(graph, 2, MapKind::Diagonal, 1.0, &mut rng);
    let l = assemble_laplacian(&sheaf).unwrap();
    let norm = normalize_laplacian(&l, 1e-8).unwrap();
    let rescaled = rescale(&norm, 2.0).unwrap();
    let x = random_cochain(&mut rng, n, 2, 4);

    let degrees = [1usize, 2, 4, 8, 16, 32];
    let mut points = Vec::new();
    for &k in &degrees {
        let theta = vec![1.0 / (k + 1) as f64; k + 1];
        let _ = cheb_apply(&rescaled, &theta, &x).unwrap();
        let mut reps: Vec<f64> = (0..5)
            .map(|_| {
                let t0 = Instant::now();
                let _ = cheb_apply(&rescaled, &theta, &x).unwrap();
                t0.elapsed().as_secs_f64()
            })
            .collect();
        reps.sort_by(f64::total_cmp);
        points.push((k as f64, reps[2]));
    }
    let m = points.len() as f64;
    let (sx, sy): (f64, f64) = (points.iter().map(|p| p.0).sum(), points.iter().map(|p| p.1).sum());
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let intercept = (sy - slope * sx) / m;
    let mean_y = sy / m;
    let ss_res: f64 = points.iter().map(|p| (p.1 - (intercept + slope * p.0)).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    if r2 < 0.95 {
        let detail: Vec<String> = points.iter().map(|p| format!("K={} {:.1}ms", p.0, p.1 * 1e3)).collect();
        fail(id, &format!("R^2 = {r2:.4} below 0.95 ({})", detail.join(", ")));
    }

    // Chebyshev coefficients are the only per-degree parameters: +1 degree
    // adds exactly one scalar per layer.
    for layers in [1usize, 2, 3] {
        for k in [1usize, 2, 4, 8] {
            let cfg = |degree| ModelConfig {
                num_layers: layers,
                degree,
                ..ModelConfig::default()
            };
            let step = param_count_formula(&cfg(k + 1), 15, 3) - param_count_formula(&cfg(k), 15, 3);
            if step != layers {
                fail(id, &format!("L={layers}, K={k}: parameter step {step} != {layers}"));
            }
        }
    }
    pass(id, &format!("R^2 = {r2:.4}, parameter step equals num_layers"));
}
