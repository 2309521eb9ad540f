//! Experiment configuration, sweep execution, and the numeric cross-check
//! suite behind the CLI's oracle-check subcommand.
//!
//! A sweep varies exactly one model field (the axis) over a value list and
//! repeats each point over `num_seeds` seeds. Seeds substitute for dataset
//! splits: run s rotates to split (split_index + s) mod num_splits on file
//! datasets, and regenerates with seed + s on synthetic data, while the
//! model trains with its own seed + s. Failed runs (INS divergence, OOM
//! budget) are recorded as rows and never abort the sweep.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_splits, Dataset, DatasetPaths};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::laplacian::{assemble_laplacian, normalize_laplacian, BlockSparseOperator};
use crate::model::{param_count_formula, ModelConfig, ModelParams};
use crate::oracle::SpectralOracle;
use crate::results::{ResultRow, ResultsTable};
use crate::sheaf::{MapKind, SheafStructure};
use crate::spectral::{
    chebyshev_to_monomial, dirichlet_energy, gershgorin_bound, lambda_max, rescale,
    FilterSpec, LambdaMaxStrategy,
};
use crate::synth::{gen_dataset, SyntheticSpec};
use crate::train::{train, RunStatus};

/// Model field a sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "degree_K")]
    DegreeK,
    #[serde(rename = "num_layers")]
    NumLayers,
    #[serde(rename = "stalk_dim")]
    StalkDim,
    #[serde(rename = "hidden_channels")]
    HiddenChannels,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::DegreeK => "degree_K",
            SweepAxis::NumLayers => "num_layers",
            SweepAxis::StalkDim => "stalk_dim",
            SweepAxis::HiddenChannels => "hidden_channels",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::None,
            values: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    #[serde(rename = "csv")]
    Csv,
    #[serde(rename = "json")]
    Json,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    /// Seeds (and, on file datasets, splits) per sweep point.
    pub num_seeds: usize,
    /// Reject a run whose estimated operator memory exceeds this.
    pub memory_budget_bytes: Option<u64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            num_seeds: 1,
            memory_budget_bytes: None,
        }
    }
}

/// Where the data comes from: exactly one of `files` or `synthetic`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub files: Option<DatasetPaths>,
    pub synthetic: Option<SyntheticSpec>,
    /// Optional dataset name for statistics cross-checks ("cora", "texas").
    pub name: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub run: RunSettings,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        match (&self.data.files, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data: give either files or synthetic, not both".into(),
                ));
            }
            (None, None) => {
                return Err(Error::Config(
                    "data: either files or synthetic is required".into(),
                ));
            }
            _ => {}
        }
        if let Some(spec) = &self.data.synthetic {
            spec.validate()?;
        }
        if self.run.num_seeds == 0 {
            return Err(Error::Config("run.num_seeds must be at least 1".into()));
        }
        match self.sweep.axis {
            SweepAxis::None => {
                if !self.sweep.values.is_empty() {
                    return Err(Error::Config(
                        "sweep.values must be empty when sweep.axis is none".into(),
                    ));
                }
            }
            _ => {
                if self.sweep.values.is_empty() {
                    return Err(Error::Config(format!(
                        "sweep over {} needs a nonempty values list",
                        self.sweep.axis.name()
                    )));
                }
                // Degree 0 (constant filter) and 0 layers (perceptron) are
                // legal degenerate points; dimensions are not.
                let dimension_axis = matches!(
                    self.sweep.axis,
                    SweepAxis::StalkDim | SweepAxis::HiddenChannels
                );
                if dimension_axis && self.sweep.values.contains(&0) {
                    return Err(Error::Config(format!(
                        "sweep value 0 is not a valid {}",
                        self.sweep.axis.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Copy of `base` with only the swept field changed.
pub fn apply_axis(base: &ModelConfig, axis: SweepAxis, value: u64) -> ModelConfig {
    let mut cfg = base.clone();
    let v = value as usize;
    match axis {
        SweepAxis::None => {}
        SweepAxis::DegreeK => cfg.degree = v,
        SweepAxis::NumLayers => cfg.num_layers = v,
        SweepAxis::StalkDim => cfg.stalk_dim = v,
        SweepAxis::HiddenChannels => cfg.hidden_channels = v,
    }
    cfg
}

/// Materialize the dataset for seed offset `s`.
pub fn dataset_for_seed(data: &DataConfig, s: u64) -> Result<Dataset> {
    if let Some(spec) = &data.synthetic {
        let shifted = SyntheticSpec {
            seed: spec.seed.wrapping_add(s),
            ..spec.clone()
        };
        return gen_dataset(&shifted);
    }
    let paths = data
        .files
        .as_ref()
        .ok_or_else(|| Error::Config("no data source configured".into()))?;
    let num_splits = load_splits(&paths.splits)?.len();
    if num_splits == 0 {
        return Err(Error::Dataset(format!(
            "{}: splits file holds no splits",
            paths.splits.display()
        )));
    }
    let rotated = DatasetPaths {
        split_index: (paths.split_index + s as usize) % num_splits,
        ..paths.clone()
    };
    Dataset::load(&rotated)
}

/// Run the full sweep; one row per (point, seed).
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let points: Vec<Option<u64>> = match config.sweep.axis {
        SweepAxis::None => vec![None],
        _ => config.sweep.values.iter().map(|&v| Some(v)).collect(),
    };
    let mut table = ResultsTable::new();
    for &point in &points {
        let point_cfg = match point {
            Some(v) => apply_axis(&config.model, config.sweep.axis, v),
            None => config.model.clone(),
        };
        point_cfg.validate()?;
        for s in 0..config.run.num_seeds as u64 {
            let data = dataset_for_seed(&config.data, s)?;
            let mut cfg = point_cfg.clone();
            cfg.seed = config.model.seed.wrapping_add(s);
            let row = run_one(&cfg, &data, point, config.run.memory_budget_bytes)?;
            table.push(row);
        }
    }
    Ok(table)
}

/// Train one configuration, mapping divergence and budget overruns to row
/// statuses instead of errors.
fn run_one(
    cfg: &ModelConfig,
    data: &Dataset,
    axis_value: Option<u64>,
    budget: Option<u64>,
) -> Result<ResultRow> {
    let params = param_count_formula(cfg, data.num_features(), data.num_classes);
    if let Some(budget) = budget {
        let needed = BlockSparseOperator::estimate_bytes(
            data.graph.num_nodes(),
            data.graph.num_edges(),
            cfg.stalk_dim,
        );
        if needed > budget {
            return Ok(ResultRow {
                axis_value,
                seed: cfg.seed,
                accuracy: f64::NAN,
                loss: f64::NAN,
                params,
                runtime_s: 0.0,
                status: RunStatus::Oom,
            });
        }
    }
    match train(cfg, data) {
        Ok(out) => {
            let r = &out.report;
            let loss = if r.best_epoch > 0 {
                r.epochs[r.best_epoch - 1].val_loss
            } else {
                f64::NAN
            };
            Ok(ResultRow {
                axis_value,
                seed: cfg.seed,
                accuracy: r.test_accuracy,
                loss,
                params: r.param_count,
                runtime_s: r.wall_seconds,
                status: r.status,
            })
        }
        Err(Error::OutOfMemoryBudget { .. }) => Ok(ResultRow {
            axis_value,
            seed: cfg.seed,
            accuracy: f64::NAN,
            loss: f64::NAN,
            params,
            runtime_s: 0.0,
            status: RunStatus::Oom,
        }),
        Err(e) => Err(e),
    }
}

/// One line of the oracle-check report.
#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Cross-check the numeric core against its independent oracles on a small
/// random operator: dense eigendecomposition consistency, spectral
/// enclosures, the Dirichlet energy identity, Chebyshev-vs-monomial filter
/// agreement, and analytic gradients vs finite differences.
pub fn oracle_check(seed: u64) -> Result<Vec<OracleCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let graph = Graph::build(
        8,
        &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 0), (0, 4), (2, 6)],
    )?;
    let sheaf = SheafStructure::random(graph.clone(), 2, MapKind::General, 0.8, &mut rng);
    let l = assemble_laplacian(&sheaf)?;
    let oracle = SpectralOracle::new(&l)?;

    let recon = oracle.reconstruction_defect(&l.to_dense());
    let ortho = oracle.orthonormality_defect();
    checks.push(OracleCheck {
        name: "dense eigendecomposition reconstructs the operator",
        pass: recon < 1e-8 && ortho < 1e-10,
        detail: format!("reconstruction defect {recon:.2e}, orthonormality defect {ortho:.2e}"),
    });

    let lam_min = oracle.lambda_min();
    checks.push(OracleCheck {
        name: "sheaf Laplacian is positive semidefinite",
        pass: lam_min > -1e-9,
        detail: format!("lambda_min {lam_min:.3e}"),
    });

    let gersh = gershgorin_bound(&l);
    let power = lambda_max(&l, LambdaMaxStrategy::power_default());
    let truth = oracle.lambda_max();
    let enclosed = truth <= gersh + 1e-9
        && power.value + 1e-9 >= truth
        && power.value <= gersh + 1e-9;
    checks.push(OracleCheck {
        name: "lambda_max estimates enclose the dense eigenvalue",
        pass: enclosed,
        detail: format!(
            "dense {truth:.6}, power {:.6}, gershgorin {gersh:.6}",
            power.value
        ),
    });

    let norm = normalize_laplacian(&l, 1e-8)?;
    let norm_max = SpectralOracle::new(&norm)?.lambda_max();
    checks.push(OracleCheck {
        name: "normalized operator spectrum stays within [0, 2]",
        pass: norm_max <= 2.0 + 1e-9,
        detail: format!("lambda_max {norm_max:.9}"),
    });

    let x = random_cochain(8, 2, 2, &mut rng);
    let energies = dirichlet_energy(&l, &x)?;
    let by_matvec = quadratic_form(&l, &x)?;
    let mut max_gap = 0.0f64;
    for (a, b) in energies.iter().zip(&by_matvec) {
        max_gap = max_gap.max((a - b).abs() / (1.0 + a.abs()));
    }
    checks.push(OracleCheck {
        name: "Dirichlet energy matches the quadratic form",
        pass: max_gap < 1e-10 && energies.iter().all(|&e| e > -1e-10),
        detail: format!("max relative gap {max_gap:.2e}"),
    });

    let rescaled = rescale(&l, truth.max(1e-12))?;
    let spec = FilterSpec::chebyshev(vec![0.3, -0.2, 0.5, 0.1, -0.4]);
    let theta = spec.theta();
    let cheb = crate::spectral::cheb_apply(&rescaled, &theta, &x)?;
    let mono_coeffs = chebyshev_to_monomial(&theta);
    let mono = crate::spectral::monomial_apply(&rescaled, &mono_coeffs, &x)?;
    let mut filter_gap = 0.0f64;
    for (a, b) in cheb.as_slice().iter().zip(mono.as_slice()) {
        filter_gap = filter_gap.max((a - b).abs());
    }
    checks.push(OracleCheck {
        name: "Chebyshev recurrence agrees with expanded monomials",
        pass: filter_gap < 1e-10,
        detail: format!("max coefficient gap {filter_gap:.2e}"),
    });

    let cfg = ModelConfig {
        num_layers: 1,
        stalk_dim: 2,
        hidden_channels: 2,
        degree: 2,
        learner_hidden: 3,
        ..ModelConfig::default()
    };
    let mut prng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let params = ModelParams::init(&cfg, 3, 2, &mut prng);
    let raw = DMatrix::from_fn(8, 3, |_, _| prng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
    let mask: Vec<usize> = (0..8).collect();
    let fd = crate::grad::finite_difference_report(
        &params,
        &graph,
        &raw,
        &labels,
        &mask,
        cfg.layer_settings(),
        3,
        1e-5,
        1e-4,
    )?;
    checks.push(OracleCheck {
        name: "analytic gradients match finite differences",
        pass: fd.failed == 0 && fd.checked >= 10,
        detail: format!(
            "{} checked, {} failed, max relative error {:.2e}",
            fd.checked, fd.failed, fd.max_rel_err
        ),
    });

    Ok(checks)
}

fn random_cochain(n: usize, d: usize, c: usize, rng: &mut ChaCha8Rng) -> crate::cochain::Cochain {
    let mut x = crate::cochain::Cochain::zeros(n, d, c);
    for v in x.as_mut_slice() {
        *v = rng.gen_range(-1.0..1.0);
    }
    x
}

/// Per-channel x^T L x through the sparse matvec.
fn quadratic_form(l: &BlockSparseOperator, x: &crate::cochain::Cochain) -> Result<Vec<f64>> {
    let y = l.matvec(x)?;
    let mut out = vec![0.0; x.channels()];
    for ch in 0..x.channels() {
        let mut acc = 0.0;
        for node in 0..x.num_nodes() {
            for k in 0..x.d() {
                acc += x.get(node, k, ch) * y.get(node, k, ch);
            }
        }
        out[ch] = acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerKind;

    fn tiny_synth() -> SyntheticSpec {
        SyntheticSpec {
            num_nodes: 40,
            base_degree: 4,
            num_classes: 2,
            heterophily: 0.2,
            seed: 11,
            ..SyntheticSpec::default()
        }
    }

    fn tiny_experiment() -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig {
                synthetic: Some(tiny_synth()),
                ..DataConfig::default()
            },
            model: ModelConfig {
                num_layers: 1,
                stalk_dim: 2,
                hidden_channels: 2,
                degree: 2,
                learner_hidden: 4,
                max_epochs: 5,
                patience: 5,
                ..ModelConfig::default()
            },
            sweep: SweepConfig::default(),
            run: RunSettings::default(),
        }
    }

    #[test]
    fn sweep_produces_point_times_seed_rows() {
        let mut cfg = tiny_experiment();
        cfg.sweep = SweepConfig {
            axis: SweepAxis::DegreeK,
            values: vec![1, 2],
        };
        cfg.run.num_seeds = 2;
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.rows[0].axis_value, Some(1));
        assert_eq!(table.rows[3].axis_value, Some(2));
        assert!(table.rows.iter().all(|r| r.status == RunStatus::Ok));
        // Seeds advance per run within a point.
        assert_eq!(table.rows[0].seed, cfg.model.seed);
        assert_eq!(table.rows[1].seed, cfg.model.seed + 1);
    }

    #[test]
    fn sweep_isolation_only_axis_field_changes() {
        let base = tiny_experiment().model;
        let swept = apply_axis(&base, SweepAxis::HiddenChannels, 9);
        assert_eq!(swept.hidden_channels, 9);
        let reverted = ModelConfig {
            hidden_channels: base.hidden_channels,
            ..swept
        };
        assert_eq!(reverted, base);
    }

    #[test]
    fn oom_budget_marks_row_without_aborting() {
        let mut cfg = tiny_experiment();
        cfg.run.memory_budget_bytes = Some(16);
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.rows[0].status, RunStatus::Oom);
        assert!(table.rows[0].accuracy.is_nan());
        assert!(table.rows[0].params > 0);
    }

    #[test]
    fn ins_runs_recorded_and_sweep_continues() {
        let mut cfg = tiny_experiment();
        cfg.model.learning_rate = 1e280;
        cfg.sweep = SweepConfig {
            axis: SweepAxis::NumLayers,
            values: vec![1, 2],
        };
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.status == RunStatus::Ins));
    }

    #[test]
    fn config_validation_rejects_inconsistencies() {
        let mut cfg = tiny_experiment();
        cfg.sweep.values = vec![3];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = tiny_experiment();
        cfg.run.num_seeds = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_experiment();
        cfg.data.synthetic = None;
        assert!(cfg.validate().is_err());

        let toml = r#"
[data.synthetic]
num_nodes = 40
base_degree = 4

[model]
layer_kind = "Nsd"

[sweep]
axis = "stalk_dim"
values = [1, 2]
"#;
        let parsed = ExperimentConfig::from_toml_str(toml).unwrap();
        assert_eq!(parsed.model.layer_kind, LayerKind::Nsd);
        assert_eq!(parsed.sweep.axis, SweepAxis::StalkDim);

        let err = ExperimentConfig::from_toml_str("[data]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("bogus")));
    }

    #[test]
    fn synthetic_seeds_rotate_datasets() {
        let cfg = tiny_experiment();
        let a = dataset_for_seed(&cfg.data, 0).unwrap();
        let b = dataset_for_seed(&cfg.data, 1).unwrap();
        assert_ne!(a.features, b.features);
        let a2 = dataset_for_seed(&cfg.data, 0).unwrap();
        assert_eq!(a.features, a2.features);
    }

    #[test]
    fn oracle_checks_all_pass() {
        let checks = oracle_check(5).unwrap();
        assert!(checks.len() >= 6);
        for c in &checks {
            assert!(c.pass, "{} failed: {}", c.name, c.detail);
        }
    }
}
