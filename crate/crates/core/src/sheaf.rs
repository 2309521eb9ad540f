//! Cellular sheaves on graphs: restriction maps, coboundary, validation.
//!
//! Every node and edge carries a stalk R^d. An edge e = (u, v) with u < v
//! holds two restriction maps F_{u -| e} and F_{v -| e}; the coboundary of a
//! vertex cochain x is, per edge,
//!
//! ```text
//! (delta x)_e = sqrt(w_e) * (F_{v -| e} x_v - F_{u -| e} x_u)
//! ```
//!
//! with the sign fixed by the canonical orientation u -> v.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cochain::Cochain;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Restriction-map family. Determines the parameter count per map:
/// d (Diagonal), d(d-1)/2 (Orthogonal, Cayley parameters), d*d (General).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapKind {
    /// Diagonal d x d maps.
    Diagonal,
    /// Orthogonal maps parameterized by the Cayley transform of a
    /// skew-symmetric matrix.
    Orthogonal,
    /// Unconstrained dense d x d maps.
    General,
}

impl MapKind {
    pub fn param_count(self, d: usize) -> usize {
        match self {
            MapKind::Diagonal => d,
            MapKind::Orthogonal => d * (d - 1) / 2,
            MapKind::General => d * d,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Diagonal => "Diagonal",
            MapKind::Orthogonal => "Orthogonal",
            MapKind::General => "General",
        }
    }
}

/// Skew-symmetric matrix from its strict upper triangle, row-major:
/// S[i][j] = params[k], S[j][i] = -params[k] for i < j.
pub fn skew_from_params(d: usize, params: &[f64]) -> Result<DMatrix<f64>> {
    let expected = d * (d - 1) / 2;
    if params.len() != expected {
        return Err(Error::ParamCount {
            kind: "Orthogonal",
            d,
            expected,
            found: params.len(),
        });
    }
    let mut s = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            s[(i, j)] = params[k];
            s[(j, i)] = -params[k];
            k += 1;
        }
    }
    Ok(s)
}

/// Cayley transform Q = (I - S)(I + S)^{-1} of a skew-symmetric S.
///
/// Q is orthogonal for every real skew-symmetric S, and Cayley(0) = I.
pub fn cayley(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(cayley_parts(s)?.0)
}

/// (Q, (I + S)^{-1}); the training path keeps the inverse for the backward
/// pass.
pub(crate) fn cayley_parts(s: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = s.nrows();
    let i = DMatrix::identity(d, d);
    let plus = &i + s;
    let inv = plus.try_inverse().ok_or(Error::CayleySingular)?;
    Ok(((&i - s) * &inv, inv))
}

/// Build one restriction map from raw parameters.
///
/// Diagonal and General parameters are used verbatim (any squashing, e.g.
/// tanh, is the caller's job); Orthogonal parameters feed the Cayley
/// transform. General parameters are row-major.
pub fn restriction_from_params(kind: MapKind, d: usize, params: &[f64]) -> Result<DMatrix<f64>> {
    let expected = kind.param_count(d);
    if params.len() != expected {
        return Err(Error::ParamCount {
            kind: kind.name(),
            d,
            expected,
            found: params.len(),
        });
    }
    match kind {
        MapKind::Diagonal => {
            let mut m = DMatrix::zeros(d, d);
            for i in 0..d {
                m[(i, i)] = params[i];
            }
            Ok(m)
        }
        MapKind::Orthogonal => cayley(&skew_from_params(d, params)?),
        MapKind::General => Ok(DMatrix::from_row_slice(d, d, params)),
    }
}

/// A cellular sheaf over a graph: one pair of restriction maps per canonical
/// edge, plus optional positive edge weights (default 1).
#[derive(Debug, Clone)]
pub struct SheafStructure {
    pub graph: Graph,
    pub d: usize,
    pub kind: MapKind,
    /// maps[e] = (F_{u -| e}, F_{v -| e}) for graph.edges()[e] = (u, v).
    pub maps: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    /// Per-edge weight w_e > 0; None means all ones.
    pub weights: Option<Vec<f64>>,
}

impl SheafStructure {
    pub fn new(
        graph: Graph,
        d: usize,
        kind: MapKind,
        maps: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        if maps.len() != graph.num_edges() {
            return Err(Error::ShapeMismatch {
                context: "restriction map list",
                expected: format!("{} edge pairs", graph.num_edges()),
                found: format!("{}", maps.len()),
            });
        }
        let sheaf = Self {
            graph,
            d,
            kind,
            maps,
            weights: None,
        };
        let report = sheaf.validate();
        for v in &report.violations {
            if matches!(v.kind, ViolationKind::ShapeMismatch { .. }) {
                return Err(Error::ShapeMismatch {
                    context: "restriction map",
                    expected: format!("{d}x{d}"),
                    found: v.kind.describe(),
                });
            }
        }
        Ok(sheaf)
    }

    /// Identity sheaf: every restriction map is I_d.
    pub fn identity(graph: Graph, d: usize) -> Self {
        let eye = DMatrix::identity(d, d);
        let maps = vec![(eye.clone(), eye.clone()); graph.num_edges()];
        Self {
            graph,
            d,
            kind: MapKind::General,
            maps,
            weights: None,
        }
    }

    /// Random sheaf for test corpora: parameters drawn i.i.d. from
    /// U(-scale, scale), mapped through the family's parameterization.
    pub fn random<R: Rng>(graph: Graph, d: usize, kind: MapKind, scale: f64, rng: &mut R) -> Self {
        let n_params = kind.param_count(d);
        let mut maps = Vec::with_capacity(graph.num_edges());
        for _ in 0..graph.num_edges() {
            let mut pair = Vec::with_capacity(2);
            for _ in 0..2 {
                let params: Vec<f64> =
                    (0..n_params).map(|_| rng.gen_range(-scale..scale)).collect();
                pair.push(restriction_from_params(kind, d, &params).expect("param count fixed"));
            }
            let f_v = pair.pop().unwrap();
            let f_u = pair.pop().unwrap();
            maps.push((f_u, f_v));
        }
        Self {
            graph,
            d,
            kind,
            maps,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.graph.num_edges() {
            return Err(Error::ShapeMismatch {
                context: "edge weights",
                expected: format!("{}", self.graph.num_edges()),
                found: format!("{}", weights.len()),
            });
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn weight(&self, edge: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[edge])
    }

    /// Flip the stored orientation of every edge. Reversing e = (u -> v)
    /// negates the coboundary row (delta x)_e = F_v x_v - F_u x_u, which in
    /// the fixed (map_u, map_v) storage convention means negating both maps;
    /// delta^T delta is unchanged, which tests assert.
    pub fn flip_orientations(&self) -> Self {
        let mut flipped = self.clone();
        for (a, b) in &mut flipped.maps {
            *a = -a.clone();
            *b = -b.clone();
        }
        flipped
    }

    /// Coboundary: edge cochain with (delta x)_e = sqrt(w_e) (F_v x_v - F_u x_u),
    /// one d-vector per edge and channel, edge-major layout.
    pub fn coboundary_apply(&self, x: &Cochain) -> Result<Cochain> {
        if x.num_nodes() != self.graph.num_nodes() || x.d() != self.d {
            return Err(Error::ShapeMismatch {
                context: "coboundary input",
                expected: format!("{} nodes x d={}", self.graph.num_nodes(), self.d),
                found: format!("{} nodes x d={}", x.num_nodes(), x.d()),
            });
        }
        let d = self.d;
        let c = x.channels();
        let mut out = Cochain::zeros(self.graph.num_edges(), d, c);
        for (e, &(u, v)) in self.graph.edges().iter().enumerate() {
            let sw = self.weight(e).sqrt();
            let (f_u, f_v) = &self.maps[e];
            for i in 0..d {
                for j in 0..d {
                    let (a_v, a_u) = (f_v[(i, j)], f_u[(i, j)]);
                    for ch in 0..c {
                        *out.at_mut(e, i, ch) += sw
                            * (a_v * x.get(v as usize, j, ch) - a_u * x.get(u as usize, j, ch));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (e, (f_u, f_v)) in self.maps.iter().enumerate() {
            for (side, m) in [("u", f_u), ("v", f_v)] {
                if m.nrows() != self.d || m.ncols() != self.d {
                    violations.push(SheafViolation {
                        edge: e,
                        side,
                        kind: ViolationKind::ShapeMismatch {
                            rows: m.nrows(),
                            cols: m.ncols(),
                        },
                    });
                    continue;
                }
                if let Some((i, j)) = m
                    .iter()
                    .position(|v| !v.is_finite())
                    .map(|p| (p % self.d, p / self.d))
                {
                    violations.push(SheafViolation {
                        edge: e,
                        side,
                        kind: ViolationKind::NonFinite { row: i, col: j },
                    });
                    continue;
                }
                if self.kind == MapKind::Orthogonal {
                    let residual = (m.transpose() * m - DMatrix::identity(self.d, self.d)).norm();
                    if residual > 1e-10 {
                        violations.push(SheafViolation {
                            edge: e,
                            side,
                            kind: ViolationKind::NotOrthogonal { residual },
                        });
                    }
                }
            }
        }
        ValidationReport { violations }
    }
}

/// One structural problem found in a sheaf.
#[derive(Debug, Clone)]
pub struct SheafViolation {
    pub edge: usize,
    /// Which endpoint's map: "u" or "v".
    pub side: &'static str,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone)]
pub enum ViolationKind {
    ShapeMismatch { rows: usize, cols: usize },
    NonFinite { row: usize, col: usize },
    NotOrthogonal { residual: f64 },
}

impl ViolationKind {
    pub fn describe(&self) -> String {
        match self {
            ViolationKind::ShapeMismatch { rows, cols } => format!("{rows}x{cols}"),
            ViolationKind::NonFinite { row, col } => format!("non-finite at ({row}, {col})"),
            ViolationKind::NotOrthogonal { residual } => {
                format!("||Q^T Q - I||_F = {residual:.3e}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub violations: Vec<SheafViolation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_clean() {
            return write!(f, "sheaf valid");
        }
        for v in &self.violations {
            writeln!(
                f,
                "edge {} side {}: {}",
                v.edge,
                v.side,
                v.kind.describe()
            )?;
        }
        Ok(())
    }
}
