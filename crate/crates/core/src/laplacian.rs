//! Sheaf Laplacian assembly and block-sparse symmetric operators.
//!
//! L = delta^T delta has d x d blocks
//!
//! ```text
//! L_uu = sum_{u -| e} w_e F_{u -| e}^T F_{u -| e}
//! L_uv = -w_e F_{u -| e}^T F_{v -| e}        for e = (u, v)
//! ```
//!
//! The degree-normalized form is D^{-1/2} L D^{-1/2} with D the block
//! diagonal of L, each block regularized to D_v + eps I before the symmetric
//! inverse square root.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::cochain::Cochain;
use crate::error::{Error, Result};
use crate::sheaf::SheafStructure;

/// Default regularizer added to diagonal blocks before inversion.
pub const NORMALIZE_EPS: f64 = 1e-8;

/// Symmetric block-sparse operator on vertex cochains, stored as CSR over
/// node blocks. Every node keeps a diagonal block (possibly zero).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseOperator {
    num_nodes: usize,
    d: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockSparseOperator {
    /// Build from a block map; missing diagonal blocks are filled with zeros,
    /// columns within a row come out sorted.
    pub fn from_blocks(
        num_nodes: usize,
        d: usize,
        mut map: BTreeMap<(u32, u32), DMatrix<f64>>,
    ) -> Result<Self> {
        for u in 0..num_nodes as u32 {
            map.entry((u, u)).or_insert_with(|| DMatrix::zeros(d, d));
        }
        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        let mut col_idx = Vec::with_capacity(map.len());
        let mut blocks = Vec::with_capacity(map.len());
        row_ptr.push(0);
        let mut current_row = 0u32;
        for ((u, v), b) in map {
            if u as usize >= num_nodes || v as usize >= num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: u.max(v) as usize,
                    num_nodes,
                });
            }
            if b.nrows() != d || b.ncols() != d {
                return Err(Error::ShapeMismatch {
                    context: "operator block",
                    expected: format!("{d}x{d}"),
                    found: format!("{}x{}", b.nrows(), b.ncols()),
                });
            }
            while current_row < u {
                row_ptr.push(col_idx.len());
                current_row += 1;
            }
            col_idx.push(v);
            blocks.push(b);
        }
        while (row_ptr.len() as usize) < num_nodes + 1 {
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            num_nodes,
            d,
            row_ptr,
            col_idx,
            blocks,
        })
    }

    pub fn zeros(num_nodes: usize, d: usize) -> Self {
        Self::from_blocks(num_nodes, d, BTreeMap::new()).expect("empty block map is valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Total dimension N*d of the underlying vector space (per channel).
    pub fn dim(&self) -> usize {
        self.num_nodes * self.d
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Iterate stored blocks as (row node, col node, block).
    pub fn iter_blocks(&self) -> impl Iterator<Item = (u32, u32, &DMatrix<f64>)> {
        (0..self.num_nodes).flat_map(move |u| {
            (self.row_ptr[u]..self.row_ptr[u + 1]).map(move |k| {
                (u as u32, self.col_idx[k], &self.blocks[k])
            })
        })
    }

    pub(crate) fn iter_blocks_mut(
        &mut self,
    ) -> impl Iterator<Item = (u32, u32, &mut DMatrix<f64>)> + '_ {
        let mut row_of = vec![0u32; self.blocks.len()];
        for u in 0..self.num_nodes {
            for k in self.row_ptr[u]..self.row_ptr[u + 1] {
                row_of[k] = u as u32;
            }
        }
        let col_idx = &self.col_idx;
        self.blocks
            .iter_mut()
            .enumerate()
            .map(move |(k, b)| (row_of[k], col_idx[k], b))
    }

    pub fn block(&self, u: usize, v: usize) -> Option<&DMatrix<f64>> {
        let lo = self.row_ptr[u];
        let hi = self.row_ptr[u + 1];
        self.col_idx[lo..hi]
            .binary_search(&(v as u32))
            .ok()
            .map(|k| &self.blocks[lo + k])
    }

    pub(crate) fn block_mut(&mut self, u: usize, v: usize) -> Option<&mut DMatrix<f64>> {
        let lo = self.row_ptr[u];
        let hi = self.row_ptr[u + 1];
        match self.col_idx[lo..hi].binary_search(&(v as u32)) {
            Ok(k) => Some(&mut self.blocks[lo + k]),
            Err(_) => None,
        }
    }

    /// Diagonal block of a node (always present).
    pub fn diag_block(&self, u: usize) -> &DMatrix<f64> {
        self.block(u, u).expect("diagonal blocks always stored")
    }

    /// y = self * x, applied independently per channel.
    pub fn matvec(&self, x: &Cochain) -> Result<Cochain> {
        if x.num_nodes() != self.num_nodes || x.d() != self.d {
            return Err(Error::ShapeMismatch {
                context: "matvec input",
                expected: format!("{} nodes x d={}", self.num_nodes, self.d),
                found: format!("{} nodes x d={}", x.num_nodes(), x.d()),
            });
        }
        let mut y = Cochain::zeros(self.num_nodes, self.d, x.channels());
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// y = self * x without allocating; y is overwritten.
    pub fn matvec_into(&self, x: &Cochain, y: &mut Cochain) {
        let d = self.d;
        let c = x.channels();
        y.fill(0.0);
        for u in 0..self.num_nodes {
            for k in self.row_ptr[u]..self.row_ptr[u + 1] {
                let v = self.col_idx[k] as usize;
                let b = &self.blocks[k];
                for i in 0..d {
                    for j in 0..d {
                        let w = b[(i, j)];
                        if w == 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            *y.at_mut(u, i, ch) += w * x.get(v, j, ch);
                        }
                    }
                }
            }
        }
    }

    /// Largest symmetry defect max_{(u,v)} ||B_uv - B_vu^T||_max over stored
    /// blocks (missing transposed block counts as zero).
    pub fn symmetry_defect(&self) -> f64 {
        let mut defect: f64 = 0.0;
        for (u, v, b) in self.iter_blocks() {
            let bt = self.block(v as usize, u as usize);
            for i in 0..self.d {
                for j in 0..self.d {
                    let other = bt.map_or(0.0, |m| m[(j, i)]);
                    defect = defect.max((b[(i, j)] - other).abs());
                }
            }
        }
        defect
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.symmetry_defect() <= tol
    }

    /// Dense N*d x N*d materialization (tests and the spectral oracle).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (u, v, b) in self.iter_blocks() {
            for i in 0..self.d {
                for j in 0..self.d {
                    m[(u as usize * self.d + i, v as usize * self.d + j)] = b[(i, j)];
                }
            }
        }
        m
    }

    /// Operator with the same sparsity pattern and all-zero blocks (gradient
    /// accumulator shape).
    pub fn pattern_zeros(&self) -> Self {
        let mut out = self.clone();
        for b in out.blocks.iter_mut() {
            b.fill(0.0);
        }
        out
    }

    /// B_uv += scale * sum_ch a[u, :, ch] b[v, :, ch]^T on every stored
    /// block. This is the adjoint of matvec restricted to the pattern:
    /// off-pattern entries of the operator are structurally zero and carry
    /// no gradient.
    pub fn accumulate_outer(&mut self, a: &Cochain, b: &Cochain, scale: f64) {
        let d = self.d;
        let c = a.channels();
        debug_assert_eq!(c, b.channels());
        for (u, v, blk) in self.iter_blocks_mut() {
            let (u, v) = (u as usize, v as usize);
            for i in 0..d {
                for j in 0..d {
                    let mut s = 0.0;
                    for ch in 0..c {
                        s += a.get(u, i, ch) * b.get(v, j, ch);
                    }
                    blk[(i, j)] += scale * s;
                }
            }
        }
    }

    /// blocks += scale * other.blocks; the two operators must share a
    /// pattern.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert_eq!(self.col_idx, other.col_idx);
        for (b, o) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            *b += o * scale;
        }
    }

    /// alpha * self + beta * I as a new operator with the same pattern.
    pub fn scale_shift(&self, alpha: f64, beta: f64) -> Self {
        let mut out = self.clone();
        for (u, v, b) in out.iter_blocks_mut() {
            *b *= alpha;
            if u == v {
                for i in 0..b.nrows() {
                    b[(i, i)] += beta;
                }
            }
        }
        out
    }

    /// Estimated heap footprint of the stored blocks, for memory budgeting.
    pub fn estimate_bytes(num_nodes: usize, num_edges: usize, d: usize) -> u64 {
        let blocks = num_nodes as u64 + 2 * num_edges as u64;
        blocks * (d * d) as u64 * std::mem::size_of::<f64>() as u64
    }

    /// Debug dump: header "N d nnz", then one line per stored block,
    /// "u v b00 b01 ... b(d-1)(d-1)" row-major.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} {} {}\n",
            self.num_nodes,
            self.d,
            self.num_blocks()
        ));
        for (u, v, b) in self.iter_blocks() {
            out.push_str(&format!("{u} {v}"));
            for i in 0..self.d {
                for j in 0..self.d {
                    out.push_str(&format!(" {:.17e}", b[(i, j)]));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parse the [`BlockSparseOperator::dump`] format.
    pub fn parse_dump(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Dataset(format!("operator dump: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let head: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [n, d, nnz] = head[..] else {
            return Err(bad(format!("header needs 'N d nnz', got {header:?}")));
        };
        let mut map = BTreeMap::new();
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 + d * d {
                return Err(bad(format!(
                    "block line needs {} fields, got {}",
                    2 + d * d,
                    toks.len()
                )));
            }
            let u: u32 = toks[0].parse().map_err(|_| bad("bad row index".into()))?;
            let v: u32 = toks[1].parse().map_err(|_| bad("bad col index".into()))?;
            let vals: Vec<f64> = toks[2..]
                .iter()
                .map(|t| t.parse().map_err(|_| bad("bad block entry".into())))
                .collect::<Result<_>>()?;
            map.insert((u, v), DMatrix::from_row_slice(d, d, &vals));
        }
        if map.len() != nnz {
            return Err(bad(format!("header says {} blocks, found {}", nnz, map.len())));
        }
        Self::from_blocks(n, d, map)
    }
}

/// Assemble L = delta^T delta from a sheaf. Symmetric and PSD by
/// construction; every node gets a diagonal block even when isolated.
pub fn assemble_laplacian(sheaf: &SheafStructure) -> Result<BlockSparseOperator> {
    let d = sheaf.d;
    let n = sheaf.graph.num_nodes();
    let mut map: BTreeMap<(u32, u32), DMatrix<f64>> = BTreeMap::new();
    for u in 0..n as u32 {
        map.insert((u, u), DMatrix::zeros(d, d));
    }
    for (e, &(u, v)) in sheaf.graph.edges().iter().enumerate() {
        let w = sheaf.weight(e);
        let (f_u, f_v) = &sheaf.maps[e];
        if f_u.nrows() != d || f_u.ncols() != d || f_v.nrows() != d || f_v.ncols() != d {
            return Err(Error::ShapeMismatch {
                context: "restriction map in assembly",
                expected: format!("{d}x{d}"),
                found: format!("{}x{} / {}x{}", f_u.nrows(), f_u.ncols(), f_v.nrows(), f_v.ncols()),
            });
        }
        *map.get_mut(&(u, u)).unwrap() += f_u.transpose() * f_u * w;
        *map.get_mut(&(v, v)).unwrap() += f_v.transpose() * f_v * w;
        let off = -(f_u.transpose() * f_v) * w;
        map.insert((v, u), off.transpose());
        map.insert((u, v), off);
    }
    BlockSparseOperator::from_blocks(n, d, map)
}

/// Eigendecomposition of one diagonal block D_v together with the resulting
/// inverse square root R = (D_v + eps I)^{-1/2}; kept around so the training
/// path can pull gradients back through the matrix function.
#[derive(Debug, Clone)]
pub struct InvSqrtEigen {
    /// Orthonormal eigenvectors of D_v.
    pub q: DMatrix<f64>,
    /// Raw eigenvalues of D_v, pre-clamp.
    pub evals: Vec<f64>,
    pub eps: f64,
    /// Q f(Lambda) Q^T with f(l) = (max(l, 0) + eps)^{-1/2}.
    pub r: DMatrix<f64>,
}

impl InvSqrtEigen {
    /// Errors if any eigenvalue of the (supposedly PSD) block is below
    /// -1e-10; tiny negative round-off is clamped to zero before
    /// regularization.
    pub fn compute(a: &DMatrix<f64>, eps: f64, node: usize) -> Result<Self> {
        let eig = SymmetricEigen::new(a.clone());
        let evals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let mut fvals = eig.eigenvalues.clone();
        for lam in fvals.iter_mut() {
            if *lam < -1e-10 {
                return Err(Error::PsdViolation {
                    node,
                    eigenvalue: *lam,
                });
            }
            *lam = Self::f(eps, *lam);
        }
        let q = eig.eigenvectors;
        let r = &q * DMatrix::from_diagonal(&fvals) * q.transpose();
        Ok(Self { q, evals, eps, r })
    }

    #[inline]
    fn f(eps: f64, lam: f64) -> f64 {
        1.0 / (lam.max(0.0) + eps).sqrt()
    }

    /// Derivative of f; zero inside the clamp region.
    #[inline]
    fn f_prime(eps: f64, lam: f64) -> f64 {
        if lam > 0.0 {
            -0.5 * (lam + eps).powf(-1.5)
        } else {
            0.0
        }
    }

    /// Gradient on D given a gradient on R, via the divided-difference form
    /// of the matrix-function derivative: D_bar = Q (G .* (Q^T R_bar Q)) Q^T
    /// with G_ij = (f(l_i) - f(l_j)) / (l_i - l_j) and G_ii = f'(l_i).
    /// Valid for symmetric perturbations of D, which is the only kind the
    /// assembly produces.
    pub fn pullback(&self, rbar: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.evals.len();
        let inner = self.q.transpose() * rbar * &self.q;
        let mut scaled = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (li, lj) = (self.evals[i], self.evals[j]);
                let g = if (li - lj).abs() < 1e-9 {
                    Self::f_prime(self.eps, 0.5 * (li + lj))
                } else {
                    (Self::f(self.eps, li) - Self::f(self.eps, lj)) / (li - lj)
                };
                scaled[(i, j)] = g * inner[(i, j)];
            }
        }
        &self.q * scaled * self.q.transpose()
    }
}

/// Symmetric inverse square root of (A + eps I) for a symmetric PSD block A.
/// Errors if any eigenvalue of A is below -1e-10.
fn block_inv_sqrt(a: &DMatrix<f64>, eps: f64, node: usize) -> Result<DMatrix<f64>> {
    Ok(InvSqrtEigen::compute(a, eps, node)?.r)
}

/// Degree-normalized Laplacian D^{-1/2} L D^{-1/2} with per-block
/// regularization D_v + eps I. Zero rows of isolated nodes stay zero.
pub fn normalize_laplacian(l: &BlockSparseOperator, eps: f64) -> Result<BlockSparseOperator> {
    let d = l.d();
    let n = l.num_nodes();
    let mut inv_sqrt = Vec::with_capacity(n);
    for u in 0..n {
        inv_sqrt.push(block_inv_sqrt(l.diag_block(u), eps, u)?);
    }
    let mut map = BTreeMap::new();
    for (u, v, b) in l.iter_blocks() {
        let nb = &inv_sqrt[u as usize] * b * &inv_sqrt[v as usize];
        map.insert((u, v), nb);
    }
    BlockSparseOperator::from_blocks(n, d, map)
}

/// The per-node inverse square roots (D_v + eps I)^{-1/2} used by
/// normalization; the training path reuses them for the backward pass.
pub fn normalization_blocks(l: &BlockSparseOperator, eps: f64) -> Result<Vec<DMatrix<f64>>> {
    Ok(normalization_eigen(l, eps)?.into_iter().map(|e| e.r).collect())
}

/// Full eigendecomposition records of every diagonal block, for the
/// normalization backward pass.
pub fn normalization_eigen(l: &BlockSparseOperator, eps: f64) -> Result<Vec<InvSqrtEigen>> {
    (0..l.num_nodes())
        .map(|u| InvSqrtEigen::compute(l.diag_block(u), eps, u))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use nalgebra::dmatrix;

    fn p2_identity() -> BlockSparseOperator {
        let g = Graph::build(2, &[(0, 1)]).unwrap();
        assemble_laplacian(&SheafStructure::identity(g, 1)).unwrap()
    }

    #[test]
    fn p2_identity_laplacian() {
        let l = p2_identity();
        assert_eq!(l.to_dense(), dmatrix![1.0, -1.0; -1.0, 1.0]);
    }

    #[test]
    fn p2_scaled_maps() {
        // F_u = 2, F_v = 1 gives [[4, -2], [-2, 1]].
        let g = Graph::build(2, &[(0, 1)]).unwrap();
        let maps = vec![(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 1.0),
        )];
        let sheaf = SheafStructure::new(g, 1, crate::sheaf::MapKind::Diagonal, maps).unwrap();
        let l = assemble_laplacian(&sheaf).unwrap();
        assert_eq!(l.to_dense(), dmatrix![4.0, -2.0; -2.0, 1.0]);
    }

    #[test]
    fn p3_identity_eigenvalues() {
        let g = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        let l = assemble_laplacian(&SheafStructure::identity(g, 1)).unwrap();
        let mut eigs: Vec<f64> = SymmetricEigen::new(l.to_dense())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eigs.sort_by(f64::total_cmp);
        for (got, want) in eigs.iter().zip([0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn matvec_matches_dense() {
        let l = p2_identity();
        let x = Cochain::from_vec(2, 1, 1, vec![1.0, 0.0]).unwrap();
        let y = l.matvec(&x).unwrap();
        assert_eq!(y.as_slice(), &[1.0, -1.0]);
        let y2 = l.matvec(&y).unwrap();
        assert_eq!(y2.as_slice(), &[2.0, -2.0]);
    }

    #[test]
    fn normalize_p2_identity_is_itself() {
        let l = p2_identity();
        let nl = normalize_laplacian(&l, 0.0).unwrap();
        let diff = (nl.to_dense() - dmatrix![1.0, -1.0; -1.0, 1.0]).norm();
        assert!(diff < 1e-12);
    }

    #[test]
    fn normalize_keeps_isolated_zero_rows() {
        let g = Graph::build(3, &[(0, 1)]).unwrap();
        let l = assemble_laplacian(&SheafStructure::identity(g, 2)).unwrap();
        let nl = normalize_laplacian(&l, NORMALIZE_EPS).unwrap();
        let dense = nl.to_dense();
        for j in 0..6 {
            assert_eq!(dense[(4, j)], 0.0);
            assert_eq!(dense[(5, j)], 0.0);
        }
        assert!(dense.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn normalize_rejects_indefinite_diag() {
        let mut map = BTreeMap::new();
        map.insert((0, 0), DMatrix::from_element(1, 1, -1.0));
        let op = BlockSparseOperator::from_blocks(1, 1, map).unwrap();
        assert!(matches!(
            normalize_laplacian(&op, NORMALIZE_EPS),
            Err(Error::PsdViolation { node: 0, .. })
        ));
    }

    #[test]
    fn dump_round_trip() {
        let g = Graph::build(3, &[(0, 1), (1, 2)]).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let sheaf = SheafStructure::random(g, 2, crate::sheaf::MapKind::General, 1.0, &mut rng);
        let l = assemble_laplacian(&sheaf).unwrap();
        let text = l.dump();
        let header: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(header, vec!["3", "2", "7"]);
        let back = BlockSparseOperator::parse_dump(&text).unwrap();
        assert!((back.to_dense() - l.to_dense()).norm() < 1e-12);
    }

    #[test]
    fn scale_shift_rescales() {
        let l = p2_identity();
        let t = l.scale_shift(1.0, -1.0);
        assert_eq!(t.to_dense(), dmatrix![0.0, -1.0; -1.0, 0.0]);
    }
}
