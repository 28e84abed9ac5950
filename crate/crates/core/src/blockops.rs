//! Block structures, the block-wise direct sum and block-wise (Khatri-Rao)
//! Kronecker products.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{LarxError, Result};

/// Ordered block lengths along one axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    sizes: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(LarxError::Structure(format!("block {i} has size 0")));
        }
        Ok(Self { sizes })
    }

    /// `k` blocks of length one.
    pub fn singletons(k: usize) -> Self {
        Self { sizes: vec![1; k] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Start offset of every block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.sizes.len());
        let mut acc = 0;
        for &s in &self.sizes {
            off.push(acc);
            acc += s;
        }
        off
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let start: usize = self.sizes[..i].iter().sum();
        start..start + self.sizes[i]
    }

    pub fn compatible(&self, other: &BlockStructure) -> bool {
        self.count() == other.count()
    }
}

/// A column vector split into row blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVec {
    data: DVector<f64>,
    structure: BlockStructure,
}

impl BlockVec {
    pub fn new(data: DVector<f64>, structure: BlockStructure) -> Result<Self> {
        if data.len() != structure.total() {
            return Err(LarxError::Structure(format!(
                "vector of length {} does not match block total {}",
                data.len(),
                structure.total()
            )));
        }
        Ok(Self { data, structure })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let sizes = blocks.iter().map(|b| b.len()).collect();
        let data = DVector::from_iterator(
            blocks.iter().map(|b| b.len()).sum(),
            blocks.iter().flatten().copied(),
        );
        Self::new(data, BlockStructure::new(sizes)?)
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn block(&self, i: usize) -> DVector<f64> {
        let r = self.structure.range(i);
        self.data.rows(r.start, r.len()).into_owned()
    }

    pub fn into_data(self) -> DVector<f64> {
        self.data
    }

    /// The block vector viewed as a matrix with one column and row blocks.
    pub fn as_block_mat(&self) -> BlockMat {
        BlockMat {
            data: DMatrix::from_column_slice(self.data.len(), 1, self.data.as_slice()),
            structure: self.structure.clone(),
            axis: Axis::Rows,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Rows,
    Columns,
}

/// A matrix split into blocks along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMat {
    data: DMatrix<f64>,
    structure: BlockStructure,
    axis: Axis,
}

impl BlockMat {
    pub fn new(data: DMatrix<f64>, structure: BlockStructure, axis: Axis) -> Result<Self> {
        let extent = match axis {
            Axis::Rows => data.nrows(),
            Axis::Columns => data.ncols(),
        };
        if extent != structure.total() {
            return Err(LarxError::Structure(format!(
                "matrix extent {extent} does not match block total {}",
                structure.total()
            )));
        }
        Ok(Self { data, structure, axis })
    }

    /// Identity of order `structure.total()` carrying `structure` as row blocks.
    pub fn identity(structure: &BlockStructure) -> Self {
        let t = structure.total();
        Self { data: DMatrix::identity(t, t), structure: structure.clone(), axis: Axis::Rows }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let r = self.structure.range(i);
        match self.axis {
            Axis::Rows => self.data.rows(r.start, r.len()).into_owned(),
            Axis::Columns => self.data.columns(r.start, r.len()).into_owned(),
        }
    }
}

/// Block-diagonal placement of a sequence of matrices.
pub fn direct_sum(blocks: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if blocks.is_empty() {
        return Err(LarxError::Structure("direct sum of an empty sequence".into()));
    }
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    Ok(out)
}

/// `a^⊕`: the direct sum of the blocks of a block vector (total × k).
pub fn bds_vec(a: &BlockVec) -> DMatrix<f64> {
    let s = a.structure();
    let mut out = DMatrix::zeros(s.total(), s.count());
    for (i, off) in s.offsets().into_iter().enumerate() {
        for r in 0..s.sizes()[i] {
            out[(off + r, i)] = a.data()[off + r];
        }
    }
    out
}

/// Block-wise Kronecker product of two row-blocked matrices: block `i` of the
/// result is `a_i ⊗ b_i`.
pub fn khatri_rao(a: &BlockMat, b: &BlockMat) -> Result<DMatrix<f64>> {
    if a.axis() != Axis::Rows || b.axis() != Axis::Rows {
        return Err(LarxError::Structure("khatri_rao expects row blocks".into()));
    }
    if !a.structure().compatible(b.structure()) {
        return Err(LarxError::Structure(format!(
            "block counts differ: {} vs {}",
            a.structure().count(),
            b.structure().count()
        )));
    }
    let rows: usize = a
        .structure()
        .sizes()
        .iter()
        .zip(b.structure().sizes())
        .map(|(x, y)| x * y)
        .sum();
    let cols = a.data().ncols() * b.data().ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for i in 0..a.structure().count() {
        let k = a.block(i).kronecker(&b.block(i));
        out.view_mut((r, 0), (k.nrows(), k.ncols())).copy_from(&k);
        r += k.nrows();
    }
    Ok(out)
}

/// `a ⊙ b` for block vectors.
pub fn khatri_rao_vec(a: &BlockVec, b: &BlockVec) -> Result<BlockVec> {
    let data = khatri_rao(&a.as_block_mat(), &b.as_block_mat())?;
    let sizes = a
        .structure()
        .sizes()
        .iter()
        .zip(b.structure().sizes())
        .map(|(x, y)| x * y)
        .collect();
    BlockVec::new(data.column(0).into_owned(), BlockStructure::new(sizes)?)
}

/// `a ⊙ I_b`, where `I_b` is the identity carrying the row blocks of `b`.
pub fn kr_vec_identity(a: &BlockVec, b: &BlockStructure) -> Result<DMatrix<f64>> {
    khatri_rao(&a.as_block_mat(), &BlockMat::identity(b))
}

/// `I_a ⊙ b`, where `I_a` is the identity carrying the row blocks of `a`.
pub fn kr_identity_vec(a: &BlockStructure, b: &BlockVec) -> Result<DMatrix<f64>> {
    khatri_rao(&BlockMat::identity(a), &b.as_block_mat())
}

/// The two factorizations `a⊙b = (a⊙I_b) b = (I_a⊙b) a`; returns
/// `(a⊙I_b, I_a⊙b)`.
pub fn factor_khatri_rao(a: &BlockVec, b: &BlockVec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let left = kr_vec_identity(a, b.structure())?;
    let right = kr_identity_vec(a.structure(), b)?;
    Ok((left, right))
}

/// Checks `(A^⊕)' == (A')^⊕` elementwise.
pub fn bds_transpose_commutes(blocks: &[DMatrix<f64>]) -> bool {
    let Ok(lhs) = direct_sum(blocks) else {
        return blocks.is_empty();
    };
    let transposed: Vec<DMatrix<f64>> = blocks.iter().map(|b| b.transpose()).collect();
    match direct_sum(&transposed) {
        Ok(rhs) => lhs.transpose() == rhs,
        Err(_) => false,
    }
}

/// Per-block inner products `a_j' b_j`, i.e. `(a^⊕)' b`.
pub fn blockwise_inner(a: &BlockVec, b: &BlockVec) -> Result<BlockVec> {
    if a.structure() != b.structure() {
        return Err(LarxError::Structure("blockwise_inner needs identical structures".into()));
    }
    let k = a.structure().count();
    let vals = (0..k).map(|i| a.block(i).dot(&b.block(i)));
    BlockVec::new(DVector::from_iterator(k, vals), BlockStructure::singletons(k))
}
