//! Target-concept representation: stack annotated token embeddings into a
//! concept token matrix and factor its top-k singular components into a
//! semantic subspace.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, SubspaceBasis, Vector};

/// Role of a token within its encoded sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    /// Token belonging to a word of the target concept.
    Target,
    /// End-of-text (and trailing padding) positions.
    Eot,
    /// Start-of-text position.
    Sot,
    /// Any other token of a concept sentence.
    Other,
    /// Ordinary token of a text condition.
    Word,
}

impl TokenKind {
    pub const ALL: [TokenKind; 5] = [
        TokenKind::Target,
        TokenKind::Eot,
        TokenKind::Sot,
        TokenKind::Other,
        TokenKind::Word,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Target => "target",
            TokenKind::Eot => "eot",
            TokenKind::Sot => "sot",
            TokenKind::Other => "other",
            TokenKind::Word => "word",
        }
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for TokenKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        TokenKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown token kind `{s}`"))
    }
}

/// Rows of kind `target` and `eot` form the concept matrix by default; `sot`
/// is never included unless asked for.
pub const DEFAULT_SELECTION: [TokenKind; 2] = [TokenKind::Target, TokenKind::Eot];

/// Broad category of the concept being erased, used only to pick a default k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConceptCategory {
    Nudity,
    Object,
    /// No reference value exists for styles; 10 mirrors the object setting.
    Style,
}

impl ConceptCategory {
    pub fn default_k(self) -> usize {
        match self {
            ConceptCategory::Nudity => 5,
            ConceptCategory::Object | ConceptCategory::Style => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenRecord {
    pub embedding: Vector,
    pub sentence_id: usize,
    pub position: usize,
    pub text: String,
    pub kind: TokenKind,
}

/// Where a row of the concept matrix came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    /// Index into the record list passed to [`assemble_concept_matrix`].
    pub record: usize,
    pub sentence_id: usize,
    pub position: usize,
    pub text: String,
    pub kind: TokenKind,
}

/// The stacked `N × d_c` concept token matrix with one provenance entry per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTokenMatrix {
    pub matrix: Matrix,
    pub provenance: Vec<Provenance>,
}

impl ConceptTokenMatrix {
    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn d_c(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Stacks the embeddings of every record whose kind is in `selection`,
/// preserving input order.
pub fn assemble_concept_matrix(
    records: &[TokenRecord],
    selection: &[TokenKind],
) -> Result<ConceptTokenMatrix> {
    let chosen: Vec<(usize, &TokenRecord)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| selection.contains(&r.kind))
        .collect();
    let Some((_, first)) = chosen.first() else {
        return Err(Error::EmptySelection);
    };
    let d_c = first.embedding.len();
    if d_c == 0 {
        return Err(Error::ShapeMismatch("token embeddings are empty".into()));
    }
    let mut matrix = DMatrix::zeros(chosen.len(), d_c);
    let mut provenance = Vec::with_capacity(chosen.len());
    for (row, (idx, rec)) in chosen.iter().enumerate() {
        if rec.embedding.len() != d_c {
            return Err(Error::DimensionMismatch {
                context: "token embedding",
                expected: d_c,
                found: rec.embedding.len(),
            });
        }
        matrix.row_mut(row).copy_from(&rec.embedding.transpose());
        provenance.push(Provenance {
            record: *idx,
            sentence_id: rec.sentence_id,
            position: rec.position,
            text: rec.text.clone(),
            kind: rec.kind,
        });
    }
    linalg::ensure_finite(&matrix)?;
    Ok(ConceptTokenMatrix { matrix, provenance })
}

/// Rank-k factored semantic matrix `R̂ = U_k · diag(σ_k) · B_tᵀ`.
///
/// The basis `B_t` (the top-k right singular vectors) spans the concept
/// subspace in embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSubspace {
    sigma_k: Vector,
    u_k: Matrix,
    basis: SubspaceBasis,
}

/// Below this ratio `σ_k / σ_1` the top-k span is considered numerically meaningless.
pub const DEGENERATE_RATIO: f64 = 1e-12;

impl SemanticSubspace {
    /// Assembles a subspace from stored factors, checking shapes, ordering,
    /// positivity, and orthonormality of the basis to `basis_tol`.
    pub fn from_parts(sigma_k: Vector, u_k: Matrix, v_k: Matrix, basis_tol: f64) -> Result<Self> {
        let k = sigma_k.len();
        if k == 0 {
            return Err(Error::RankOutOfBounds { k: 0, max: 0 });
        }
        if u_k.ncols() != k || v_k.ncols() != k {
            return Err(Error::ShapeMismatch(format!(
                "factors have {} and {} columns, expected {k}",
                u_k.ncols(),
                v_k.ncols()
            )));
        }
        if sigma_k.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidBundle(
                "singular values must be finite and positive".into(),
            ));
        }
        if sigma_k.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidBundle(
                "singular values must be sorted descending".into(),
            ));
        }
        linalg::ensure_finite(&u_k)?;
        let basis = SubspaceBasis::with_tolerance(v_k, basis_tol)?;
        Ok(Self {
            sigma_k,
            u_k,
            basis,
        })
    }

    pub fn k(&self) -> usize {
        self.sigma_k.len()
    }

    pub fn n_rows(&self) -> usize {
        self.u_k.nrows()
    }

    pub fn d_c(&self) -> usize {
        self.basis.dim()
    }

    pub fn sigma_k(&self) -> &Vector {
        &self.sigma_k
    }

    pub fn u_k(&self) -> &Matrix {
        &self.u_k
    }

    pub fn basis(&self) -> &SubspaceBasis {
        &self.basis
    }

    /// Dense `N × d_c` semantic matrix.
    pub fn reconstruct(&self) -> Matrix {
        linalg::scaled_product(&self.u_k, &self.sigma_k, self.basis.vectors(), self.k())
    }

    /// `diag(σ_k) · B_tᵀ`, the `k × d_c` row-space factor of the semantic matrix.
    pub fn row_factor(&self) -> Matrix {
        let mut f = self.basis.vectors().transpose();
        for (i, mut row) in f.row_iter_mut().enumerate() {
            row *= self.sigma_k[i];
        }
        f
    }
}

pub fn build_semantic_subspace(m: &ConceptTokenMatrix, k: usize) -> Result<SemanticSubspace> {
    build_semantic_subspace_with(m, k, false)
}

/// Like [`build_semantic_subspace`], optionally subtracting the column mean
/// before factoring. The resulting factors describe the centered matrix.
pub fn build_semantic_subspace_with(
    m: &ConceptTokenMatrix,
    k: usize,
    center: bool,
) -> Result<SemanticSubspace> {
    let max = m.n_rows().min(m.d_c());
    if k == 0 || k > max {
        return Err(Error::RankOutOfBounds { k, max });
    }
    let factors = if center {
        let mean: DVector<f64> = m.matrix.row_mean().transpose();
        let mut centered = m.matrix.clone();
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        linalg::svd(&centered)?
    } else {
        linalg::svd(&m.matrix)?
    };
    let sigma = factors.sigma();
    let sigma_1 = sigma[0];
    let sigma_k = sigma[k - 1];
    if sigma_k.is_nan() || sigma_k <= DEGENERATE_RATIO * sigma_1 {
        return Err(Error::DegenerateConcept { sigma_k, sigma_1 });
    }
    let basis = linalg::basis(&factors, k)?;
    Ok(SemanticSubspace {
        sigma_k: sigma.rows(0, k).into_owned(),
        u_k: factors.u().columns(0, k).into_owned(),
        basis,
    })
}
