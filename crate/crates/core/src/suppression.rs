//! Adaptive component suppression.
//!
//! Each token of a text condition is stacked on top of the semantic matrix
//! `R̂`, the top-k singular values of the stack are zeroed, and the token's
//! row is read back from the reconstruction. Because `R̂` is kept in factored
//! form `U_k·diag(σ)·Bᵀ` with orthonormal `U_k`, the stack
//! `[x; R̂] = diag(1, U_k)·[x; diag(σ)·Bᵀ]` has the same singular values and
//! right singular vectors as the `(k+1) × d_c` matrix `[x; diag(σ)·Bᵀ]`,
//! and row 0 of either reconstruction is identical. [`suppress_token`] works
//! on that reduced matrix; [`suppress_token_naive`] stacks the dense `R̂`.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::concept::{SemanticSubspace, TokenKind};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Token sequence of one text condition (`n_tokens × d_c`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTokens {
    tokens: Matrix,
    roles: Vec<TokenKind>,
    pub source_text: Option<String>,
}

impl ConditionTokens {
    pub fn new(tokens: Matrix, roles: Vec<TokenKind>) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::ShapeMismatch(
                "a condition needs at least one token of non-zero width".into(),
            ));
        }
        if roles.len() != tokens.nrows() {
            return Err(Error::DimensionMismatch {
                context: "condition roles",
                expected: tokens.nrows(),
                found: roles.len(),
            });
        }
        linalg::ensure_finite(&tokens)?;
        Ok(Self {
            tokens,
            roles,
            source_text: None,
        })
    }

    /// All rows tagged `word`.
    pub fn from_matrix(tokens: Matrix) -> Result<Self> {
        let roles = vec![TokenKind::Word; tokens.nrows()];
        Self::new(tokens, roles)
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn roles(&self) -> &[TokenKind] {
        &self.roles
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn d_c(&self) -> usize {
        self.tokens.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuppressionConfig {
    pub k: usize,
    pub skip_sot: bool,
    pub skip_rows: BTreeSet<usize>,
}

impl SuppressionConfig {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            skip_sot: false,
            skip_rows: BTreeSet::new(),
        }
    }

    pub fn for_subspace(s: &SemanticSubspace) -> Self {
        Self::new(s.k())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuppressedCondition {
    pub tokens: Matrix,
    /// Mean squared change of each row.
    pub per_token_delta: Vec<f64>,
    pub config_used: SuppressionConfig,
}

/// Dense `(N+1) × d_c` stack with the token under suppression in row 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTokenMatrix {
    pub matrix: Matrix,
}

pub fn augmented_matrix(token: &Vector, s: &SemanticSubspace) -> Result<AugmentedTokenMatrix> {
    check_token(token, s)?;
    Ok(AugmentedTokenMatrix {
        matrix: stack(token, &s.reconstruct()),
    })
}

fn stack(token: &Vector, below: &Matrix) -> Matrix {
    let mut m = Matrix::zeros(below.nrows() + 1, below.ncols());
    m.row_mut(0).copy_from(&token.transpose());
    m.rows_mut(1, below.nrows()).copy_from(below);
    m
}

fn check_token(token: &Vector, s: &SemanticSubspace) -> Result<()> {
    if token.len() != s.d_c() {
        return Err(Error::DimensionMismatch {
            context: "token vs subspace",
            expected: s.d_c(),
            found: token.len(),
        });
    }
    if token.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Zero the top-k singular values of `m` and return row 0 of the
/// reconstruction.
fn zero_top_k_row0(m: &Matrix, k: usize) -> Result<Vector> {
    let f = linalg::svd(m)?;
    let (u, sigma, v) = (f.u(), f.sigma(), f.v());
    let mut row = Vector::zeros(m.ncols());
    for i in k..f.rank_bound() {
        let w = sigma[i] * u[(0, i)];
        if w != 0.0 {
            row.axpy(w, &v.column(i), 1.0);
        }
    }
    Ok(row)
}

pub fn suppress_token(token: &Vector, s: &SemanticSubspace) -> Result<Vector> {
    check_token(token, s)?;
    let reduced = stack(token, &s.row_factor());
    zero_top_k_row0(&reduced, s.k())
}

/// Reference path that factors the dense `(N+1) × d_c` stack.
pub fn suppress_token_naive(token: &Vector, s: &SemanticSubspace) -> Result<Vector> {
    let aug = augmented_matrix(token, s)?;
    zero_top_k_row0(&aug.matrix, s.k())
}

fn mse(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

pub fn suppress_condition(
    c: &ConditionTokens,
    s: &SemanticSubspace,
    cfg: &SuppressionConfig,
) -> Result<SuppressedCondition> {
    if c.d_c() != s.d_c() {
        return Err(Error::DimensionMismatch {
            context: "condition vs subspace",
            expected: s.d_c(),
            found: c.d_c(),
        });
    }
    if cfg.k != s.k() {
        return Err(Error::InvalidConfig(format!(
            "suppression k = {} but subspace has k = {}",
            cfg.k,
            s.k()
        )));
    }
    let mut tokens = c.tokens.clone();
    let mut per_token_delta = vec![0.0; c.n_tokens()];
    for (i, role) in c.roles.iter().enumerate() {
        if cfg.skip_rows.contains(&i) || (cfg.skip_sot && *role == TokenKind::Sot) {
            continue;
        }
        let before = c.tokens.row(i).transpose();
        let after = suppress_token(&before, s)?;
        per_token_delta[i] = mse(&before, &after);
        tokens.row_mut(i).copy_from(&after.transpose());
    }
    Ok(SuppressedCondition {
        tokens,
        per_token_delta,
        config_used: cfg.clone(),
    })
}
