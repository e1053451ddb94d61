//! File formats.
//!
//! SSE-EMB v1 (embeddings), little-endian:
//!
//! | bytes | field                        |
//! |-------|------------------------------|
//! | 4     | magic `SSEB`                 |
//! | 4     | version `u32` = 1            |
//! | 8     | rows `u64`                   |
//! | 8     | cols `u64`                   |
//! | 1     | dtype `u8` = 0 (f32)         |
//! | 4·r·c | payload, f32 row-major       |
//!
//! An optional JSON sidecar `<stem>.meta.json` carries sentences and
//! per-row token annotations.
//!
//! SSE-SUB v1 (factored semantic subspace), little-endian:
//!
//! | bytes | field                        |
//! |-------|------------------------------|
//! | 4     | magic `SSES`                 |
//! | 4     | version `u32` = 1            |
//! | 8     | N `u64`                      |
//! | 8     | d_c `u64`                    |
//! | 4     | k `u32`                      |
//! | 4·k   | σ_1…σ_k f32                  |
//! | 4·N·k | U_k f32 row-major            |
//! | 4·d·k | V_k f32 row-major            |
//!
//! All arithmetic happens in f64; values are rounded to f32 only here.

use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concept::{SemanticSubspace, TokenKind, TokenRecord};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optimizer::OptimizerKind;
use crate::suppression::ConditionTokens;

pub const EMB_MAGIC: [u8; 4] = *b"SSEB";
pub const SUB_MAGIC: [u8; 4] = *b"SSES";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const EMB_HEADER_LEN: usize = 25;
pub const SUB_HEADER_LEN: usize = 28;
/// Orthonormality tolerance applied to `V_k` when a bundle is loaded.
pub const BUNDLE_ORTHONORMAL_TOL: f64 = 1e-6;

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Byte cursor over an in-memory file.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::TruncatedPayload {
                expected: (self.pos as u64).saturating_add(n as u64),
                found: self.bytes.len() as u64,
            }),
        }
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Reads `rows × cols` f32 values (row-major), checking the remaining
    /// length up front so the error reports the full expected size.
    fn f32_matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let count = rows
            .checked_mul(cols)
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::ShapeMismatch(format!("{rows}x{cols} is too large")))?;
        let remaining = self.bytes.len() - self.pos;
        if remaining < count {
            return Err(Error::TruncatedPayload {
                expected: (self.pos + count) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let raw = self.take(count)?;
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }

    fn finish(&self) -> Result<()> {
        let extra = self.bytes.len() - self.pos;
        if extra > 0 {
            return Err(Error::TrailingData(extra as u64));
        }
        Ok(())
    }
}

fn version(c: &mut Cursor<'_>) -> Result<()> {
    let v = c.u32()?;
    if v != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(v));
    }
    Ok(())
}

fn dim(v: u64) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::ShapeMismatch(format!("dimension {v} too large")))
}

fn put_f32_row_major<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(m.len() * 4);
    for row in m.row_iter() {
        for &x in row.iter() {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn encode_embeddings<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    if m.iter().any(|x| !(*x as f32).is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    w.write_all(&EMB_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    w.write_all(&[DTYPE_F32])?;
    put_f32_row_major(w, m)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Matrix> {
    let mut c = Cursor::new(bytes);
    c.magic(EMB_MAGIC)?;
    version(&mut c)?;
    let rows = dim(c.u64()?)?;
    let cols = dim(c.u64()?)?;
    let dtype = c.u8()?;
    if dtype != DTYPE_F32 {
        return Err(Error::DtypeUnsupported(dtype));
    }
    let m = c.f32_matrix(rows, cols)?;
    c.finish()?;
    Ok(m)
}

pub fn read_embeddings_from<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_embeddings(&bytes)
}

/// Token annotation for one row of an embedding file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub row: usize,
    pub sentence_id: usize,
    pub position: usize,
    pub text: String,
    pub kind: TokenKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    #[serde(default)]
    pub sentences: Vec<String>,
    #[serde(default)]
    pub tokens: Vec<TokenMeta>,
}

impl EmbeddingMeta {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if let Some(t) = self.tokens.iter().find(|t| t.row >= rows) {
            return Err(Error::SidecarRowOutOfRange { row: t.row, rows });
        }
        Ok(())
    }

    pub fn kind_of(&self, row: usize) -> Option<TokenKind> {
        self.tokens.iter().find(|t| t.row == row).map(|t| t.kind)
    }
}

/// `dir/name.sseb` → `dir/name.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn write_embeddings(m: &Matrix, meta: Option<&EmbeddingMeta>, path: &Path) -> Result<()> {
    if let Some(meta) = meta {
        meta.validate(m.nrows())?;
    }
    let mut bytes = Vec::with_capacity(EMB_HEADER_LEN + m.len() * 4);
    encode_embeddings(&mut bytes, m)?;
    fs::write(path, bytes).map_err(file_err(path))?;
    if let Some(meta) = meta {
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_vec_pretty(meta)?).map_err(file_err(&side))?;
    }
    Ok(())
}

/// Reads an embedding file and, when present, its sidecar.
pub fn read_embeddings(path: &Path) -> Result<(Matrix, Option<EmbeddingMeta>)> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    let m = decode_embeddings(&bytes)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = fs::read(&side).map_err(file_err(&side))?;
        let meta: EmbeddingMeta = serde_json::from_slice(&text)?;
        meta.validate(m.nrows())?;
        Some(meta)
    } else {
        None
    };
    Ok((m, meta))
}

/// Token records for every annotated row, in sidecar order.
pub fn token_records(m: &Matrix, meta: &EmbeddingMeta) -> Result<Vec<TokenRecord>> {
    meta.validate(m.nrows())?;
    Ok(meta
        .tokens
        .iter()
        .map(|t| TokenRecord {
            embedding: m.row(t.row).transpose(),
            sentence_id: t.sentence_id,
            position: t.position,
            text: t.text.clone(),
            kind: t.kind,
        })
        .collect())
}

/// A condition from an embedding file; rows without annotation are `word`.
pub fn condition_tokens(m: Matrix, meta: Option<&EmbeddingMeta>) -> Result<ConditionTokens> {
    let roles = (0..m.nrows())
        .map(|r| {
            meta.and_then(|meta| meta.kind_of(r))
                .unwrap_or(TokenKind::Word)
        })
        .collect();
    let mut c = ConditionTokens::new(m, roles)?;
    c.source_text = meta.and_then(|m| m.sentences.first().cloned());
    Ok(c)
}

pub fn subspace_bundle_len(n: usize, d_c: usize, k: usize) -> usize {
    SUB_HEADER_LEN + 4 * (k + n * k + d_c * k)
}

pub fn encode_subspace<W: Write>(w: &mut W, s: &SemanticSubspace) -> Result<()> {
    let k = u32::try_from(s.k()).map_err(|_| Error::InvalidBundle("k too large".into()))?;
    w.write_all(&SUB_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(s.n_rows() as u64).to_le_bytes())?;
    w.write_all(&(s.d_c() as u64).to_le_bytes())?;
    w.write_all(&k.to_le_bytes())?;
    let sigma = DMatrix::from_row_slice(1, s.k(), s.sigma_k().as_slice());
    put_f32_row_major(w, &sigma)?;
    put_f32_row_major(w, s.u_k())?;
    put_f32_row_major(w, s.basis().vectors())
}

pub fn decode_subspace(bytes: &[u8]) -> Result<SemanticSubspace> {
    let mut c = Cursor::new(bytes);
    c.magic(SUB_MAGIC)?;
    version(&mut c)?;
    let n = dim(c.u64()?)?;
    let d_c = dim(c.u64()?)?;
    let k = c.u32()? as usize;
    if k == 0 || k > n.min(d_c) {
        return Err(Error::InvalidBundle(format!(
            "k = {k} incompatible with N = {n}, d_c = {d_c}"
        )));
    }
    let sigma = c.f32_matrix(1, k)?;
    let u_k = c.f32_matrix(n, k)?;
    let v_k = c.f32_matrix(d_c, k)?;
    c.finish()?;
    let sigma = DVector::from_iterator(k, sigma.iter().copied());
    SemanticSubspace::from_parts(sigma, u_k, v_k, BUNDLE_ORTHONORMAL_TOL).map_err(|e| match e {
        Error::NotOrthonormal { deviation } => Error::OrthonormalityViolation { deviation },
        Error::NonFiniteInput => Error::InvalidBundle("non-finite factor entries".into()),
        other => other,
    })
}

pub fn write_subspace(s: &SemanticSubspace, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(subspace_bundle_len(s.n_rows(), s.d_c(), s.k()));
    encode_subspace(&mut bytes, s)?;
    fs::write(path, bytes).map_err(file_err(path))
}

pub fn read_subspace(path: &Path) -> Result<SemanticSubspace> {
    let bytes = fs::read(path).map_err(file_err(path))?;
    decode_subspace(&bytes)
}

/// Pipeline settings shared by the command-line tools.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub k: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub learning_rate: f64,
    pub optimizer: String,
    pub updates_per_step: usize,
    pub skip_sot: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: 5,
            t_start: 30,
            t_end: 50,
            learning_rate: 1e-3,
            optimizer: "plain_gd".into(),
            updates_per_step: 1,
            skip_sot: false,
            seed: 42,
        }
    }
}

fn field_u64(path: &str, v: &Value) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::schema(path, "expected a non-negative integer"))
}

impl RunConfig {
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema("$", "expected a JSON object"))?;
        let mut cfg = RunConfig::default();
        for (key, v) in obj {
            let path = format!("$.{key}");
            match key.as_str() {
                "k" => cfg.k = field_u64(&path, v)? as usize,
                "t_start" => cfg.t_start = field_u64(&path, v)? as usize,
                "t_end" => cfg.t_end = field_u64(&path, v)? as usize,
                "updates_per_step" => cfg.updates_per_step = field_u64(&path, v)? as usize,
                "seed" => cfg.seed = field_u64(&path, v)?,
                "learning_rate" => {
                    cfg.learning_rate = v
                        .as_f64()
                        .ok_or_else(|| Error::schema(&path, "expected a number"))?
                }
                "optimizer" => {
                    cfg.optimizer = v
                        .as_str()
                        .ok_or_else(|| Error::schema(&path, "expected a string"))?
                        .to_string()
                }
                "skip_sot" => {
                    cfg.skip_sot = v
                        .as_bool()
                        .ok_or_else(|| Error::schema(&path, "expected a boolean"))?
                }
                _ => return Err(Error::schema(path, "unknown field")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::schema("$.k", "k must be ≥ 1"));
        }
        if self.t_start > self.t_end {
            return Err(Error::schema("$.t_start", "t_start must be ≤ t_end"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::schema(
                "$.learning_rate",
                "learning_rate must be finite and > 0",
            ));
        }
        if OptimizerKind::from_name(&self.optimizer).is_none() {
            return Err(Error::schema(
                "$.optimizer",
                "optimizer must be \"plain_gd\" or \"adam_like\"",
            ));
        }
        if self.updates_per_step < 1 {
            return Err(Error::schema(
                "$.updates_per_step",
                "updates_per_step must be ≥ 1",
            ));
        }
        Ok(())
    }

    pub fn optimizer_kind(&self) -> OptimizerKind {
        OptimizerKind::from_name(&self.optimizer).unwrap_or(OptimizerKind::PlainGd)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text)?;
    RunConfig::from_json(&value)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path).map_err(file_err(path))?)
}

/// Concept vocabulary and the sentences built from it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyManifest {
    pub concept: String,
    pub words: Vec<String>,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
}

impl VocabularyManifest {
    /// Names of the `{slot}` placeholders in the template, in order of first
    /// appearance.
    pub fn template_slots(&self) -> Vec<String> {
        let Some(t) = &self.template else {
            return Vec::new();
        };
        let mut seen = BTreeSet::new();
        let mut slots = Vec::new();
        let mut rest = t.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let Some(close) = after.find('}') else { break };
            let name = after[..close].to_string();
            if seen.insert(name.clone()) {
                slots.push(name);
            }
            rest = &after[close + 1..];
        }
        slots
    }

    /// Fills every slot of the template; `None` when a slot has no value or
    /// there is no template.
    pub fn instantiate(&self, values: &[(&str, &str)]) -> Option<String> {
        let mut out = self.template.clone()?;
        for slot in self.template_slots() {
            let (_, v) = values.iter().find(|(k, _)| *k == slot)?;
            out = out.replace(&format!("{{{slot}}}"), v);
        }
        Some(out)
    }
}

pub fn parse_manifest(text: &str) -> Result<VocabularyManifest> {
    let value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::schema("$", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "concept" | "words" | "sentences" | "template") {
            return Err(Error::schema(format!("$.{key}"), "unknown field"));
        }
    }
    let concept = obj
        .get("concept")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::schema("$.concept", "expected a string"))?;
    let strings = |key: &str| -> Result<Vec<String>> {
        let path = format!("$.{key}");
        let arr = obj
            .get(key)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::schema(&path, "expected an array of strings"))?;
        if arr.is_empty() {
            return Err(Error::schema(&path, format!("{key} must not be empty")));
        }
        arr.iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::schema(format!("{path}[{i}]"), "expected a string"))
            })
            .collect()
    };
    let template = match obj.get("template") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(Error::schema("$.template", "expected a string")),
    };
    Ok(VocabularyManifest {
        concept: concept.to_string(),
        words: strings("words")?,
        sentences: strings("sentences")?,
        template,
    })
}

pub fn load_manifest(path: &Path) -> Result<VocabularyManifest> {
    parse_manifest(&fs::read_to_string(path).map_err(file_err(path))?)
}

/// One line of the suppression delta report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub row: usize,
    pub kind: TokenKind,
    pub mse: f64,
}

pub fn delta_report(c: &ConditionTokens, per_token_delta: &[f64]) -> Vec<DeltaEntry> {
    c.roles()
        .iter()
        .zip(per_token_delta)
        .enumerate()
        .map(|(row, (&kind, &mse))| DeltaEntry { row, kind, mse })
        .collect()
}
