//! Field-wise bi-encoder.
//!
//! Each schema field is encoded on its own as the mean of hashed token
//! embeddings of `"name: value"`. The `p` field vectors then attend to each
//! other through one multi-head self-attention layer (residual, then row
//! layer-norm), are concatenated in schema order, and a per-kind linear map
//! fuses them into one `d`-dimensional embedding. Resumes and jobs share the
//! token table and the attention block; only the fusion layer is per kind.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocKind, Document};
use crate::numerics::{dot, Array2, NumericsError, Tape, Var};

pub const CHECKPOINT_MAGIC: &[u8] = b"JMATCH1";

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("schema has no fields for {0} documents")]
    UnknownKind(DocKind),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    /// Number of hash buckets (rows of the token table).
    pub hash_buckets: usize,
    pub max_tokens_per_field: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { hash_buckets: 1 << 14, max_tokens_per_field: 512 }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Lower-cased words split on whitespace and punctuation.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashed token ids, truncated to `max_tokens_per_field`.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<usize> {
    word_tokens(text)
        .into_iter()
        .take(config.max_tokens_per_field)
        .map(|w| (fnv1a64(w.as_bytes()) % config.hash_buckets as u64) as usize)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub output_dim: usize,
    pub heads: usize,
    pub tokenizer: TokenizerConfig,
    pub layer_norm_eps: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            output_dim: 128,
            heads: 4,
            tokenizer: TokenizerConfig::default(),
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.tokenizer.hash_buckets < 2 {
            return bad("hash_buckets must be at least 2");
        }
        if self.tokenizer.max_tokens_per_field == 0 {
            return bad("max_tokens_per_field must be at least 1");
        }
        if self.embed_dim == 0 || self.output_dim == 0 || self.heads == 0 {
            return bad("dimensions must be positive");
        }
        if self.embed_dim % self.heads != 0 {
            return bad("embed_dim must be divisible by heads");
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive");
        }
        Ok(())
    }
}

/// Ordered field names per document kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub resume: Vec<String>,
    pub job: Vec<String>,
}

impl Schema {
    /// Field names in first-seen order across the documents of each kind.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut schema = Schema { resume: Vec::new(), job: Vec::new() };
        for doc in docs {
            let names = match doc.kind {
                DocKind::Resume => &mut schema.resume,
                DocKind::Job => &mut schema.job,
            };
            for f in &doc.fields {
                if !names.contains(&f.name) {
                    names.push(f.name.clone());
                }
            }
        }
        schema
    }

    pub fn fields(&self, kind: DocKind) -> &[String] {
        match kind {
            DocKind::Resume => &self.resume,
            DocKind::Job => &self.job,
        }
    }
}

/// Every trainable array of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub schema: Schema,
    pub embed: Array2,
    pub wq: Array2,
    pub wk: Array2,
    pub wv: Array2,
    pub wo: Array2,
    pub fusion_resume: Array2,
    pub fusion_resume_bias: Array2,
    pub fusion_job: Array2,
    pub fusion_job_bias: Array2,
}

/// Token-table init std. Field vectors are layer-normalised, so only the
/// direction of a pooled field matters; small rows let the table move
/// quickly relative to its scale.
pub const EMBED_INIT_STD: f32 = 0.02;

pub const PARAM_NAMES: [&str; 9] = [
    "embed",
    "wq",
    "wk",
    "wv",
    "wo",
    "fusion_resume",
    "fusion_resume_bias",
    "fusion_job",
    "fusion_job_bias",
];

impl ModelParams {
    /// Random initialisation. Fusion weights are scaled so that initial
    /// resume-job scores have roughly unit variance.
    pub fn init(config: ModelConfig, schema: Schema, seed: u64) -> Result<Self, EncoderError> {
        config.validate()?;
        for kind in [DocKind::Resume, DocKind::Job] {
            if schema.fields(kind).is_empty() {
                return Err(EncoderError::UnknownKind(kind));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let de = config.embed_dim;
        let d = config.output_dim;
        let proj_std = 1.0 / (de as f32).sqrt();
        let fusion = |p: usize, rng: &mut ChaCha8Rng| {
            let std = 1.0 / ((p * de) as f32).sqrt() / (d as f32).powf(0.25);
            Array2::randn(p * de, d, std, rng)
        };
        let embed = Array2::randn(config.tokenizer.hash_buckets, de, EMBED_INIT_STD, &mut rng);
        let wq = Array2::randn(de, de, proj_std, &mut rng);
        let wk = Array2::randn(de, de, proj_std, &mut rng);
        let wv = Array2::randn(de, de, proj_std, &mut rng);
        let wo = Array2::randn(de, de, proj_std, &mut rng);
        let fusion_resume = fusion(schema.resume.len(), &mut rng);
        let fusion_job = fusion(schema.job.len(), &mut rng);
        Ok(Self {
            config,
            embed,
            wq,
            wk,
            wv,
            wo,
            fusion_resume,
            fusion_resume_bias: Array2::zeros(1, d),
            fusion_job,
            fusion_job_bias: Array2::zeros(1, d),
            schema,
        })
    }

    /// Arrays in [`PARAM_NAMES`] order.
    pub fn arrays(&self) -> [&Array2; 9] {
        [
            &self.embed,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.fusion_resume,
            &self.fusion_resume_bias,
            &self.fusion_job,
            &self.fusion_job_bias,
        ]
    }

    pub fn arrays_mut(&mut self) -> [&mut Array2; 9] {
        [
            &mut self.embed,
            &mut self.wq,
            &mut self.wk,
            &mut self.wv,
            &mut self.wo,
            &mut self.fusion_resume,
            &mut self.fusion_resume_bias,
            &mut self.fusion_job,
            &mut self.fusion_job_bias,
        ]
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.arrays().iter().map(|a| a.shape()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    /// The shapes every array must have for this config and schema.
    fn expected_shapes(config: &ModelConfig, schema: &Schema) -> [(usize, usize); 9] {
        let de = config.embed_dim;
        let d = config.output_dim;
        [
            (config.tokenizer.hash_buckets, de),
            (de, de),
            (de, de),
            (de, de),
            (de, de),
            (schema.resume.len() * de, d),
            (1, d),
            (schema.job.len() * de, d),
            (1, d),
        ]
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        self.config.validate()?;
        let expected = Self::expected_shapes(&self.config, &self.schema);
        for ((name, arr), shape) in PARAM_NAMES.iter().zip(self.arrays()).zip(expected) {
            if arr.shape() != shape {
                return Err(EncoderError::Config(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    arr.shape()
                )));
            }
            if !arr.is_finite() {
                return Err(EncoderError::Numerics(NumericsError::NonFinite("parameters")));
            }
        }
        Ok(())
    }

    /// Returns a copy with the given arrays (in [`PARAM_NAMES`] order).
    pub fn with_arrays(&self, arrays: Vec<Array2>) -> Result<Self, EncoderError> {
        let mut out = self.clone();
        if arrays.len() != PARAM_NAMES.len() {
            return Err(EncoderError::Config(format!("expected 9 arrays, got {}", arrays.len())));
        }
        for (slot, a) in out.arrays_mut().into_iter().zip(arrays) {
            *slot = a;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_checkpoint_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    /// `JMATCH1\n`, one line of JSON header, then little-endian `f32` arrays in
    /// manifest order. Offsets in the manifest are relative to the first data
    /// byte.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut manifest = Vec::new();
        let mut offset = 0usize;
        for (name, arr) in PARAM_NAMES.iter().zip(self.arrays()) {
            manifest.push(ArrayEntry { name: name.to_string(), rows: arr.rows(), cols: arr.cols(), offset });
            offset += arr.len() * 4;
        }
        let header = CheckpointHeader { config: self.config, schema: self.schema.clone(), arrays: manifest };
        let mut out = Vec::with_capacity(offset + 1024);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serialises").as_bytes());
        out.push(b'\n');
        for arr in self.arrays() {
            for v in arr.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, EncoderError> {
        let bad = |m: String| EncoderError::Checkpoint(m);
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or_else(|| bad("bad magic".into()))?;
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        let data = &rest[nl + 1..];
        header.config.validate()?;
        let expected = Self::expected_shapes(&header.config, &header.schema);
        if header.arrays.len() != PARAM_NAMES.len() {
            return Err(bad(format!("manifest lists {} arrays", header.arrays.len())));
        }
        let mut arrays = Vec::with_capacity(PARAM_NAMES.len());
        let mut cursor = 0usize;
        for ((entry, name), shape) in header.arrays.iter().zip(PARAM_NAMES).zip(expected) {
            if entry.name != name {
                return Err(bad(format!("manifest entry `{}` where `{name}` expected", entry.name)));
            }
            if (entry.rows, entry.cols) != shape {
                return Err(bad(format!(
                    "{name}: manifest shape {}x{} but config implies {shape:?}",
                    entry.rows, entry.cols
                )));
            }
            if entry.offset != cursor {
                return Err(bad(format!("{name}: offset {} but expected {cursor}", entry.offset)));
            }
            let n = entry.rows * entry.cols;
            let end = cursor + n * 4;
            let chunk = data.get(cursor..end).ok_or_else(|| bad(format!("{name}: truncated data")))?;
            let values = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            arrays.push(Array2::from_vec(entry.rows, entry.cols, values)?);
            cursor = end;
        }
        if cursor != data.len() {
            return Err(bad(format!("{} trailing bytes", data.len() - cursor)));
        }
        let [embed, wq, wk, wv, wo, fusion_resume, fusion_resume_bias, fusion_job, fusion_job_bias]: [Array2; 9] =
            arrays.try_into().expect("nine arrays");
        let params = Self {
            config: header.config,
            schema: header.schema,
            embed,
            wq,
            wk,
            wv,
            wo,
            fusion_resume,
            fusion_resume_bias,
            fusion_job,
            fusion_job_bias,
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    schema: Schema,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
}

/// Tape handles for every parameter array.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub embed: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub fusion_resume: Var,
    pub fusion_resume_bias: Var,
    pub fusion_job: Var,
    pub fusion_job_bias: Var,
}

impl ParamVars {
    /// Registers the arrays as borrowed leaves.
    pub fn bind<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> Self {
        Self::bind_arrays(tape, params.arrays())
    }

    /// Registers nine arrays in [`PARAM_NAMES`] order.
    pub fn bind_arrays<'a>(tape: &mut Tape<'a>, arrays: [&'a Array2; 9]) -> Self {
        let [embed, wq, wk, wv, wo, fr, frb, fj, fjb] = arrays.map(|a| tape.leaf_ref(a));
        Self {
            embed,
            wq,
            wk,
            wv,
            wo,
            fusion_resume: fr,
            fusion_resume_bias: frb,
            fusion_job: fj,
            fusion_job_bias: fjb,
        }
    }

    pub fn as_array(&self) -> [Var; 9] {
        [
            self.embed,
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.fusion_resume,
            self.fusion_resume_bias,
            self.fusion_job,
            self.fusion_job_bias,
        ]
    }
}

/// Token ids of each schema field. Fields the document lacks get no tokens,
/// so they pool to the zero vector.
pub fn field_token_ids(doc: &Document, config: &ModelConfig, schema: &Schema) -> Result<Vec<Vec<usize>>, EncoderError> {
    let names = schema.fields(doc.kind);
    if names.is_empty() {
        return Err(EncoderError::UnknownKind(doc.kind));
    }
    Ok(names
        .iter()
        .map(|name| {
            doc.field(name)
                .map(|value| tokenize(&format!("{name}: {value}"), &config.tokenizer))
                .unwrap_or_default()
        })
        .collect())
}

/// Mean token embedding of `"name: value"` (zero when there are no tokens).
pub fn encode_field(name: &str, value: &str, params: &ModelParams) -> Vec<f32> {
    let ids = tokenize(&format!("{name}: {value}"), &params.config.tokenizer);
    let mut out = vec![0.0f32; params.config.embed_dim];
    for &id in &ids {
        for (o, e) in out.iter_mut().zip(params.embed.row(id)) {
            *o += e;
        }
    }
    if !ids.is_empty() {
        let n = ids.len() as f32;
        out.iter_mut().for_each(|o| *o /= n);
    }
    out
}

/// Records the forward pass for one document and returns its `1×d` embedding.
pub fn encode_on_tape(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    config: &ModelConfig,
    schema: &Schema,
    doc: &Document,
) -> Result<Var, EncoderError> {
    let fields = field_token_ids(doc, config, schema)?;
    let p = fields.len();
    let de = config.embed_dim;
    let mut rows = Vec::with_capacity(p);
    for ids in &fields {
        rows.push(tape.gather_mean(vars.embed, ids)?);
    }
    let x = tape.concat_rows(&rows)?;

    let q = tape.matmul(x, vars.wq)?;
    let k = tape.matmul(x, vars.wk)?;
    let v = tape.matmul(x, vars.wv)?;
    let dh = de / config.heads;
    let inv_sqrt = 1.0 / (dh as f32).sqrt();
    let mut heads = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let logits = tape.matmul_nt(qh, kh)?;
        let logits = tape.scale(logits, inv_sqrt)?;
        let weights = tape.row_softmax(logits)?;
        heads.push(tape.matmul(weights, vh)?);
    }
    let merged = tape.concat_cols(&heads)?;
    let attn = tape.matmul(merged, vars.wo)?;
    let resid = tape.add(x, attn)?;
    let normed = tape.layer_norm_rows(resid, config.layer_norm_eps)?;
    let flat = tape.reshape(normed, 1, p * de)?;
    let (w, b) = match doc.kind {
        DocKind::Resume => (vars.fusion_resume, vars.fusion_resume_bias),
        DocKind::Job => (vars.fusion_job, vars.fusion_job_bias),
    };
    let fused = tape.matmul(flat, w)?;
    Ok(tape.add_row(fused, b)?)
}

/// Dense representation of one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub id: String,
    pub kind: DocKind,
    pub vector: Vec<f32>,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    /// Copy scaled to unit L2 norm (unchanged when the norm is zero).
    pub fn normalized(&self) -> Embedding {
        let norm = dot(&self.vector, &self.vector).sqrt();
        let vector = if norm > 0.0 { self.vector.iter().map(|v| v / norm).collect() } else { self.vector.clone() };
        Embedding { vector, ..self.clone() }
    }
}

pub fn encode_document(doc: &Document, params: &ModelParams) -> Result<Embedding, EncoderError> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params);
    let out = encode_on_tape(&mut tape, &vars, &params.config, &params.schema, doc)?;
    Ok(Embedding { id: doc.id.clone(), kind: doc.kind, vector: tape.value(out).data().to_vec() })
}

/// Encodes documents in parallel; output order matches input order.
pub fn embed_documents<'a, I>(docs: I, params: &ModelParams) -> Result<Vec<Embedding>, EncoderError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let docs: Vec<&Document> = docs.into_iter().collect();
    docs.par_iter().map(|d| encode_document(d, params)).collect()
}

/// Unnormalised inner product.
pub fn score(a: &[f32], b: &[f32]) -> Result<f32, EncoderError> {
    if a.len() != b.len() {
        return Err(EncoderError::DimMismatch(a.len(), b.len()));
    }
    Ok(dot(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FieldEntry;
    use proptest::prelude::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            output_dim: 6,
            heads: 2,
            tokenizer: TokenizerConfig { hash_buckets: 97, max_tokens_per_field: 512 },
            layer_norm_eps: 1e-5,
        }
    }

    fn schema() -> Schema {
        Schema {
            resume: vec!["summary".into(), "skills".into(), "education".into()],
            job: vec!["title".into(), "requirements".into()],
        }
    }

    fn resume(id: &str, summary: &str, skills: &str, education: &str) -> Document {
        Document::new(
            id,
            DocKind::Resume,
            vec![
                FieldEntry::new("summary", summary),
                FieldEntry::new("skills", skills),
                FieldEntry::new("education", education),
            ],
        )
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_basics() {
        let cfg = TokenizerConfig { hash_buckets: 65536, max_tokens_per_field: 512 };
        assert!(tokenize("", &cfg).is_empty());
        let ids = tokenize("Aa aa", &cfg);
        assert_eq!(ids.len(), 2);
        assert_eq!(ids[0], ids[1]);
        let ids = tokenize("machine learning, python", &cfg);
        assert_eq!(ids, vec![
            (fnv1a64(b"machine") % 65536) as usize,
            (fnv1a64(b"learning") % 65536) as usize,
            (fnv1a64(b"python") % 65536) as usize,
        ]);
        let cfg = TokenizerConfig { hash_buckets: 10, max_tokens_per_field: 2 };
        assert_eq!(tokenize("a b c d", &cfg).len(), 2);
    }

    #[test]
    fn two_token_field_is_mean_of_rows() {
        let params = ModelParams::init(small_config(), schema(), 1).unwrap();
        let ids = tokenize("skills: rust", &params.config.tokenizer);
        assert_eq!(ids.len(), 2);
        let v = encode_field("skills", "rust", &params);
        for c in 0..8 {
            let expect = (params.embed.get(ids[0], c) + params.embed.get(ids[1], c)) / 2.0;
            assert!((v[c] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn field_mean_matches_naive_sum() {
        let params = ModelParams::init(small_config(), schema(), 2).unwrap();
        let ids = tokenize("skills: go rust sql java", &params.config.tokenizer);
        assert_eq!(ids.len(), 5);
        let v = encode_field("skills", "go rust sql java", &params);
        for c in 0..8 {
            let sum: f32 = ids.iter().map(|&i| params.embed.get(i, c)).sum();
            assert!((v[c] - sum / 5.0).abs() < 1e-6);
        }
        let t = tokenize("rust", &params.config.tokenizer)[0];
        assert_eq!(encode_field("", "rust", &params), params.embed.row(t).to_vec());
        // No tokens at all.
        assert!(encode_field("", "", &params).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn single_field_document_matches_hand_unrolled_forward() {
        let s = Schema { resume: vec!["skills".into()], job: vec!["title".into()] };
        let params = ModelParams::init(small_config(), s, 3).unwrap();
        let doc = Document::new("r", DocKind::Resume, vec![FieldEntry::new("skills", "rust and sql")]);
        let got = encode_document(&doc, &params).unwrap().vector;

        // One position: attention weight is 1, so the head output is x·Wv.
        let x = encode_field("skills", "rust and sql", &params);
        let xa = Array2::row_vector(x.clone());
        let attn = xa.matmul(&params.wv).unwrap().matmul(&params.wo).unwrap();
        let resid: Vec<f32> = x.iter().zip(attn.data()).map(|(a, b)| a + b).collect();
        let mean = resid.iter().sum::<f32>() / 8.0;
        let var = resid.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 8.0;
        let normed: Vec<f32> = resid.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect();
        let fused = Array2::row_vector(normed).matmul(&params.fusion_resume).unwrap();
        for (c, g) in got.iter().enumerate() {
            let expect = fused.get(0, c) + params.fusion_resume_bias.get(0, c);
            assert!((g - expect).abs() < 1e-5, "{g} vs {expect}");
        }
    }

    #[test]
    fn identical_documents_embed_identically() {
        let params = ModelParams::init(small_config(), schema(), 4).unwrap();
        let a = resume("a", "data engineer", "spark", "msc");
        let b = resume("b", "data engineer", "spark", "msc");
        let ea = encode_document(&a, &params).unwrap();
        let eb = encode_document(&b, &params).unwrap();
        assert_eq!(ea.vector, eb.vector);
        assert_eq!(ea.dim(), 6);
    }

    #[test]
    fn zero_fusion_gives_bias() {
        let mut params = ModelParams::init(small_config(), schema(), 5).unwrap();
        params.fusion_resume.fill(0.0);
        params.fusion_resume_bias = Array2::row_vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e = encode_document(&resume("a", "x y", "z", ""), &params).unwrap();
        assert_eq!(e.vector, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn missing_fields_and_unknown_kind() {
        let params = ModelParams::init(small_config(), schema(), 6).unwrap();
        let partial = Document::new("p", DocKind::Resume, vec![FieldEntry::new("skills", "rust")]);
        let ids = field_token_ids(&partial, &params.config, &params.schema).unwrap();
        assert!(ids[0].is_empty() && ids[2].is_empty());
        assert_eq!(ids[1].len(), 2);
        assert!(encode_document(&partial, &params).is_ok());
        let mut bad = params.clone();
        bad.schema.job.clear();
        let job = Document::new("j", DocKind::Job, vec![FieldEntry::new("title", "x")]);
        assert!(matches!(encode_document(&job, &bad), Err(EncoderError::UnknownKind(DocKind::Job))));
    }

    #[test]
    fn score_is_a_plain_dot_product() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let x = [1.5, -2.0, 0.5];
        assert!((score(&x, &x).unwrap() - 6.5).abs() < 1e-6);
        assert!(matches!(score(&[1.0], &[1.0, 2.0]), Err(EncoderError::DimMismatch(1, 2))));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Array2::randn(1, 8, 1.0, &mut rng);
        let b = Array2::randn(1, 8, 1.0, &mut rng);
        let naive: f64 = a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((score(a.data(), b.data()).unwrap() as f64 - naive).abs() < 1e-5);
    }

    #[test]
    fn checkpoint_round_trip_and_rejections() {
        let params = ModelParams::init(small_config(), schema(), 7).unwrap();
        let bytes = params.to_checkpoint_bytes();
        assert_eq!(&bytes[..7], b"JMATCH1");
        assert_eq!(ModelParams::from_checkpoint_bytes(&bytes).unwrap(), params);

        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(ModelParams::from_checkpoint_bytes(&wrong_magic).is_err());
        assert!(ModelParams::from_checkpoint_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(ModelParams::from_checkpoint_bytes(&extra).is_err());

        // Manifest shape that disagrees with the config.
        let text = String::from_utf8_lossy(&bytes);
        let header_end = 8 + text[8..].find('\n').unwrap();
        let header = text[8..header_end].replacen("\"rows\":97", "\"rows\":96", 1);
        let mut tampered = b"JMATCH1\n".to_vec();
        tampered.extend_from_slice(header.as_bytes());
        tampered.extend_from_slice(&bytes[header_end..]);
        assert!(ModelParams::from_checkpoint_bytes(&tampered).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.heads = 3;
        assert!(ModelParams::init(c, schema(), 0).is_err());
        let mut c = small_config();
        c.tokenizer.hash_buckets = 1;
        assert!(c.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn swapping_distinct_field_values_changes_embedding(
            a in "[a-z]{3,8}( [a-z]{3,8}){0,3}",
            b in "[a-z]{3,8}( [a-z]{3,8}){0,3}",
            seed in 0u64..1000,
        ) {
            prop_assume!(word_tokens(&a) != word_tokens(&b));
            let params = ModelParams::init(small_config(), schema(), seed).unwrap();
            let x = encode_document(&resume("x", &a, &b, "phd"), &params).unwrap();
            let y = encode_document(&resume("y", &b, &a, "phd"), &params).unwrap();
            prop_assert_ne!(x.vector, y.vector);
        }
    }
}
