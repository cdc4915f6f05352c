//! Binary model container shared by every model kind.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"CONVSCAN"
//! version   u32
//! mlen      u32       manifest length in bytes
//! manifest  mlen      UTF-8 text, one record per line
//! payload             f32 arrays, in manifest tensor order
//! crc32     u32       over the payload only
//! ```
//!
//! Manifest records:
//!
//! ```text
//! kind=<lm|scd|author|vectors>
//! meta <key>=<value>
//! strings <name> <count>      followed by <count> escaped lines
//! tensor <name> <rank> <dims...> f32
//! ```
//!
//! Strings escape `\` as `\\`, newline as `\n`, tab as `\t` and carriage
//! return as `\r`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::author::{AuthorWeights, FeatureVocab, ShallowModel};
use crate::error::{Error, Result};
use crate::lm::{LanguageModel, LmWeights};
use crate::lstm::LstmLayerParams;
use crate::math::{ParamSet, Tensor2};
use crate::preprocess::Vocabulary;
use crate::scd::{ConversationSequence, ScdModel, ScdWeights};

pub const MAGIC: [u8; 8] = *b"CONVSCAN";
pub const FORMAT_VERSION: u32 = 1;
/// Largest container `load` will read.
pub const DEFAULT_SIZE_CAP: u64 = 4 << 30;

const PREFIX_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lm,
    Scd,
    Author,
    Vectors,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lm => "lm",
            Self::Scd => "scd",
            Self::Author => "author",
            Self::Vectors => "vectors",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lm" => Self::Lm,
            "scd" => Self::Scd,
            "author" => Self::Author,
            "vectors" => Self::Vectors,
            _ => return Err(Error::Format(format!("unknown container kind {s:?}"))),
        })
    }
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: ModelKind,
    pub meta: BTreeMap<String, String>,
    pub strings: BTreeMap<String, Vec<String>>,
    pub tensors: Vec<(String, Tensor2<f32>)>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        out.push(match chars.next() {
            Some('\\') => '\\',
            Some('n') => '\n',
            Some('t') => '\t',
            Some('r') => '\r',
            other => {
                return Err(Error::Format(format!(
                    "bad escape \\{} in string table",
                    other.unwrap_or(' ')
                )))
            }
        });
    }
    Ok(out)
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Container {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            meta: BTreeMap::new(),
            strings: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor2<f32>) {
        self.tensors.push((name.into(), t));
    }

    pub fn meta<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| fmt_err(format!("{} container lacks meta key {key:?}", self.kind)))?;
        raw.parse().map_err(|_| {
            fmt_err(format!(
                "{} container meta {key}={raw:?} is malformed",
                self.kind
            ))
        })
    }

    pub fn strings(&self, name: &str) -> Result<&[String]> {
        self.strings.get(name).map(Vec::as_slice).ok_or_else(|| {
            fmt_err(format!(
                "{} container lacks string table {name:?}",
                self.kind
            ))
        })
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(fmt_err(format!(
                "expected a {kind} container, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Removes tensors in order, checking names.
    fn take_tensors(&mut self, names: &[String]) -> Result<Vec<Tensor2<f32>>> {
        if self.tensors.len() != names.len() {
            return Err(fmt_err(format!(
                "{} container has {} tensors, expected {}",
                self.kind,
                self.tensors.len(),
                names.len()
            )));
        }
        let mut out = Vec::with_capacity(names.len());
        for ((found, t), want) in std::mem::take(&mut self.tensors).into_iter().zip(names) {
            if &found != want {
                return Err(fmt_err(format!(
                    "tensor {found:?} where {want:?} was expected"
                )));
            }
            out.push(t);
        }
        Ok(out)
    }

    fn manifest(&self) -> String {
        let mut m = format!("kind={}\n", self.kind);
        for (k, v) in &self.meta {
            m.push_str(&format!("meta {k}={}\n", escape(v)));
        }
        for (name, list) in &self.strings {
            m.push_str(&format!("strings {name} {}\n", list.len()));
            for s in list {
                m.push_str(&escape(s));
                m.push('\n');
            }
        }
        for (name, t) in &self.tensors {
            m.push_str(&format!("tensor {name} 2 {} {} f32\n", t.rows(), t.cols()));
        }
        m
    }

    /// Payload size in bytes.
    pub fn payload_len(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len() * 4).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let mut out = Vec::with_capacity(PREFIX_LEN + manifest.len() + self.payload_len() + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        let start = out.len();
        for (_, t) in &self.tensors {
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], cap: u64) -> Result<Self> {
        if bytes.len() as u64 > cap {
            return Err(fmt_err(format!(
                "container is {} bytes, above the {cap}-byte cap",
                bytes.len()
            )));
        }
        if bytes.len() < 8 || bytes[..8] != MAGIC {
            return Err(fmt_err("not a model container (bad magic)"));
        }
        if bytes.len() < PREFIX_LEN {
            return Err(Error::Corruption(
                "container truncated inside the header".into(),
            ));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let payload_start = PREFIX_LEN
            .checked_add(mlen)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Corruption("container truncated inside the manifest".into()))?;
        let manifest = std::str::from_utf8(&bytes[PREFIX_LEN..payload_start])
            .map_err(|_| fmt_err("manifest is not UTF-8"))?;
        let (mut c, shapes) = parse_manifest(manifest)?;

        let mut expected: u64 = 0;
        for &(r, k) in &shapes {
            let n = (r as u64)
                .checked_mul(k as u64)
                .and_then(|n| n.checked_mul(4));
            expected = n
                .and_then(|n| expected.checked_add(n))
                .filter(|&e| e <= cap)
                .ok_or_else(|| fmt_err("tensor sizes exceed the size cap"))?;
        }
        let body = &bytes[payload_start..];
        if (body.len() as u64) != expected + 4 {
            return Err(Error::Corruption(format!(
                "payload is {} bytes, manifest describes {} plus checksum",
                body.len(),
                expected
            )));
        }
        let (payload, crc) = body.split_at(expected as usize);
        let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(Error::Corruption("payload checksum mismatch".into()));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")));
        for (i, (r, k)) in shapes.into_iter().enumerate() {
            let data: Vec<f32> = floats.by_ref().take(r * k).collect();
            c.tensors[i].1 = Tensor2::from_vec(r, k, data)?;
        }
        Ok(c)
    }
}

fn parse_manifest(text: &str) -> Result<(Container, Vec<(usize, usize)>)> {
    let mut lines = text.lines();
    let kind = lines
        .next()
        .and_then(|l| l.strip_prefix("kind="))
        .ok_or_else(|| fmt_err("manifest does not start with kind="))?
        .parse()?;
    let mut c = Container::new(kind);
    let mut shapes = Vec::new();
    let num = |s: Option<&str>, what: &str| -> Result<usize> {
        s.and_then(|x| x.parse().ok())
            .ok_or_else(|| fmt_err(format!("manifest: bad {what}")))
    };
    while let Some(line) = lines.next() {
        let mut parts = line.split(' ');
        match parts.next() {
            Some("meta") => {
                let rest = &line[5..];
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| fmt_err(format!("manifest: bad meta line {line:?}")))?;
                c.meta.insert(k.to_string(), unescape(v)?);
            }
            Some("strings") => {
                let name = parts
                    .next()
                    .ok_or_else(|| fmt_err("manifest: unnamed string table"))?;
                let count = num(parts.next(), "string count")?;
                let mut list = Vec::new();
                for _ in 0..count {
                    let l = lines.next().ok_or_else(|| {
                        fmt_err(format!("manifest: string table {name} is short"))
                    })?;
                    list.push(unescape(l)?);
                }
                c.strings.insert(name.to_string(), list);
            }
            Some("tensor") => {
                let name = parts
                    .next()
                    .ok_or_else(|| fmt_err("manifest: unnamed tensor"))?;
                let rank = num(parts.next(), "tensor rank")?;
                let dims: Vec<usize> = (0..rank)
                    .map(|_| num(parts.next(), "tensor dim"))
                    .collect::<Result<_>>()?;
                if parts.next() != Some("f32") || parts.next().is_some() {
                    return Err(fmt_err(format!("manifest: tensor {name} must be f32")));
                }
                let shape = match dims[..] {
                    [n] => (1, n),
                    [r, k] => (r, k),
                    _ => return Err(fmt_err(format!("manifest: tensor {name} has rank {rank}"))),
                };
                shapes.push(shape);
                c.tensors.push((name.to_string(), Tensor2::zeros(0, 0)));
            }
            _ => return Err(fmt_err(format!("manifest: unrecognized line {line:?}"))),
        }
    }
    Ok((c, shapes))
}

/// Writes atomically (temp file in the destination directory, then rename).
/// Returns the byte count.
pub fn save_container(c: &Container, path: &Path) -> Result<u64> {
    let bytes = c.to_bytes();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(bytes.len() as u64)
}

pub fn load_container(path: &Path, cap: u64) -> Result<Container> {
    let len = std::fs::metadata(path)
        .map_err(|e| Error::io(path, e))?
        .len();
    if len > cap {
        return Err(fmt_err(format!(
            "{} is {len} bytes, above the {cap}-byte cap",
            path.display()
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes, cap)
}

/// Conversion between a model and its container form.
pub trait Persist: Sized {
    const KIND: ModelKind;

    fn to_container(&self) -> Container;

    fn from_container(c: Container) -> Result<Self>;
}

pub fn save<M: Persist>(model: &M, path: &Path) -> Result<u64> {
    save_container(&model.to_container(), path)
}

pub fn load<M: Persist>(path: &Path) -> Result<M> {
    M::from_container(load_container(path, DEFAULT_SIZE_CAP)?)
}

/// Any model kind, as named by a container's manifest.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Lm(LanguageModel<f32>),
    Scd(ScdModel<f32>),
    Author(ShallowModel<f32>),
    Vectors(Vec<ConversationSequence<f32>>),
}

pub fn load_any(path: &Path) -> Result<AnyModel> {
    let c = load_container(path, DEFAULT_SIZE_CAP)?;
    Ok(match c.kind {
        ModelKind::Lm => AnyModel::Lm(Persist::from_container(c)?),
        ModelKind::Scd => AnyModel::Scd(Persist::from_container(c)?),
        ModelKind::Author => AnyModel::Author(Persist::from_container(c)?),
        ModelKind::Vectors => AnyModel::Vectors(Persist::from_container(c)?),
    })
}

const GATES: [&str; 8] = ["u_i", "u_f", "u_o", "u_g", "w_i", "w_f", "w_o", "w_g"];
const BIASES: [&str; 4] = ["b_i", "b_f", "b_o", "b_g"];

fn layer_names(prefix: &str, bias: bool) -> Vec<String> {
    let mut v: Vec<String> = GATES.iter().map(|g| format!("{prefix}.{g}")).collect();
    if bias {
        v.extend(BIASES.iter().map(|b| format!("{prefix}.{b}")));
    }
    v
}

fn push_params<P: ParamSet<f32>>(c: &mut Container, names: &[String], params: &P) {
    for (n, t) in names.iter().zip(params.tensors()) {
        c.push_tensor(n.clone(), t.clone());
    }
}

/// Fills a zero-shaped template, checking every shape.
fn fill_params<P: ParamSet<f32>>(
    template: &mut P,
    names: &[String],
    tensors: Vec<Tensor2<f32>>,
) -> Result<()> {
    for ((slot, t), name) in template.tensors_mut().into_iter().zip(tensors).zip(names) {
        if slot.shape() != t.shape() {
            return Err(Error::shape(
                "container tensor",
                format!("{name} {}", slot.shape_str()),
                t.shape_str(),
            ));
        }
        *slot = t;
    }
    Ok(())
}

fn lm_names(bias: bool) -> Vec<String> {
    let mut v = vec!["embedding".to_string()];
    v.extend(layer_names("lower", bias));
    v.extend(layer_names("upper", bias));
    v.extend(["output_w".to_string(), "output_b".to_string()]);
    v
}

impl Persist for LanguageModel<f32> {
    const KIND: ModelKind = ModelKind::Lm;

    fn to_container(&self) -> Container {
        let mut c = Container::new(Self::KIND);
        let cfg = self.config();
        c.set_meta("embed_dim", cfg.embed_dim);
        c.set_meta("hidden_dim", cfg.hidden_dim);
        c.set_meta("bias", cfg.bias);
        c.set_meta("min_tf", self.vocab.min_term_frequency());
        c.strings
            .insert("vocab".into(), self.vocab.tokens().to_vec());
        push_params(&mut c, &lm_names(cfg.bias), &self.weights);
        c
    }

    fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let (d, h, bias): (usize, usize, bool) =
            (c.meta("embed_dim")?, c.meta("hidden_dim")?, c.meta("bias")?);
        let vocab = Vocabulary::from_token_list(c.strings("vocab")?.to_vec(), c.meta("min_tf")?)?;
        let v = vocab.len();
        let names = lm_names(bias);
        let tensors = c.take_tensors(&names)?;
        let mut weights = LmWeights {
            embedding: Tensor2::zeros(v, d),
            lower: LstmLayerParams::zeros(d, h, bias),
            upper: LstmLayerParams::zeros(h, h, bias),
            output_w: Tensor2::zeros(h, v),
            output_b: Tensor2::zeros(1, v),
        };
        fill_params(&mut weights, &names, tensors)?;
        let m = LanguageModel { vocab, weights };
        m.validate()?;
        Ok(m)
    }
}

fn scd_names(bias: bool) -> Vec<String> {
    let mut v = layer_names("lower", bias);
    v.extend(layer_names("upper", bias));
    v.extend(["head_w".to_string(), "head_b".to_string()]);
    v
}

impl Persist for ScdModel<f32> {
    const KIND: ModelKind = ModelKind::Scd;

    fn to_container(&self) -> Container {
        let mut c = Container::new(Self::KIND);
        let cfg = self.config();
        c.set_meta("input_dim", self.input_dim());
        c.set_meta("hidden_dim", cfg.hidden_dim);
        c.set_meta("chunk_len", cfg.chunk_len);
        c.set_meta("bias", cfg.bias);
        c.set_meta("masked", cfg.masked);
        push_params(&mut c, &scd_names(cfg.bias), &self.weights);
        c
    }

    fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let (x, h, bias): (usize, usize, bool) =
            (c.meta("input_dim")?, c.meta("hidden_dim")?, c.meta("bias")?);
        let names = scd_names(bias);
        let tensors = c.take_tensors(&names)?;
        let mut weights = ScdWeights {
            lower: LstmLayerParams::zeros(x, h, bias),
            upper: LstmLayerParams::zeros(h, h, bias),
            head_w: Tensor2::zeros(h, 1),
            head_b: Tensor2::zeros(1, 1),
        };
        fill_params(&mut weights, &names, tensors)?;
        let m = ScdModel {
            weights,
            chunk_len: c.meta("chunk_len")?,
            masked: c.meta("masked")?,
        };
        m.validate()?;
        Ok(m)
    }
}

const AUTHOR_NAMES: [&str; 3] = ["embedding", "class_w", "class_b"];

impl Persist for ShallowModel<f32> {
    const KIND: ModelKind = ModelKind::Author;

    fn to_container(&self) -> Container {
        let mut c = Container::new(Self::KIND);
        c.set_meta("dim", self.dim());
        c.set_meta("bigrams", self.features.uses_bigrams());
        c.strings
            .insert("features".into(), self.features.features().to_vec());
        let names: Vec<String> = AUTHOR_NAMES.iter().map(|s| s.to_string()).collect();
        push_params(&mut c, &names, &self.weights);
        c
    }

    fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let dim: usize = c.meta("dim")?;
        let features =
            FeatureVocab::from_features(c.strings("features")?.to_vec(), c.meta("bigrams")?)?;
        let names: Vec<String> = AUTHOR_NAMES.iter().map(|s| s.to_string()).collect();
        let tensors = c.take_tensors(&names)?;
        let mut weights = AuthorWeights {
            embedding: Tensor2::zeros(features.len(), dim),
            class_w: Tensor2::zeros(dim, 3),
            class_b: Tensor2::zeros(1, 3),
        };
        fill_params(&mut weights, &names, tensors)?;
        let m = ShallowModel { features, weights };
        m.validate()?;
        Ok(m)
    }
}

fn label_code(l: Option<bool>) -> &'static str {
    match l {
        Some(true) => "1",
        Some(false) => "0",
        None => "-",
    }
}

/// Sentence-vector sequences: one stacked tensor plus an index table of
/// `id<TAB>rows<TAB>label` entries.
impl Persist for Vec<ConversationSequence<f32>> {
    const KIND: ModelKind = ModelKind::Vectors;

    fn to_container(&self) -> Container {
        let mut c = Container::new(Self::KIND);
        let dim = self.first().map_or(0, |s| s.vectors.cols());
        c.set_meta("dim", dim);
        let index = self
            .iter()
            .map(|s| format!("{}\t{}\t{}", s.id, s.vectors.rows(), label_code(s.label)))
            .collect();
        c.strings.insert("conversations".into(), index);
        let mut data = Vec::new();
        for s in self {
            data.extend_from_slice(s.vectors.as_slice());
        }
        let rows = data.len().checked_div(dim).unwrap_or(0);
        c.push_tensor(
            "vectors",
            Tensor2::from_vec(rows, dim, data).expect("consistent dims"),
        );
        c
    }

    fn from_container(mut c: Container) -> Result<Self> {
        c.expect_kind(Self::KIND)?;
        let dim: usize = c.meta("dim")?;
        let index = c.strings("conversations")?.to_vec();
        let all = c.take_tensors(&["vectors".to_string()])?.remove(0);
        if all.cols() != dim && all.rows() > 0 {
            return Err(Error::shape(
                "vectors",
                format!("dim {dim}"),
                all.shape_str(),
            ));
        }
        let mut out = Vec::with_capacity(index.len());
        let mut offset = 0usize;
        for entry in &index {
            let bad = || fmt_err(format!("bad vectors index entry {entry:?}"));
            let f: Vec<&str> = entry.rsplitn(3, '\t').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let (label, rows, id) = (f[0], f[1], f[2]);
            let rows: usize = rows.parse().map_err(|_| bad())?;
            let label = match label {
                "1" => Some(true),
                "0" => Some(false),
                "-" => None,
                _ => return Err(bad()),
            };
            let end = offset + rows;
            if end > all.rows() {
                return Err(fmt_err("vectors index describes more rows than stored"));
            }
            let vectors =
                Tensor2::from_vec(rows, dim, all.as_slice()[offset * dim..end * dim].to_vec())?;
            out.push(ConversationSequence {
                id: id.to_string(),
                vectors,
                label,
            });
            offset = end;
        }
        if offset != all.rows() {
            return Err(fmt_err("vectors index does not cover every stored row"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;
    use crate::math::Rng;
    use crate::scd::ScdConfig;

    fn tiny_lm() -> LanguageModel<f32> {
        let vocab = Vocabulary::from_tokens(["hi", "there", "tab\tbed"]);
        LanguageModel::new(
            vocab,
            &LmConfig {
                embed_dim: 3,
                hidden_dim: 2,
                bias: true,
            },
            &mut Rng::new(1),
        )
    }

    #[test]
    fn escaping_roundtrip() {
        for s in ["plain", "a\\b", "x\ny", "t\tab\r", "\\n literal"] {
            assert_eq!(unescape(&escape(s)).unwrap(), s);
        }
        assert!(unescape("bad\\q").is_err());
    }

    #[test]
    fn size_arithmetic() {
        let m = tiny_lm();
        let c = m.to_container();
        let bytes = c.to_bytes();
        let manifest_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let floats: usize = m.weights.tensors().iter().map(|t| t.len()).sum();
        assert_eq!(bytes.len(), PREFIX_LEN + manifest_len + floats * 4 + 4);
    }

    #[test]
    fn roundtrip_in_memory() {
        let m = tiny_lm();
        let back = LanguageModel::from_container(
            Container::from_bytes(&m.to_container().to_bytes(), DEFAULT_SIZE_CAP).unwrap(),
        )
        .unwrap();
        assert_eq!(back, m);

        let s = ScdModel::<f32>::new(
            2,
            &ScdConfig {
                hidden_dim: 3,
                chunk_len: 7,
                bias: false,
                masked: false,
            },
            &mut Rng::new(2),
        );
        let back = ScdModel::from_container(
            Container::from_bytes(&s.to_container().to_bytes(), DEFAULT_SIZE_CAP).unwrap(),
        )
        .unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_damage() {
        let bytes = tiny_lm().to_container().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Container::from_bytes(&bad, DEFAULT_SIZE_CAP),
            Err(Error::Format(_))
        ));

        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        match Container::from_bytes(&bad, DEFAULT_SIZE_CAP) {
            Err(Error::Version { found, supported }) => assert_eq!((found, supported), (2, 1)),
            other => panic!("{other:?}"),
        }

        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 0x40;
        assert!(matches!(
            Container::from_bytes(&bad, DEFAULT_SIZE_CAP),
            Err(Error::Corruption(_))
        ));

        for cut in [10, 20, bytes.len() - 1] {
            assert!(matches!(
                Container::from_bytes(&bytes[..cut], DEFAULT_SIZE_CAP),
                Err(Error::Corruption(_))
            ));
        }
        assert!(matches!(
            Container::from_bytes(&bytes, 100),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn huge_declared_shape_is_refused() {
        let manifest = "kind=scd\ntensor x 2 4000000000 4000000000 f32\n";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        bytes.extend_from_slice(manifest.as_bytes());
        bytes.extend_from_slice(&[0; 4]);
        assert!(matches!(
            Container::from_bytes(&bytes, DEFAULT_SIZE_CAP),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn wrong_kind_is_format_error() {
        let c = tiny_lm().to_container();
        assert!(matches!(ScdModel::from_container(c), Err(Error::Format(_))));
    }

    #[test]
    fn vectors_roundtrip() {
        let seqs = vec![
            ConversationSequence {
                id: "a b".into(),
                vectors: Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                label: Some(true),
            },
            ConversationSequence {
                id: "c".into(),
                vectors: Tensor2::from_vec(1, 2, vec![-0.5, f32::MIN_POSITIVE]).unwrap(),
                label: None,
            },
        ];
        let c = Container::from_bytes(&seqs.to_container().to_bytes(), DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(
            Vec::<ConversationSequence<f32>>::from_container(c).unwrap(),
            seqs
        );
    }
}
