//! Per-item feature vectors for the three content sources.
//!
//! Vector files share one text format: a `#dim <D>` line followed by one
//! `<item_id> v1 ... vD` line per item, sorted by item id.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::catalog::{Attribute, Catalog, ItemId, ItemRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Metadata,
    Dnn,
    Evf,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Metadata, Source::Dnn, Source::Evf];

    pub fn name(self) -> &'static str {
        match self {
            Source::Metadata => "Metadata",
            Source::Dnn => "DNN",
            Source::Evf => "EVF",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "metadata" => Ok(Source::Metadata),
            "dnn" => Ok(Source::Dnn),
            "evf" => Ok(Source::Evf),
            _ => Err(Error::InvalidConfig(format!("unknown source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "feature vector".into(),
                got: 0,
                expected: 1,
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("component {pos}")));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from precomputed norms; zero vectors are dissimilar to everything.
pub(crate) fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

pub fn cosine(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "cosine".into(),
            got: b.dim(),
            expected: a.dim(),
        });
    }
    Ok(cosine_with_norms(&a.0, a.norm(), &b.0, b.norm()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    source: Source,
    dim: usize,
    vectors: BTreeMap<ItemId, FeatureVector>,
}

impl FeatureStore {
    pub fn new(
        source: Source,
        dim: usize,
        vectors: BTreeMap<ItemId, FeatureVector>,
    ) -> Result<Self> {
        for (id, v) in &vectors {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("item {id}"),
                    got: v.dim(),
                    expected: dim,
                });
            }
        }
        Ok(FeatureStore {
            source,
            dim,
            vectors,
        })
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &ItemId) -> Option<&FeatureVector> {
        self.vectors.get(id)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ItemId, &FeatureVector)> {
        self.vectors.iter()
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "#dim {}", self.dim)?;
        let mut line = String::new();
        for (id, v) in &self.vectors {
            line.clear();
            line.push_str(id.as_str());
            for &x in v.values() {
                line.push(' ');
                push_float(&mut line, x);
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Shortest round-trip representation; exponent form for very small or large magnitudes.
fn push_float(buf: &mut String, x: f64) {
    use std::fmt::Write as _;
    let mag = x.abs();
    if x != 0.0 && !(1e-4..1e16).contains(&mag) {
        let _ = write!(buf, "{x:e}");
    } else {
        let _ = write!(buf, "{x}");
    }
}

fn parse_error(file: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

/// Parses a vector file. DNN stores are L2-normalized row by row.
pub fn parse_vectors<R: Read>(
    reader: R,
    file: &str,
    source: Source,
    expected_dim: Option<usize>,
) -> Result<FeatureStore> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(file, e))?,
        None => return Err(parse_error(file, 1, "missing `#dim` header")),
    };
    let dim: usize = header
        .strip_prefix("#dim ")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| parse_error(file, 1, format!("bad header {header:?}")))?;
    if let Some(expected) = expected_dim {
        if dim != expected {
            return Err(Error::DimensionMismatch {
                context: format!("{file} header"),
                got: dim,
                expected,
            });
        }
    }

    let mut vectors = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i as u64 + 2;
        let line = line.map_err(|e| Error::io(file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let id = ItemId::new(fields.next().unwrap_or_default())
            .map_err(|m| parse_error(file, lineno, m))?;
        let mut values = Vec::with_capacity(dim);
        for field in fields {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_error(file, lineno, format!("bad number {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{file}:{lineno} item {id}")));
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("{file}:{lineno} item {id}"),
                got: values.len(),
                expected: dim,
            });
        }
        if source == Source::Dnn {
            let n = norm(&values);
            if n == 0.0 {
                return Err(Error::ZeroVector(format!("{file}:{lineno} item {id}")));
            }
            values.iter_mut().for_each(|v| *v /= n);
        }
        if vectors.contains_key(&id) {
            return Err(Error::DuplicateItem(id.to_string()));
        }
        vectors.insert(id, FeatureVector(values));
    }
    FeatureStore::new(source, dim, vectors)
}

pub fn load_vectors(
    path: &Path,
    source: Source,
    expected_dim: Option<usize>,
) -> Result<FeatureStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_vectors(file, &path.display().to_string(), source, expected_dim)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    attribute: Attribute,
    values: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(attribute: Attribute, tokens: impl IntoIterator<Item = String>) -> Self {
        let mut values: Vec<String> = tokens.into_iter().collect();
        values.sort();
        values.dedup();
        let index = values
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            attribute,
            values,
            index,
        }
    }

    pub fn attribute(&self) -> Attribute {
        self.attribute
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn position(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn build_vocabularies(catalog: &Catalog) -> Vec<Vocabulary> {
    Attribute::ALL
        .iter()
        .map(|&attr| {
            Vocabulary::new(
                attr,
                catalog
                    .items()
                    .iter()
                    .flat_map(|item| item.attribute(attr).iter().cloned()),
            )
        })
        .collect()
}

/// Concatenated multi-hot blocks in attribute order. May be all zeros.
pub fn encode_metadata(item: &ItemRecord, vocabs: &[Vocabulary]) -> Result<Vec<f64>> {
    let width: usize = vocabs.iter().map(Vocabulary::len).sum();
    let mut out = vec![0.0; width];
    let mut offset = 0;
    for vocab in vocabs {
        for token in item.attribute(vocab.attribute) {
            let pos = vocab.position(token).ok_or_else(|| Error::UnknownToken {
                item: item.id.to_string(),
                attribute: vocab.attribute.name(),
                token: token.clone(),
            })?;
            out[offset + pos] = 1.0;
        }
        offset += vocab.len();
    }
    Ok(out)
}

/// Multi-hot metadata vectors for every catalog item.
pub fn metadata_store(catalog: &Catalog) -> Result<FeatureStore> {
    let vocabs = build_vocabularies(catalog);
    let dim: usize = vocabs.iter().map(Vocabulary::len).sum();
    if dim == 0 {
        return Err(Error::InvalidConfig(
            "catalog has no metadata tokens to encode".into(),
        ));
    }
    let mut vectors = BTreeMap::new();
    for item in catalog.items() {
        vectors.insert(
            item.id.clone(),
            FeatureVector::new(encode_metadata(item, &vocabs)?)?,
        );
    }
    FeatureStore::new(Source::Metadata, dim, vectors)
}
