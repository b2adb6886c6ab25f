//! Immutable in-memory relations.
//!
//! A [`Relation`] stores its tuples row-major in one flat buffer and keeps a
//! hash index per join attribute. Indexes are built once after ingestion;
//! from then on the relation is only read, so it can be shared freely across
//! threads. Frequency statistics (the maximum number of rows sharing one value
//! combination) are derived from the same data and cached in
//! [`FrequencyStats`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An opaque attribute value. Only equality and hashing matter for joins;
/// the ordering (integers before strings) is used for deterministic iteration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Str(Arc<str>),
}

impl Value {
    /// Parses a CSV field: integers become [`Value::Int`], anything else a string token.
    pub fn parse(field: &str) -> Value {
        match field.trim().parse::<i64>() {
            Ok(i) => Value::Int(i),
            Err(_) => Value::Str(Arc::from(field.trim())),
        }
    }

    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::parse(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

/// Hash index of one attribute: value → ids of the rows holding it.
#[derive(Clone, Debug, Default)]
pub struct AttrIndex {
    entries: HashMap<Value, Vec<u32>>,
    sorted: Vec<Value>,
}

impl AttrIndex {
    fn build(rel: &Relation, col: usize) -> Self {
        let mut entries: HashMap<Value, Vec<u32>> = HashMap::new();
        for (id, row) in rel.rows().enumerate() {
            entries.entry(row[col].clone()).or_default().push(id as u32);
        }
        let mut sorted: Vec<Value> = entries.keys().cloned().collect();
        sorted.sort();
        AttrIndex { entries, sorted }
    }

    /// Rows holding `v`; empty when the value is absent.
    pub fn rows(&self, v: &Value) -> &[u32] {
        self.entries.get(v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct values in ascending order.
    pub fn values(&self) -> &[Value] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Largest entry size, 0 for an empty index.
    pub fn max_entry(&self) -> usize {
        self.entries.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Value, &[u32])> {
        self.entries.iter().map(|(v, r)| (v, r.as_slice()))
    }
}

/// Row lookup by value on one column.
#[derive(Debug)]
pub enum ColumnLookup<'a> {
    Index(&'a AttrIndex),
    Local(HashMap<Value, Vec<u32>>),
}

impl ColumnLookup<'_> {
    pub fn rows(&self, v: &Value) -> &[u32] {
        match self {
            ColumnLookup::Index(idx) => idx.rows(v),
            ColumnLookup::Local(m) => m.get(v).map(Vec::as_slice).unwrap_or(&[]),
        }
    }
}

/// A named table of tuples over opaque values.
#[derive(Clone, Debug)]
pub struct Relation {
    name: String,
    attributes: Vec<String>,
    data: Vec<Value>,
    len: usize,
    indexes: BTreeMap<usize, AttrIndex>,
}

impl Relation {
    pub fn new(name: impl Into<String>, attributes: Vec<String>) -> Self {
        Relation {
            name: name.into(),
            attributes,
            data: Vec::new(),
            len: 0,
            indexes: BTreeMap::new(),
        }
    }

    /// Builds a relation from in-memory rows; every row must match the arity.
    pub fn from_rows<I, R>(name: impl Into<String>, attributes: &[&str], rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = Value>,
    {
        let mut rel = Relation::new(name, attributes.iter().map(|s| s.to_string()).collect());
        for (line, row) in rows.into_iter().enumerate() {
            let row: Vec<Value> = row.into_iter().collect();
            if row.len() != rel.arity() {
                return Err(Error::schema(format!(
                    "{}: row {line} has {} values, expected {}",
                    rel.name,
                    row.len(),
                    rel.arity()
                )));
            }
            rel.push_row(row);
        }
        Ok(rel)
    }

    fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.arity());
        self.data.extend(row);
        self.len += 1;
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn arity(&self) -> usize {
        self.attributes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, id: usize) -> &[Value] {
        let a = self.arity();
        &self.data[id * a..(id + 1) * a]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[Value]> + '_ {
        let a = self.arity().max(1);
        // Zero-arity relations still have `len` (empty) rows.
        (0..self.len).map(move |i| {
            if self.arity() == 0 {
                &[][..]
            } else {
                &self.data[i * a..(i + 1) * a]
            }
        })
    }

    /// Column position of `attr`.
    pub fn column(&self, attr: &str) -> Result<usize> {
        self.attributes
            .iter()
            .position(|a| a == attr)
            .ok_or_else(|| Error::schema(format!("relation {} has no attribute {attr}", self.name)))
    }

    /// Builds (or rebuilds) the hash index on `attr`.
    pub fn build_index(mut self, attr: &str) -> Result<Self> {
        let col = self.column(attr)?;
        let idx = AttrIndex::build(&self, col);
        self.indexes.insert(col, idx);
        Ok(self)
    }

    /// Builds indexes on every attribute.
    pub fn build_all_indexes(mut self) -> Self {
        for col in 0..self.arity() {
            let idx = AttrIndex::build(&self, col);
            self.indexes.insert(col, idx);
        }
        self
    }

    pub fn index(&self, col: usize) -> Option<&AttrIndex> {
        self.indexes.get(&col)
    }

    pub fn index_on(&self, attr: &str) -> Result<&AttrIndex> {
        let col = self.column(attr)?;
        self.index(col)
            .ok_or_else(|| Error::schema(format!("no index on {}.{attr}", self.name)))
    }

    /// Value → row ids for `col`, borrowing the built index when there is one.
    pub fn lookup(&self, col: usize) -> ColumnLookup<'_> {
        match self.index(col) {
            Some(idx) => ColumnLookup::Index(idx),
            None => {
                let mut m: HashMap<Value, Vec<u32>> = HashMap::new();
                for (id, row) in self.rows().enumerate() {
                    m.entry(row[col].clone()).or_default().push(id as u32);
                }
                ColumnLookup::Local(m)
            }
        }
    }

    /// Histogram of value combinations over the given columns.
    pub fn histogram(&self, cols: &[usize]) -> HashMap<Vec<Value>, usize> {
        let mut h: HashMap<Vec<Value>, usize> = HashMap::new();
        for row in self.rows() {
            let key: Vec<Value> = cols.iter().map(|&c| row[c].clone()).collect();
            *h.entry(key).or_default() += 1;
        }
        h
    }

    /// Maximum number of rows sharing one value combination over `cols`.
    pub fn max_frequency_cols(&self, cols: &[usize]) -> usize {
        if self.is_empty() {
            return 0;
        }
        if cols.is_empty() {
            return self.len;
        }
        if let [c] = cols {
            if let Some(idx) = self.index(*c) {
                return idx.max_entry();
            }
        }
        self.histogram(cols).into_values().max().unwrap_or(0)
    }

    /// Maximum frequency over an attribute set, the `mf` statistic.
    pub fn max_frequency(&self, attrs: &[&str]) -> Result<usize> {
        let cols = attrs.iter().map(|a| self.column(a)).collect::<Result<Vec<_>>>()?;
        Ok(self.max_frequency_cols(&cols))
    }

    /// Sorted distinct values of `attr`.
    pub fn distinct_values(&self, attr: &str) -> Result<Vec<Value>> {
        let col = self.column(attr)?;
        if let Some(idx) = self.index(col) {
            return Ok(idx.values().to_vec());
        }
        let mut vals: Vec<Value> = self.rows().map(|r| r[col].clone()).collect();
        vals.sort();
        vals.dedup();
        Ok(vals)
    }
}

/// Loads a comma-separated file whose first line is the header.
///
/// The relation is named after the file stem. When `schema` is given the
/// header must match it exactly.
pub fn load_csv(path: impl AsRef<Path>, schema: Option<&[&str]>) -> Result<Relation> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::schema(format!("bad file name {}", path.display())))?
        .to_string();
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if let Some(schema) = schema {
        if header.iter().map(String::as_str).ne(schema.iter().copied()) {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                line: 1,
                message: format!("header {header:?} does not match schema {schema:?}"),
            });
        }
    }
    let mut rel = Relation::new(name, header);
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // line 1 is the header
        let line = i + 2;
        if record.len() != rel.arity() {
            return Err(Error::Ingest {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", rel.arity(), record.len()),
            });
        }
        rel.push_row(record.iter().map(Value::parse).collect());
    }
    Ok(rel)
}

/// Writes a relation in the same CSV layout [`load_csv`] reads.
pub fn write_csv(rel: &Relation, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(rel.attributes())?;
    for row in rel.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// A set of named relations.
#[derive(Clone, Debug, Default)]
pub struct Database {
    relations: BTreeMap<String, Relation>,
}

impl Database {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, rel: Relation) {
        self.relations.insert(rel.name().to_string(), rel);
    }

    pub fn with(mut self, rel: Relation) -> Self {
        self.insert(rel);
        self
    }

    pub fn get(&self, name: &str) -> Result<&Relation> {
        self.relations
            .get(name)
            .ok_or_else(|| Error::schema(format!("unknown relation {name}")))
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Loads every `*.csv` file of a directory, indexing all attributes.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        let mut db = Database::new();
        for p in paths {
            db.insert(load_csv(&p, None)?.build_all_indexes());
        }
        Ok(db)
    }

    /// Rebuilds indexes on every attribute of every relation.
    pub fn indexed(self) -> Self {
        Database {
            relations: self
                .relations
                .into_iter()
                .map(|(k, r)| (k, r.build_all_indexes()))
                .collect(),
        }
    }
}

/// Cached maximum-frequency statistics keyed by relation and attribute set.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FrequencyStats {
    entries: BTreeMap<String, AttrStat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrStat {
    pub max_frequency: usize,
    pub distinct_count: usize,
}

impl FrequencyStats {
    fn key(relation: &str, attrs: &[String]) -> String {
        let mut a = attrs.to_vec();
        a.sort();
        format!("{relation}({})", a.join(","))
    }

    /// Computes and stores the statistic for one attribute set.
    pub fn record(&mut self, rel: &Relation, cols: &[usize]) {
        let attrs: Vec<String> = cols.iter().map(|&c| rel.attributes()[c].clone()).collect();
        let key = Self::key(rel.name(), &attrs);
        if self.entries.contains_key(&key) {
            return;
        }
        let hist = rel.histogram(cols);
        let stat = AttrStat {
            max_frequency: hist.values().copied().max().unwrap_or(0),
            distinct_count: hist.len(),
        };
        self.entries.insert(key, stat);
    }

    pub fn get(&self, relation: &str, attrs: &[String]) -> Option<AttrStat> {
        self.entries.get(&Self::key(relation, attrs)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &AttrStat)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}
