//! Dataset ingestion, discretization and the multi-pass streaming contract.
//!
//! A [`Dataset`] is either held in memory (column-major) or left on disk and
//! re-parsed on every pass. Learners only ever see it through
//! [`Dataset::for_each`] / [`stream_passes`], so the same code runs in both
//! modes and on-disk training never materializes the instance table.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw cell content that denotes a missing value.
pub const MISSING_LABEL: &str = "";

/// Value index used at prediction time for a raw value never seen in training.
pub const UNKNOWN: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Categorical,
    Numeric,
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "categorical" | "nominal" | "discrete" => Ok(AttributeKind::Categorical),
            "numeric" | "continuous" | "real" => Ok(AttributeKind::Numeric),
            other => Err(Error::invalid(format!("unknown attribute kind '{other}'"))),
        }
    }
}

/// Selects the class column by header name or zero-based position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
    /// The rightmost column.
    #[default]
    Last,
}

impl FromStr for ColumnRef {
    type Err = Error;

    /// A position, `-1` for the last column, or a header name.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) if s == "-1" => ColumnRef::Last,
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

impl ColumnRef {
    fn resolve(&self, headers: &[String]) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < headers.len() => Ok(*i),
            ColumnRef::Index(i) => Err(Error::schema(format!(
                "class column {i} out of range ({} columns)",
                headers.len()
            ))),
            ColumnRef::Name(name) => headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::schema(format!("no column named '{name}'"))),
            ColumnRef::Last => headers.len().checked_sub(1).ok_or_else(|| Error::schema("no columns")),
        }
    }
}

/// Thresholds that split a numeric attribute into `thresholds.len() + 1` bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPoints {
    pub attribute: usize,
    pub thresholds: Vec<f64>,
}

impl CutPoints {
    pub fn bins(&self) -> usize {
        self.thresholds.len() + 1
    }

    /// Bin index of `value`; a value equal to a threshold falls to its left.
    pub fn bin(&self, value: f64) -> u32 {
        self.thresholds.partition_point(|&t| t < value) as u32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    /// Categorical labels in first-seen order. A missing value is the label `""`.
    #[serde(default)]
    pub labels: Vec<String>,
    /// Discretization of a numeric attribute, once learned.
    #[serde(default)]
    pub cuts: Option<CutPoints>,
    /// Whether any instance of the source lacks a value for this attribute.
    #[serde(default)]
    pub has_missing: bool,
}

impl Attribute {
    fn categorical(name: String, labels: Vec<String>) -> Self {
        let has_missing = labels.iter().any(|l| l == MISSING_LABEL);
        Attribute {
            name,
            kind: AttributeKind::Categorical,
            labels,
            cuts: None,
            has_missing,
        }
    }

    /// Number of discrete values, or `None` for a numeric attribute that has
    /// not been discretized yet.
    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            AttributeKind::Categorical => Some(self.labels.len()),
            AttributeKind::Numeric => self.cuts.as_ref().map(|c| c.bins() + usize::from(self.has_missing)),
        }
    }

    /// Index of the reserved missing value, if any.
    pub fn missing_index(&self) -> Option<u32> {
        match self.kind {
            AttributeKind::Categorical => self.labels.iter().position(|l| l == MISSING_LABEL).map(|i| i as u32),
            AttributeKind::Numeric => match (&self.cuts, self.has_missing) {
                (Some(c), true) => Some(c.bins() as u32),
                _ => None,
            },
        }
    }

    /// Human-readable name of value `v`.
    pub fn value_label(&self, v: u32) -> String {
        if Some(v) == self.missing_index() {
            return "?".to_string();
        }
        match self.kind {
            AttributeKind::Categorical => self
                .labels
                .get(v as usize)
                .cloned()
                .unwrap_or_else(|| "<unknown>".into()),
            AttributeKind::Numeric => match &self.cuts {
                Some(c) => {
                    let v = v as usize;
                    let lo = if v == 0 {
                        "-inf".to_string()
                    } else {
                        c.thresholds[v - 1].to_string()
                    };
                    let hi = c
                        .thresholds
                        .get(v)
                        .map(|t| t.to_string())
                        .unwrap_or_else(|| "inf".into());
                    format!("({lo}, {hi}]")
                }
                None => format!("bin{v}"),
            },
        }
    }
}

/// Attributes (class excluded, file order) plus the class variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub attributes: Vec<Attribute>,
    pub class: Attribute,
    /// Position of the class column in the source file.
    pub class_index: usize,
}

impl Schema {
    /// All-categorical schema with attributes `x0..`, class `y` last, and
    /// value labels `v0..`.
    pub fn categorical(cards: &[usize], classes: usize) -> Schema {
        let attr =
            |name: String, card: usize| Attribute::categorical(name, (0..card).map(|v| format!("v{v}")).collect());
        Schema {
            attributes: cards
                .iter()
                .enumerate()
                .map(|(i, &c)| attr(format!("x{i}"), c))
                .collect(),
            class: attr("y".into(), classes),
            class_index: cards.len(),
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class.labels.len()
    }

    /// Cardinality of attribute `i`; panics on an undiscretized numeric attribute.
    pub fn cardinality(&self, i: usize) -> usize {
        self.attributes[i]
            .cardinality()
            .unwrap_or_else(|| panic!("attribute '{}' is not discretized", self.attributes[i].name))
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        (0..self.n_attributes()).map(|i| self.cardinality(i)).collect()
    }

    /// True once every attribute has a finite value set.
    pub fn is_discrete(&self) -> bool {
        self.attributes.iter().all(|a| a.cardinality().is_some())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes() < 2 {
            return Err(Error::schema(format!(
                "class '{}' needs at least 2 values, found {}",
                self.class.name,
                self.n_classes()
            )));
        }
        for a in &self.attributes {
            if let Some(0) = a.cardinality() {
                return Err(Error::schema(format!("attribute '{}' has no values", a.name)));
            }
        }
        Ok(())
    }

    fn require_discrete(&self) -> Result<()> {
        match self.attributes.iter().find(|a| a.cardinality().is_none()) {
            Some(a) => Err(Error::schema(format!(
                "numeric attribute '{}' must be discretized before streaming",
                a.name
            ))),
            None => Ok(()),
        }
    }

    /// Builds an encoder from raw CSV records with the given header to instances.
    ///
    /// With `allow_unknown`, raw values absent from the schema map to
    /// [`UNKNOWN`] and a missing class column yields `y = 0`; otherwise both
    /// are errors.
    pub fn encoder(&self, headers: &[String], allow_unknown: bool) -> Result<RecordEncoder> {
        self.require_discrete()?;
        let mut slots = vec![Slot::Skip; headers.len()];
        let mut seen = vec![false; self.n_attributes()];
        let mut class_seen = false;
        for (col, h) in headers.iter().enumerate() {
            if *h == self.class.name {
                slots[col] = Slot::Class;
                class_seen = true;
            } else if let Some(i) = self.attributes.iter().position(|a| a.name == *h) {
                slots[col] = Slot::Attr(i);
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::schema(format!(
                "column '{}' missing from input",
                self.attributes[i].name
            )));
        }
        if !class_seen && !allow_unknown {
            return Err(Error::schema(format!(
                "class column '{}' missing from input",
                self.class.name
            )));
        }
        let lookup = |a: &Attribute| -> HashMap<String, u32> {
            a.labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), i as u32))
                .collect()
        };
        Ok(RecordEncoder {
            slots,
            lookups: self.attributes.iter().map(lookup).collect(),
            class_lookup: lookup(&self.class),
            attributes: self.attributes.clone(),
            allow_unknown,
            has_class: class_seen,
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Skip,
    Attr(usize),
    Class,
}

/// Maps raw CSV records onto value indices of a fixed [`Schema`].
#[derive(Debug)]
pub struct RecordEncoder {
    slots: Vec<Slot>,
    lookups: Vec<HashMap<String, u32>>,
    class_lookup: HashMap<String, u32>,
    attributes: Vec<Attribute>,
    allow_unknown: bool,
    has_class: bool,
}

impl RecordEncoder {
    /// Whether the input carries the class column.
    pub fn has_class(&self) -> bool {
        self.has_class
    }

    pub fn encode(&self, record: &csv::StringRecord, row: usize, out: &mut Instance) -> Result<()> {
        out.x.resize(self.attributes.len(), 0);
        out.y = 0;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            match self.slots.get(col).copied().unwrap_or(Slot::Skip) {
                Slot::Skip => {}
                Slot::Class => {
                    out.y = match self.class_lookup.get(cell) {
                        Some(&v) => v,
                        None if self.allow_unknown => UNKNOWN,
                        None => {
                            return Err(Error::Parse {
                                row,
                                msg: format!("unseen class label '{cell}'"),
                            })
                        }
                    }
                }
                Slot::Attr(i) => {
                    let attr = &self.attributes[i];
                    out.x[i] = match attr.kind {
                        AttributeKind::Categorical => match self.lookups[i].get(cell) {
                            Some(&v) => v,
                            None if self.allow_unknown => UNKNOWN,
                            None => {
                                return Err(Error::Parse {
                                    row,
                                    msg: format!("unseen value '{cell}' for '{}'", attr.name),
                                })
                            }
                        },
                        AttributeKind::Numeric => {
                            let cuts = attr.cuts.as_ref().expect("checked by encoder()");
                            if cell.is_empty() {
                                match attr.missing_index() {
                                    Some(m) => m,
                                    None if self.allow_unknown => UNKNOWN,
                                    None => {
                                        return Err(Error::Parse {
                                            row,
                                            msg: format!("unexpected missing value for '{}'", attr.name),
                                        })
                                    }
                                }
                            } else {
                                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                                    row,
                                    msg: format!("'{cell}' is not numeric ('{}')", attr.name),
                                })?;
                                cuts.bin(v)
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// One training instance: attribute value indices and the class index.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Instance {
    pub x: Vec<u32>,
    pub y: u32,
}

impl Instance {
    pub fn new(x: Vec<u32>, y: u32) -> Self {
        Instance { x, y }
    }
}

/// Pass and buffering counters shared by every handle on a dataset.
#[derive(Debug, Default)]
pub struct StreamStats {
    passes: AtomicUsize,
    peak_buffered: AtomicUsize,
}

impl StreamStats {
    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    /// Largest number of instances held in memory at once by a consumer.
    pub fn peak_buffered(&self) -> usize {
        self.peak_buffered.load(Ordering::Relaxed)
    }

    pub fn note_buffered(&self, n: usize) {
        self.peak_buffered.fetch_max(n, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.passes.store(0, Ordering::Relaxed);
        self.peak_buffered.store(0, Ordering::Relaxed);
    }
}

#[derive(Clone, Debug)]
enum Column {
    Categorical(Vec<u32>),
    /// NaN marks a missing value.
    Numeric(Vec<f64>),
}

#[derive(Debug)]
struct Table {
    columns: Vec<Column>,
    classes: Vec<u32>,
}

#[derive(Clone, Debug)]
enum Source {
    Memory(Arc<Table>),
    Disk(PathBuf),
}

/// A categorical (or to-be-discretized) instance table.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: Schema,
    source: Source,
    len: usize,
    class_counts: Vec<u64>,
    stats: Arc<StreamStats>,
}

/// Options for [`load_csv_with`] and [`open_csv_with`].
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub class: ColumnRef,
    /// Forced kinds by column name, e.g. from a schema sidecar.
    pub kinds: HashMap<String, AttributeKind>,
}

impl CsvOptions {
    pub fn new(class: ColumnRef) -> Self {
        CsvOptions {
            class,
            kinds: HashMap::new(),
        }
    }

    /// Forced kind of a column; an entry named `*` applies to every column
    /// not listed by name.
    pub fn forced(&self, column: &str) -> Option<AttributeKind> {
        self.kinds.get(column).or_else(|| self.kinds.get("*")).copied()
    }
}

/// Reads a schema sidecar: one `column-name: categorical|numeric` per line,
/// blank lines and `#` comments ignored. The name `*` sets the default.
pub fn read_schema_sidecar(path: impl AsRef<Path>) -> Result<HashMap<String, AttributeKind>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let mut kinds = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, kind) = line.rsplit_once(':').ok_or_else(|| Error::Parse {
            row: lineno + 1,
            msg: "expected 'name: kind'".into(),
        })?;
        kinds.insert(name.trim().to_string(), kind.parse()?);
    }
    Ok(kinds)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|source| Error::Open {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::new(file)))
}

fn read_headers(reader: &mut csv::Reader<BufReader<File>>) -> Result<Vec<String>> {
    let headers = reader.headers()?;
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Empty("file has no header".into()));
    }
    Ok(headers.iter().map(|h| h.trim().to_string()).collect())
}

/// Per-column dictionary in first-seen order.
#[derive(Default)]
struct Dictionary {
    index: HashMap<String, u32>,
    labels: Vec<String>,
}

impl Dictionary {
    fn intern(&mut self, value: &str) -> u32 {
        if let Some(&v) = self.index.get(value) {
            return v;
        }
        let v = self.labels.len() as u32;
        self.index.insert(value.to_string(), v);
        self.labels.push(value.to_string());
        v
    }
}

fn resolve_kind(name: &str, is_class: bool, all_numeric: bool, any_value: bool, options: &CsvOptions) -> AttributeKind {
    if is_class {
        return AttributeKind::Categorical;
    }
    match options.forced(name) {
        Some(k) => k,
        None if all_numeric && any_value => AttributeKind::Numeric,
        None => AttributeKind::Categorical,
    }
}

/// Loads a CSV file fully into memory. See [`load_csv_with`].
pub fn load_csv(path: impl AsRef<Path>, class: ColumnRef) -> Result<Dataset> {
    load_csv_with(path, &CsvOptions::new(class))
}

/// Loads a comma-separated file with a header row into memory.
///
/// Columns whose non-empty cells all parse as numbers become numeric
/// attributes awaiting discretization; everything else is categorical, with
/// value indices in first-seen order and the empty cell as its own value.
pub fn load_csv_with(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let headers = read_headers(&mut reader)?;
    let class_col = options.class.resolve(&headers)?;
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        for (col, cell) in record.iter().enumerate() {
            cells[col].push(cell.trim().to_string());
        }
    }
    let len = cells[0].len();
    if len == 0 {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    }

    let mut attributes = Vec::new();
    let mut columns = Vec::new();
    let mut class = None;
    let mut classes = Vec::new();
    for (col, values) in cells.into_iter().enumerate() {
        let name = headers[col].clone();
        let is_class = col == class_col;
        let any_value = values.iter().any(|v| !v.is_empty());
        let all_numeric = values.iter().all(|v| v.is_empty() || v.parse::<f64>().is_ok());
        match resolve_kind(&name, is_class, all_numeric, any_value, options) {
            AttributeKind::Numeric => {
                let mut data = Vec::with_capacity(len);
                for (row, v) in values.iter().enumerate() {
                    if v.is_empty() {
                        data.push(f64::NAN);
                    } else {
                        data.push(v.parse::<f64>().map_err(|_| Error::Parse {
                            row: row + 2,
                            msg: format!("'{v}' is not numeric ('{name}')"),
                        })?);
                    }
                }
                attributes.push(Attribute {
                    has_missing: data.iter().any(|v| v.is_nan()),
                    name,
                    kind: AttributeKind::Numeric,
                    labels: Vec::new(),
                    cuts: None,
                });
                columns.push(Column::Numeric(data));
            }
            AttributeKind::Categorical => {
                let mut dict = Dictionary::default();
                let data: Vec<u32> = values.iter().map(|v| dict.intern(v)).collect();
                if is_class {
                    if let Some(row) = values.iter().position(|v| v.is_empty()) {
                        return Err(Error::Parse {
                            row: row + 2,
                            msg: "missing class label".into(),
                        });
                    }
                    class = Some(Attribute::categorical(name, dict.labels));
                    classes = data;
                } else {
                    attributes.push(Attribute::categorical(name, dict.labels));
                    columns.push(Column::Categorical(data));
                }
            }
        }
    }
    let schema = Schema {
        attributes,
        class: class.expect("class column resolved"),
        class_index: class_col,
    };
    schema.validate()?;
    Dataset::from_table(schema, Table { columns, classes })
}

/// Opens a CSV file for out-of-core streaming. See [`open_csv_with`].
pub fn open_csv(path: impl AsRef<Path>, class: ColumnRef) -> Result<Dataset> {
    open_csv_with(path, &CsvOptions::new(class))
}

/// Scans a CSV file to infer its schema without retaining any rows.
///
/// Two scans are made: one to decide column kinds and one to build value
/// dictionaries for the categorical columns. Every later pass re-parses the
/// file.
pub fn open_csv_with(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let headers = read_headers(&mut reader)?;
    let class_col = options.class.resolve(&headers)?;
    let width = headers.len();
    let mut all_numeric = vec![true; width];
    let mut any_value = vec![false; width];
    let mut missing = vec![false; width];
    let mut len = 0usize;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        len += 1;
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                missing[col] = true;
            } else {
                any_value[col] = true;
                if all_numeric[col] && cell.parse::<f64>().is_err() {
                    all_numeric[col] = false;
                }
            }
        }
    }
    if len == 0 {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    }
    let kinds: Vec<AttributeKind> = (0..width)
        .map(|c| resolve_kind(&headers[c], c == class_col, all_numeric[c], any_value[c], options))
        .collect();

    let mut dicts: Vec<Dictionary> = (0..width).map(|_| Dictionary::default()).collect();
    let mut class_counts = Vec::new();
    let mut reader = csv_reader(path)?;
    reader.headers()?;
    let mut row = 1;
    while reader.read_record(&mut record)? {
        row += 1;
        for (col, cell) in record.iter().enumerate() {
            if kinds[col] == AttributeKind::Categorical {
                let v = dicts[col].intern(cell.trim());
                if col == class_col {
                    if cell.trim().is_empty() {
                        return Err(Error::Parse {
                            row,
                            msg: "missing class label".into(),
                        });
                    }
                    if class_counts.len() <= v as usize {
                        class_counts.resize(v as usize + 1, 0u64);
                    }
                    class_counts[v as usize] += 1;
                }
            } else if let Some(forced) = options.forced(&headers[col]) {
                let cell = cell.trim();
                if forced == AttributeKind::Numeric && !cell.is_empty() && cell.parse::<f64>().is_err() {
                    return Err(Error::Parse {
                        row,
                        msg: format!("'{cell}' is not numeric ('{}')", headers[col]),
                    });
                }
            }
        }
    }

    let mut attributes = Vec::new();
    let mut class = None;
    for (col, dict) in dicts.into_iter().enumerate() {
        let name = headers[col].clone();
        if col == class_col {
            class = Some(Attribute::categorical(name, dict.labels));
        } else if kinds[col] == AttributeKind::Numeric {
            attributes.push(Attribute {
                name,
                kind: AttributeKind::Numeric,
                labels: Vec::new(),
                cuts: None,
                has_missing: missing[col],
            });
        } else {
            attributes.push(Attribute::categorical(name, dict.labels));
        }
    }
    let schema = Schema {
        attributes,
        class: class.expect("class column resolved"),
        class_index: class_col,
    };
    schema.validate()?;
    Ok(Dataset {
        schema,
        source: Source::Disk(path.to_path_buf()),
        len,
        class_counts,
        stats: Arc::new(StreamStats::default()),
    })
}

impl Dataset {
    fn from_table(schema: Schema, table: Table) -> Result<Dataset> {
        let mut class_counts = vec![0u64; schema.n_classes()];
        for &y in &table.classes {
            class_counts[y as usize] += 1;
        }
        Ok(Dataset {
            len: table.classes.len(),
            schema,
            source: Source::Memory(Arc::new(table)),
            class_counts,
            stats: Arc::new(StreamStats::default()),
        })
    }

    /// Builds an in-memory dataset from already-encoded instances.
    pub fn from_instances(schema: Schema, instances: &[Instance]) -> Result<Dataset> {
        schema.validate()?;
        schema.require_discrete()?;
        let n_attr = schema.n_attributes();
        let cards = schema.cardinalities();
        let mut columns: Vec<Vec<u32>> = vec![Vec::with_capacity(instances.len()); n_attr];
        let mut classes = Vec::with_capacity(instances.len());
        for (row, inst) in instances.iter().enumerate() {
            if inst.x.len() != n_attr {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {n_attr} attribute values, found {}", inst.x.len()),
                });
            }
            for (i, &v) in inst.x.iter().enumerate() {
                if v as usize >= cards[i] {
                    return Err(Error::Parse {
                        row,
                        msg: format!("value {v} out of range for attribute {i}"),
                    });
                }
                columns[i].push(v);
            }
            if inst.y as usize >= schema.n_classes() {
                return Err(Error::Parse {
                    row,
                    msg: format!("class {} out of range", inst.y),
                });
            }
            classes.push(inst.y);
        }
        // Numeric attributes with cuts are stored as already-binned categories.
        let mut schema = schema;
        for a in &mut schema.attributes {
            if a.kind == AttributeKind::Numeric {
                let card = a.cardinality().unwrap_or(0);
                a.kind = AttributeKind::Categorical;
                a.labels = (0..card).map(|v| a.value_label(v as u32)).collect();
                a.cuts = None;
            }
        }
        let columns = columns.into_iter().map(Column::Categorical).collect();
        Dataset::from_table(schema, Table { columns, classes })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Number of instances `N`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_in_memory(&self) -> bool {
        matches!(self.source, Source::Memory(_))
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.source {
            Source::Disk(p) => Some(p),
            Source::Memory(_) => None,
        }
    }

    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    pub fn stats(&self) -> &StreamStats {
        &self.stats
    }

    /// Replaces the schema, e.g. to attach cut points. Value sets of
    /// categorical attributes must not change.
    fn with_schema(&self, schema: Schema) -> Dataset {
        Dataset {
            schema,
            source: self.source.clone(),
            len: self.len,
            class_counts: self.class_counts.clone(),
            stats: Arc::new(StreamStats::default()),
        }
    }

    /// Runs one full pass, calling `visit` once per instance in file order.
    pub fn for_each(&self, mut visit: impl FnMut(&Instance)) -> Result<()> {
        self.try_for_each(|inst| {
            visit(inst);
            Ok(())
        })
    }

    /// Like [`for_each`](Self::for_each) but lets the visitor abort the pass.
    pub fn try_for_each(&self, mut visit: impl FnMut(&Instance) -> Result<()>) -> Result<()> {
        self.schema.require_discrete()?;
        self.stats.passes.fetch_add(1, Ordering::Relaxed);
        let mut inst = Instance {
            x: vec![0; self.schema.n_attributes()],
            y: 0,
        };
        match &self.source {
            Source::Memory(table) => {
                self.stats.note_buffered(self.len);
                for row in 0..self.len {
                    self.fill(table, row, &mut inst);
                    visit(&inst)?;
                }
            }
            Source::Disk(path) => {
                self.stats.note_buffered(1);
                let mut reader = csv_reader(path)?;
                let headers = read_headers(&mut reader)?;
                let encoder = self.schema.encoder(&headers, false)?;
                let mut record = csv::StringRecord::new();
                let mut row = 1;
                let mut seen = 0usize;
                while reader.read_record(&mut record)? {
                    row += 1;
                    encoder.encode(&record, row, &mut inst)?;
                    visit(&inst)?;
                    seen += 1;
                }
                if seen != self.len {
                    return Err(Error::Invariant(format!(
                        "{} changed on disk: expected {} rows, read {seen}",
                        path.display(),
                        self.len
                    )));
                }
            }
        }
        Ok(())
    }

    fn fill(&self, table: &Table, row: usize, inst: &mut Instance) {
        for (i, col) in table.columns.iter().enumerate() {
            inst.x[i] = match col {
                Column::Categorical(v) => v[row],
                Column::Numeric(v) => {
                    let attr = &self.schema.attributes[i];
                    let value = v[row];
                    if value.is_nan() {
                        attr.missing_index().expect("missing value reserved")
                    } else {
                        attr.cuts.as_ref().expect("discrete schema").bin(value)
                    }
                }
            };
        }
        inst.y = table.classes[row];
    }

    /// Collects every instance (in-memory datasets only).
    pub fn instances(&self) -> Result<Vec<Instance>> {
        if !self.is_in_memory() {
            return Err(Error::invalid("refusing to materialize an on-disk dataset"));
        }
        let mut out = Vec::with_capacity(self.len);
        self.for_each(|inst| out.push(inst.clone()))?;
        Ok(out)
    }

    /// Class labels in instance order.
    pub fn classes(&self) -> Result<Vec<u32>> {
        match &self.source {
            Source::Memory(table) => Ok(table.classes.clone()),
            Source::Disk(_) => {
                let mut out = Vec::with_capacity(self.len);
                self.for_each(|inst| out.push(inst.y))?;
                Ok(out)
            }
        }
    }

    /// In-memory copy restricted to `rows` (in the given order). Schema,
    /// including categorical value sets, is shared with the parent.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        let Source::Memory(table) = &self.source else {
            return Err(Error::invalid("subset requires an in-memory dataset"));
        };
        if let Some(&r) = rows.iter().find(|&&r| r >= self.len) {
            return Err(Error::invalid(format!("row {r} out of range")));
        }
        let columns = table
            .columns
            .iter()
            .map(|c| match c {
                Column::Categorical(v) => Column::Categorical(rows.iter().map(|&r| v[r]).collect()),
                Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            })
            .collect();
        let classes = rows.iter().map(|&r| table.classes[r]).collect();
        Dataset::from_table(self.schema.clone(), Table { columns, classes })
    }

    /// `(value, class)` pairs of a numeric attribute, missing values skipped.
    ///
    /// For an on-disk source this holds one column in memory.
    pub fn numeric_values(&self, attribute: usize) -> Result<Vec<(f64, u32)>> {
        let attr = self
            .schema
            .attributes
            .get(attribute)
            .ok_or_else(|| Error::invalid(format!("attribute {attribute} out of range")))?;
        if attr.kind != AttributeKind::Numeric {
            return Err(Error::invalid(format!("attribute '{}' is categorical", attr.name)));
        }
        match &self.source {
            Source::Memory(table) => {
                let Column::Numeric(values) = &table.columns[attribute] else {
                    unreachable!("numeric attribute stored as numeric column")
                };
                Ok(values
                    .iter()
                    .zip(&table.classes)
                    .filter(|(v, _)| !v.is_nan())
                    .map(|(&v, &y)| (v, y))
                    .collect())
            }
            Source::Disk(path) => {
                let mut reader = csv_reader(path)?;
                let headers = read_headers(&mut reader)?;
                let col = headers
                    .iter()
                    .position(|h| *h == attr.name)
                    .ok_or_else(|| Error::schema(format!("column '{}' vanished", attr.name)))?;
                let class_lookup: HashMap<&str, u32> = self
                    .schema
                    .class
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i as u32))
                    .collect();
                let mut out = Vec::new();
                let mut record = csv::StringRecord::new();
                let mut row = 1;
                while reader.read_record(&mut record)? {
                    row += 1;
                    let cell = record[col].trim();
                    if cell.is_empty() {
                        continue;
                    }
                    let v: f64 = cell.parse().map_err(|_| Error::Parse {
                        row,
                        msg: format!("'{cell}' is not numeric"),
                    })?;
                    let y = *class_lookup
                        .get(record[self.schema.class_index].trim())
                        .ok_or_else(|| Error::Parse {
                            row,
                            msg: "unseen class label".into(),
                        })?;
                    out.push((v, y));
                }
                Ok(out)
            }
        }
    }

    /// Learns MDL cut points for every numeric attribute and applies them.
    pub fn discretized(&self) -> Result<Dataset> {
        Discretizer::fit(self)?.apply(self)
    }
}

/// Runs `passes` full passes over `dataset`, handing each instance to
/// `visitor` together with the zero-based pass index.
pub fn stream_passes(dataset: &Dataset, passes: usize, mut visitor: impl FnMut(usize, &Instance)) -> Result<()> {
    for pass in 0..passes {
        dataset.for_each(|inst| visitor(pass, inst)).map_err(|e| Error::Pass {
            pass,
            source: Box::new(e),
        })?;
    }
    Ok(())
}

fn entropy_bits(counts: &[u64], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum()
}

/// Fayyad–Irani acceptance test for splitting `whole` into `left` and `right`.
pub fn mdl_accepts(whole: &[u64], left: &[u64], right: &[u64]) -> bool {
    let n: u64 = whole.iter().sum();
    let n1: u64 = left.iter().sum();
    let n2: u64 = right.iter().sum();
    if n < 2 || n1 == 0 || n2 == 0 {
        return false;
    }
    let ent = entropy_bits(whole, n);
    let ent1 = entropy_bits(left, n1);
    let ent2 = entropy_bits(right, n2);
    let nf = n as f64;
    let gain = ent - (n1 as f64 / nf) * ent1 - (n2 as f64 / nf) * ent2;
    let classes = |c: &[u64]| c.iter().filter(|&&x| x > 0).count() as f64;
    let (k, k1, k2) = (classes(whole), classes(left), classes(right));
    let delta = (3f64.powf(k) - 2.0).log2() - (k * ent - k1 * ent1 - k2 * ent2);
    gain > ((nf - 1.0).log2() + delta) / nf
}

/// Recursive minimum-description-length cut points over `(value, class)`
/// pairs. Returns sorted thresholds (midpoints between adjacent values).
pub fn mdl_cut_points(values: &mut [(f64, u32)], n_classes: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut cuts = Vec::new();
    split_recursive(values, n_classes, &mut cuts);
    cuts.sort_by(f64::total_cmp);
    cuts
}

fn split_recursive(values: &[(f64, u32)], n_classes: usize, cuts: &mut Vec<f64>) {
    if values.len() < 2 {
        return;
    }
    let mut whole = vec![0u64; n_classes];
    for &(_, y) in values {
        whole[y as usize] += 1;
    }
    let n = values.len() as u64;
    let mut left = vec![0u64; n_classes];
    let mut best: Option<(f64, usize)> = None;
    for i in 1..values.len() {
        left[values[i - 1].1 as usize] += 1;
        if values[i].0 == values[i - 1].0 {
            continue;
        }
        let right: Vec<u64> = whole.iter().zip(&left).map(|(w, l)| w - l).collect();
        let n1 = i as u64;
        let e = (n1 as f64 * entropy_bits(&left, n1) + (n - n1) as f64 * entropy_bits(&right, n - n1)) / n as f64;
        if best.is_none_or(|(b, _)| e < b) {
            best = Some((e, i));
        }
    }
    let Some((_, i)) = best else {
        return;
    };
    let mut left = vec![0u64; n_classes];
    for &(_, y) in &values[..i] {
        left[y as usize] += 1;
    }
    let right: Vec<u64> = whole.iter().zip(&left).map(|(w, l)| w - l).collect();
    if !mdl_accepts(&whole, &left, &right) {
        return;
    }
    cuts.push((values[i - 1].0 + values[i].0) / 2.0);
    split_recursive(&values[..i], n_classes, cuts);
    split_recursive(&values[i..], n_classes, cuts);
}

/// Learns MDL cut points for one numeric attribute of `dataset`.
pub fn mdl_discretize(dataset: &Dataset, attribute: usize) -> Result<CutPoints> {
    let mut values = dataset.numeric_values(attribute)?;
    Ok(CutPoints {
        attribute,
        thresholds: mdl_cut_points(&mut values, dataset.schema().n_classes()),
    })
}

/// Cut points for every numeric attribute of a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretizer {
    pub cuts: Vec<Option<CutPoints>>,
}

impl Discretizer {
    /// Learns cut points from `dataset` (typically a training fold).
    pub fn fit(dataset: &Dataset) -> Result<Discretizer> {
        let cuts = (0..dataset.schema().n_attributes())
            .map(|i| match dataset.schema().attributes[i].kind {
                AttributeKind::Numeric => mdl_discretize(dataset, i).map(Some),
                AttributeKind::Categorical => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Discretizer { cuts })
    }

    /// Attaches the cut points to `dataset`'s schema; numeric values are
    /// binned on every subsequent pass.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let mut schema = dataset.schema().clone();
        if self.cuts.len() != schema.n_attributes() {
            return Err(Error::invalid("discretizer does not match schema"));
        }
        for (attr, cuts) in schema.attributes.iter_mut().zip(&self.cuts) {
            if let Some(c) = cuts {
                if attr.kind != AttributeKind::Numeric {
                    return Err(Error::invalid(format!("attribute '{}' is categorical", attr.name)));
                }
                attr.cuts = Some(c.clone());
            }
        }
        Ok(dataset.with_schema(schema))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn four_row_file() {
        let f = write_csv("x,cls\nu,a\nv,b\nu,a\nw,b\n");
        let ds = load_csv(f.path(), "cls".parse().unwrap()).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.schema().n_classes(), 2);
        assert_eq!(ds.schema().attributes[0].labels, vec!["u", "v", "w"]);
        assert_eq!(ds.class_counts(), &[2, 2]);
    }

    #[test]
    fn empty_cell_is_its_own_value() {
        let f = write_csv("x,y,cls\na,1,p\n,2,q\nb,,p\n");
        let ds = load_csv(f.path(), ColumnRef::Index(2)).unwrap();
        let x = &ds.schema().attributes[0];
        assert_eq!(x.labels, vec!["a", "", "b"]);
        assert_eq!(x.missing_index(), Some(1));
        let y = &ds.schema().attributes[1];
        assert_eq!(y.kind, AttributeKind::Numeric);
        assert!(y.has_missing);
    }

    #[test]
    fn ragged_rows_report_row_number() {
        let f = write_csv("a,b\n1,2\n3\n");
        match load_csv(f.path(), ColumnRef::Index(1)) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_csv("");
        assert!(load_csv(f.path(), ColumnRef::Index(0)).is_err());
        let f = write_csv("a,b\n");
        assert!(matches!(load_csv(f.path(), ColumnRef::Index(1)), Err(Error::Empty(_))));
    }

    #[test]
    fn class_needs_two_values() {
        let f = write_csv("a,c\nx,z\ny,z\n");
        assert!(matches!(load_csv(f.path(), ColumnRef::Index(1)), Err(Error::Schema(_))));
    }

    #[test]
    fn sidecar_forces_kind() {
        let f = write_csv("code,cls\n1,a\n2,b\n1,a\n");
        let side = write_csv("# kinds\ncode: categorical\n");
        let mut opts = CsvOptions::new(ColumnRef::Name("cls".into()));
        opts.kinds = read_schema_sidecar(side.path()).unwrap();
        let ds = load_csv_with(f.path(), &opts).unwrap();
        assert_eq!(ds.schema().attributes[0].kind, AttributeKind::Categorical);
        assert_eq!(ds.schema().cardinality(0), 2);
    }

    #[test]
    fn column_refs() {
        let h: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        for (text, col) in [("1", 1), ("-1", 2), ("a", 0)] {
            assert_eq!(text.parse::<ColumnRef>().unwrap().resolve(&h).unwrap(), col);
        }
        assert!(ColumnRef::Index(3).resolve(&h).is_err());
        assert!(ColumnRef::Last.resolve(&[]).is_err());
    }

    #[test]
    fn sidecar_wildcard_is_a_default() {
        let f = write_csv("a,b,cls\n1,0.5,x\n2,1.5,y\n");
        let side = write_csv("*: categorical\nb: numeric\n");
        let mut opts = CsvOptions::new(ColumnRef::Name("cls".into()));
        opts.kinds = read_schema_sidecar(side.path()).unwrap();
        let ds = load_csv_with(f.path(), &opts).unwrap();
        let kinds: Vec<_> = ds.schema().attributes.iter().map(|a| a.kind).collect();
        assert_eq!(kinds, [AttributeKind::Categorical, AttributeKind::Numeric]);
    }

    #[test]
    fn mdl_single_cut_between_clusters() {
        let mut v = vec![(1.0, 0), (2.0, 0), (9.0, 1), (10.0, 1)];
        let cuts = mdl_cut_points(&mut v, 2);
        assert_eq!(cuts.len(), 1);
        assert!(cuts[0] > 2.0 && cuts[0] < 9.0);
    }

    #[test]
    fn mdl_constant_attribute_has_no_cut() {
        let mut v = vec![(3.0, 0), (3.0, 1), (3.0, 0), (3.0, 1)];
        assert!(mdl_cut_points(&mut v, 2).is_empty());
    }

    #[test]
    fn mdl_rejects_categorical() {
        let f = write_csv("x,cls\na,p\nb,q\n");
        let ds = load_csv(f.path(), ColumnRef::Index(1)).unwrap();
        assert!(mdl_discretize(&ds, 0).is_err());
    }

    #[test]
    fn discretization_is_idempotent() {
        let f = write_csv("v,cls\n1,a\n2,a\n3,a\n10,b\n11,b\n12,b\n,a\n");
        let ds = load_csv(f.path(), ColumnRef::Index(1)).unwrap();
        let disc = Discretizer::fit(&ds).unwrap();
        let once = disc.apply(&ds).unwrap();
        let twice = disc.apply(&once).unwrap();
        assert_eq!(once.instances().unwrap(), twice.instances().unwrap());
        let attr = &once.schema().attributes[0];
        assert_eq!(attr.cardinality(), Some(3));
        assert_eq!(once.instances().unwrap()[6].x[0], 2);
    }

    #[test]
    fn streaming_counts_passes() {
        let f = write_csv("x,cls\na,p\nb,q\na,q\n");
        let ds = load_csv(f.path(), ColumnRef::Index(1)).unwrap();
        let mut calls = 0;
        stream_passes(&ds, 2, |_, _| calls += 1).unwrap();
        assert_eq!(calls, 6);
        assert_eq!(ds.stats().passes(), 2);
    }

    #[test]
    fn disk_and_memory_agree() {
        let f = write_csv("x,v,cls\na,1.5,p\nb,7,q\na,,q\nc,2,p\n");
        let mem = load_csv(f.path(), ColumnRef::Index(2)).unwrap().discretized().unwrap();
        let disk = open_csv(f.path(), ColumnRef::Index(2)).unwrap().discretized().unwrap();
        assert_eq!(mem.schema(), disk.schema());
        let mut from_disk = Vec::new();
        disk.for_each(|i| from_disk.push(i.clone())).unwrap();
        assert_eq!(mem.instances().unwrap(), from_disk);
        assert_eq!(disk.stats().peak_buffered(), 1);
    }

    #[test]
    fn disk_source_changed_is_reported() {
        let f = write_csv("x,cls\na,p\nb,q\n");
        let ds = open_csv(f.path(), ColumnRef::Index(1)).unwrap();
        std::fs::write(f.path(), "x,cls\na,p\nb,q\nz,p\n").unwrap();
        let err = stream_passes(&ds, 1, |_, _| {}).unwrap_err();
        assert!(matches!(err, Error::Pass { pass: 0, .. }));
    }

    #[test]
    fn subset_keeps_schema() {
        let f = write_csv("x,cls\na,p\nb,q\nc,q\n");
        let ds = load_csv(f.path(), ColumnRef::Index(1)).unwrap();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.schema(), ds.schema());
        assert_eq!(sub.instances().unwrap()[0], Instance::new(vec![2], 1));
    }
}
