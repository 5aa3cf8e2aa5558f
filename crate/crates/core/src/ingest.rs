//! Readers for MovieLens-style rating files, item attribute files and
//! precomputed embedding tables.
//!
//! Every reader is lenient: malformed lines are skipped and reported as
//! [`Diagnostic`]s, and the caller decides whether they are fatal (see
//! [`ParsedRatings::strict`]).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratings::{Rating, RatingsMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingsFormat {
    /// `UserID::MovieID::Rating::Timestamp`
    #[serde(rename = "dat_1m")]
    Dat1m,
    /// Header line, then `user,item,rating[,timestamp]`.
    CsvLatest,
    /// Whitespace separated `user item rating timestamp`.
    #[serde(rename = "u_data_100k")]
    UData100k,
}

impl FromStr for RatingsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dat_1m" => Ok(RatingsFormat::Dat1m),
            "csv_latest" | "csv" => Ok(RatingsFormat::CsvLatest),
            "u_data_100k" => Ok(RatingsFormat::UData100k),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for RatingsFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RatingsFormat::Dat1m => "dat_1m",
            RatingsFormat::CsvLatest => "csv_latest",
            RatingsFormat::UData100k => "u_data_100k",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeaturesFormat {
    /// `movies.dat`: `MovieID::Title::Genre|Genre|...`
    MovielensGenres,
    /// `u.item`: pipe separated, the last 19 fields are genre flags.
    #[serde(rename = "u_item_100k")]
    UItem100k,
    /// Header line, then `item_id,attr,value`.
    CsvKeyValue,
}

impl FromStr for FeaturesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens_genres" => Ok(FeaturesFormat::MovielensGenres),
            "u_item_100k" => Ok(FeaturesFormat::UItem100k),
            "csv_key_value" => Ok(FeaturesFormat::CsvKeyValue),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for FeaturesFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeaturesFormat::MovielensGenres => "movielens_genres",
            FeaturesFormat::UItem100k => "u_item_100k",
            FeaturesFormat::CsvKeyValue => "csv_key_value",
        })
    }
}

/// Genre columns of MovieLens 100K `u.item`, in file order.
pub const ML100K_GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

/// Bijection between external ids and contiguous internal ids, assigned in
/// first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    external: Vec<String>,
    index: HashMap<String, u32>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, external: &str) -> u32 {
        if let Some(&id) = self.index.get(external) {
            return id;
        }
        let id = self.external.len() as u32;
        self.external.push(external.to_string());
        self.index.insert(external.to_string(), id);
        id
    }

    pub fn internal(&self, external: &str) -> Option<u32> {
        self.index.get(external).copied()
    }

    pub fn external(&self, internal: u32) -> Option<&str> {
        self.external.get(internal as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }
}

/// A skipped input line.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedRatings {
    pub path: PathBuf,
    pub matrix: RatingsMatrix,
    pub users: IdMap,
    pub items: IdMap,
    pub invalid: Vec<Diagnostic>,
    pub warnings: Vec<String>,
}

impl ParsedRatings {
    /// Fails on the first malformed line, if any.
    pub fn strict(self) -> Result<Self> {
        match self.invalid.first() {
            Some(d) => Err(Error::MalformedLine {
                path: self.path.clone(),
                line: d.line,
                reason: d.reason.clone(),
            }),
            None => Ok(self),
        }
    }
}

fn read_lossy(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_rating_fields<'a>(
    mut fields: impl Iterator<Item = &'a str>,
) -> std::result::Result<(&'a str, &'a str, f64), String> {
    let user = fields.next().map(str::trim).filter(|s| !s.is_empty());
    let item = fields.next().map(str::trim).filter(|s| !s.is_empty());
    let rating = fields.next().map(str::trim);
    match (user, item, rating) {
        (Some(u), Some(i), Some(r)) => {
            let value: f64 = r.parse().map_err(|_| format!("bad rating `{r}`"))?;
            if !value.is_finite() {
                return Err(format!("non-finite rating `{r}`"));
            }
            // timestamps are accepted and discarded
            if let Some(ts) = fields.next().map(str::trim) {
                if !ts.is_empty() && ts.parse::<f64>().is_err() {
                    return Err(format!("bad timestamp `{ts}`"));
                }
            }
            Ok((u, i, value))
        }
        _ => Err("expected at least user, item and rating".to_string()),
    }
}

/// Parses a MovieLens-style ratings file.
pub fn parse_movielens(path: impl AsRef<Path>, format: RatingsFormat) -> Result<ParsedRatings> {
    let path = path.as_ref();
    let text = read_lossy(path)?;
    parse_movielens_str(&text, format, path)
}

pub fn parse_movielens_str(text: &str, format: RatingsFormat, path: &Path) -> Result<ParsedRatings> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut entries = Vec::new();
    let mut invalid = Vec::new();
    let mut warnings = Vec::new();

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            RatingsFormat::Dat1m => parse_rating_fields(line.split("::")),
            RatingsFormat::UData100k => parse_rating_fields(line.split_whitespace()),
            RatingsFormat::CsvLatest => {
                if line_no == 1 {
                    continue;
                }
                parse_rating_fields(line.split(','))
            }
        };
        match parsed {
            Ok((u, i, value)) => {
                let user = users.intern(u);
                let item = items.intern(i);
                entries.push(Rating::new(user, item, value));
            }
            Err(reason) => invalid.push(Diagnostic { line: line_no, reason }),
        }
    }
    if entries.is_empty() {
        warnings.push(format!("{}: no ratings found", path.display()));
    }
    let matrix = RatingsMatrix::from_entries(users.len(), items.len(), entries, None)?;
    Ok(ParsedRatings {
        path: path.to_path_buf(),
        matrix,
        users,
        items,
        invalid,
        warnings,
    })
}

/// Writes ratings as `user_id,item_id,rating` with external ids, readable
/// back through [`RatingsFormat::CsvLatest`].
pub fn write_ratings_csv(path: impl AsRef<Path>, parsed: &ParsedRatings) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "user_id,item_id,rating")?;
    for r in parsed.matrix.entries() {
        let u = parsed.users.external(r.user).unwrap_or_default();
        let i = parsed.items.external(r.item).unwrap_or_default();
        writeln!(out, "{u},{i},{}", r.value)?;
    }
    out.flush()?;
    Ok(())
}

/// Sparse attribute vectors over a named vocabulary, keyed by internal item id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemFeatures {
    pub vocabulary: Vec<String>,
    pub items: BTreeMap<u32, Vec<(u32, f64)>>,
    pub invalid: Vec<Diagnostic>,
    pub warnings: Vec<String>,
}

impl ItemFeatures {
    pub fn attributes(&self, item: u32) -> Option<&[(u32, f64)]> {
        self.items.get(&item).map(Vec::as_slice)
    }

    /// Dense attribute rows for items `0..num_items`; items without
    /// features get a zero row.
    pub fn dense(&self, num_items: usize) -> Vec<Vec<f64>> {
        let dim = self.vocabulary.len();
        (0..num_items as u32)
            .map(|i| {
                let mut row = vec![0.0; dim];
                if let Some(attrs) = self.items.get(&i) {
                    for &(a, v) in attrs {
                        row[a as usize] = v;
                    }
                }
                row
            })
            .collect()
    }
}

#[derive(Default)]
struct VocabBuilder {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl VocabBuilder {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&a) = self.index.get(name) {
            return a;
        }
        let a = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), a);
        a
    }
}

/// Parses item attributes. Items missing from `items` are skipped with a
/// warning.
pub fn parse_item_features(path: impl AsRef<Path>, format: FeaturesFormat, items: &IdMap) -> Result<ItemFeatures> {
    let path = path.as_ref();
    let text = read_lossy(path)?;
    parse_item_features_str(&text, format, items)
}

pub fn parse_item_features_str(text: &str, format: FeaturesFormat, items: &IdMap) -> Result<ItemFeatures> {
    let mut vocab = VocabBuilder::default();
    if format == FeaturesFormat::UItem100k {
        for g in ML100K_GENRES {
            vocab.intern(g);
        }
    }
    let mut out = ItemFeatures::default();
    let mut rows: BTreeMap<u32, BTreeMap<u32, f64>> = BTreeMap::new();

    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<(String, Vec<(u32, f64)>), String> = match format {
            FeaturesFormat::MovielensGenres => {
                let fields: Vec<&str> = line.split("::").collect();
                if fields.len() < 3 {
                    Err("expected `id::title::genres`".to_string())
                } else {
                    let attrs = fields[fields.len() - 1]
                        .split('|')
                        .map(str::trim)
                        .filter(|g| !g.is_empty() && *g != "(no genres listed)")
                        .map(|g| (vocab.intern(g), 1.0))
                        .collect();
                    Ok((fields[0].trim().to_string(), attrs))
                }
            }
            FeaturesFormat::UItem100k => {
                let fields: Vec<&str> = line.split('|').collect();
                if fields.len() < 1 + ML100K_GENRES.len() {
                    Err(format!("expected at least {} fields", 1 + ML100K_GENRES.len()))
                } else {
                    let flags = &fields[fields.len() - ML100K_GENRES.len()..];
                    let mut attrs = Vec::new();
                    let mut bad = None;
                    for (g, f) in flags.iter().enumerate() {
                        match f.trim() {
                            "1" => attrs.push((g as u32, 1.0)),
                            "0" => {}
                            other => bad = Some(format!("bad genre flag `{other}`")),
                        }
                    }
                    match bad {
                        Some(reason) => Err(reason),
                        None => Ok((fields[0].trim().to_string(), attrs)),
                    }
                }
            }
            FeaturesFormat::CsvKeyValue => {
                if line_no == 1 {
                    continue;
                }
                let fields: Vec<&str> = line.split(',').map(str::trim).collect();
                if fields.len() != 3 || fields[1].is_empty() {
                    Err("expected `item_id,attr,value`".to_string())
                } else {
                    match fields[2].parse::<f64>() {
                        Ok(v) if v.is_finite() => Ok((fields[0].to_string(), vec![(vocab.intern(fields[1]), v)])),
                        _ => Err(format!("bad value `{}`", fields[2])),
                    }
                }
            }
        };
        match parsed {
            Ok((external, attrs)) => {
                let Some(item) = items.internal(&external) else {
                    out.warnings
                        .push(format!("line {line_no}: unknown item `{external}` skipped"));
                    continue;
                };
                if attrs.is_empty() && format != FeaturesFormat::CsvKeyValue {
                    out.warnings
                        .push(format!("line {line_no}: item `{external}` has no attributes"));
                }
                let row = rows.entry(item).or_default();
                for (a, v) in attrs {
                    row.insert(a, v);
                }
            }
            Err(reason) => out.invalid.push(Diagnostic { line: line_no, reason }),
        }
    }
    out.vocabulary = vocab.names;
    out.items = rows
        .into_iter()
        .map(|(item, attrs)| (item, attrs.into_iter().collect()))
        .collect();
    Ok(out)
}

/// Unit-normalized dense vectors keyed by external id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Vectors indexed by internal id; ids without an embedding are `None`.
    pub fn align(&self, ids: &IdMap) -> Vec<Option<Vec<f64>>> {
        (0..ids.len() as u32)
            .map(|i| ids.external(i).and_then(|ext| self.vectors.get(ext)).cloned())
            .collect()
    }
}

/// Loads `id,v1,...,vd` rows (header first) and unit-normalizes them.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = read_lossy(path)?;
    parse_embeddings_str(&text, path)
}

pub fn parse_embeddings_str(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut dimension = None;
    let mut vectors = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = fields.next().unwrap_or_default().to_string();
        let parsed: std::result::Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            // a non-numeric first row is the header
            Err(_) if line_no == 1 => continue,
            Err(_) => {
                return Err(Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: line_no,
                    reason: "non-numeric component".to_string(),
                })
            }
        };
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: line_no,
                reason: "empty or non-finite vector".to_string(),
            });
        }
        let d = *dimension.get_or_insert(values.len());
        if values.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "line {line_no}: expected {d} components, found {}",
                values.len()
            )));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroVector(id));
        }
        vectors.insert(id, values.iter().map(|v| v / norm).collect());
    }
    Ok(EmbeddingTable {
        dimension: dimension.unwrap_or(0),
        vectors,
    })
}
