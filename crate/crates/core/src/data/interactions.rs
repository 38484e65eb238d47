use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Deduplicated user-item interactions over dense indices, with the
/// original identifiers kept for each index.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionTable {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl InteractionTable {
    /// Builds a table from identifier pairs, assigning dense indices in
    /// order of first appearance and dropping repeated pairs.
    pub fn from_pairs<U: AsRef<str>, I: AsRef<str>>(pairs: impl IntoIterator<Item = (U, I)>) -> Self {
        let mut users: HashMap<String, usize> = HashMap::new();
        let mut items: HashMap<String, usize> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::new();
        for (u, i) in pairs {
            let u = intern(&mut users, &mut user_ids, u.as_ref());
            let i = intern(&mut items, &mut item_ids, i.as_ref());
            if seen.insert((u, i)) {
                edges.push((u, i));
            }
        }
        InteractionTable {
            user_ids,
            item_ids,
            edges,
        }
    }

    /// Builds a table over `0..user_count × 0..item_count` whose identifiers
    /// are the decimal indices.
    pub fn from_indexed(user_count: usize, item_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (u, i) in edges {
            if u >= user_count || i >= item_count {
                return Err(Error::shape(format!(
                    "edge ({u}, {i}) outside {user_count}×{item_count}"
                )));
            }
            if seen.insert((u, i)) {
                out.push((u, i));
            }
        }
        Ok(InteractionTable {
            user_ids: (0..user_count).map(|v| v.to_string()).collect(),
            item_ids: (0..item_count).map(|v| v.to_string()).collect(),
            edges: out,
        })
    }

    pub(crate) fn from_parts(user_ids: Vec<String>, item_ids: Vec<String>, edges: Vec<(usize, usize)>) -> Self {
        InteractionTable {
            user_ids,
            item_ids,
            edges,
        }
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.user_count()];
        self.edges.iter().for_each(|&(u, _)| d[u] += 1);
        d
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.item_count()];
        self.edges.iter().for_each(|&(_, i)| d[i] += 1);
        d
    }
}

fn intern(map: &mut HashMap<String, usize>, ids: &mut Vec<String>, key: &str) -> usize {
    if let Some(&v) = map.get(key) {
        return v;
    }
    let v = ids.len();
    map.insert(key.to_string(), v);
    ids.push(key.to_string());
    v
}

fn looks_like_header(user: &str, item: &str) -> bool {
    let (u, i) = (user.to_ascii_lowercase(), item.to_ascii_lowercase());
    u.contains("user") && i.contains("item")
}

/// Reads a UTF-8 TSV of `user_id<TAB>item_id[<TAB>ignored…]` rows. A first
/// row naming user and item columns is treated as a header; blank lines
/// are skipped.
pub fn load_interactions(path: &Path) -> Result<InteractionTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::format(path, Some(line_no), e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let (user, item) = match (cols.next().map(str::trim), cols.next().map(str::trim)) {
            (Some(u), Some(i)) if !u.is_empty() && !i.is_empty() => (u, i),
            _ => {
                return Err(Error::format(
                    path,
                    Some(line_no),
                    format!("expected user and item columns, got {line:?}"),
                ))
            }
        };
        if line_no == 1 && looks_like_header(user, item) {
            continue;
        }
        pairs.push((user.to_string(), item.to_string()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyData(format!("{} has no interactions", path.display())));
    }
    Ok(InteractionTable::from_pairs(pairs))
}

/// Writes an `original_id<TAB>dense_index` sidecar.
pub fn write_index_map(path: &Path, ids: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (k, id) in ids.iter().enumerate() {
        writeln!(w, "{id}\t{k}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an index-map sidecar back into dense order.
pub fn read_index_map(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids: Vec<Option<String>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut cols = line.split('\t');
        let (Some(id), Some(idx)) = (cols.next(), cols.next()) else {
            return Err(Error::format(path, Some(n + 1), "expected original_id and dense_index"));
        };
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::format(path, Some(n + 1), format!("bad index {idx:?}")))?;
        if ids.len() <= idx {
            ids.resize(idx + 1, None);
        }
        ids[idx] = Some(id.to_string());
    }
    ids.into_iter()
        .enumerate()
        .map(|(k, id)| id.ok_or_else(|| Error::format(path, None, format!("dense index {k} missing"))))
        .collect()
}
