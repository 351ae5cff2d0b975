use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemClass {
    Warm,
    Cold,
}

/// Users, items and the observed interaction set.
///
/// Ids are densely re-indexed in order of first appearance; the original
/// string ids are kept in `users` / `items`. Interactions are stored sorted
/// and deduplicated. Before a split is applied every item is warm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "GraphRepr", into = "GraphRepr")]
pub struct InteractionGraph {
    users: Vec<String>,
    items: Vec<String>,
    classes: Vec<ItemClass>,
    interactions: Vec<(usize, usize)>,
    // derived
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    per_item_users: Vec<Vec<usize>>,
    per_user_items: Vec<Vec<usize>>,
    warm_slot: Vec<Option<usize>>,
    cold_slot: Vec<Option<usize>>,
    warm_items: Vec<usize>,
    cold_items: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    users: Vec<String>,
    items: Vec<String>,
    classes: Vec<ItemClass>,
    interactions: Vec<(usize, usize)>,
}

impl From<GraphRepr> for InteractionGraph {
    fn from(r: GraphRepr) -> Self {
        InteractionGraph::assemble(r.users, r.items, r.classes, r.interactions)
    }
}

impl From<InteractionGraph> for GraphRepr {
    fn from(g: InteractionGraph) -> Self {
        GraphRepr {
            users: g.users,
            items: g.items,
            classes: g.classes,
            interactions: g.interactions,
        }
    }
}

impl InteractionGraph {
    /// Builds a graph with every item warm. Pairs must reference valid dense ids.
    pub fn from_pairs(
        users: Vec<String>,
        items: Vec<String>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let classes = vec![ItemClass::Warm; items.len()];
        Self::with_classes(users, items, classes, pairs)
    }

    pub fn with_classes(
        users: Vec<String>,
        items: Vec<String>,
        classes: Vec<ItemClass>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if classes.len() != items.len() {
            return Err(Error::Validation(format!(
                "{} item classes for {} items",
                classes.len(),
                items.len()
            )));
        }
        let mut interactions = Vec::new();
        for (u, i) in pairs {
            if u >= users.len() || i >= items.len() {
                return Err(Error::Validation(format!(
                    "interaction ({u}, {i}) out of range for {} users, {} items",
                    users.len(),
                    items.len()
                )));
            }
            interactions.push((u, i));
        }
        interactions.sort_unstable();
        interactions.dedup();
        Ok(Self::assemble(users, items, classes, interactions))
    }

    fn assemble(
        users: Vec<String>,
        items: Vec<String>,
        classes: Vec<ItemClass>,
        interactions: Vec<(usize, usize)>,
    ) -> Self {
        let user_index = users.iter().enumerate().map(|(k, u)| (u.clone(), k)).collect();
        let item_index = items.iter().enumerate().map(|(k, i)| (i.clone(), k)).collect();
        let mut per_item_users = vec![Vec::new(); items.len()];
        let mut per_user_items = vec![Vec::new(); users.len()];
        for &(u, i) in &interactions {
            per_item_users[i].push(u);
            per_user_items[u].push(i);
        }
        for list in per_item_users.iter_mut() {
            list.sort_unstable();
        }
        let mut warm_slot = vec![None; items.len()];
        let mut cold_slot = vec![None; items.len()];
        let mut warm_items = Vec::new();
        let mut cold_items = Vec::new();
        for (i, class) in classes.iter().enumerate() {
            match class {
                ItemClass::Warm => {
                    warm_slot[i] = Some(warm_items.len());
                    warm_items.push(i);
                }
                ItemClass::Cold => {
                    cold_slot[i] = Some(cold_items.len());
                    cold_items.push(i);
                }
            }
        }
        InteractionGraph {
            users,
            items,
            classes,
            interactions,
            user_index,
            item_index,
            per_item_users,
            per_user_items,
            warm_slot,
            cold_slot,
            warm_items,
            cold_items,
        }
    }

    /// Same users and items, a different interaction set and class assignment.
    pub fn restrict(
        &self,
        classes: Vec<ItemClass>,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        Self::with_classes(self.users.clone(), self.items.clone(), classes, pairs)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_warm(&self) -> usize {
        self.warm_items.len()
    }

    pub fn n_cold(&self) -> usize {
        self.cold_items.len()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.users
    }

    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    pub fn classes(&self) -> &[ItemClass] {
        &self.classes
    }

    pub fn class(&self, item: usize) -> ItemClass {
        self.classes[item]
    }

    /// U_i, sorted ascending.
    pub fn item_users(&self, item: usize) -> &[usize] {
        &self.per_item_users[item]
    }

    /// Items of a user, ascending.
    pub fn user_items(&self, user: usize) -> &[usize] {
        &self.per_user_items[user]
    }

    pub fn warm_items(&self) -> &[usize] {
        &self.warm_items
    }

    pub fn cold_items(&self) -> &[usize] {
        &self.cold_items
    }

    /// Row of `item` in the warm behaviour matrix.
    pub fn warm_slot(&self, item: usize) -> Option<usize> {
        self.warm_slot.get(item).copied().flatten()
    }

    pub fn cold_slot(&self, item: usize) -> Option<usize> {
        self.cold_slot.get(item).copied().flatten()
    }

    pub fn has_interaction(&self, user: usize, item: usize) -> bool {
        self.per_item_users[item].binary_search(&user).is_ok()
    }

    pub fn validate(&self) -> Result<()> {
        for &(_, i) in &self.interactions {
            if self.classes[i] == ItemClass::Cold {
                return Err(Error::Validation(format!(
                    "cold item {} has a training interaction",
                    self.items[i]
                )));
            }
        }
        Ok(())
    }
}

/// Item text, one entry per dense item id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemContent {
    texts: Vec<String>,
}

impl ItemContent {
    pub fn new(texts: Vec<String>) -> Self {
        ItemContent { texts }
    }

    pub fn get(&self, item: usize) -> Option<&str> {
        self.texts.get(item).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    /// Items whose text is empty. Permitted, but worth a warning.
    pub fn empty_items(&self) -> Vec<usize> {
        self.texts
            .iter()
            .enumerate()
            .filter(|(_, t)| t.trim().is_empty())
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn escape_text(text: &str) -> String {
    text.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', " ")
}

pub fn unescape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn split_record<'a>(line: &'a str, file: &str, lineno: usize) -> Result<(&'a str, &'a str)> {
    let (a, b) = line.split_once('\t').ok_or_else(|| Error::Parse {
        file: file.to_string(),
        line: lineno,
        message: "expected two tab-separated fields".into(),
    })?;
    if a.trim().is_empty() {
        return Err(Error::Parse {
            file: file.to_string(),
            line: lineno,
            message: "empty id".into(),
        });
    }
    Ok((a.trim(), b))
}

/// Reads `user<TAB>item` interactions and `item<TAB>text` content.
///
/// Items that only appear in the content file are kept (with no
/// interactions) after the interacted items.
pub fn load_graph(
    interaction_file: &Path,
    content_file: &Path,
) -> Result<(InteractionGraph, ItemContent)> {
    let raw = fs::read_to_string(interaction_file).map_err(|e| Error::io(interaction_file, e))?;
    let fname = interaction_file.display().to_string();

    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut item_index: HashMap<String, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (u, i) = split_record(line, &fname, n + 1)?;
        let i = i.trim();
        if i.is_empty() || i.contains('\t') {
            return Err(Error::Parse {
                file: fname.clone(),
                line: n + 1,
                message: "expected exactly `user_id<TAB>item_id`".into(),
            });
        }
        let u = *user_index.entry(u.to_string()).or_insert_with(|| {
            users.push(u.to_string());
            users.len() - 1
        });
        let i = *item_index.entry(i.to_string()).or_insert_with(|| {
            items.push(i.to_string());
            items.len() - 1
        });
        pairs.push((u, i));
    }

    let raw = fs::read_to_string(content_file).map_err(|e| Error::io(content_file, e))?;
    let fname = content_file.display().to_string();
    let mut texts: Vec<Option<String>> = vec![None; items.len()];
    for (n, line) in raw.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = split_record(line, &fname, n + 1)?;
        let idx = *item_index.entry(id.to_string()).or_insert_with(|| {
            items.push(id.to_string());
            texts.push(None);
            items.len() - 1
        });
        texts[idx] = Some(unescape_text(text));
    }
    if let Some(missing) = texts.iter().position(Option::is_none) {
        return Err(Error::Validation(format!(
            "item {} has interactions but no content",
            items[missing]
        )));
    }
    let content = ItemContent::new(texts.into_iter().map(Option::unwrap).collect());
    for i in content.empty_items() {
        log::warn!("item {} has empty content", items[i]);
    }
    let graph = InteractionGraph::from_pairs(users, items, pairs)?;
    Ok((graph, content))
}

/// Writes the two input files in the format [`load_graph`] reads.
pub fn write_graph(
    graph: &InteractionGraph,
    content: &ItemContent,
    interaction_file: &Path,
    content_file: &Path,
) -> Result<()> {
    let mut out = String::new();
    for &(u, i) in graph.interactions() {
        out.push_str(&graph.user_ids()[u]);
        out.push('\t');
        out.push_str(&graph.item_ids()[i]);
        out.push('\n');
    }
    fs::write(interaction_file, out).map_err(|e| Error::io(interaction_file, e))?;
    let mut out = String::new();
    for (i, id) in graph.item_ids().iter().enumerate() {
        out.push_str(id);
        out.push('\t');
        out.push_str(&escape_text(content.get(i).unwrap_or("")));
        out.push('\n');
    }
    fs::write(content_file, out).map_err(|e| Error::io(content_file, e))?;
    Ok(())
}
