use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CategoryId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    /// False for bookkeeping classes that play no part in a diagnosis.
    #[serde(default = "default_true")]
    pub diagnostic: bool,
    /// Alternative spellings accepted when resolving names from input files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

fn default_true() -> bool {
    true
}

/// Ordered category list with ids `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Category>", into = "Vec<Category>")]
pub struct CategoryTable {
    categories: Vec<Category>,
}

/// The eleven cell classes, in dataset-statistics order.
const CYTOLOGY_CLASSES: [(&str, bool, &[&str]); 11] = [
    ("Mastocytoma", true, &["neoplastic mast", "mast", "mastocytoma"]),
    ("Histiocytoma", true, &[]),
    ("Lymphoma", true, &[]),
    ("Macrophage", true, &[]),
    ("Eosinophil", true, &[]),
    ("Neutrophil", true, &[]),
    ("Lymphocyte", true, &[]),
    ("Giant cell", true, &["giant"]),
    ("Cut", false, &[]),
    ("Unrecognized", false, &["unrecognised"]),
    ("Damaged", false, &[]),
];

impl Default for CategoryTable {
    fn default() -> Self {
        CategoryTable::cytology()
    }
}

impl CategoryTable {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let bad: Vec<String> = categories
            .iter()
            .enumerate()
            .filter(|(i, c)| c.id as usize != i + 1)
            .map(|(i, c)| format!("category {:?} has id {} at position {}", c.name, c.id, i + 1))
            .collect();
        if !bad.is_empty() {
            return Err(Error::validation_with(
                "category ids must be unique and contiguous from 1",
                bad,
            ));
        }
        let mut keys: Vec<String> = categories.iter().map(|c| name_key(&c.name)).collect();
        keys.sort();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation_with(
                "duplicate category names",
                vec![w[0].clone()],
            ));
        }
        Ok(CategoryTable { categories })
    }

    /// Default 11-class cytology scheme. `Cut`, `Unrecognized` and `Damaged`
    /// are non-diagnostic.
    pub fn cytology() -> Self {
        let categories = CYTOLOGY_CLASSES
            .iter()
            .enumerate()
            .map(|(i, (name, diagnostic, aliases))| Category {
                id: i as CategoryId + 1,
                name: name.to_string(),
                diagnostic: *diagnostic,
                aliases: aliases.iter().map(|a| a.to_string()).collect(),
            })
            .collect();
        CategoryTable { categories }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Category> {
        self.categories.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.categories.iter().map(|c| c.id)
    }

    pub fn get(&self, id: CategoryId) -> Option<&Category> {
        (id as usize)
            .checked_sub(1)
            .and_then(|i| self.categories.get(i))
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        self.get(id).is_some()
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        self.get(id).map(|c| c.name.as_str())
    }

    /// Resolve a name case-insensitively, ignoring a trailing "cell(s)" and
    /// accepting registered aliases.
    pub fn resolve(&self, name: &str) -> Option<CategoryId> {
        let key = name_key(name);
        self.categories
            .iter()
            .find(|c| {
                name_key(&c.name) == key || c.aliases.iter().any(|a| name_key(a) == key)
            })
            .map(|c| c.id)
    }

    pub fn require(&self, name: &str) -> Result<CategoryId> {
        self.resolve(name)
            .ok_or_else(|| Error::validation_with("unknown category", vec![name.to_string()]))
    }

    pub fn non_diagnostic(&self) -> Vec<CategoryId> {
        self.categories
            .iter()
            .filter(|c| !c.diagnostic)
            .map(|c| c.id)
            .collect()
    }
}

impl TryFrom<Vec<Category>> for CategoryTable {
    type Error = Error;

    fn try_from(categories: Vec<Category>) -> Result<Self> {
        CategoryTable::new(categories)
    }
}

impl From<CategoryTable> for Vec<Category> {
    fn from(table: CategoryTable) -> Self {
        table.categories
    }
}

pub(crate) fn name_key(name: &str) -> String {
    let lowered = name.trim().to_lowercase().replace(['_', '-'], " ");
    let mut key = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    for suffix in [" cells", " cell"] {
        if let Some(stripped) = key.strip_suffix(suffix) {
            key = stripped.to_string();
            break;
        }
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_shape() {
        let t = CategoryTable::cytology();
        assert_eq!(t.len(), 11);
        assert_eq!(t.ids().collect::<Vec<_>>(), (1..=11).collect::<Vec<_>>());
        let non_diag: Vec<&str> = t
            .non_diagnostic()
            .into_iter()
            .map(|id| t.name(id).unwrap())
            .collect();
        assert_eq!(non_diag, vec!["Cut", "Unrecognized", "Damaged"]);
    }

    #[test]
    fn resolves_dataset_spellings() {
        let t = CategoryTable::cytology();
        assert_eq!(t.resolve("Neoplastic mast cells"), Some(1));
        assert_eq!(t.resolve("Lymphoma cells"), Some(3));
        assert_eq!(t.resolve("giant_cell"), Some(8));
        assert_eq!(t.resolve("UNRECOGNIZED"), Some(10));
        assert_eq!(t.resolve("mitotic figure"), None);
    }

    #[test]
    fn rejects_gaps_and_duplicates() {
        let cat = |id, name: &str| Category {
            id,
            name: name.into(),
            diagnostic: true,
            aliases: vec![],
        };
        assert!(CategoryTable::new(vec![cat(1, "a"), cat(3, "b")]).is_err());
        assert!(CategoryTable::new(vec![cat(1, "a"), cat(2, "A")]).is_err());
        assert!(CategoryTable::new(vec![cat(1, "a"), cat(2, "b")]).is_ok());
    }
}
