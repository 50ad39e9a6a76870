use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::ColumnType;

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("duplicate table `{0}`")]
    DuplicateTable(String),
    #[error("duplicate column `{table}.{column}`")]
    DuplicateColumn { table: String, column: String },
    #[error("foreign key references unknown column `{0}`")]
    UnknownColumn(String),
    #[error("foreign key parent `{0}` is neither primary key nor unique")]
    ParentNotUnique(String),
    #[error("foreign-key graph has a cycle through table `{0}`")]
    Cycle(String),
    #[error("malformed column reference `{0}` (expected table.column)")]
    BadReference(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(default)]
    pub not_null: bool,
    #[serde(default)]
    pub primary_key: bool,
    #[serde(default)]
    pub unique: bool,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column {
            name: name.into(),
            ty,
            not_null: false,
            primary_key: false,
            unique: false,
        }
    }

    pub fn primary(mut self) -> Self {
        self.primary_key = true;
        self.not_null = true;
        self
    }

    pub fn unique(mut self) -> Self {
        self.unique = true;
        self
    }

    /// Primary-key and unique columns must hold distinct non-NULL values.
    pub fn is_distinct(&self) -> bool {
        self.primary_key || self.unique
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<Column>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl TableDef {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Self {
        TableDef {
            name: name.into(),
            columns,
            description: None,
        }
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }
}

/// `child_table.child_column → parent_table.parent_column`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child_table: String,
    pub child_column: String,
    pub parent_table: String,
    pub parent_column: String,
}

impl ForeignKey {
    pub fn new(child: &str, parent: &str) -> Result<Self, SchemaError> {
        let (ct, cc) = split_ref(child)?;
        let (pt, pc) = split_ref(parent)?;
        Ok(ForeignKey {
            child_table: ct.to_string(),
            child_column: cc.to_string(),
            parent_table: pt.to_string(),
            parent_column: pc.to_string(),
        })
    }
}

fn split_ref(r: &str) -> Result<(&str, &str), SchemaError> {
    r.split_once('.')
        .filter(|(t, c)| !t.is_empty() && !c.is_empty())
        .ok_or_else(|| SchemaError::BadReference(r.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub id: String,
    pub domain_id: String,
    pub tables: Vec<TableDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl Schema {
    /// Builds a schema and checks its invariants. Foreign-key names are
    /// rewritten to the declared spelling of the referenced tables/columns.
    pub fn new(
        id: impl Into<String>,
        domain_id: impl Into<String>,
        tables: Vec<TableDef>,
        foreign_keys: Vec<ForeignKey>,
    ) -> Result<Self, SchemaError> {
        let mut schema = Schema {
            id: id.into(),
            domain_id: domain_id.into(),
            tables,
            foreign_keys: Vec::new(),
        };
        let mut seen = HashSet::new();
        for t in &schema.tables {
            if !seen.insert(t.name.to_ascii_lowercase()) {
                return Err(SchemaError::DuplicateTable(t.name.clone()));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.to_ascii_lowercase()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: t.name.clone(),
                        column: c.name.clone(),
                    });
                }
            }
        }
        let mut fks = BTreeSet::new();
        for fk in foreign_keys {
            let resolve = |t: &str, c: &str| -> Result<(String, String, bool), SchemaError> {
                let table = schema
                    .table(t)
                    .ok_or_else(|| SchemaError::UnknownColumn(format!("{t}.{c}")))?;
                let col = table
                    .column(c)
                    .ok_or_else(|| SchemaError::UnknownColumn(format!("{t}.{c}")))?;
                Ok((table.name.clone(), col.name.clone(), col.is_distinct()))
            };
            let (ct, cc, _) = resolve(&fk.child_table, &fk.child_column)?;
            let (pt, pc, distinct) = resolve(&fk.parent_table, &fk.parent_column)?;
            if !distinct {
                return Err(SchemaError::ParentNotUnique(format!("{pt}.{pc}")));
            }
            fks.insert(ForeignKey {
                child_table: ct,
                child_column: cc,
                parent_table: pt,
                parent_column: pc,
            });
        }
        schema.foreign_keys = fks.into_iter().collect();
        schema.topological_order()?;
        Ok(schema)
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Foreign key whose child side is `table.column`, if any.
    pub fn foreign_key_of(&self, table: &str, column: &str) -> Option<&ForeignKey> {
        self.foreign_keys.iter().find(|fk| {
            fk.child_table.eq_ignore_ascii_case(table)
                && fk.child_column.eq_ignore_ascii_case(column)
        })
    }

    /// Table names in parent-first order. Self-references are ignored for
    /// ordering; any other cycle is an error.
    pub fn topological_order(&self) -> Result<Vec<String>, SchemaError> {
        let names: Vec<String> = self.tables.iter().map(|t| t.name.clone()).collect();
        let mut parents: BTreeMap<&str, BTreeSet<&str>> =
            names.iter().map(|n| (n.as_str(), BTreeSet::new())).collect();
        for fk in &self.foreign_keys {
            if fk.child_table != fk.parent_table {
                parents
                    .get_mut(fk.child_table.as_str())
                    .expect("validated")
                    .insert(fk.parent_table.as_str());
            }
        }
        let mut order = Vec::with_capacity(names.len());
        let mut placed: HashSet<&str> = HashSet::new();
        while order.len() < names.len() {
            let next = names.iter().find(|n| {
                !placed.contains(n.as_str())
                    && parents[n.as_str()].iter().all(|p| placed.contains(p))
            });
            match next {
                Some(n) => {
                    placed.insert(n.as_str());
                    order.push(n.clone());
                }
                None => {
                    let stuck = names
                        .iter()
                        .find(|n| !placed.contains(n.as_str()))
                        .expect("loop guard");
                    return Err(SchemaError::Cycle(stuck.clone()));
                }
            }
        }
        Ok(order)
    }

    pub fn record_columns(&self) -> impl Iterator<Item = (&TableDef, &Column)> {
        self.tables
            .iter()
            .flat_map(|t| t.columns.iter().map(move |c| (t, c)))
    }
}

/// Sidecar metadata accompanying a DDL script.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SchemaMeta {
    pub domain_id: String,
    /// Extra foreign keys as `{"child": "t.c", "parent": "t.c"}`.
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKeyRef>,
    #[serde(default)]
    pub descriptions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForeignKeyRef {
    pub child: String,
    pub parent: String,
}
