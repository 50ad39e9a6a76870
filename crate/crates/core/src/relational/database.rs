use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::schema::Schema;
use super::value::{ColumnType, Value};

/// Rows of one table. `columns` is a subset of the schema table's columns in
/// schema order (pruned databases omit unreferenced columns).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
    }
}

/// A concrete database instance conforming (possibly after pruning) to a
/// [`Schema`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Database {
    pub schema_id: String,
    pub tables: Vec<Table>,
}

/// Location of one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordRef {
    pub table: usize,
    pub row: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("database is for schema `{found}`, expected `{expected}`")]
    SchemaMismatch { expected: String, found: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{table}.{column}`")]
    UnknownColumn { table: String, column: String },
    #[error("row {row} of `{table}` has {found} cells, expected {expected}")]
    Arity {
        table: String,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("`{table}.{column}` row {row}: value {value} does not conform to {ty:?}")]
    Type {
        table: String,
        column: String,
        row: usize,
        value: String,
        ty: ColumnType,
    },
    #[error("`{table}.{column}` row {row} is NULL but declared NOT NULL")]
    NotNull {
        table: String,
        column: String,
        row: usize,
    },
    #[error("`{table}.{column}` has duplicate value {value}")]
    Duplicate {
        table: String,
        column: String,
        value: String,
    },
    #[error("`{table}.{column}` value {value} has no parent in `{parent}`")]
    Orphan {
        table: String,
        column: String,
        value: String,
        parent: String,
    },
}

#[derive(Debug, Error)]
pub enum DatabaseFormatError {
    #[error("malformed database JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("`{table}.{column}` value {value} cannot be stored as {ty:?}")]
    Coerce {
        table: String,
        column: String,
        value: String,
        ty: ColumnType,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Portable JSON form:
/// `{"schema_id": .., "tables": {"name": {"columns": [..], "rows": [[..]]}}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortableDatabase {
    pub schema_id: String,
    pub tables: IndexMap<String, PortableTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortableTable {
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    pub rows: Vec<Vec<Value>>,
}

impl Serialize for Database {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_portable().serialize(s)
    }
}

/// Schema-free reading: tables and columns are taken as listed (`columns`
/// is required) and cells keep their JSON types. Use
/// [`Database::from_portable`] to coerce against a schema.
impl<'de> Deserialize<'de> for Database {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let p = PortableDatabase::deserialize(d)?;
        let mut tables = Vec::with_capacity(p.tables.len());
        for (name, t) in p.tables {
            let columns = t
                .columns
                .ok_or_else(|| serde::de::Error::custom(format!("table `{name}` lacks `columns`")))?;
            if let Some(r) = t.rows.iter().find(|r| r.len() != columns.len()) {
                return Err(serde::de::Error::custom(format!(
                    "row of `{name}` has {} cells, expected {}",
                    r.len(),
                    columns.len()
                )));
            }
            tables.push(Table { name, columns, rows: t.rows });
        }
        Ok(Database {
            schema_id: p.schema_id,
            tables,
        })
    }
}

impl Database {
    /// Re-reads cells against `schema` (restoring dates and reals that a
    /// schema-free round trip left as text or integers). Tables and columns
    /// absent from `self` stay absent.
    pub fn coerced(&self, schema: &Schema) -> Result<Database, DatabaseFormatError> {
        let mut tables = Vec::with_capacity(self.tables.len());
        for t in &self.tables {
            let def = schema
                .table(&t.name)
                .ok_or_else(|| ValidationError::UnknownTable(t.name.clone()))?;
            let mut rows = Vec::with_capacity(t.rows.len());
            for row in &t.rows {
                let mut out = Vec::with_capacity(row.len());
                for (cell, cname) in row.iter().zip(&t.columns) {
                    let ty = def
                        .column(cname)
                        .ok_or_else(|| ValidationError::UnknownColumn {
                            table: t.name.clone(),
                            column: cname.clone(),
                        })?
                        .ty;
                    out.push(cell.clone().coerce(ty).ok_or_else(|| DatabaseFormatError::Coerce {
                        table: t.name.clone(),
                        column: cname.clone(),
                        value: cell.to_string(),
                        ty,
                    })?);
                }
                rows.push(out);
            }
            tables.push(Table {
                name: def.name.clone(),
                columns: t.columns.clone(),
                rows,
            });
        }
        Ok(Database {
            schema_id: self.schema_id.clone(),
            tables,
        })
    }

    /// A database with every schema table present and empty.
    pub fn empty(schema: &Schema) -> Self {
        Database {
            schema_id: schema.id.clone(),
            tables: schema
                .tables
                .iter()
                .map(|t| Table {
                    name: t.name.clone(),
                    columns: t.columns.iter().map(|c| c.name.clone()).collect(),
                    rows: Vec::new(),
                })
                .collect(),
        }
    }

    /// Total number of records `|i|`.
    pub fn size(&self) -> usize {
        self.tables.iter().map(|t| t.rows.len()).sum()
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut Table> {
        self.tables
            .iter_mut()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn records(&self) -> impl Iterator<Item = RecordRef> + '_ {
        self.tables
            .iter()
            .enumerate()
            .flat_map(|(ti, t)| (0..t.rows.len()).map(move |row| RecordRef { table: ti, row }))
    }

    /// Copy of this database without the given records.
    pub fn without(&self, drop: &HashSet<RecordRef>) -> Database {
        Database {
            schema_id: self.schema_id.clone(),
            tables: self
                .tables
                .iter()
                .enumerate()
                .map(|(ti, t)| Table {
                    name: t.name.clone(),
                    columns: t.columns.clone(),
                    rows: t
                        .rows
                        .iter()
                        .enumerate()
                        .filter(|(row, _)| !drop.contains(&RecordRef { table: ti, row: *row }))
                        .map(|(_, r)| r.clone())
                        .collect(),
                })
                .collect(),
        }
    }

    /// Reads the portable JSON form, coercing cells to the declared column
    /// types. Tables missing from the JSON are empty; missing `columns` means
    /// all schema columns in order. The result is type-checked but not
    /// key-checked (see [`repair_database`](super::repair::repair_database)).
    pub fn from_portable(p: PortableDatabase, schema: &Schema) -> Result<Self, DatabaseFormatError> {
        if p.schema_id != schema.id {
            return Err(ValidationError::SchemaMismatch {
                expected: schema.id.clone(),
                found: p.schema_id,
            }
            .into());
        }
        for name in p.tables.keys() {
            if schema.table(name).is_none() {
                return Err(ValidationError::UnknownTable(name.clone()).into());
            }
        }
        let mut tables = Vec::new();
        for def in &schema.tables {
            let entry = p
                .tables
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(&def.name))
                .map(|(_, v)| v);
            let columns: Vec<String> = match entry.and_then(|e| e.columns.clone()) {
                Some(cols) => {
                    let mut out = Vec::new();
                    for c in &cols {
                        let col = def.column(c).ok_or_else(|| ValidationError::UnknownColumn {
                            table: def.name.clone(),
                            column: c.clone(),
                        })?;
                        out.push(col.name.clone());
                    }
                    out
                }
                None => def.columns.iter().map(|c| c.name.clone()).collect(),
            };
            let mut rows = Vec::new();
            if let Some(entry) = entry {
                for (ri, row) in entry.rows.iter().enumerate() {
                    if row.len() != columns.len() {
                        return Err(ValidationError::Arity {
                            table: def.name.clone(),
                            row: ri,
                            expected: columns.len(),
                            found: row.len(),
                        }
                        .into());
                    }
                    let mut out = Vec::with_capacity(row.len());
                    for (cell, cname) in row.iter().zip(&columns) {
                        let ty = def.column(cname).expect("resolved above").ty;
                        let v = cell.clone().coerce(ty).ok_or_else(|| DatabaseFormatError::Coerce {
                            table: def.name.clone(),
                            column: cname.clone(),
                            value: cell.to_string(),
                            ty,
                        })?;
                        out.push(v);
                    }
                    rows.push(out);
                }
            }
            tables.push(Table {
                name: def.name.clone(),
                columns,
                rows,
            });
        }
        Ok(Database {
            schema_id: schema.id.clone(),
            tables,
        })
    }

    pub fn from_json_str(s: &str, schema: &Schema) -> Result<Self, DatabaseFormatError> {
        Self::from_portable(serde_json::from_str(s)?, schema)
    }

    pub fn to_portable(&self) -> PortableDatabase {
        PortableDatabase {
            schema_id: self.schema_id.clone(),
            tables: self
                .tables
                .iter()
                .map(|t| {
                    (
                        t.name.clone(),
                        PortableTable {
                            columns: Some(t.columns.clone()),
                            rows: t.rows.clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_portable()).expect("database serializes")
    }

    /// Distinct non-NULL values of `table.column`, in first-seen order.
    pub fn column_values(&self, table: &str, column: &str) -> Vec<Value> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        if let Some(t) = self.table(table) {
            if let Some(ci) = t.column_index(column) {
                for r in &t.rows {
                    let v = &r[ci];
                    if !v.is_null() && seen.insert(v.clone()) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }
}

/// Checks typing, NOT NULL, uniqueness and foreign keys. Columns or tables
/// absent from the database (pruned) are not checked.
pub fn validate_database(db: &Database, schema: &Schema) -> Result<(), ValidationError> {
    if db.schema_id != schema.id {
        return Err(ValidationError::SchemaMismatch {
            expected: schema.id.clone(),
            found: db.schema_id.clone(),
        });
    }
    for t in &db.tables {
        let def = schema
            .table(&t.name)
            .ok_or_else(|| ValidationError::UnknownTable(t.name.clone()))?;
        let mut cols = Vec::with_capacity(t.columns.len());
        for c in &t.columns {
            cols.push(def.column(c).ok_or_else(|| ValidationError::UnknownColumn {
                table: t.name.clone(),
                column: c.clone(),
            })?);
        }
        let mut distinct: Vec<HashSet<&Value>> = vec![HashSet::new(); cols.len()];
        for (ri, row) in t.rows.iter().enumerate() {
            if row.len() != cols.len() {
                return Err(ValidationError::Arity {
                    table: t.name.clone(),
                    row: ri,
                    expected: cols.len(),
                    found: row.len(),
                });
            }
            for (ci, (v, col)) in row.iter().zip(&cols).enumerate() {
                if v.is_null() {
                    if col.not_null {
                        return Err(ValidationError::NotNull {
                            table: t.name.clone(),
                            column: col.name.clone(),
                            row: ri,
                        });
                    }
                    continue;
                }
                if !v.conforms_to(col.ty) {
                    return Err(ValidationError::Type {
                        table: t.name.clone(),
                        column: col.name.clone(),
                        row: ri,
                        value: v.to_string(),
                        ty: col.ty,
                    });
                }
                if col.is_distinct() && !distinct[ci].insert(v) {
                    return Err(ValidationError::Duplicate {
                        table: t.name.clone(),
                        column: col.name.clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
    }
    for fk in &schema.foreign_keys {
        let (Some(child), Some(parent)) = (db.table(&fk.child_table), db.table(&fk.parent_table))
        else {
            continue;
        };
        let (Some(ci), Some(_)) = (
            child.column_index(&fk.child_column),
            parent.column_index(&fk.parent_column),
        ) else {
            continue;
        };
        let parents: HashSet<Value> = db
            .column_values(&fk.parent_table, &fk.parent_column)
            .into_iter()
            .collect();
        for row in &child.rows {
            let v = &row[ci];
            if !v.is_null() && !parents.contains(v) {
                return Err(ValidationError::Orphan {
                    table: child.name.clone(),
                    column: fk.child_column.clone(),
                    value: v.to_string(),
                    parent: format!("{}.{}", fk.parent_table, fk.parent_column),
                });
            }
        }
    }
    Ok(())
}

/// Per-table row counts, handy for traces.
pub fn table_sizes(db: &Database) -> HashMap<String, usize> {
    db.tables
        .iter()
        .map(|t| (t.name.clone(), t.rows.len()))
        .collect()
}
