use std::collections::HashSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::database::{Database, RecordRef};
use super::schema::Schema;
use super::value::{is_canonical_date, ColumnType, Value};

#[derive(Debug, Error, PartialEq)]
pub enum RepairError {
    #[error("`{table}.{column}`: cannot parse date {value:?}")]
    Date {
        table: String,
        column: String,
        value: String,
    },
}

/// Accepted input date patterns (chrono `strftime` syntax). Inputs are
/// lowercased and stripped of whitespace before matching, so `"Nov 1, 2021"`
/// and `"nov1,2021"` both match `%b%d,%Y`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepairConfig {
    pub date_formats: Vec<String>,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            date_formats: [
                "%Y-%m-%d",
                "%Y/%m/%d",
                "%Y.%m.%d",
                "%m/%d/%Y",
                "%d.%m.%Y",
                "%b%d,%Y",
                "%B%d,%Y",
                "%d%b%Y",
                "%d%B%Y",
                "%b%d%Y",
                "%B%d%Y",
                "%Y%m%d",
                "%Y-%m-%d%H:%M:%S",
                "%Y-%m-%d%H:%M",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

impl RepairConfig {
    /// Canonical `yyyy-mm-dd` form of `raw`, if any accepted pattern matches.
    pub fn canonical_date(&self, raw: &str) -> Option<String> {
        if is_canonical_date(raw) && NaiveDate::parse_from_str(raw, "%Y-%m-%d").is_ok() {
            return Some(raw.to_string());
        }
        let squeezed: String = raw
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_lowercase();
        if squeezed.is_empty() {
            return None;
        }
        for f in &self.date_formats {
            let fmt: String = f.chars().filter(|c| !c.is_whitespace()).collect();
            if let Ok(d) = NaiveDate::parse_from_str(&squeezed, &fmt) {
                return Some(d.format("%Y-%m-%d").to_string());
            }
            if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(&squeezed, &fmt) {
                return Some(dt.date().format("%Y-%m-%d").to_string());
            }
        }
        None
    }
}

/// Makes `db` satisfy every database invariant: canonical dates, no duplicate
/// key values (first occurrence wins), no NULLs in NOT NULL columns, and no
/// foreign-key orphans (dropped repeatedly until a fixed point).
pub fn repair_database(
    db: &Database,
    schema: &Schema,
    cfg: &RepairConfig,
) -> Result<Database, RepairError> {
    let mut out = db.clone();
    for t in &mut out.tables {
        let Some(def) = schema.table(&t.name) else {
            continue;
        };
        for (ci, cname) in t.columns.iter().enumerate() {
            let Some(col) = def.column(cname) else {
                continue;
            };
            if col.ty != ColumnType::Date {
                continue;
            }
            for row in &mut t.rows {
                let raw = match &row[ci] {
                    Value::Date(s) | Value::Text(s) => s.clone(),
                    _ => continue,
                };
                let canon = cfg.canonical_date(&raw).ok_or_else(|| RepairError::Date {
                    table: t.name.clone(),
                    column: col.name.clone(),
                    value: raw.clone(),
                })?;
                row[ci] = Value::Date(canon);
            }
        }
    }

    let mut drop = HashSet::new();
    for (ti, t) in out.tables.iter().enumerate() {
        let Some(def) = schema.table(&t.name) else {
            continue;
        };
        for (ci, cname) in t.columns.iter().enumerate() {
            let Some(col) = def.column(cname) else {
                continue;
            };
            let mut seen = HashSet::new();
            for (ri, row) in t.rows.iter().enumerate() {
                let v = &row[ci];
                if v.is_null() {
                    if col.not_null {
                        drop.insert(RecordRef { table: ti, row: ri });
                    }
                } else if col.is_distinct() && !seen.insert(v.clone()) {
                    drop.insert(RecordRef { table: ti, row: ri });
                }
            }
        }
    }
    if !drop.is_empty() {
        out = out.without(&drop);
    }
    Ok(drop_orphans(out, schema))
}

/// Removes child rows whose foreign-key value has no parent, iterating until
/// nothing changes.
pub fn drop_orphans(mut db: Database, schema: &Schema) -> Database {
    loop {
        let mut drop = HashSet::new();
        for fk in &schema.foreign_keys {
            let Some(ti) = db
                .tables
                .iter()
                .position(|t| t.name.eq_ignore_ascii_case(&fk.child_table))
            else {
                continue;
            };
            let Some(ci) = db.tables[ti].column_index(&fk.child_column) else {
                continue;
            };
            let Some(parent) = db.table(&fk.parent_table) else {
                continue;
            };
            if parent.column_index(&fk.parent_column).is_none() {
                continue;
            }
            let parents: HashSet<Value> = db
                .column_values(&fk.parent_table, &fk.parent_column)
                .into_iter()
                .collect();
            for (ri, row) in db.tables[ti].rows.iter().enumerate() {
                let v = &row[ci];
                if !v.is_null() && !parents.contains(v) {
                    drop.insert(RecordRef { table: ti, row: ri });
                }
            }
        }
        if drop.is_empty() {
            return db;
        }
        db = db.without(&drop);
    }
}
