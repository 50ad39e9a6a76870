use std::collections::BTreeSet;

use crate::relational::sqltext::identifier_footprint;
use crate::relational::{Database, Table};

/// Drops the tables and columns of `db` that none of `programs` mentions.
/// A `*` in any program keeps every column of the kept tables. A kept table
/// with no mentioned column keeps its first column so it stays loadable.
pub fn prune_database<'a>(db: &Database, programs: impl IntoIterator<Item = &'a str>) -> Database {
    let mut footprint: BTreeSet<String> = BTreeSet::new();
    for p in programs {
        footprint.extend(identifier_footprint(p));
    }
    let star = footprint.contains("*");
    let tables = db
        .tables
        .iter()
        .filter(|t| footprint.contains(&t.name.to_lowercase()))
        .map(|t| {
            let mut keep: Vec<usize> = (0..t.columns.len())
                .filter(|i| star || footprint.contains(&t.columns[*i].to_lowercase()))
                .collect();
            if keep.is_empty() && !t.columns.is_empty() {
                keep.push(0);
            }
            Table {
                name: t.name.clone(),
                columns: keep.iter().map(|i| t.columns[*i].clone()).collect(),
                rows: t
                    .rows
                    .iter()
                    .map(|r| keep.iter().map(|i| r[*i].clone()).collect())
                    .collect(),
            }
        })
        .collect();
    Database {
        schema_id: db.schema_id.clone(),
        tables,
    }
}
