//! Random database generation seeded by a sample database's cell values.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::relational::repair::drop_orphans;
use crate::relational::schema::SchemaError;
use crate::relational::{Column, ColumnType, Database, Schema, Table, TableDef, Value};
use crate::seeding;

#[derive(Debug, Error, PartialEq)]
pub enum FuzzError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("foreign key `{child}` has an empty parent domain `{parent}`")]
    EmptyParentDomain { child: String, parent: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuzzConfig {
    /// Row counts are uniform in `[1, max_rows_per_table]`.
    pub max_rows_per_table: usize,
    /// Probability of nudging a copied integer by ±1.
    pub int_perturb_prob: f64,
    /// Keep columns duplicate-free when the sample column is.
    pub enforce_unique: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            max_rows_per_table: 40,
            int_perturb_prob: 0.3,
            enforce_unique: true,
        }
    }
}

/// Source of values for one non-foreign-key column.
struct ColumnSampler {
    ty: ColumnType,
    /// Every sample cell, duplicates and NULLs included, so draws follow the
    /// sample distribution.
    cells: Vec<Value>,
    distinct: bool,
    name: String,
}

impl ColumnSampler {
    fn new(table: &TableDef, col: &Column, sample: &Database, cfg: &FuzzConfig) -> Self {
        let cells: Vec<Value> = sample
            .table(&table.name)
            .and_then(|t| t.column_index(&col.name).map(|ci| (t, ci)))
            .map(|(t, ci)| t.rows.iter().map(|r| r[ci].clone()).collect())
            .unwrap_or_default();
        let non_null: Vec<&Value> = cells.iter().filter(|v| !v.is_null()).collect();
        let sample_unique = {
            let set: HashSet<&Value> = non_null.iter().copied().collect();
            !non_null.is_empty() && set.len() == non_null.len()
        };
        let cells = if col.not_null || col.is_distinct() {
            cells.into_iter().filter(|v| !v.is_null()).collect()
        } else {
            cells
        };
        ColumnSampler {
            ty: col.ty,
            cells,
            distinct: col.is_distinct() || (cfg.enforce_unique && sample_unique),
            name: col.name.clone(),
        }
    }

    fn synthetic(&self, rng: &mut impl Rng, k: usize) -> Value {
        match self.ty {
            ColumnType::Integer => Value::Integer(rng.gen_range(1..=(2 * k as i64 + 10))),
            ColumnType::Real => Value::Real((rng.gen_range(0..1000) as f64) / 10.0),
            ColumnType::Text => Value::Text(format!("{} {}", self.name, rng.gen_range(1..=(k + 5)))),
            ColumnType::Date => Value::Date(format!(
                "20{:02}-{:02}-{:02}",
                rng.gen_range(0..25),
                rng.gen_range(1..=12),
                rng.gen_range(1..=28)
            )),
        }
    }

    fn perturb(&self, v: Value, rng: &mut impl Rng, p: f64) -> Value {
        match v {
            Value::Integer(i) if rng.gen_bool(p) => {
                Value::Integer(if rng.gen_bool(0.5) { i + 1 } else { i - 1 })
            }
            other => other,
        }
    }

    fn draw(&self, rng: &mut impl Rng, p: f64, n: usize) -> Value {
        if self.cells.is_empty() {
            return self.synthetic(rng, n);
        }
        let v = self.cells[rng.gen_range(0..self.cells.len())].clone();
        self.perturb(v, rng, p)
    }

    /// `n` values; distinct columns get duplicate-free values and may come
    /// back shorter than `n` when the domain runs out.
    fn generate(&self, rng: &mut impl Rng, p: f64, n: usize) -> Vec<Value> {
        if !self.distinct {
            return (0..n).map(|_| self.draw(rng, p, n)).collect();
        }
        let mut pool: Vec<Value> = {
            let mut seen = HashSet::new();
            self.cells
                .iter()
                .filter(|v| !v.is_null() && seen.insert((*v).clone()))
                .cloned()
                .collect()
        };
        pool.shuffle(rng);
        let mut used: HashSet<Value> = HashSet::new();
        let mut out = Vec::with_capacity(n);
        for v in pool {
            if out.len() == n {
                break;
            }
            let v = self.perturb(v, rng, p);
            if used.insert(v.clone()) {
                out.push(v);
            }
        }
        let mut attempts = 0;
        while out.len() < n && attempts < 20 * n + 20 {
            attempts += 1;
            let v = match self.ty {
                ColumnType::Integer => {
                    let base = used
                        .iter()
                        .filter_map(|v| match v {
                            Value::Integer(i) => Some(*i),
                            _ => None,
                        })
                        .max()
                        .unwrap_or(0);
                    Value::Integer(base + 1)
                }
                ColumnType::Text if !self.cells.is_empty() => break,
                _ => self.synthetic(rng, n),
            };
            if used.insert(v.clone()) {
                out.push(v);
            }
        }
        out
    }
}

/// Generates a random database: tables in parent-first order, cells copied
/// from the sample database (integers nudged by ±1 with probability
/// `int_perturb_prob`), child foreign keys drawn from generated parent
/// values. Deterministic in `seed`.
pub fn fuzz_database(
    schema: &Schema,
    sample_db: &Database,
    cfg: &FuzzConfig,
    seed: u64,
) -> Result<Database, FuzzError> {
    let order = schema.topological_order()?;
    let mut rng = seeding::rng(seed);
    let p = cfg.int_perturb_prob;
    let mut out = Database::empty(schema);
    for tname in &order {
        let def = schema.table(tname).expect("ordered tables exist");
        let mut n = rng.gen_range(1..=cfg.max_rows_per_table.max(1));
        let mut columns: Vec<Option<Vec<Value>>> = vec![None; def.columns.len()];
        // Plain columns first; distinct ones may shrink the row count.
        for (ci, col) in def.columns.iter().enumerate() {
            if schema.foreign_key_of(&def.name, &col.name).is_some() {
                continue;
            }
            let sampler = ColumnSampler::new(def, col, sample_db, cfg);
            let vals = sampler.generate(&mut rng, p, n);
            n = n.min(vals.len());
            columns[ci] = Some(vals);
        }
        for (ci, col) in def.columns.iter().enumerate() {
            let Some(fk) = schema.foreign_key_of(&def.name, &col.name) else {
                continue;
            };
            let parent_vals: Vec<Value> = if fk.parent_table.eq_ignore_ascii_case(&def.name) {
                let pi = def.column_index(&fk.parent_column).expect("validated fk");
                let mut seen = BTreeSet::new();
                columns[pi]
                    .as_ref()
                    .map(|v| {
                        v.iter()
                            .take(n)
                            .filter(|x| !x.is_null() && seen.insert(format!("{x:?}")))
                            .cloned()
                            .collect()
                    })
                    .unwrap_or_default()
            } else {
                out.column_values(&fk.parent_table, &fk.parent_column)
            };
            if parent_vals.is_empty() {
                if !col.not_null && !col.is_distinct() {
                    columns[ci] = Some(vec![Value::Null; n]);
                    continue;
                }
                return Err(FuzzError::EmptyParentDomain {
                    child: format!("{}.{}", def.name, col.name),
                    parent: format!("{}.{}", fk.parent_table, fk.parent_column),
                });
            }
            let vals: Vec<Value> = if col.is_distinct() {
                let mut pool = parent_vals.clone();
                pool.shuffle(&mut rng);
                pool.truncate(n);
                pool
            } else {
                (0..n)
                    .map(|_| parent_vals[rng.gen_range(0..parent_vals.len())].clone())
                    .collect()
            };
            n = n.min(vals.len());
            columns[ci] = Some(vals);
        }
        let rows: Vec<Vec<Value>> = (0..n)
            .map(|r| {
                columns
                    .iter()
                    .map(|c| c.as_ref().expect("every column generated")[r].clone())
                    .collect()
            })
            .collect();
        *out.table_mut(&def.name).expect("empty db has every table") = Table {
            name: def.name.clone(),
            columns: def.columns.iter().map(|c| c.name.clone()).collect(),
            rows,
        };
    }
    Ok(drop_orphans(out, schema))
}
