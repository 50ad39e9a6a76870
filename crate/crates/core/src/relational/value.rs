use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Declared type of a column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Integer,
    Real,
    Text,
    /// Stored as text in canonical `yyyy-mm-dd` form.
    Date,
}

impl ColumnType {
    /// Maps a declared SQL type to a column type using SQLite-style affinity
    /// rules, with an extra rule for `DATE`/`TIME` declarations.
    pub fn from_declared(decl: &str) -> Self {
        let d = decl.to_ascii_uppercase();
        if d.contains("DATE") || d.contains("TIME") {
            ColumnType::Date
        } else if d.contains("INT") {
            ColumnType::Integer
        } else if d.contains("CHAR") || d.contains("CLOB") || d.contains("TEXT") {
            ColumnType::Text
        } else if d.contains("REAL")
            || d.contains("FLOA")
            || d.contains("DOUB")
            || d.contains("NUM")
            || d.contains("DEC")
        {
            ColumnType::Real
        } else {
            ColumnType::Text
        }
    }

    pub fn sql_name(self) -> &'static str {
        match self {
            ColumnType::Integer => "INTEGER",
            ColumnType::Real => "REAL",
            ColumnType::Text | ColumnType::Date => "TEXT",
        }
    }
}

/// A single cell value.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Date(String),
}

/// Relative tolerance used when comparing reals.
pub const REAL_REL_TOL: f64 = 1e-6;

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) | Value::Date(s) => Some(s),
            _ => None,
        }
    }

    /// Whether this value may be stored in a column of type `ty`.
    pub fn conforms_to(&self, ty: ColumnType) -> bool {
        match (self, ty) {
            (Value::Null, _) => true,
            (Value::Integer(_), ColumnType::Integer) => true,
            (Value::Real(r), ColumnType::Real) => r.is_finite(),
            (Value::Text(_), ColumnType::Text) => true,
            (Value::Date(s), ColumnType::Date) => is_canonical_date(s),
            _ => false,
        }
    }

    /// Converts a loosely typed value (e.g. parsed from JSON) into the
    /// representation used for a column of type `ty`. Returns `None` when the
    /// value cannot be represented.
    pub fn coerce(self, ty: ColumnType) -> Option<Value> {
        match (self, ty) {
            (Value::Null, _) => Some(Value::Null),
            (Value::Integer(i), ColumnType::Integer) => Some(Value::Integer(i)),
            (Value::Real(r), ColumnType::Integer) if r.fract() == 0.0 && r.is_finite() => {
                Some(Value::Integer(r as i64))
            }
            (Value::Integer(i), ColumnType::Real) => Some(Value::Real(i as f64)),
            (Value::Real(r), ColumnType::Real) if r.is_finite() => Some(Value::Real(r)),
            (Value::Integer(i), ColumnType::Text) => Some(Value::Text(i.to_string())),
            (Value::Real(r), ColumnType::Text) => Some(Value::Text(r.to_string())),
            (Value::Text(s) | Value::Date(s), ColumnType::Text) => Some(Value::Text(s)),
            (Value::Text(s) | Value::Date(s), ColumnType::Date) => Some(Value::Date(s)),
            (Value::Text(s), ColumnType::Integer) => s.trim().parse().ok().map(Value::Integer),
            (Value::Text(s), ColumnType::Real) => s
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|r| r.is_finite())
                .map(Value::Real),
            _ => None,
        }
    }

    /// Denotation-level equality: NULL equals NULL, integers and reals compare
    /// numerically with a relative tolerance, dates compare as text.
    pub fn loosely_equals(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Integer(a), Value::Integer(b)) => a == b,
            (a, b) if a.as_f64().is_some() && b.as_f64().is_some() => {
                reals_close(a.as_f64().unwrap(), b.as_f64().unwrap())
            }
            (a, b) => match (a.as_str(), b.as_str()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) | Value::Date(_) => 2,
        }
    }

    /// Total order consistent with [`Value::loosely_equals`] up to the real
    /// tolerance: NULL < numbers < text.
    pub fn canonical_cmp(&self, other: &Value) -> Ordering {
        match self.rank().cmp(&other.rank()) {
            Ordering::Equal => {}
            o => return o,
        }
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (a, b) if a.rank() == 1 => a.as_f64().unwrap().total_cmp(&b.as_f64().unwrap()),
            (a, b) => a.as_str().unwrap().cmp(b.as_str().unwrap()),
        }
    }
}

pub fn reals_close(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= REAL_REL_TOL * scale
}

/// `yyyy-mm-dd`, digits only.
pub fn is_canonical_date(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit())
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Integer(a), Value::Integer(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a.to_bits() == b.to_bits(),
            (Value::Text(a), Value::Text(b)) => a == b,
            (Value::Date(a), Value::Date(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Value::Null => {}
            Value::Integer(i) => i.hash(state),
            Value::Real(r) => r.to_bits().hash(state),
            Value::Text(s) | Value::Date(s) => s.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) | Value::Date(s) => f.write_str(s),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_none(),
            Value::Integer(i) => s.serialize_i64(*i),
            Value::Real(r) => s.serialize_f64(*r),
            Value::Text(t) | Value::Date(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::Bool(b) => Ok(Value::Integer(b as i64)),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Integer(i))
                } else {
                    Ok(Value::Real(n.as_f64().unwrap_or(f64::NAN)))
                }
            }
            serde_json::Value::String(s) => Ok(Value::Text(s)),
            other => Err(serde::de::Error::custom(format!(
                "unsupported cell value {other}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity() {
        assert_eq!(ColumnType::from_declared("varchar(20)"), ColumnType::Text);
        assert_eq!(ColumnType::from_declared("INT"), ColumnType::Integer);
        assert_eq!(ColumnType::from_declared("double"), ColumnType::Real);
        assert_eq!(ColumnType::from_declared("date"), ColumnType::Date);
        assert_eq!(ColumnType::from_declared(""), ColumnType::Text);
    }

    #[test]
    fn canonical_dates() {
        assert!(is_canonical_date("2021-11-01"));
        assert!(!is_canonical_date("2021-11-1"));
        assert!(!is_canonical_date("nov1,2021"));
    }

    #[test]
    fn loose_equality() {
        assert!(Value::Null.loosely_equals(&Value::Null));
        assert!(Value::Integer(3).loosely_equals(&Value::Real(3.0)));
        assert!(Value::Real(1.0).loosely_equals(&Value::Real(1.0 + 1e-9)));
        assert!(!Value::Real(1.0).loosely_equals(&Value::Real(1.001)));
        assert!(Value::Date("2020-01-01".into()).loosely_equals(&Value::Text("2020-01-01".into())));
        assert!(!Value::Null.loosely_equals(&Value::Integer(0)));
    }
}
