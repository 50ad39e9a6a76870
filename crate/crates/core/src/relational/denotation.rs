use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::value::Value;

/// The output table a program produces on a database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denotation {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// Whether row order is significant (top-level `ORDER BY`).
    pub ordered: bool,
}

impl Denotation {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>, ordered: bool) -> Self {
        Denotation {
            columns,
            rows,
            ordered,
        }
    }

    /// The single-cell NULL result.
    pub fn null_cell() -> Self {
        Denotation::new(vec!["NULL".into()], vec![vec![Value::Null]], false)
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }

    pub fn is_null_cell(&self) -> bool {
        self.rows.len() == 1 && self.rows[0].len() == 1 && self.rows[0][0].is_null()
    }
}

fn row_cmp(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.canonical_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn rows_equal(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.loosely_equals(y))
}

/// Arity and rows must match; rows compare as sequences when both sides are
/// ordered and as multisets otherwise. Column labels are ignored.
pub fn denotations_equal(a: &Denotation, b: &Denotation) -> bool {
    if a.arity() != b.arity() || a.rows.len() != b.rows.len() {
        return false;
    }
    if a.ordered && b.ordered {
        return a.rows.iter().zip(&b.rows).all(|(x, y)| rows_equal(x, y));
    }
    let mut x: Vec<&Vec<Value>> = a.rows.iter().collect();
    let mut y: Vec<&Vec<Value>> = b.rows.iter().collect();
    x.sort_by(|p, q| row_cmp(p, q));
    y.sort_by(|p, q| row_cmp(p, q));
    x.iter().zip(&y).all(|(p, q)| rows_equal(p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn col(vals: &[i64], ordered: bool) -> Denotation {
        Denotation::new(
            vec!["x".into()],
            vals.iter().map(|v| vec![Value::Integer(*v)]).collect(),
            ordered,
        )
    }

    #[test]
    fn multiset_vs_sequence() {
        assert!(denotations_equal(&col(&[1, 2, 2], false), &col(&[2, 1, 2], false)));
        assert!(!denotations_equal(&col(&[1, 2], true), &col(&[2, 1], true)));
        assert!(denotations_equal(&col(&[1, 2], true), &col(&[2, 1], false)));
        assert!(!denotations_equal(&col(&[1, 1, 2], false), &col(&[1, 2, 2], false)));
    }

    #[test]
    fn nulls_and_labels() {
        let a = Denotation::null_cell();
        let mut b = Denotation::null_cell();
        b.columns = vec!["MAX(age)".into()];
        assert!(denotations_equal(&a, &b));
        let wide = Denotation::new(
            vec!["a".into(), "b".into()],
            vec![vec![Value::Null, Value::Null]],
            false,
        );
        assert!(!denotations_equal(&a, &wide));
    }

    #[test]
    fn reals_within_tolerance() {
        let a = Denotation::new(vec!["x".into()], vec![vec![Value::Real(2.0 / 3.0)]], false);
        let b = Denotation::new(vec!["x".into()], vec![vec![Value::Real(0.6666667)]], false);
        let c = Denotation::new(vec!["x".into()], vec![vec![Value::Real(0.667)]], false);
        assert!(denotations_equal(&a, &b));
        assert!(!denotations_equal(&a, &c));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            (0i64..3).prop_map(Value::Integer),
            (0i64..3).prop_map(|i| Value::Real(i as f64)),
            prop_oneof![Just("a"), Just("b")].prop_map(|s| Value::Text(s.into())),
        ]
    }

    fn arb_denotation() -> impl Strategy<Value = Denotation> {
        (1usize..3, any::<bool>()).prop_flat_map(|(arity, ordered)| {
            prop::collection::vec(prop::collection::vec(arb_value(), arity), 0..4).prop_map(
                move |rows| Denotation::new((0..arity).map(|i| format!("c{i}")).collect(), rows, ordered),
            )
        })
    }

    proptest! {
        #[test]
        fn equivalence_relation(a in arb_denotation(), b in arb_denotation(), c in arb_denotation()) {
            prop_assert!(denotations_equal(&a, &a));
            prop_assert_eq!(denotations_equal(&a, &b), denotations_equal(&b, &a));
            // Transitivity is only guaranteed among denotations sharing an
            // ordering flag; mixed flags compare as multisets.
            if a.ordered == b.ordered && b.ordered == c.ordered
                && denotations_equal(&a, &b) && denotations_equal(&b, &c) {
                prop_assert!(denotations_equal(&a, &c));
            }
        }

        #[test]
        fn permutation_invariant_when_unordered(a in arb_denotation(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut b = a.clone();
            b.ordered = false;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            b.rows.shuffle(&mut rng);
            let mut a2 = a.clone();
            a2.ordered = false;
            prop_assert!(denotations_equal(&a2, &b));
        }
    }
}
