//! Precision/recall of a pseudo-label selection against a known truth oracle.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub count: usize,
}

/// `precision = true selected / selected`, `recall = true selected / all true`.
///
/// An empty selection has precision 1.0; with no true objects at all the
/// recall is 1.0 (nothing was missed).
pub fn selection_metrics(
    selected: &[u64],
    rejected: &[u64],
    oracle: &HashMap<u64, bool>,
) -> Result<SelectionMetrics, EvalError> {
    let mut missing: Vec<u64> = selected
        .iter()
        .chain(rejected)
        .filter(|id| !oracle.contains_key(id))
        .copied()
        .collect();
    if !missing.is_empty() {
        missing.sort_unstable();
        missing.dedup();
        return Err(EvalError::OracleGap(missing));
    }
    let true_selected = selected.iter().filter(|id| oracle[id]).count();
    let true_rejected = rejected.iter().filter(|id| oracle[id]).count();
    let all_true = true_selected + true_rejected;
    Ok(SelectionMetrics {
        precision: if selected.is_empty() {
            1.0
        } else {
            true_selected as f64 / selected.len() as f64
        },
        recall: if all_true == 0 { 1.0 } else { true_selected as f64 / all_true as f64 },
        count: selected.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle(pairs: &[(u64, bool)]) -> HashMap<u64, bool> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn all_selected_true() {
        let m = selection_metrics(&[1, 2], &[], &oracle(&[(1, true), (2, true)])).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn nothing_selected() {
        let m = selection_metrics(&[], &[1, 2], &oracle(&[(1, true), (2, false)])).unwrap();
        assert_eq!((m.precision, m.recall, m.count), (1.0, 0.0, 0));
    }

    #[test]
    fn counting_case() {
        let o = oracle(&[(1, true), (2, true), (3, false), (4, true), (5, true), (6, false)]);
        let m = selection_metrics(&[1, 2, 3], &[4, 5, 6], &o).unwrap();
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.recall - 0.5).abs() < 1e-12);
        assert_eq!(m.count, 3);
    }

    #[test]
    fn oracle_gap_lists_ids() {
        let err = selection_metrics(&[1, 9], &[7], &oracle(&[(1, true)])).unwrap_err();
        assert_eq!(err, EvalError::OracleGap(vec![7, 9]));
    }
}
