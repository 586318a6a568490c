//! Weight aggregation. Updates are sorted by client id before any floating
//! point work, so the summation order (and therefore the result, to the
//! bit) is independent of arrival order.

use super::ProtocolError;
use crate::nets::ParameterSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationRule {
    /// Plain elementwise mean over clients.
    Mean,
    /// Mean weighted by each client's reported sample count.
    WeightedMean,
}

/// Combine client updates into new global weights.
pub fn aggregate(
    updates: &[(String, ParameterSet, u64)],
    rule: AggregationRule,
) -> Result<ParameterSet, ProtocolError> {
    if updates.is_empty() {
        return Err(ProtocolError::EmptyAggregation);
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by(|&a, &b| updates[a].0.cmp(&updates[b].0));
    for pair in order.windows(2) {
        if updates[pair[0]].0 == updates[pair[1]].0 {
            return Err(ProtocolError::DuplicateUpdate(updates[pair[0]].0.clone()));
        }
    }

    let first = &updates[order[0]].1;
    let expected = first.layout_id();
    for &i in &order {
        let (id, params, n) = &updates[i];
        if params.layout_id() != expected {
            return Err(ProtocolError::LayoutMismatch {
                expected,
                got: params.layout_id(),
            });
        }
        if rule == AggregationRule::WeightedMean && *n == 0 {
            return Err(ProtocolError::NonPositiveWeight(id.clone()));
        }
    }

    let mut global = first.zeros_like();
    let mut total_weight = 0.0;
    for &i in &order {
        let (_, params, n) = &updates[i];
        let w = match rule {
            AggregationRule::Mean => 1.0,
            AggregationRule::WeightedMean => *n as f64,
        };
        total_weight += w;
        for entry in 0..global.len() {
            let src = params.tensor(entry).data();
            for (acc, &v) in global.values_mut(entry).iter_mut().zip(src) {
                *acc += w * v;
            }
        }
    }
    for entry in 0..global.len() {
        for v in global.values_mut(entry) {
            *v /= total_weight;
        }
    }
    Ok(global)
}
