//! Comparison baselines: label propagation for attributes and plain BPR
//! matrix factorization for ranking.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{s, Array2};

use crate::attrs::{AttributeTable, Side};
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, FieldMetric};
use crate::graph::BipartiteGraph;
use crate::trainer::{self, EvalSplit, TrainConfig, TrainOutcome};

/// Label propagation output for one field.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagated {
    /// Field-block distribution for every entity on the table's side.
    pub values: Array2<f64>,
    /// Entities with no path to a labeled node; they hold the observed mean.
    pub disconnected: Vec<usize>,
    pub iterations: usize,
}

fn node_of(side: Side, entity: usize, graph: &BipartiteGraph) -> usize {
    match side {
        Side::User => entity,
        Side::Item => graph.num_users() + entity,
    }
}

/// Propagates field `field` of `table` over every node of `graph`. Each
/// iteration replaces a node's distribution by the mean of its neighbours',
/// then resets observed nodes to their values; it stops after `iterations`
/// rounds or once no entry moves by `tolerance` or more.
pub fn label_propagation(
    graph: &BipartiteGraph,
    table: &AttributeTable,
    field: usize,
    iterations: usize,
    tolerance: f64,
) -> Result<Propagated> {
    let spec = table
        .schema
        .fields()
        .get(field)
        .ok_or_else(|| Error::Config(format!("field index {field} out of range")))?;
    let block = spec.block();
    let width = block.len();
    let side = table.side;
    let n = graph.num_nodes();
    let side_size = match side {
        Side::User => graph.num_users(),
        Side::Item => graph.num_items(),
    };
    if table.num_entities() != side_size {
        return Err(Error::dim("label propagation entities", side_size, table.num_entities()));
    }

    let mut labeled = vec![false; n];
    let mut truth = Array2::<f64>::zeros((n, width));
    let observed: Vec<usize> = (0..table.num_entities()).filter(|&e| table.is_observed(e, field)).collect();
    if observed.is_empty() {
        return Err(Error::NoObservedValues { dim: spec.offset });
    }
    let mut mean = ndarray::Array1::<f64>::zeros(width);
    for &e in &observed {
        let node = node_of(side, e, graph);
        labeled[node] = true;
        let row = table.values.slice(s![e, block.clone()]);
        truth.row_mut(node).assign(&row);
        mean += &row;
    }
    mean /= observed.len() as f64;

    let mut current = truth.clone();
    let mut next = Array2::<f64>::zeros((n, width));
    let mut done = 0;
    while done < iterations {
        let mut change: f64 = 0.0;
        for v in 0..n {
            let mut row = next.row_mut(v);
            if labeled[v] {
                row.assign(&truth.row(v));
                continue;
            }
            row.fill(0.0);
            for u in graph.node_neighbors(v) {
                row += &current.row(u);
            }
            let degree = graph.node_degree(v);
            if degree > 0 {
                row /= degree as f64;
            }
            for (a, b) in row.iter().zip(current.row(v).iter()) {
                change = change.max((a - b).abs());
            }
        }
        std::mem::swap(&mut current, &mut next);
        done += 1;
        if change < tolerance {
            break;
        }
    }

    // Breadth-first search from the labeled nodes finds the unreachable ones.
    let mut reached = labeled.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| labeled[v]).collect();
    while let Some(v) = queue.pop_front() {
        for u in graph.node_neighbors(v) {
            if !reached[u] {
                reached[u] = true;
                queue.push_back(u);
            }
        }
    }
    let mut values = Array2::<f64>::zeros((table.num_entities(), width));
    let mut disconnected = Vec::new();
    for e in 0..table.num_entities() {
        let node = node_of(side, e, graph);
        if reached[node] {
            values.row_mut(e).assign(&current.row(node));
        } else {
            values.row_mut(e).assign(&mean);
            disconnected.push(e);
        }
    }
    Ok(Propagated {
        values,
        disconnected,
        iterations: done,
    })
}

/// Label propagation on every field of `table`, scored on its masked pairs.
pub fn label_propagation_metrics(
    graph: &BipartiteGraph,
    table: &AttributeTable,
    iterations: usize,
    tolerance: f64,
) -> Result<BTreeMap<String, FieldMetric>> {
    let mut predicted = Array2::<f64>::zeros((table.num_entities(), table.dim()));
    for (f, spec) in table.schema.fields().iter().enumerate() {
        let out = label_propagation(graph, table, f, iterations, tolerance)?;
        predicted.slice_mut(s![.., spec.block()]).assign(&out.values);
    }
    eval::attribute_metrics(predicted.view(), table)
}

/// The trainer reduced to plain factorization: no propagation, no attribute
/// projection, no attribute loss.
pub fn bpr_config(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        layers: 0,
        d_a: 0,
        gamma: 0.0,
        ..config.clone()
    }
}

/// Trains the BPR baseline and evaluates it on `split`. Attribute metrics are
/// omitted since the baseline never learns its attribute heads.
pub fn bpr_baseline(dataset: &Dataset, config: &TrainConfig, split: EvalSplit) -> Result<(TrainOutcome, EvalReport)> {
    let cfg = bpr_config(config);
    let outcome = trainer::train(dataset, &cfg)?;
    let mut report = trainer::evaluate(&outcome.best, dataset, &cfg, split, "bpr")?;
    report.per_field.clear();
    Ok((outcome, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs::{AttributeSchema, FieldKind, RawRecord};
    use crate::graph::NormMode;

    fn table(n: usize, labels: &[(usize, usize)], side: Side) -> AttributeTable {
        let schema = AttributeSchema::new(vec![("f".into(), FieldKind::Single, vec!["x".into(), "y".into()])]).unwrap();
        let records: Vec<RawRecord> = (0..n)
            .map(|e| RawRecord {
                id: e.to_string(),
                fields: labels.iter().filter(|(k, _)| *k == e).map(|&(_, c)| ("f".to_string(), vec![c])).collect(),
            })
            .collect();
        AttributeTable::encode(&records, &schema, side).unwrap()
    }

    #[test]
    fn single_edge_copies_the_label() {
        let g = BipartiteGraph::build(&[(0, 0)], 1, 1, NormMode::Symmetric).unwrap();
        let t = table(1, &[(0, 0)], Side::User);
        let out = label_propagation(&g, &t, 0, 100, 1e-12).unwrap();
        assert_eq!(out.values.row(0).to_vec(), vec![1.0, 0.0]);

        let items = table(2, &[(0, 0)], Side::Item);
        let g2 = BipartiteGraph::build(&[(0, 0), (0, 1)], 1, 2, NormMode::Symmetric).unwrap();
        let out = label_propagation(&g2, &items, 0, 1000, 1e-15).unwrap();
        assert!((out.values[[1, 0]] - 1.0).abs() < 1e-12);
        assert!(out.disconnected.is_empty());
    }

    #[test]
    fn path_is_mirror_symmetric() {
        // path item0 - user0 - item1 - user1 - item2 - user2 - item3: label the two end items
        let g = BipartiteGraph::build(&[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3)], 3, 4, NormMode::Symmetric).unwrap();
        let t = table(4, &[(0, 0), (3, 1)], Side::Item);
        let out = label_propagation(&g, &t, 0, 10_000, 1e-14).unwrap();
        let (a, b) = (out.values.row(1), out.values.row(2));
        assert!((a[0] - b[1]).abs() < 1e-9 && (a[1] - b[0]).abs() < 1e-9);
        assert!(a[0] > a[1]);
    }

    #[test]
    fn observed_nodes_keep_their_values_and_isolated_get_mean() {
        let g = BipartiteGraph::build(&[(0, 0), (1, 0), (2, 1)], 4, 2, NormMode::Symmetric).unwrap();
        let t = table(4, &[(0, 1), (1, 0)], Side::User);
        let out = label_propagation(&g, &t, 0, 50, 1e-12).unwrap();
        assert_eq!(out.values.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(out.values.row(1).to_vec(), vec![1.0, 0.0]);
        assert_eq!(out.disconnected, vec![2, 3]);
        assert_eq!(out.values.row(3).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn field_without_labels_is_an_error() {
        let g = BipartiteGraph::build(&[(0, 0)], 1, 1, NormMode::Symmetric).unwrap();
        let t = table(1, &[], Side::User);
        assert!(matches!(label_propagation(&g, &t, 0, 5, 1e-9), Err(Error::NoObservedValues { .. })));
    }
}
