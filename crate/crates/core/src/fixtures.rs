//! Shipped fixture data.

use crate::forest::CLForest;

/// JSON text of the reference forest: one root with three root-to-leaf paths
/// of 5, 4 and 5 coarse nodes, where the second node of the 4-node path is a
/// two-member node shared with the last path.
pub const WORKED_EXAMPLE_JSON: &str = include_str!("../fixtures/worked_example_forest.json");

pub fn worked_example_forest() -> CLForest {
    CLForest::from_json(WORKED_EXAMPLE_JSON).expect("shipped fixture is valid")
}
