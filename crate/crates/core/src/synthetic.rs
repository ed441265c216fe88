//! Small planted-partition citation graphs with bag-of-words features, for
//! tests and demos when the benchmark files are not at hand.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    /// Distinct words switched on per node (fewer if draws collide).
    pub words_per_node: usize,
    /// Chance that a word comes from the node's class vocabulary.
    pub topic_prob: f64,
    pub avg_degree: f64,
    /// Chance that an edge stays inside a class.
    pub homophily: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            nodes: 300,
            classes: 3,
            features: 120,
            words_per_node: 12,
            topic_prob: 0.5,
            avg_degree: 4.0,
            homophily: 0.8,
            seed: 0,
        }
    }
}

pub fn planted_partition(spec: &SyntheticSpec) -> Result<AttributedGraph> {
    if spec.classes == 0 || spec.features < spec.classes || spec.nodes < 3 * spec.classes {
        return Err(Error::Config(format!(
            "planted partition needs classes ≥ 1, features ≥ classes and 3 nodes per class, got {spec:?}"
        )));
    }
    if !(0.0..=1.0).contains(&spec.topic_prob) || !(0.0..=1.0).contains(&spec.homophily) {
        return Err(Error::Config("topic_prob and homophily must be probabilities".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, c, m) = (spec.nodes, spec.classes, spec.features);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }

    let block = m / c;
    let mut features = DenseMatrix::zeros(n, m);
    for (i, &l) in labels.iter().enumerate() {
        for _ in 0..spec.words_per_node {
            let w = if rng.gen::<f64>() < spec.topic_prob {
                l * block + rng.gen_range(0..block)
            } else {
                rng.gen_range(0..m)
            };
            features.set(i, w, 1.0);
        }
    }

    let target = (spec.avg_degree * n as f64 / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(target);
    for _ in 0..target {
        let a = rng.gen_range(0..n);
        let b = if rng.gen::<f64>() < spec.homophily {
            *members[labels[a]].choose(&mut rng).expect("every class has members")
        } else {
            rng.gen_range(0..n)
        };
        edges.push((a, b));
    }

    let names = (0..n).map(|i| format!("n{i}")).collect();
    Ok(AttributedGraph::from_edges("synthetic", features, labels, c, names, &edges)?.0)
}
