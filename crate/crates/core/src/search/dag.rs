use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::bundle::{Digest, VerifierBundle};
use crate::scoring::NodeStats;

pub type NodeId = u64;

pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum Provenance {
    Root,
    Seed {
        /// Seed-generator call that produced the bundle (0-based).
        completion_step: u64,
    },
    CriticModifier {
        /// Expansion step, 1-based.
        step: u64,
        critic_step: u64,
        modifier_step: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagNode {
    pub id: NodeId,
    pub bundle: Option<VerifierBundle>,
    pub stats: Option<NodeStats>,
    pub parents: Vec<NodeId>,
    pub provenance: Provenance,
}

impl DagNode {
    pub fn size(&self) -> usize {
        self.bundle.as_ref().map_or(0, VerifierBundle::size)
    }

    pub fn f1(&self) -> f64 {
        self.stats.map_or(0.0, |s| s.f1)
    }
}

/// Search graph. Nodes are stored in creation order, so `nodes[i].id == i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dag {
    pub root: NodeId,
    pub nodes: Vec<DagNode>,
    pub edges: BTreeMap<NodeId, Vec<NodeId>>,
    #[serde(skip)]
    by_digest: HashMap<Digest, NodeId>,
}

pub enum Insert {
    New(NodeId),
    /// Same bundle already present; an edge to it was added.
    Linked(NodeId),
    /// Same bundle already present and either already a child of the
    /// parent or older than it (linking would break id ordering). Nothing
    /// changed.
    Duplicate(NodeId),
}

impl Default for Dag {
    fn default() -> Self {
        Self::new()
    }
}

impl Dag {
    pub fn new() -> Self {
        Self {
            root: ROOT,
            nodes: vec![DagNode {
                id: ROOT,
                bundle: None,
                stats: None,
                parents: Vec::new(),
                provenance: Provenance::Root,
            }],
            edges: BTreeMap::new(),
            by_digest: HashMap::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&DagNode> {
        self.nodes.get(id as usize)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut DagNode> {
        self.nodes.get_mut(id as usize)
    }

    /// Every node except the root, in id order.
    pub fn candidates(&self) -> impl Iterator<Item = &DagNode> + Clone {
        self.nodes.iter().filter(|n| n.id != self.root)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    pub fn find(&self, digest: &Digest) -> Option<NodeId> {
        self.by_digest.get(digest).copied()
    }

    pub fn insert(&mut self, parent: NodeId, bundle: VerifierBundle, stats: NodeStats, provenance: Provenance) -> Insert {
        if let Some(existing) = self.find(&bundle.digest) {
            let node = &mut self.nodes[existing as usize];
            if existing <= parent || node.parents.contains(&parent) {
                return Insert::Duplicate(existing);
            }
            node.parents.push(parent);
            self.edges.entry(parent).or_default().push(existing);
            return Insert::Linked(existing);
        }
        let id = self.nodes.len() as NodeId;
        self.by_digest.insert(bundle.digest.clone(), id);
        self.nodes.push(DagNode {
            id,
            bundle: Some(bundle),
            stats: Some(stats),
            parents: vec![parent],
            provenance,
        });
        self.edges.entry(parent).or_default().push(id);
        Insert::New(id)
    }

    pub fn total_visits(&self) -> u64 {
        self.candidates().filter_map(|n| n.stats).map(|s| s.visits).sum()
    }

    /// True when every edge goes from a smaller id to a larger one.
    pub fn is_acyclic(&self) -> bool {
        self.edges
            .iter()
            .all(|(p, children)| children.iter().all(|c| c > p))
    }

    /// Rebuilds the digest index after deserialization.
    pub fn reindex(&mut self) {
        self.by_digest = self
            .nodes
            .iter()
            .filter_map(|n| n.bundle.as_ref().map(|b| (b.digest.clone(), n.id)))
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::VerifierSpec;
    use crate::scoring::{Confusion, NodeStats};

    fn bundle(src: &str) -> VerifierBundle {
        VerifierBundle::new(
            src,
            vec![VerifierSpec {
                name: "a".into(),
                description: String::new(),
                requires: vec![],
            }],
        )
    }

    fn stats() -> NodeStats {
        NodeStats::from_confusion(Confusion { tp: 1, fp: 0, tn: 1, fn_: 0 })
    }

    #[test]
    fn duplicate_child_becomes_edge() {
        let mut dag = Dag::new();
        let seed = Provenance::Seed { completion_step: 0 };
        assert!(matches!(dag.insert(ROOT, bundle("a"), stats(), seed.clone()), Insert::New(1)));
        assert!(matches!(dag.insert(ROOT, bundle("b"), stats(), seed.clone()), Insert::New(2)));
        assert!(matches!(dag.insert(1, bundle("c"), stats(), seed.clone()), Insert::New(3)));
        // node 3 rediscovered from node 2: a second parent, no new node
        assert!(matches!(dag.insert(2, bundle("c"), stats(), seed.clone()), Insert::Linked(3)));
        assert!(matches!(dag.insert(2, bundle("c"), stats(), seed.clone()), Insert::Duplicate(3)));
        assert_eq!(dag.node(3).unwrap().parents, vec![1, 2]);
        // rediscovering a parent from its child would create a back edge
        assert!(matches!(dag.insert(3, bundle("a"), stats(), seed), Insert::Duplicate(1)));
        assert!(dag.is_acyclic());
        assert_eq!(dag.len(), 4);
    }

    #[test]
    fn serde_roundtrip_reindexes() {
        let mut dag = Dag::new();
        dag.insert(ROOT, bundle("a"), stats(), Provenance::Seed { completion_step: 0 });
        let json = serde_json::to_string(&dag).unwrap();
        let mut back: Dag = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back.find(&bundle("a").digest), Some(1));
        assert_eq!(back, dag);
    }
}
