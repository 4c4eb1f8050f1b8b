//! Interaction structures as directed in-neighbor graphs.
//!
//! An edge `j -> i` means agent `j`'s signal enters agent `i`'s pooling set.
//! Centralized structures only carry upward edges (leaves hear nobody).
//! Rings use the nearest-offset rule `+1, -1, +2, -2, ...` truncated to `m`
//! entries, so odd `m` yields one directed (asymmetric) edge per node.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Group size used for both centralized structures unless overridden.
pub const STANDARD_GROUP_SIZE: usize = 7;

/// Neighbor selection rule reported alongside serialized topologies.
pub const RING_NEIGHBOR_RULE: &str = "nearest-offset-directed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TopologyKind {
    Star,
    Hierarchical,
    Ring { m: usize },
    Complete,
}

impl TopologyKind {
    pub fn is_centralized(self) -> bool {
        matches!(self, TopologyKind::Star | TopologyKind::Hierarchical)
    }

    pub fn label(self) -> String {
        match self {
            TopologyKind::Star => "star".into(),
            TopologyKind::Hierarchical => "hierarchical".into(),
            TopologyKind::Ring { m } => format!("ring-{m}"),
            TopologyKind::Complete => "complete".into(),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(flatten)]
    pub kind: TopologyKind,
    #[serde(default = "standard_size", rename = "n")]
    pub n_agents: usize,
    /// Allows centralized structures with a group size other than seven.
    #[serde(default)]
    pub allow_nonstandard_size: bool,
}

fn standard_size() -> usize {
    STANDARD_GROUP_SIZE
}

impl TopologySpec {
    pub fn new(kind: TopologyKind, n_agents: usize) -> Self {
        TopologySpec {
            kind,
            n_agents,
            allow_nonstandard_size: false,
        }
    }

    pub fn star() -> Self {
        Self::new(TopologyKind::Star, STANDARD_GROUP_SIZE)
    }

    pub fn hierarchical() -> Self {
        Self::new(TopologyKind::Hierarchical, STANDARD_GROUP_SIZE)
    }

    pub fn ring(m: usize, n_agents: usize) -> Self {
        Self::new(TopologyKind::Ring { m }, n_agents)
    }

    pub fn complete(n_agents: usize) -> Self {
        Self::new(TopologyKind::Complete, n_agents)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Hub,
    Intermediate,
    Leaf,
    Peer,
}

/// Side of a centralized structure. The hub has no branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<Branch>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("need at least {min} agents for {kind}, got {n}")]
    TooFewAgents { kind: TopologyKind, n: usize, min: usize },
    #[error("ring neighbor count m={m} must satisfy 2 <= m <= n-1 (n={n})")]
    InvalidRingDegree { m: usize, n: usize },
    #[error("{kind} is defined for {expected} agents; got {n} (set allow_nonstandard_size to override)")]
    NonstandardSize {
        kind: TopologyKind,
        n: usize,
        expected: usize,
    },
    #[error("invalid topology: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDocument", into = "TopologyDocument")]
pub struct Topology {
    kind: TopologyKind,
    nodes: Vec<Node>,
    in_neighbors: Vec<Vec<usize>>,
}

impl Topology {
    /// Assembles a topology without checking it. Use [`validate`] to list
    /// the invariants it breaks.
    pub fn from_parts(kind: TopologyKind, nodes: Vec<Node>, in_neighbors: Vec<Vec<usize>>) -> Self {
        Topology {
            kind,
            nodes,
            in_neighbors,
        }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn in_neighbors(&self, idx: usize) -> &[usize] {
        &self.in_neighbors[idx]
    }

    /// Edges as `(source, target)` pairs in target-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.in_neighbors
            .iter()
            .enumerate()
            .flat_map(|(target, sources)| sources.iter().map(move |&s| (s, target)))
            .collect()
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges().into_iter().collect()
    }

    pub fn hub(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.role == Role::Hub)
    }

    pub fn indices_with_role(&self, role: Role) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].role == role).collect()
    }

    /// Neighbor count for distributed structures.
    pub fn degree(&self) -> Option<usize> {
        match self.kind {
            TopologyKind::Ring { m } => Some(m),
            TopologyKind::Complete => Some(self.nodes.len().saturating_sub(1)),
            _ => None,
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    let n = spec.n_agents;
    match spec.kind {
        TopologyKind::Star => {
            check_centralized_size(spec, 2)?;
            let mut nodes = vec![Node {
                id: "H".into(),
                role: Role::Hub,
                branch: None,
            }];
            let leaves = n - 1;
            for k in 0..leaves {
                nodes.push(Node {
                    id: format!("L{}", k + 1),
                    role: Role::Leaf,
                    branch: Some(if k < leaves.div_ceil(2) {
                        Branch::Left
                    } else {
                        Branch::Right
                    }),
                });
            }
            let mut in_neighbors = vec![Vec::new(); n];
            in_neighbors[0] = (1..n).collect();
            Ok(Topology::from_parts(spec.kind, nodes, in_neighbors))
        }
        TopologyKind::Hierarchical => {
            check_centralized_size(spec, 5)?;
            let leaves = n - 3;
            let left_leaves = leaves.div_ceil(2);
            let mut nodes = vec![
                Node {
                    id: "R".into(),
                    role: Role::Hub,
                    branch: None,
                },
                Node {
                    id: "ML".into(),
                    role: Role::Intermediate,
                    branch: Some(Branch::Left),
                },
                Node {
                    id: "MR".into(),
                    role: Role::Intermediate,
                    branch: Some(Branch::Right),
                },
            ];
            for k in 0..leaves {
                nodes.push(Node {
                    id: format!("L{}", k + 1),
                    role: Role::Leaf,
                    branch: Some(if k < left_leaves { Branch::Left } else { Branch::Right }),
                });
            }
            let mut in_neighbors = vec![Vec::new(); n];
            in_neighbors[0] = vec![1, 2];
            in_neighbors[1] = (3..3 + left_leaves).collect();
            in_neighbors[2] = (3 + left_leaves..n).collect();
            Ok(Topology::from_parts(spec.kind, nodes, in_neighbors))
        }
        TopologyKind::Ring { m } => {
            if n < 3 {
                return Err(TopologyError::TooFewAgents {
                    kind: spec.kind,
                    n,
                    min: 3,
                });
            }
            if m < 2 || m > n - 1 {
                return Err(TopologyError::InvalidRingDegree { m, n });
            }
            Ok(Topology::from_parts(spec.kind, peer_nodes(n), ring_neighbors(n, m)))
        }
        TopologyKind::Complete => {
            if n < 2 {
                return Err(TopologyError::TooFewAgents {
                    kind: spec.kind,
                    n,
                    min: 2,
                });
            }
            Ok(Topology::from_parts(spec.kind, peer_nodes(n), ring_neighbors(n, n - 1)))
        }
    }
}

fn check_centralized_size(spec: &TopologySpec, min: usize) -> Result<(), TopologyError> {
    let n = spec.n_agents;
    if !spec.allow_nonstandard_size && n != STANDARD_GROUP_SIZE {
        return Err(TopologyError::NonstandardSize {
            kind: spec.kind,
            n,
            expected: STANDARD_GROUP_SIZE,
        });
    }
    if n < min {
        return Err(TopologyError::TooFewAgents {
            kind: spec.kind,
            n,
            min,
        });
    }
    Ok(())
}

fn peer_nodes(n: usize) -> Vec<Node> {
    (0..n)
        .map(|i| Node {
            id: format!("A{}", i + 1),
            role: Role::Peer,
            branch: None,
        })
        .collect()
}

/// Offsets `+1, -1, +2, -2, ...` truncated to `m`, taken mod `n`.
fn ring_offsets(m: usize) -> impl Iterator<Item = isize> {
    (0..m).map(|k| {
        let step = (k / 2 + 1) as isize;
        if k % 2 == 0 {
            step
        } else {
            -step
        }
    })
}

fn ring_neighbors(n: usize, m: usize) -> Vec<Vec<usize>> {
    let n_i = n as isize;
    (0..n_i)
        .map(|i| ring_offsets(m).map(|d| (i + d).rem_euclid(n_i) as usize).collect())
        .collect()
}

/// Lists every invariant the topology breaks. Empty means valid.
pub fn validate(topology: &Topology) -> Vec<String> {
    let mut violations = Vec::new();
    let n = topology.nodes.len();
    let ids = |i: usize| topology.nodes.get(i).map(|n| n.id.as_str()).unwrap_or("?");

    if topology.in_neighbors.len() != n {
        violations.push(format!(
            "{} in-neighbor lists for {} nodes",
            topology.in_neighbors.len(),
            n
        ));
        return violations;
    }

    let mut seen_ids = BTreeSet::new();
    for node in &topology.nodes {
        if !seen_ids.insert(node.id.as_str()) {
            violations.push(format!("duplicate node id {}", node.id));
        }
    }

    for (target, sources) in topology.in_neighbors.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for &source in sources {
            if source >= n {
                violations.push(format!(
                    "node {} lists unknown in-neighbor index {}",
                    ids(target),
                    source
                ));
            } else if source == target {
                violations.push(format!("self-loop on node {}", ids(target)));
            } else if !seen.insert(source) {
                violations.push(format!("duplicate edge {} -> {}", ids(source), ids(target)));
            }
        }
    }

    match topology.kind {
        TopologyKind::Ring { m } => {
            check_peers(topology, &mut violations);
            for (i, sources) in topology.in_neighbors.iter().enumerate() {
                if sources.len() != m {
                    violations.push(format!(
                        "node {} has {} in-neighbors, ring-{} requires {}",
                        ids(i),
                        sources.len(),
                        m,
                        m
                    ));
                }
            }
        }
        TopologyKind::Complete => {
            check_peers(topology, &mut violations);
            for (i, sources) in topology.in_neighbors.iter().enumerate() {
                if sources.len() + 1 != n {
                    violations.push(format!(
                        "node {} has {} in-neighbors, complete graph requires {}",
                        ids(i),
                        sources.len(),
                        n.saturating_sub(1)
                    ));
                }
            }
        }
        TopologyKind::Star | TopologyKind::Hierarchical => {
            check_centralized(topology, &mut violations);
        }
    }
    violations
}

fn check_peers(topology: &Topology, violations: &mut Vec<String>) {
    for node in &topology.nodes {
        if node.role != Role::Peer {
            violations.push(format!(
                "node {} has role {:?}, distributed structures use peers",
                node.id, node.role
            ));
        }
    }
}

fn check_centralized(topology: &Topology, violations: &mut Vec<String>) {
    let hubs = topology.indices_with_role(Role::Hub);
    if hubs.len() != 1 {
        violations.push(format!("expected exactly one hub, found {}", hubs.len()));
        return;
    }
    let hub = hubs[0];
    let node_id = |i: usize| topology.nodes[i].id.as_str();
    if topology.nodes.iter().any(|n| n.role == Role::Peer) {
        violations.push("centralized structures cannot contain peer nodes".into());
    }
    let intermediates = topology.indices_with_role(Role::Intermediate);

    for (target, sources) in topology.in_neighbors.iter().enumerate() {
        let role = topology.nodes[target].role;
        for &source in sources.iter().filter(|&&s| s < topology.nodes.len()) {
            let source_role = topology.nodes[source].role;
            let allowed = match (topology.kind, role) {
                (TopologyKind::Star, Role::Hub) => source_role == Role::Leaf,
                (TopologyKind::Hierarchical, Role::Hub) => source_role == Role::Intermediate,
                (TopologyKind::Hierarchical, Role::Intermediate) => source_role == Role::Leaf,
                _ => false,
            };
            if !allowed {
                violations.push(format!(
                    "edge {} -> {} is not an upward {:?} -> {:?} link",
                    node_id(source),
                    node_id(target),
                    source_role,
                    role
                ));
            }
        }
    }

    match topology.kind {
        TopologyKind::Star => {
            if !intermediates.is_empty() {
                violations.push("star topology cannot contain intermediates".into());
            }
            let leaves = topology.indices_with_role(Role::Leaf);
            for leaf in leaves {
                if !topology.in_neighbors[hub].contains(&leaf) {
                    violations.push(format!("leaf {} does not report to the hub", node_id(leaf)));
                }
            }
        }
        TopologyKind::Hierarchical => {
            if intermediates.len() != 2 {
                violations.push(format!("expected 2 intermediates, found {}", intermediates.len()));
            }
            for &mid in &intermediates {
                if !topology.in_neighbors[hub].contains(&mid) {
                    violations.push(format!("intermediate {} does not report to the root", node_id(mid)));
                }
            }
            for leaf in topology.indices_with_role(Role::Leaf) {
                let parents = intermediates
                    .iter()
                    .filter(|&&mid| topology.in_neighbors[mid].contains(&leaf))
                    .count();
                if parents != 1 {
                    violations.push(format!(
                        "leaf {} reports to {} intermediates, expected 1",
                        node_id(leaf),
                        parents
                    ));
                }
            }
            if topology.nodes.len() == STANDARD_GROUP_SIZE {
                for &mid in &intermediates {
                    let k = topology.in_neighbors[mid].len();
                    if k != 2 {
                        violations.push(format!(
                            "intermediate {} aggregates {} leaves, expected 2",
                            node_id(mid),
                            k
                        ));
                    }
                }
            }
        }
        _ => unreachable!(),
    }
}

/// Persisted form: `{kind, m?, n, ids, roles, branches, edges, neighbor_rule}`.
/// Edges are `[source, target]` index pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologyDocument {
    #[serde(flatten)]
    pub kind: TopologyKind,
    pub n: usize,
    pub ids: Vec<String>,
    pub roles: Vec<Role>,
    #[serde(default)]
    pub branches: Vec<Option<Branch>>,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor_rule: Option<String>,
}

impl From<Topology> for TopologyDocument {
    fn from(t: Topology) -> Self {
        let edges = t.edges().into_iter().map(|(s, d)| [s, d]).collect();
        let neighbor_rule = match t.kind {
            TopologyKind::Ring { .. } | TopologyKind::Complete => Some(RING_NEIGHBOR_RULE.to_string()),
            _ => None,
        };
        TopologyDocument {
            kind: t.kind,
            n: t.nodes.len(),
            ids: t.nodes.iter().map(|n| n.id.clone()).collect(),
            roles: t.nodes.iter().map(|n| n.role).collect(),
            branches: t.nodes.iter().map(|n| n.branch).collect(),
            edges,
            neighbor_rule,
        }
    }
}

impl TryFrom<TopologyDocument> for Topology {
    type Error = TopologyError;

    fn try_from(doc: TopologyDocument) -> Result<Self, Self::Error> {
        let n = doc.n;
        if doc.ids.len() != n || doc.roles.len() != n || !(doc.branches.is_empty() || doc.branches.len() == n) {
            return Err(TopologyError::Invalid(vec![format!(
                "document lists {} ids, {} roles and {} branches for n={}",
                doc.ids.len(),
                doc.roles.len(),
                doc.branches.len(),
                n
            )]));
        }
        let nodes = (0..n)
            .map(|i| Node {
                id: doc.ids[i].clone(),
                role: doc.roles[i],
                branch: doc.branches.get(i).copied().flatten(),
            })
            .collect();
        let mut in_neighbors = vec![Vec::new(); n];
        for [source, target] in doc.edges {
            if target >= n {
                return Err(TopologyError::Invalid(vec![format!(
                    "edge target {target} out of range"
                )]));
            }
            in_neighbors[target].push(source);
        }
        let topology = Topology::from_parts(doc.kind, nodes, in_neighbors);
        let violations = validate(&topology);
        if violations.is_empty() {
            Ok(topology)
        } else {
            Err(TopologyError::Invalid(violations))
        }
    }
}
