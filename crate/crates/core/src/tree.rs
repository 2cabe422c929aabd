//! Search tree storage and statistics.
//!
//! Nodes live in an index-addressed arena: ids are dense, id 0 is the root,
//! and children keep insertion order. That makes tie-breaking, iteration and
//! trace export fully deterministic, which the replay tests rely on.

use serde::Serialize;
use thiserror::Error;

/// Dense index of a node within one [`SearchTree`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[must_use]
    pub const fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Errors from tree structure and statistics operations.
#[derive(Debug, Error)]
pub enum TreeError {
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("node {0} is terminal and cannot be expanded")]
    IllegalExpansion(NodeId),
    #[error("node {0} has no children")]
    NoChildren(NodeId),
    #[error("reward {0} outside [0,1]")]
    RewardOutOfRange(f64),
    #[error("parent visit count is zero")]
    UnvisitedParent,
    #[error("no visited terminal node in the tree")]
    NoSolution,
}

/// The reasoning chain accumulated at one node.
///
/// The root holds the bare problem; every child appends exactly one step.
/// `answer` is set iff the owning node is terminal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningState {
    pub problem_text: String,
    pub steps: Vec<String>,
    pub answer: Option<String>,
}

impl ReasoningState {
    #[must_use]
    pub fn new(problem_text: impl Into<String>) -> Self {
        Self {
            problem_text: problem_text.into(),
            steps: Vec::new(),
            answer: None,
        }
    }

    /// The state reached by appending one step to this chain.
    #[must_use]
    pub fn child(&self, step: &str, answer: Option<String>) -> Self {
        let mut steps = self.steps.clone();
        steps.push(step.to_string());
        Self {
            problem_text: self.problem_text.clone(),
            steps,
            answer,
        }
    }
}

/// One node of the search tree.
#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub state: ReasoningState,
    /// Visit count N.
    pub visits: u64,
    /// Accumulated reward W.
    pub value_sum: f64,
    pub depth: usize,
    pub terminal: bool,
}

impl Node {
    /// Mean value Q = W / N. Only meaningful once the node has been visited.
    #[must_use]
    pub fn mean_value(&self) -> Option<f64> {
        if self.visits == 0 {
            None
        } else {
            Some(self.value_sum / self.visits as f64)
        }
    }
}

/// UCT child score: `Q + c * sqrt(ln(N_parent) / n_child)`.
///
/// Unvisited children score `+inf` so each is tried before any sibling is
/// re-selected.
pub fn uct_score(q: f64, n_child: u64, n_parent: u64, c: f64) -> Result<f64, TreeError> {
    if n_parent == 0 {
        return Err(TreeError::UnvisitedParent);
    }
    if n_child == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(q + c * ((n_parent as f64).ln() / n_child as f64).sqrt())
}

/// The best visited terminal node, reported as its step chain.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalChain {
    pub node: NodeId,
    pub steps: Vec<String>,
    pub answer: String,
    pub q: f64,
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    id: usize,
    parent: Option<usize>,
    step: Option<&'a str>,
    n: u64,
    w: f64,
    terminal: bool,
    answer: Option<&'a str>,
}

/// Arena of [`Node`]s for a single search task.
///
/// Confined to one search; never shared across concurrent tasks.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<Node>,
    rng_seed: u64,
}

impl SearchTree {
    /// A tree holding only the root state for `problem`.
    #[must_use]
    pub fn new(problem: impl Into<String>, rng_seed: u64) -> Self {
        let root = Node {
            id: NodeId::ROOT,
            parent: None,
            children: Vec::new(),
            state: ReasoningState::new(problem),
            visits: 0,
            value_sum: 0.0,
            depth: 0,
            terminal: false,
        };
        Self {
            nodes: vec![root],
            rng_seed,
        }
    }

    #[must_use]
    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[must_use]
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn get(&self, id: NodeId) -> Result<&Node, TreeError> {
        self.nodes.get(id.0).ok_or(TreeError::MissingNode(id))
    }

    #[must_use]
    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter()
    }

    /// Appends a child of `parent` whose state extends the parent's chain by
    /// `step`. New nodes start with N = 0, W = 0.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        step: &str,
        terminal: bool,
        answer: Option<String>,
    ) -> Result<NodeId, TreeError> {
        let parent_node = self.get(parent)?;
        if parent_node.terminal {
            return Err(TreeError::IllegalExpansion(parent));
        }
        let id = NodeId(self.nodes.len());
        let node = Node {
            id,
            parent: Some(parent),
            children: Vec::new(),
            state: parent_node.state.child(step, answer),
            visits: 0,
            value_sum: 0.0,
            depth: parent_node.depth + 1,
            terminal,
        };
        self.nodes.push(node);
        self.nodes[parent.0].children.push(id);
        Ok(id)
    }

    /// The child of `parent` maximizing [`uct_score`] at exploration weight
    /// `c`. Ties break toward the earliest child in insertion order.
    pub fn select_best_child(&self, parent: NodeId, c: f64) -> Result<NodeId, TreeError> {
        self.select_best_child_where(parent, c, |_| true)
    }

    /// [`select_best_child`] restricted to children passing `keep`; falls
    /// back to the full child list when the filter rejects all of them.
    pub fn select_best_child_where(
        &self,
        parent: NodeId,
        c: f64,
        keep: impl Fn(&Node) -> bool,
    ) -> Result<NodeId, TreeError> {
        let parent_node = self.get(parent)?;
        if parent_node.children.is_empty() {
            return Err(TreeError::NoChildren(parent));
        }
        for filtered in [true, false] {
            let mut best: Option<(NodeId, f64)> = None;
            for &child_id in &parent_node.children {
                let child = self.get(child_id)?;
                if filtered && !keep(child) {
                    continue;
                }
                // An unvisited child outranks everything even before the
                // parent has accumulated visits of its own.
                let score = match child.mean_value() {
                    None => f64::INFINITY,
                    Some(q) => uct_score(q, child.visits, parent_node.visits, c)?,
                };
                match best {
                    Some((_, best_score)) if score <= best_score => {}
                    _ => best = Some((child_id, score)),
                }
            }
            if let Some((id, _)) = best {
                return Ok(id);
            }
        }
        unreachable!("unfiltered pass always finds a child")
    }

    /// Adds `reward` to every node on the `leaf` -> root path, inclusive,
    /// incrementing each visit count.
    pub fn backpropagate(&mut self, leaf: NodeId, reward: f64) -> Result<(), TreeError> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(TreeError::RewardOutOfRange(reward));
        }
        self.get(leaf)?;
        let mut current = Some(leaf);
        while let Some(id) = current {
            let node = &mut self.nodes[id.0];
            node.visits += 1;
            node.value_sum += reward;
            current = node.parent;
        }
        Ok(())
    }

    /// The visited terminal node with the highest Q. Ties break toward the
    /// higher visit count, then the lower id.
    pub fn best_terminal_chain(&self) -> Result<TerminalChain, TreeError> {
        let mut best: Option<&Node> = None;
        for node in &self.nodes {
            if !node.terminal || node.visits == 0 {
                continue;
            }
            let q = node.mean_value().expect("visited");
            let better = match best {
                None => true,
                Some(b) => {
                    let bq = b.mean_value().expect("visited");
                    q > bq || (q == bq && node.visits > b.visits)
                }
            };
            if better {
                best = Some(node);
            }
        }
        let node = best.ok_or(TreeError::NoSolution)?;
        Ok(TerminalChain {
            node: node.id,
            steps: node.state.steps.clone(),
            answer: node
                .state
                .answer
                .clone()
                .unwrap_or_default(),
            q: node.mean_value().expect("visited"),
        })
    }

    /// Serializes the whole tree, one JSON record per line, in id order.
    ///
    /// The output is a pure function of tree contents, so two identical
    /// searches export byte-identical traces.
    #[must_use]
    pub fn export_trace(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            let record = TraceRecord {
                id: node.id.0,
                parent: node.parent.map(NodeId::index),
                step: node.state.steps.last().map(String::as_str),
                n: node.visits,
                w: node.value_sum,
                terminal: node.terminal,
                answer: node.state.answer.as_deref(),
            };
            out.push_str(&serde_json::to_string(&record).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}
