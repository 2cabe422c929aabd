//! The search controller: select, expand, simulate, backpropagate.
//!
//! Two behaviors distinguish this loop from textbook UCT. The exploration
//! weight decays with the visit count of the node being descended,
//! `c(N) = c0 / (1 + kappa * ln(1 + N))`, so early iterations spread wide and
//! later ones commit. And the rollout policy is chosen per task from the
//! problem's token length: long problems roll out greedily (single best step
//! at temperature 0), short ones sample among proposed candidates.
//!
//! Rollout steps are materialized as tree nodes, so every simulated terminal
//! is a candidate for the final answer and each iteration ends in exactly one
//! backpropagation; the root's visit count always equals the iteration
//! budget.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::run_cot;
use crate::model::{ModelError, ModelHandle};
use crate::prompt::{
    extract_answer, parse_step_list, parse_value, render_propose_steps, render_value_score,
    RenderCtx, TemplateSet,
};
use crate::tree::{NodeId, ReasoningState, SearchTree, TreeError};

/// All search hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    /// Initial exploration parameter c0.
    pub c0: f64,
    /// Decay rate; 0 disables decay.
    pub kappa: f64,
    /// Token-count threshold between rollout policies.
    pub complexity_threshold: usize,
    /// Iteration budget B.
    pub iterations: u32,
    /// Candidate steps requested per expansion.
    pub expand_width: usize,
    /// Maximum chain length before a rollout is cut off.
    pub max_depth: usize,
    pub rollout_temperature: f64,
    pub seed: u64,
    /// Route problems at or above the threshold to Greedy (the default);
    /// flipping this covers the opposite routing.
    pub greedy_for_complex: bool,
    /// Measure complexity on the accumulated chain instead of the bare
    /// problem text.
    pub per_node_complexity: bool,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            c0: 1.414,
            kappa: 0.5,
            complexity_threshold: 60,
            iterations: 32,
            expand_width: 3,
            max_depth: 8,
            rollout_temperature: 0.7,
            seed: 0,
            greedy_for_complex: true,
            per_node_complexity: false,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let fail = |message: &str| Err(SearchError::InvalidConfig(message.to_string()));
        if !(self.c0 > 0.0) {
            return fail("c0 must be positive");
        }
        if !(self.kappa >= 0.0) {
            return fail("kappa must be non-negative");
        }
        if self.complexity_threshold == 0 {
            return fail("complexity_threshold must be positive");
        }
        if self.iterations == 0 {
            return fail("iterations must be positive");
        }
        if self.expand_width == 0 {
            return fail("expand_width must be positive");
        }
        if self.max_depth == 0 {
            return fail("max_depth must be positive");
        }
        if !(self.rollout_temperature >= 0.0) {
            return fail("rollout_temperature must be non-negative");
        }
        Ok(())
    }

    #[must_use]
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimulationPolicy {
    Greedy,
    Random,
}

/// How many simulations ran under each policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCounts {
    pub greedy: u64,
    pub random: u64,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub answer: String,
    pub steps: Vec<String>,
    pub root_visits: u64,
    pub best_q: f64,
    pub policy_counts: PolicyCounts,
    /// Tree export per [`SearchTree::export_trace`].
    pub trace: String,
    /// True when no visited terminal existed after the budget and the
    /// chain-of-thought baseline supplied the answer instead.
    pub used_fallback: bool,
    /// Value replies that carried no parseable score (each scored 0).
    pub value_parse_failures: u64,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("search aborted: {source}")]
    Aborted {
        /// Tree exported at the moment of failure.
        trace: String,
        source: ModelError,
    },
    #[error("tree invariant violated: {0}")]
    Tree(#[from] TreeError),
}

/// Exploration weight after `n` visits: `c0 / (1 + kappa * ln(1 + n))`.
///
/// Equals `c0` at n = 0, stays strictly positive, and never increases in n.
#[must_use]
pub fn dynamic_exploration(c0: f64, kappa: f64, n: u64) -> f64 {
    c0 / (1.0 + kappa * (1.0 + n as f64).ln())
}

/// Problem complexity: the count of whitespace-delimited tokens.
#[must_use]
pub fn complexity(problem_text: &str) -> usize {
    problem_text.split_whitespace().count()
}

/// Greedy for problems at or above the complexity threshold, Random below
/// it (flipped when the config says so). Pure in its inputs.
#[must_use]
pub fn choose_simulation_policy(
    config: &MctsConfig,
    node_state: &ReasoningState,
) -> SimulationPolicy {
    let mut tokens = complexity(&node_state.problem_text);
    if config.per_node_complexity {
        tokens += node_state
            .steps
            .iter()
            .map(|step| complexity(step))
            .sum::<usize>();
    }
    let complex = tokens >= config.complexity_threshold;
    if complex == config.greedy_for_complex {
        SimulationPolicy::Greedy
    } else {
        SimulationPolicy::Random
    }
}

/// One search task in progress. [`run_search`] drives it to completion;
/// tests can also step it or roll out single nodes.
pub struct Engine<'a> {
    config: &'a MctsConfig,
    model: &'a ModelHandle,
    templates: &'a TemplateSet,
    tree: SearchTree,
    rng: ChaCha8Rng,
    iteration: u32,
    policy_counts: PolicyCounts,
    value_parse_failures: u64,
    /// Nodes that have had a full proposal expansion. Rollouts materialize
    /// single children without marking their parents expanded, so selection
    /// stops there and proposes the remaining alternatives later.
    expanded: HashSet<NodeId>,
    /// Subtrees with nothing left to learn: a visited terminal (or
    /// depth-capped node), or an expanded node whose children are all
    /// exhausted. Selection avoids them while alternatives remain, so the
    /// budget is never spent re-scoring a finished chain.
    exhausted: HashSet<NodeId>,
}

impl<'a> Engine<'a> {
    pub fn new(
        problem: &str,
        config: &'a MctsConfig,
        model: &'a ModelHandle,
        templates: &'a TemplateSet,
    ) -> Result<Self, SearchError> {
        config.validate()?;
        Ok(Self {
            config,
            model,
            templates,
            tree: SearchTree::new(problem, config.seed),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            iteration: 0,
            policy_counts: PolicyCounts::default(),
            value_parse_failures: 0,
            expanded: HashSet::new(),
            exhausted: HashSet::new(),
        })
    }

    #[must_use]
    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    fn render_ctx(&self) -> RenderCtx<'a> {
        RenderCtx {
            templates: self.templates,
            model_name: self.model.name(),
            max_tokens: self.model.max_tokens(),
        }
    }

    fn generate(&self, request: &crate::model::GenerationRequest) -> Result<String, SearchError> {
        match self.model.generate(request) {
            Ok(response) => Ok(response.content),
            Err(source) => Err(SearchError::Aborted {
                trace: self.tree.export_trace(),
                source,
            }),
        }
    }

    fn descend(&self, parent: NodeId) -> Result<NodeId, SearchError> {
        let visits = self.tree.get(parent)?.visits;
        let c = dynamic_exploration(self.config.c0, self.config.kappa, visits);
        Ok(self
            .tree
            .select_best_child_where(parent, c, |child| !self.exhausted.contains(&child.id))?)
    }

    /// Walks from the root through fully expanded nodes, applying the
    /// decayed exploration weight of each node being descended, and stops at
    /// the first terminal or not-yet-expanded node.
    fn select_leaf(&self) -> Result<NodeId, SearchError> {
        let mut current = NodeId::ROOT;
        loop {
            let node = self.tree.get(current)?;
            if node.terminal || node.children.is_empty() || !self.expanded.contains(&current) {
                return Ok(current);
            }
            current = self.descend(current)?;
        }
    }

    /// Re-derives exhaustion from `leaf` upward after a backpropagation.
    fn mark_exhausted(&mut self, leaf: NodeId) -> Result<(), SearchError> {
        let mut current = Some(leaf);
        while let Some(id) = current {
            let node = self.tree.get(id)?;
            let done = if node.terminal || node.depth >= self.config.max_depth {
                node.visits > 0
            } else {
                self.expanded.contains(&id)
                    && !node.children.is_empty()
                    && node
                        .children
                        .iter()
                        .all(|child| self.exhausted.contains(child))
            };
            if !done {
                break;
            }
            self.exhausted.insert(id);
            current = node.parent;
        }
        Ok(())
    }

    /// Scores a terminal state via the value prompt. An unparseable reply
    /// counts as 0 and increments the failure counter; it never aborts.
    fn value_state(&mut self, id: NodeId) -> Result<f64, SearchError> {
        let state = self.tree.get(id)?.state.clone();
        let answer = state.answer.clone().unwrap_or_default();
        let request = render_value_score(
            &self.render_ctx(),
            &state.problem_text,
            &state.steps,
            &answer,
        );
        let content = self.generate(&request)?;
        match parse_value(&content) {
            Ok(score) => Ok(score.get()),
            Err(_) => {
                self.value_parse_failures += 1;
                Ok(0.0)
            }
        }
    }

    /// Proposes up to `expand_width` children for `parent`, deduplicated on
    /// whitespace-normalized text against both each other and any children a
    /// rollout already materialized. Returns false when the reply had no
    /// parseable steps; the node then stays unexpanded and is retried on a
    /// later visit.
    fn expand(&mut self, parent: NodeId) -> Result<bool, SearchError> {
        let state = self.tree.get(parent)?.state.clone();
        let request = render_propose_steps(
            &self.render_ctx(),
            &state.problem_text,
            &state.steps,
            self.config.expand_width,
            self.config.rollout_temperature,
            &format!("expand-i{}-n{}", self.iteration, parent),
        );
        let content = self.generate(&request)?;
        let Ok(steps) = parse_step_list(&content, self.config.expand_width) else {
            return Ok(false);
        };
        let normalize = |step: &str| step.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut seen: HashSet<String> = self
            .tree
            .get(parent)?
            .children
            .iter()
            .filter_map(|&child| self.tree.node(child))
            .filter_map(|child| child.state.steps.last().map(|s| normalize(s)))
            .collect();
        for step in steps {
            if !seen.insert(normalize(&step)) {
                continue;
            }
            let answer = extract_answer(&step, None).ok();
            let terminal = answer.is_some();
            self.tree.add_child(parent, &step, terminal, answer)?;
        }
        self.expanded.insert(parent);
        Ok(true)
    }

    /// Rolls out from `node` until a step carries the answer marker or the
    /// depth cap cuts it off. Every step becomes a tree node; returns the
    /// final node and its reward (0 when depth-capped without an answer).
    pub fn simulate(
        &mut self,
        node: NodeId,
        policy: SimulationPolicy,
    ) -> Result<(NodeId, f64), SearchError> {
        let mut current = node;
        loop {
            let (terminal, depth) = {
                let n = self.tree.get(current)?;
                (n.terminal, n.depth)
            };
            if terminal {
                let reward = self.value_state(current)?;
                return Ok((current, reward));
            }
            if depth >= self.config.max_depth {
                return Ok((current, 0.0));
            }
            let (k, temperature) = match policy {
                SimulationPolicy::Greedy => (1, 0.0),
                SimulationPolicy::Random => {
                    (self.config.expand_width, self.config.rollout_temperature)
                }
            };
            let state = self.tree.get(current)?.state.clone();
            let request = render_propose_steps(
                &self.render_ctx(),
                &state.problem_text,
                &state.steps,
                k,
                temperature,
                &format!("rollout-i{}-d{}", self.iteration, depth),
            );
            let content = self.generate(&request)?;
            let Ok(candidates) = parse_step_list(&content, k) else {
                // The model answered but proposed nothing usable: dead end.
                return Ok((current, 0.0));
            };
            let step = match policy {
                SimulationPolicy::Greedy => &candidates[0],
                SimulationPolicy::Random => {
                    &candidates[self.rng.random_range(0..candidates.len())]
                }
            };
            let answer = extract_answer(step, None).ok();
            let terminal = answer.is_some();
            current = self.tree.add_child(current, step, terminal, answer)?;
        }
    }

    /// One full iteration: ends in exactly one backpropagation.
    pub fn step(&mut self) -> Result<(), SearchError> {
        self.iteration += 1;
        let selected = self.select_leaf()?;
        let node = self.tree.get(selected)?;
        if node.terminal {
            let reward = self.value_state(selected)?;
            self.tree.backpropagate(selected, reward.clamp(0.0, 1.0))?;
            return self.mark_exhausted(selected);
        }
        if node.depth >= self.config.max_depth {
            self.tree.backpropagate(selected, 0.0)?;
            return self.mark_exhausted(selected);
        }

        let start = if self.expand(selected)? {
            // A successful expansion leaves at least one child: either a
            // fresh unvisited one (selected first) or the survivors of
            // deduplication.
            self.descend(selected)?
        } else {
            selected
        };

        let policy = choose_simulation_policy(self.config, &self.tree.get(start)?.state);
        match policy {
            SimulationPolicy::Greedy => self.policy_counts.greedy += 1,
            SimulationPolicy::Random => self.policy_counts.random += 1,
        }
        let (leaf, reward) = self.simulate(start, policy)?;
        self.tree.backpropagate(leaf, reward.clamp(0.0, 1.0))?;
        self.mark_exhausted(leaf)
    }

    /// Runs the full iteration budget and reports the best terminal chain,
    /// falling back to the chain-of-thought baseline when no visited
    /// terminal exists.
    pub fn run(mut self) -> Result<SearchResult, SearchError> {
        for _ in 0..self.config.iterations {
            self.step()?;
        }
        let root_visits = self.tree.root().visits;
        match self.tree.best_terminal_chain() {
            Ok(chain) => Ok(SearchResult {
                answer: chain.answer,
                steps: chain.steps,
                root_visits,
                best_q: chain.q,
                policy_counts: self.policy_counts,
                trace: self.tree.export_trace(),
                used_fallback: false,
                value_parse_failures: self.value_parse_failures,
            }),
            Err(TreeError::NoSolution) => {
                let problem = self.tree.root().state.problem_text.clone();
                let outcome = run_cot(&self.render_ctx(), &problem, None, self.model).map_err(
                    |source| SearchError::Aborted {
                        trace: self.tree.export_trace(),
                        source,
                    },
                )?;
                Ok(SearchResult {
                    answer: outcome.answer.unwrap_or_default(),
                    steps: vec![outcome.content],
                    root_visits,
                    best_q: 0.0,
                    policy_counts: self.policy_counts,
                    trace: self.tree.export_trace(),
                    used_fallback: true,
                    value_parse_failures: self.value_parse_failures,
                })
            }
            Err(other) => Err(other.into()),
        }
    }
}

/// Runs one search with the built-in prompt templates.
pub fn run_search(
    problem: &str,
    config: &MctsConfig,
    model: &ModelHandle,
) -> Result<SearchResult, SearchError> {
    let templates = TemplateSet::builtin();
    Engine::new(problem, config, model, &templates)?.run()
}
