//! Deterministic reward-tree environments.
//!
//! A [`SyntheticTreeSpec`] describes a complete tree of fixed depth and
//! branching whose leaves carry known rewards. [`as_scripted_model`] turns it
//! into a model handle: step proposals enumerate the branches, the answer
//! marker fires on the final level, and value replies are the exact reward
//! of the reached leaf. Search behavior is then checkable against
//! [`known_optimum`] without any language model.

use std::path::Path;
use std::sync::LazyLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Backend, GenerationRequest, ModelError, ModelHandle};
use crate::prompt::ANSWER_MARKER;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("branching must be at least 1")]
    ZeroBranching,
    #[error("expected {expected} leaf rewards, got {actual}")]
    WrongLeafCount { expected: usize, actual: usize },
    #[error("leaf reward {0} outside [0,1]")]
    RewardOutOfRange(f64),
    #[error("top two leaf rewards differ by {gap}, need at least {margin}")]
    MarginTooSmall { gap: f64, margin: f64 },
    #[error("cannot read spec file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed spec file: {0}")]
    Malformed(#[from] serde_json::Error),
}

/// A complete reward tree: `branching^depth` leaves, rewards in [0,1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTreeSpec {
    pub depth: usize,
    pub branching: usize,
    pub leaf_rewards: Vec<f64>,
    pub seed: u64,
}

impl SyntheticTreeSpec {
    pub fn new(
        depth: usize,
        branching: usize,
        leaf_rewards: Vec<f64>,
        seed: u64,
    ) -> Result<Self, SyntheticError> {
        let spec = Self {
            depth,
            branching,
            leaf_rewards,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.depth == 0 {
            return Err(SyntheticError::ZeroDepth);
        }
        if self.branching == 0 {
            return Err(SyntheticError::ZeroBranching);
        }
        let expected = self.leaf_count();
        if self.leaf_rewards.len() != expected {
            return Err(SyntheticError::WrongLeafCount {
                expected,
                actual: self.leaf_rewards.len(),
            });
        }
        for &reward in &self.leaf_rewards {
            if !(0.0..=1.0).contains(&reward) {
                return Err(SyntheticError::RewardOutOfRange(reward));
            }
        }
        Ok(())
    }

    /// Enforces a unique maximum with at least `margin` between the top two
    /// leaves.
    pub fn validate_margin(&self, margin: f64) -> Result<(), SyntheticError> {
        self.validate()?;
        let mut sorted = self.leaf_rewards.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite rewards"));
        let gap = match sorted.as_slice() {
            [_] => return Ok(()),
            [top, second, ..] => top - second,
            [] => unreachable!("validated non-empty"),
        };
        if gap < margin {
            return Err(SyntheticError::MarginTooSmall { gap, margin });
        }
        Ok(())
    }

    #[must_use]
    pub fn leaf_count(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    /// Seeded random rewards, uniform over [0,1).
    pub fn random(depth: usize, branching: usize, seed: u64) -> Result<Self, SyntheticError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = branching
            .checked_pow(depth as u32)
            .filter(|_| depth >= 1 && branching >= 1)
            .ok_or(SyntheticError::ZeroDepth)?;
        let leaf_rewards = (0..count).map(|_| rng.random::<f64>()).collect();
        Self::new(depth, branching, leaf_rewards, seed)
    }

    /// Seeded random rewards with one leaf lifted `margin` above the rest.
    pub fn with_unique_optimum(
        depth: usize,
        branching: usize,
        seed: u64,
        margin: f64,
    ) -> Result<Self, SyntheticError> {
        let mut spec = Self::random(depth, branching, seed)?;
        let ceiling = 0.99 - margin;
        for reward in &mut spec.leaf_rewards {
            *reward *= ceiling;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let winner = rng.random_range(0..spec.leaf_rewards.len());
        let runner_up = spec
            .leaf_rewards
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != winner)
            .map(|(_, r)| *r)
            .fold(0.0f64, f64::max);
        // Lift slightly past the margin so validation is immune to rounding.
        spec.leaf_rewards[winner] = runner_up + margin + 1e-9;
        spec.validate_margin(margin)?;
        Ok(spec)
    }

    /// Loads a spec from a JSON fixture file.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SyntheticError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// The question text presented to the search.
    #[must_use]
    pub fn problem_text(&self) -> String {
        format!(
            "Pick one branch at each of {} levels ({} branches per level) \
to maximize the final score.",
            self.depth, self.branching
        )
    }

    /// Linear leaf index (0-based) for a 1-based branch path.
    #[must_use]
    pub fn leaf_index(&self, path: &[usize]) -> Option<usize> {
        if path.len() != self.depth {
            return None;
        }
        let mut index = 0usize;
        for &branch in path {
            if branch == 0 || branch > self.branching {
                return None;
            }
            index = index * self.branching + (branch - 1);
        }
        Some(index)
    }
}

/// Argmax over all leaves by exhaustive enumeration; ties break toward the
/// lowest leaf index, i.e. the lexicographically smallest path.
#[must_use]
pub fn known_optimum(spec: &SyntheticTreeSpec) -> (Vec<usize>, f64) {
    let mut best_index = 0;
    let mut best_reward = f64::NEG_INFINITY;
    for (index, &reward) in spec.leaf_rewards.iter().enumerate() {
        if reward > best_reward {
            best_reward = reward;
            best_index = index;
        }
    }
    let mut path = vec![0; spec.depth];
    let mut rest = best_index;
    for slot in path.iter_mut().rev() {
        *slot = rest % spec.branching + 1;
        rest /= spec.branching;
    }
    (path, best_reward)
}

static BRANCH_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Take branch (\d+)").expect("branch regex"));

/// Branch indices named in a chain of environment steps.
#[must_use]
pub fn branch_path(steps: &[String]) -> Vec<usize> {
    steps
        .iter()
        .filter_map(|step| {
            BRANCH_RE
                .captures(step)
                .and_then(|caps| caps[1].parse().ok())
        })
        .collect()
}

/// Backend that plays the reward tree over the prompt protocol.
pub struct SyntheticModel {
    spec: SyntheticTreeSpec,
}

impl SyntheticModel {
    pub fn new(spec: SyntheticTreeSpec) -> Result<Self, SyntheticError> {
        spec.validate()?;
        Ok(Self { spec })
    }

    fn propose_reply(&self, prompt_path: &[usize]) -> Result<String, ModelError> {
        let next_depth = prompt_path.len() + 1;
        if next_depth > self.spec.depth {
            return Err(ModelError::Protocol(
                "proposal requested past the final level".into(),
            ));
        }
        let mut lines = Vec::with_capacity(self.spec.branching);
        for branch in 1..=self.spec.branching {
            if next_depth == self.spec.depth {
                let mut path = prompt_path.to_vec();
                path.push(branch);
                let leaf = self
                    .spec
                    .leaf_index(&path)
                    .expect("in-range path");
                lines.push(format!(
                    "{branch}. Take branch {branch}. {ANSWER_MARKER} {}",
                    leaf + 1
                ));
            } else {
                lines.push(format!("{branch}. Take branch {branch}."));
            }
        }
        Ok(lines.join("\n"))
    }

    fn value_reply(&self, prompt_path: &[usize]) -> Result<String, ModelError> {
        let index = self
            .spec
            .leaf_index(prompt_path)
            .ok_or_else(|| ModelError::Protocol("value request for a non-leaf chain".into()))?;
        Ok(format!("{}", self.spec.leaf_rewards[index]))
    }
}

impl Backend for SyntheticModel {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ModelError> {
        let prompt = request.last_user_content();
        let path: Vec<usize> = BRANCH_RE
            .captures_iter(prompt)
            .filter_map(|caps| caps[1].parse().ok())
            .collect();
        if prompt.contains("Final answer:") {
            self.value_reply(&path)
        } else {
            self.propose_reply(&path)
        }
    }
}

/// Wraps the spec as a ready-to-search model handle.
pub fn as_scripted_model(spec: &SyntheticTreeSpec) -> Result<ModelHandle, SyntheticError> {
    Ok(ModelHandle::new(SyntheticModel::new(spec.clone())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Message;
    use crate::prompt::{render_propose_steps, render_value_score, RenderCtx, TemplateSet};

    fn two_leaf_spec() -> SyntheticTreeSpec {
        SyntheticTreeSpec::new(1, 2, vec![0.1, 0.9], 0).unwrap()
    }

    fn complete(model: &SyntheticModel, prompt: &str) -> Result<String, ModelError> {
        model.complete(&GenerationRequest {
            model_name: "synthetic".into(),
            messages: vec![Message::user(prompt)],
            temperature: 0.0,
            max_tokens: 64,
            seed_tag: String::new(),
        })
    }

    #[test]
    fn depth_one_tree_proposes_terminal_branches() {
        let spec = two_leaf_spec();
        let model = SyntheticModel::new(spec.clone()).unwrap();
        let templates = TemplateSet::builtin();
        let ctx = RenderCtx {
            templates: &templates,
            model_name: "synthetic",
            max_tokens: 64,
        };

        let propose = render_propose_steps(&ctx, &spec.problem_text(), &[], 2, 0.7, "i0");
        let reply = model.complete(&propose).unwrap();
        assert_eq!(
            reply,
            "1. Take branch 1. The answer is 1\n2. Take branch 2. The answer is 2"
        );

        let steps = vec!["Take branch 2. The answer is 2".to_string()];
        let value = render_value_score(&ctx, &spec.problem_text(), &steps, "2");
        assert_eq!(model.complete(&value).unwrap(), "0.9");
    }

    #[test]
    fn zero_depth_is_rejected() {
        assert!(matches!(
            SyntheticTreeSpec::new(0, 2, vec![], 0),
            Err(SyntheticError::ZeroDepth)
        ));
    }

    #[test]
    fn out_of_range_reward_is_rejected() {
        assert!(matches!(
            SyntheticTreeSpec::new(1, 2, vec![0.5, 1.4], 0),
            Err(SyntheticError::RewardOutOfRange(_))
        ));
    }

    #[test]
    fn leaf_count_mismatch_is_rejected() {
        assert!(matches!(
            SyntheticTreeSpec::new(2, 2, vec![0.1, 0.2], 0),
            Err(SyntheticError::WrongLeafCount { expected: 4, .. })
        ));
    }

    #[test]
    fn optimum_of_two_leaves() {
        let (path, reward) = known_optimum(&two_leaf_spec());
        assert_eq!(path, vec![2]);
        assert_eq!(reward, 0.9);
    }

    #[test]
    fn optimum_ties_break_to_first_path() {
        let spec = SyntheticTreeSpec::new(2, 2, vec![0.5; 4], 0).unwrap();
        let (path, reward) = known_optimum(&spec);
        assert_eq!(path, vec![1, 1]);
        assert_eq!(reward, 0.5);
    }

    /// Independent oracle: recursive maximization over subtrees, written
    /// without the linear leaf indexing the implementation uses.
    fn recursive_optimum(
        rewards: &[f64],
        branching: usize,
        depth: usize,
    ) -> (Vec<usize>, f64) {
        if depth == 0 {
            assert_eq!(rewards.len(), 1);
            return (Vec::new(), rewards[0]);
        }
        let chunk = rewards.len() / branching;
        let mut best: Option<(Vec<usize>, f64)> = None;
        for branch in 0..branching {
            let slice = &rewards[branch * chunk..(branch + 1) * chunk];
            let (mut sub_path, sub_reward) = recursive_optimum(slice, branching, depth - 1);
            sub_path.insert(0, branch + 1);
            let better = match &best {
                None => true,
                Some((_, reward)) => sub_reward > *reward,
            };
            if better {
                best = Some((sub_path, sub_reward));
            }
        }
        best.expect("branching >= 1")
    }

    #[test]
    fn enumeration_matches_recursive_oracle_on_seeded_specs() {
        for seed in 0..50 {
            let spec = SyntheticTreeSpec::random(3, 3, seed).unwrap();
            let expected = recursive_optimum(&spec.leaf_rewards, spec.branching, spec.depth);
            assert_eq!(known_optimum(&spec), expected, "seed {seed}");
        }
    }

    #[test]
    fn unique_optimum_specs_honor_the_margin() {
        for seed in 0..20 {
            let spec = SyntheticTreeSpec::with_unique_optimum(3, 3, seed, 0.2).unwrap();
            spec.validate_margin(0.2).unwrap();
        }
    }

    #[test]
    fn branch_path_reads_materialized_steps() {
        let steps = vec![
            "Take branch 2.".to_string(),
            "Take branch 1. The answer is 4".to_string(),
        ];
        assert_eq!(branch_path(&steps), vec![2, 1]);
    }

    #[test]
    fn leaf_index_rejects_bad_paths() {
        let spec = SyntheticTreeSpec::random(2, 3, 0).unwrap();
        assert_eq!(spec.leaf_index(&[1]), None);
        assert_eq!(spec.leaf_index(&[0, 1]), None);
        assert_eq!(spec.leaf_index(&[1, 4]), None);
        assert_eq!(spec.leaf_index(&[3, 3]), Some(8));
    }

    #[test]
    fn value_reply_roundtrips_reward_exactly() {
        let spec = SyntheticTreeSpec::random(1, 3, 9).unwrap();
        let model = SyntheticModel::new(spec.clone()).unwrap();
        for branch in 1..=3usize {
            let prompt = format!(
                "Proposed solution:\n1. Take branch {branch}. The answer is {branch}\nFinal answer: {branch}"
            );
            let reply = complete(&model, &prompt).unwrap();
            let parsed: f64 = crate::prompt::parse_value(&reply).unwrap().get();
            assert_eq!(parsed, spec.leaf_rewards[branch - 1]);
        }
    }

    #[test]
    fn spec_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        let spec = two_leaf_spec();
        std::fs::write(&path, serde_json::to_string(&spec).unwrap()).unwrap();
        let loaded = SyntheticTreeSpec::from_file(&path).unwrap();
        assert_eq!(loaded.leaf_rewards, spec.leaf_rewards);
        assert_eq!(loaded.depth, 1);
    }

    #[test]
    fn malformed_spec_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        std::fs::write(&path, "{\"depth\": 0}").unwrap();
        assert!(SyntheticTreeSpec::from_file(&path).is_err());
    }
}
