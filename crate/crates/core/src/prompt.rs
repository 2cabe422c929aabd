//! Prompt templates and reply parsers.
//!
//! Everything here is pure: rendering a template twice with the same inputs
//! yields byte-identical prompts, and the parsers never touch the model.
//!
//! Templates use named placeholders `{problem}`, `{steps}`, `{k}`,
//! `{options}` and `{answer}`. Built-ins can be overridden per template by a
//! directory of text files (see [`TemplateSet::load_dir`]); a file holds an
//! optional system message, a `---` separator line, and the user pattern.

use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::model::{GenerationRequest, Message};

/// Marker every terminal-seeking prompt instructs the model to emit.
pub const ANSWER_MARKER: &str = "The answer is";

const PLACEHOLDERS: [&str; 5] = ["problem", "steps", "k", "options", "answer"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no numbered steps in reply")]
    NoSteps,
    #[error("no numeric score in reply")]
    NoScore,
    #[error("reply has no \"{ANSWER_MARKER}\" marker")]
    MissingMarker,
    #[error("answer token {0:?} matches no option")]
    UnknownOption(String),
    #[error("template {name:?} uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("cannot read template {name:?}: {source}")]
    TemplateIo {
        name: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: String,
    pub system_text: String,
    pub user_pattern: String,
}

impl PromptTemplate {
    fn new(name: &str, system_text: &str, user_pattern: &str) -> Self {
        Self {
            name: name.to_string(),
            system_text: system_text.to_string(),
            user_pattern: user_pattern.to_string(),
        }
    }

    /// Rejects placeholders outside the documented set, so a validated
    /// template always renders without residual markers.
    fn validate(&self) -> Result<(), PromptError> {
        static PLACEHOLDER_RE: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"\{(\w+)\}").expect("placeholder regex"));
        for caps in PLACEHOLDER_RE.captures_iter(&self.user_pattern) {
            let found = &caps[1];
            if !PLACEHOLDERS.contains(&found) {
                return Err(PromptError::UnknownPlaceholder {
                    name: self.name.clone(),
                    placeholder: found.to_string(),
                });
            }
        }
        Ok(())
    }

    fn render(&self, bindings: &[(&str, &str)]) -> String {
        let mut text = self.user_pattern.clone();
        for (placeholder, value) in bindings {
            text = text.replace(&format!("{{{placeholder}}}"), value);
        }
        text
    }
}

/// The three templates the search and the baseline need.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub propose: PromptTemplate,
    pub value: PromptTemplate,
    pub cot: PromptTemplate,
}

const PROPOSE_SYSTEM: &str = "You are a careful problem solver. You reason in short, explicit steps \
and you explore genuinely different solution paths.";

const PROPOSE_USER: &str = "Problem:
{problem}

Steps so far:
{steps}

Propose {k}. Keep each step to one or two sentences and make it a concrete \
continuation of the steps above. When a step reaches the final result, end \
it with: The answer is <answer>";

const VALUE_SYSTEM: &str = "You are a strict grader of reasoning chains.";

const VALUE_USER: &str = "Problem:
{problem}

Proposed solution:
{steps}
Final answer: {answer}

Rate the probability that the final answer is correct as a single number \
between 0 and 1. Reply with the number only.";

const COT_SYSTEM: &str = "You are a careful problem solver.";

const COT_USER: &str = "{problem}
{options}
Let's think step by step. Finish your reply with one line of the form: \
The answer is <answer>";

impl TemplateSet {
    #[must_use]
    pub fn builtin() -> Self {
        Self {
            propose: PromptTemplate::new("propose_steps", PROPOSE_SYSTEM, PROPOSE_USER),
            value: PromptTemplate::new("value_score", VALUE_SYSTEM, VALUE_USER),
            cot: PromptTemplate::new("cot", COT_SYSTEM, COT_USER),
        }
    }

    /// Built-ins overridden by any of `propose_steps.txt`, `value_score.txt`,
    /// `cot.txt` found in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for template in [&mut set.propose, &mut set.value, &mut set.cot] {
            let path = dir.join(format!("{}.txt", template.name));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::TemplateIo {
                name: template.name.clone(),
                source,
            })?;
            let (system, user) = match text.split_once("\n---\n") {
                Some((system, user)) => (system.to_string(), user.to_string()),
                None => (String::new(), text),
            };
            template.system_text = system;
            template.user_pattern = user;
            template.validate()?;
        }
        Ok(set)
    }
}

/// Model-level request parameters shared by all renders.
#[derive(Debug, Clone)]
pub struct RenderCtx<'a> {
    pub templates: &'a TemplateSet,
    pub model_name: &'a str,
    pub max_tokens: u32,
}

impl RenderCtx<'_> {
    fn request(
        &self,
        template: &PromptTemplate,
        user: String,
        temperature: f64,
        seed_tag: &str,
    ) -> GenerationRequest {
        let mut messages = Vec::with_capacity(2);
        if !template.system_text.is_empty() {
            messages.push(Message::system(template.system_text.clone()));
        }
        messages.push(Message::user(user));
        GenerationRequest {
            model_name: self.model_name.to_string(),
            messages,
            temperature,
            max_tokens: self.max_tokens,
            seed_tag: seed_tag.to_string(),
        }
    }
}

fn steps_block(steps: &[String]) -> String {
    if steps.is_empty() {
        "(none yet)".to_string()
    } else {
        steps
            .iter()
            .enumerate()
            .map(|(i, step)| format!("{}. {step}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn count_phrase(k: usize) -> String {
    if k == 1 {
        "exactly 1 next step, as a single numbered line (\"1. ...\")".to_string()
    } else {
        format!("exactly {k} alternative next steps, one per line, numbered (\"1. ...\", \"2. ...\")")
    }
}

/// A request for `k` numbered candidate next steps continuing the chain.
#[must_use]
pub fn render_propose_steps(
    ctx: &RenderCtx<'_>,
    problem: &str,
    steps_so_far: &[String],
    k: usize,
    temperature: f64,
    seed_tag: &str,
) -> GenerationRequest {
    let user = ctx.templates.propose.render(&[
        ("problem", problem),
        ("steps", &steps_block(steps_so_far)),
        ("k", &count_phrase(k)),
    ]);
    ctx.request(&ctx.templates.propose, user, temperature, seed_tag)
}

/// A request to judge a finished chain with a single number in [0,1].
#[must_use]
pub fn render_value_score(
    ctx: &RenderCtx<'_>,
    problem: &str,
    steps: &[String],
    answer: &str,
) -> GenerationRequest {
    let user = ctx.templates.value.render(&[
        ("problem", problem),
        ("steps", &steps_block(steps)),
        ("answer", answer),
    ]);
    ctx.request(&ctx.templates.value, user, 0.0, "value")
}

fn options_block(options: Option<&[String]>) -> String {
    match options {
        None | Some([]) => String::new(),
        Some(options) => {
            let mut block = String::from("Options:\n");
            for (i, option) in options.iter().enumerate() {
                block.push_str(&format!("{}. {option}\n", option_label(i)));
            }
            block
        }
    }
}

/// The zero-shot "Let's think step by step" baseline prompt.
#[must_use]
pub fn render_cot(
    ctx: &RenderCtx<'_>,
    problem: &str,
    options: Option<&[String]>,
) -> GenerationRequest {
    let user = ctx.templates.cot.render(&[
        ("problem", problem),
        ("options", &options_block(options)),
    ]);
    ctx.request(&ctx.templates.cot, user, 0.0, "cot")
}

/// Extracts up to `k` steps from lines led by an enumeration token
/// (`1.`, `2)`, `-`). An unnumbered reply is a parse error, not a guess.
pub fn parse_step_list(content: &str, k: usize) -> Result<Vec<String>, PromptError> {
    static STEP_RE: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|-)\s+(.+)$").expect("step regex"));
    let mut steps = Vec::new();
    for line in content.lines() {
        if steps.len() == k {
            break;
        }
        if let Some(caps) = STEP_RE.captures(line) {
            let step = caps[1].trim();
            if !step.is_empty() {
                steps.push(step.to_string());
            }
        }
    }
    if steps.is_empty() {
        return Err(PromptError::NoSteps);
    }
    Ok(steps)
}

/// A correctness score in [0,1], clamped on parse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueScore(f64);

impl ValueScore {
    #[must_use]
    pub fn clamped(raw: f64) -> Self {
        Self(raw.clamp(0.0, 1.0))
    }

    #[must_use]
    pub fn get(self) -> f64 {
        self.0
    }
}

/// The first decimal literal in the reply, clamped to [0,1].
pub fn parse_value(content: &str) -> Result<ValueScore, PromptError> {
    static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
        Regex::new(r"[-+]?(?:\d+(?:\.\d+)?|\.\d+)(?:[eE][-+]?\d+)?").expect("number regex")
    });
    let literal = NUMBER_RE.find(content).ok_or(PromptError::NoScore)?;
    let raw: f64 = literal
        .as_str()
        .parse()
        .map_err(|_| PromptError::NoScore)?;
    Ok(ValueScore::clamped(raw))
}

/// Label for the option at `index`: A, B, C, ...
#[must_use]
pub fn option_label(index: usize) -> char {
    (b'A' + index as u8) as char
}

fn strip_punctuation(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// The token after the last `The answer is` marker (case-insensitive),
/// stripped of punctuation. With options, the token must name an option
/// label or be a prefix of an option's text, and the canonical label is
/// returned.
pub fn extract_answer(content: &str, options: Option<&[String]>) -> Result<String, PromptError> {
    let lowered = content.to_lowercase();
    let marker = ANSWER_MARKER.to_lowercase();
    let at = lowered.rfind(&marker).ok_or(PromptError::MissingMarker)?;
    let tail = &content[at + marker.len()..];
    let token = tail
        .split_whitespace()
        .next()
        .map(strip_punctuation)
        .filter(|t| !t.is_empty())
        .ok_or(PromptError::MissingMarker)?;

    let Some(options) = options.filter(|opts| !opts.is_empty()) else {
        return Ok(token.to_string());
    };

    let token_lower = token.to_lowercase();
    if token_lower.len() == 1 {
        let label = token_lower.chars().next().expect("single char");
        let index = (label as u32).wrapping_sub('a' as u32) as usize;
        if index < options.len() {
            return Ok(option_label(index).to_string());
        }
    }
    for (i, option) in options.iter().enumerate() {
        if option.to_lowercase().starts_with(&token_lower) {
            return Ok(option_label(i).to_string());
        }
    }
    Err(PromptError::UnknownOption(token.to_string()))
}
