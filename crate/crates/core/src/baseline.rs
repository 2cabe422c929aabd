//! Zero-shot chain-of-thought baseline: one prompt, one extraction.

use crate::model::{ModelError, ModelHandle};
use crate::prompt::{extract_answer, render_cot, RenderCtx};

#[derive(Debug, Clone)]
pub struct CotOutcome {
    /// Raw model reply.
    pub content: String,
    /// Extracted answer; `None` when the reply carries no usable marker, in
    /// which case the caller scores the task incorrect and flags it.
    pub answer: Option<String>,
}

pub fn run_cot(
    ctx: &RenderCtx<'_>,
    problem: &str,
    options: Option<&[String]>,
    model: &ModelHandle,
) -> Result<CotOutcome, ModelError> {
    let request = render_cot(ctx, problem, options);
    let response = model.generate(&request)?;
    let answer = extract_answer(&response.content, options).ok();
    Ok(CotOutcome {
        content: response.content,
        answer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptEntry, ScriptedModel};
    use crate::prompt::TemplateSet;

    fn model(reply: &str) -> ModelHandle {
        ModelHandle::new(
            ScriptedModel::new(vec![ScriptEntry::sticky("step by step", reply)]).unwrap(),
        )
    }

    #[test]
    fn extracts_marker_answer() {
        let templates = TemplateSet::builtin();
        let ctx = RenderCtx {
            templates: &templates,
            model_name: "m",
            max_tokens: 128,
        };
        let outcome = run_cot(&ctx, "which?", None, &model("Reasoning... The answer is B")).unwrap();
        assert_eq!(outcome.answer.as_deref(), Some("B"));
    }

    #[test]
    fn missing_marker_yields_no_answer() {
        let templates = TemplateSet::builtin();
        let ctx = RenderCtx {
            templates: &templates,
            model_name: "m",
            max_tokens: 128,
        };
        let outcome = run_cot(&ctx, "which?", None, &model("no idea")).unwrap();
        assert_eq!(outcome.answer, None);
        assert_eq!(outcome.content, "no idea");
    }
}
