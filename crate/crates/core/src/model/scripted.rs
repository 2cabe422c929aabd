//! Deterministic scripted backend for offline runs and tests.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, GenerationRequest, ModelError};

/// One scripted exchange: the first entry whose `matcher` substring occurs in
/// the final user message supplies the reply. `once` entries are consumed on
/// use; sticky entries (the default) keep matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub matcher: String,
    pub reply: String,
    #[serde(default)]
    pub once: bool,
}

impl ScriptEntry {
    pub fn sticky(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: matcher.into(),
            reply: reply.into(),
            once: false,
        }
    }

    pub fn one_shot(matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: matcher.into(),
            reply: reply.into(),
            once: true,
        }
    }
}

/// Substring-matching replay model. An unmatched prompt is a hard error so
/// that a test scenario with a gap fails loudly instead of improvising.
pub struct ScriptedModel {
    entries: Mutex<Vec<(ScriptEntry, bool)>>,
}

impl ScriptedModel {
    pub fn new(entries: Vec<ScriptEntry>) -> Result<Self, ModelError> {
        if entries.is_empty() {
            return Err(ModelError::InvalidRequest("script is empty".into()));
        }
        Ok(Self {
            entries: Mutex::new(entries.into_iter().map(|e| (e, false)).collect()),
        })
    }

    /// Loads a script from a JSON file holding an array of entries:
    /// `[{"matcher": "...", "reply": "...", "once": false}, ...]`.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|err| ModelError::Protocol(format!("bad script file: {err}")))?;
        Self::new(entries)
    }
}

impl Backend for ScriptedModel {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ModelError> {
        let prompt = request.last_user_content();
        let mut entries = self.entries.lock().expect("script lock");
        for (entry, consumed) in entries.iter_mut() {
            if *consumed || !prompt.contains(&entry.matcher) {
                continue;
            }
            if entry.once {
                *consumed = true;
            }
            return Ok(entry.reply.clone());
        }
        Err(ModelError::ScriptMiss {
            prompt: prompt.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Message;

    fn request(prompt: &str) -> GenerationRequest {
        GenerationRequest {
            model_name: "scripted".into(),
            messages: vec![Message::user(prompt)],
            temperature: 0.0,
            max_tokens: 64,
            seed_tag: String::new(),
        }
    }

    #[test]
    fn queued_reply_is_returned_verbatim() {
        let model =
            ScriptedModel::new(vec![ScriptEntry::sticky("capital", "The answer is C")]).unwrap();
        let reply = model.complete(&request("what is the capital?")).unwrap();
        assert_eq!(reply, "The answer is C");
    }

    #[test]
    fn first_matching_entry_wins() {
        let model = ScriptedModel::new(vec![
            ScriptEntry::sticky("angles", "first"),
            ScriptEntry::sticky("interior angles", "second"),
        ])
        .unwrap();
        let reply = model.complete(&request("sum of interior angles")).unwrap();
        assert_eq!(reply, "first");
    }

    #[test]
    fn unmatched_prompt_fails_loudly() {
        let model = ScriptedModel::new(vec![ScriptEntry::sticky("abc", "x")]).unwrap();
        let err = model.complete(&request("nothing relevant")).unwrap_err();
        assert!(matches!(err, ModelError::ScriptMiss { prompt } if prompt == "nothing relevant"));
    }

    #[test]
    fn one_shot_entries_are_consumed() {
        let model = ScriptedModel::new(vec![
            ScriptEntry::one_shot("step", "first reply"),
            ScriptEntry::sticky("step", "later replies"),
        ])
        .unwrap();
        assert_eq!(model.complete(&request("next step")).unwrap(), "first reply");
        assert_eq!(
            model.complete(&request("next step")).unwrap(),
            "later replies"
        );
        assert_eq!(
            model.complete(&request("next step")).unwrap(),
            "later replies"
        );
    }

    #[test]
    fn empty_script_is_rejected() {
        assert!(ScriptedModel::new(Vec::new()).is_err());
    }

    #[test]
    fn loads_from_json_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        std::fs::write(
            &path,
            r#"[{"matcher": "hexagon", "reply": "The answer is 720", "once": false}]"#,
        )
        .unwrap();
        let model = ScriptedModel::from_file(&path).unwrap();
        assert_eq!(
            model.complete(&request("hexagon?")).unwrap(),
            "The answer is 720"
        );
    }
}
