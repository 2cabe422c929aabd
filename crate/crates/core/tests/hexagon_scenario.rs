//! End-to-end scripted scenario: three candidate solution paths for the
//! hexagon interior-angle question, each rolling out to the same total.

use ponder_core::model::{ModelHandle, ScriptEntry, ScriptedModel};
use ponder_core::search::{run_search, MctsConfig};

pub fn hexagon_script() -> Vec<ScriptEntry> {
    vec![
        ScriptEntry::sticky("Final answer: 720", "0.9"),
        ScriptEntry::sticky("Final answer:", "0.2"),
        ScriptEntry::sticky(
            "Steps so far:\n(none yet)",
            "1. Use the interior angle formula: the angles of an n-sided polygon sum to (n-2)*180 degrees.\n\
             2. Split the hexagon into triangles from one vertex and add their angle sums.\n\
             3. Walk around the hexagon once and relate exterior angles to interior angles.",
        ),
        ScriptEntry::sticky(
            "interior angle formula",
            "1. With n = 6 the sum is (6-2)*180 = 720 degrees. The answer is 720",
        ),
        ScriptEntry::sticky(
            "triangles from one vertex",
            "1. A hexagon splits into 4 triangles, giving 4*180 = 720 degrees. The answer is 720",
        ),
        ScriptEntry::sticky(
            "exterior angles",
            "1. Exterior angles sum to 360, so the interior angles total 6*180 - 360 = 720 degrees. The answer is 720",
        ),
    ]
}

const QUESTION: &str = "Calculate the sum of the interior angles of a hexagon.";

fn model() -> ModelHandle {
    ModelHandle::new(ScriptedModel::new(hexagon_script()).unwrap())
}

#[test]
fn search_reaches_720() {
    let config = MctsConfig {
        iterations: 8,
        ..MctsConfig::default()
    };
    let result = run_search(QUESTION, &config, &model()).unwrap();
    assert_eq!(result.answer, "720");
    assert!(!result.used_fallback);
    assert_eq!(result.root_visits, 8);
    assert_eq!(result.best_q, 0.9);
    assert!(result.steps.last().unwrap().contains("720"));
}

#[test]
fn short_question_rolls_out_randomly() {
    let config = MctsConfig {
        iterations: 8,
        ..MctsConfig::default()
    };
    let result = run_search(QUESTION, &config, &model()).unwrap();
    assert_eq!(result.policy_counts.greedy, 0);
    assert!(result.policy_counts.random >= 3);
}

#[test]
fn all_three_paths_get_explored() {
    let config = MctsConfig {
        iterations: 8,
        ..MctsConfig::default()
    };
    let result = run_search(QUESTION, &config, &model()).unwrap();
    let trace = result.trace;
    assert!(trace.contains("interior angle formula"));
    assert!(trace.contains("triangles from one vertex"));
    assert!(trace.contains("exterior angles"));
    // Three root children plus one materialized terminal below each.
    assert_eq!(trace.lines().count(), 7);
}

#[test]
fn reruns_are_byte_identical() {
    let config = MctsConfig {
        iterations: 8,
        seed: 7,
        ..MctsConfig::default()
    };
    let first = run_search(QUESTION, &config, &model()).unwrap();
    let second = run_search(QUESTION, &config, &model()).unwrap();
    assert_eq!(first.trace, second.trace);
}
