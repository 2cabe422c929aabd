//! Shared fixtures for binary-level tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ponder() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ponder"))
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    ponder()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

/// Script replaying the hexagon interior-angle scenario: three candidate
/// paths proposed at the root, each completing to 720.
pub const HEXAGON_QUESTION: &str = "Calculate the sum of the interior angles of a hexagon.";

pub fn write_hexagon_script(dir: &Path) -> PathBuf {
    let entries = serde_json::json!([
        {"matcher": "Final answer: 720", "reply": "0.9"},
        {"matcher": "Final answer:", "reply": "0.2"},
        {"matcher": "Steps so far:\n(none yet)",
         "reply": "1. Use the interior angle formula: the angles of an n-sided polygon sum to (n-2)*180 degrees.\n2. Split the hexagon into triangles from one vertex and add their angle sums.\n3. Walk around the hexagon once and relate exterior angles to interior angles."},
        {"matcher": "interior angle formula",
         "reply": "1. With n = 6 the sum is (6-2)*180 = 720 degrees. The answer is 720"},
        {"matcher": "triangles from one vertex",
         "reply": "1. A hexagon splits into 4 triangles, giving 4*180 = 720 degrees. The answer is 720"},
        {"matcher": "exterior angles",
         "reply": "1. Exterior angles sum to 360, so the interior angles total 6*180 - 360 = 720 degrees. The answer is 720"}
    ]);
    let path = dir.join("hexagon_script.json");
    std::fs::write(&path, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
    path
}

/// Three single-answer tasks; the scripted model gets t1 and t3 right.
pub fn write_eval_fixtures(dir: &Path) -> (PathBuf, PathBuf) {
    let dataset = dir.join("tasks.jsonl");
    std::fs::write(
        &dataset,
        concat!(
            "{\"id\":\"t1\",\"question\":\"Pick the right option for q one.\",\"options\":[\"alpha\",\"beta\"],\"answer\":\"B\",\"part\":\"part1\"}\n",
            "{\"id\":\"t2\",\"question\":\"Pick the right option for q two.\",\"options\":[\"alpha\",\"beta\"],\"answer\":\"A\",\"part\":\"part1\"}\n",
            "{\"id\":\"t3\",\"question\":\"Pick the right option for q three.\",\"options\":[\"alpha\",\"beta\"],\"answer\":\"B\",\"part\":\"part1\"}\n",
        ),
    )
    .unwrap();

    let script = serde_json::json!([
        {"matcher": "Final answer:", "reply": "0.8"},
        {"matcher": "q one", "reply": "1. Compare both options. The answer is B"},
        {"matcher": "q two", "reply": "1. Compare both options. The answer is B"},
        {"matcher": "q three", "reply": "1. Compare both options. The answer is B"}
    ]);
    let script_path = dir.join("eval_script.json");
    std::fs::write(&script_path, serde_json::to_string_pretty(&script).unwrap()).unwrap();
    (dataset, script_path)
}
