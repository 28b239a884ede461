//! Template captions with seeded lexical variation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::model::{Action, ActivityScript, FloormapWorld, ObjectRef, ScriptStep};

/// Steps shorter than this at the end of a clip are too brief to describe.
const MIN_TAIL_STEP: f64 = 1.0;

const SUBJECTS: [&str; 4] = ["the person", "a person", "he", "someone"];
const CONNECTIVES: [&str; 4] = [" and then ", " then ", ", and ", " and "];

/// Verb phrase with `{}` standing for the object phrase.
fn verbs(action: Action) -> &'static [&'static str] {
    match action {
        Action::WalkTo => &["walks to {}", "goes to {}", "heads over to {}", "moves toward {}"],
        Action::Sit => &["sits down on {}", "sits on {}", "takes a seat on {}"],
        Action::LieDown => &["lies down on {}", "lies on {}", "lays down on {}"],
        Action::StandUp => &["stands up", "gets up", "gets up from {}"],
        Action::Open => &["opens {}", "pulls open {}"],
        Action::Close => &["closes {}", "shuts {}"],
        Action::Cook => &["cooks at {}", "cooks some food on {}", "prepares food at {}"],
        Action::Wash => &["washes his hands at {}", "washes something in {}", "cleans up at {}"],
        Action::Eat => &["eats at {}", "has a meal at {}", "eats some food at {}"],
        Action::Drink => &["drinks something at {}", "takes a drink near {}", "drinks a glass of water at {}"],
        Action::Work => &["works at {}", "does some work at {}", "is busy at {}"],
        Action::Sleep => &["sleeps", "falls asleep", "takes a nap"],
    }
}

fn describable(script: &ActivityScript) -> Vec<&ScriptStep> {
    let n = script.steps.len();
    script
        .steps
        .iter()
        .enumerate()
        .filter(|(i, s)| *i + 1 < n || s.duration >= MIN_TAIL_STEP)
        .map(|(_, s)| s)
        .collect()
}

/// One caption for the script.
pub fn caption_for_script(script: &ActivityScript, env: &FloormapWorld, rng: &mut impl Rng) -> String {
    let steps = describable(script);
    let steps: Vec<&ScriptStep> = if steps.is_empty() { script.steps.iter().collect() } else { steps };
    let mut clauses: Vec<String> = Vec::new();
    let mut last_target: Option<ObjectRef> = None;
    for (i, s) in steps.iter().enumerate() {
        let next_same = steps.get(i + 1).is_some_and(|n| n.target == s.target && n.action != Action::WalkTo);
        // annotators often skip the walk before an action at the same place
        if s.action == Action::WalkTo && next_same && rng.gen_bool(0.3) {
            continue;
        }
        let noun = s
            .target
            .and_then(|r| env.object(r))
            .map(|o| o.class.noun())
            .unwrap_or("the room");
        let phrase = if s.target.is_some() && s.target == last_target && rng.gen_bool(0.5) {
            "it".to_owned()
        } else {
            format!("the {noun}")
        };
        let template = verbs(s.action).choose(rng).expect("nonempty pool");
        clauses.push(template.replace("{}", &phrase));
        if s.target.is_some() {
            last_target = s.target;
        }
    }
    let subject = SUBJECTS.choose(rng).expect("nonempty pool");
    let mut text = subject.to_string();
    for (i, c) in clauses.iter().enumerate() {
        if i == 0 {
            text.push(' ');
        } else if i + 1 == clauses.len() {
            text.push_str(CONNECTIVES.choose(rng).expect("nonempty pool"));
        } else {
            text.push_str(if rng.gen_bool(0.5) { ", " } else { " then " });
        }
        text.push_str(c);
    }
    text.push('.');
    let mut chars = text.chars();
    match chars.next() {
        Some(f) => f.to_uppercase().chain(chars).collect(),
        None => text,
    }
}

/// Two to four references for one script.
pub fn captions_for_script(script: &ActivityScript, env: &FloormapWorld, rng: &mut impl Rng) -> Vec<String> {
    let n = rng.gen_range(2..=4);
    (0..n).map(|_| caption_for_script(script, env, rng)).collect()
}
