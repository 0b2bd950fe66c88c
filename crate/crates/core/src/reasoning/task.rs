use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReasoningError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskStep {
    pub index: usize,
    pub text: String,
    pub required_objects: BTreeSet<String>,
    /// `"verb noun"` pairs.
    pub required_actions: BTreeSet<String>,
    /// Requirements came from keyword matching against the vocabulary
    /// rather than explicit lists.
    #[serde(default)]
    pub extracted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub task_id: String,
    pub title: Option<String>,
    pub steps: Vec<TaskStep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    task_id: String,
    title: Option<String>,
    #[serde(default)]
    vocabulary: Option<RawVocabulary>,
    #[serde(default)]
    steps: Vec<RawStep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVocabulary {
    #[serde(default)]
    objects: Vec<String>,
    #[serde(default)]
    actions: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    index: Option<usize>,
    #[serde(default)]
    text: String,
    required_objects: Option<Vec<String>>,
    required_actions: Option<Vec<String>>,
}

fn malformed(msg: impl Into<String>) -> ReasoningError {
    ReasoningError::MalformedTask(msg.into())
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

fn mentions(words: &[String], phrase: &str) -> bool {
    let p: Vec<String> = self::words(phrase);
    let stem = |w: &str| w.trim_end_matches('s').to_string();
    !p.is_empty() && words.windows(p.len()).any(|win| win.iter().zip(&p).all(|(a, b)| stem(a) == stem(b)))
}

/// Parses a TOML task document. Steps list `required_objects` and
/// `required_actions` explicitly; a step that omits both has them
/// extracted from its text using the document's `[vocabulary]`.
pub fn parse_task(doc: &str) -> Result<TaskDescription, ReasoningError> {
    let raw: RawTask = toml::from_str(doc).map_err(|e| malformed(e.to_string()))?;
    if raw.task_id.trim().is_empty() {
        return Err(malformed("task_id is empty"));
    }
    if raw.steps.is_empty() {
        return Err(malformed("task has no steps"));
    }
    let mut steps = Vec::with_capacity(raw.steps.len());
    for (i, s) in raw.steps.into_iter().enumerate() {
        if s.index.is_some_and(|x| x != i) {
            return Err(malformed(format!("step {i} declares index {}", s.index.unwrap_or_default())));
        }
        let clean = |v: Vec<String>| -> Result<BTreeSet<String>, ReasoningError> {
            v.into_iter()
                .map(|x| {
                    let x = x.trim().to_lowercase();
                    if x.is_empty() {
                        Err(malformed(format!("step {i} has an empty label")))
                    } else {
                        Ok(x)
                    }
                })
                .collect()
        };
        let (objects, actions, extracted) = match (s.required_objects, s.required_actions) {
            (None, None) => match &raw.vocabulary {
                Some(v) => {
                    let w = words(&s.text);
                    let objects: BTreeSet<String> = v.objects.iter().filter(|o| mentions(&w, o)).map(|o| o.to_lowercase()).collect();
                    let actions: BTreeSet<String> = v
                        .actions
                        .iter()
                        .filter(|a| a.split_whitespace().all(|part| mentions(&w, part)))
                        .map(|a| a.to_lowercase())
                        .collect();
                    if objects.is_empty() && actions.is_empty() {
                        return Err(ReasoningError::UnknownVocabulary { step: i, text: s.text });
                    }
                    (objects, actions, true)
                }
                None => (BTreeSet::new(), BTreeSet::new(), false),
            },
            (o, a) => (clean(o.unwrap_or_default())?, clean(a.unwrap_or_default())?, false),
        };
        for a in &actions {
            if a.split_whitespace().count() < 2 {
                return Err(malformed(format!("step {i} action {a:?} is not a verb-noun pair")));
            }
        }
        if objects.is_empty() && actions.is_empty() && s.text.trim().is_empty() {
            return Err(malformed(format!("step {i} has neither text nor requirements")));
        }
        steps.push(TaskStep {
            index: i,
            text: s.text,
            required_objects: objects,
            required_actions: actions,
            extracted,
        });
    }
    Ok(TaskDescription {
        task_id: raw.task_id,
        title: raw.title,
        steps,
    })
}

pub fn load_task(path: &Path) -> Result<TaskDescription, ReasoningError> {
    let doc = std::fs::read_to_string(path).map_err(|e| malformed(format!("{}: {e}", path.display())))?;
    parse_task(&doc)
}

impl TaskDescription {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn object_vocabulary(&self) -> BTreeSet<String> {
        self.steps.iter().flat_map(|s| s.required_objects.iter().cloned()).collect()
    }

    pub fn action_vocabulary(&self) -> BTreeSet<String> {
        self.steps.iter().flat_map(|s| s.required_actions.iter().cloned()).collect()
    }
}
