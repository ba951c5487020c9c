use super::vocab::{tokenize, TokenSeq, Vocab};
use super::ProbeError;

/// Background event text, the question, and the task form, joined by `separator` in that
/// order. An empty event context or task form is left out together with its separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub event_context: String,
    pub question: String,
    pub task_form: String,
    pub separator: String,
}

impl PromptTemplate {
    pub fn new(event_context: &str, question: &str, task_form: &str) -> Self {
        Self {
            event_context: event_context.to_string(),
            question: question.to_string(),
            task_form: task_form.to_string(),
            separator: "\n".to_string(),
        }
    }

    pub fn render(&self) -> Result<String, ProbeError> {
        if self.question.trim().is_empty() {
            return Err(ProbeError::EmptyQuestion);
        }
        let parts: Vec<&str> = [
            self.event_context.as_str(),
            self.question.as_str(),
            self.task_form.as_str(),
        ]
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect();
        Ok(parts.join(&self.separator))
    }
}

pub fn build_prompt(template: &PromptTemplate, vocab: &Vocab) -> Result<TokenSeq, ProbeError> {
    Ok(tokenize(&template.render()?, vocab))
}
