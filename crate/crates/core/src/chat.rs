//! The chat message model and prompt assembly.
//!
//! A request starts with one system message, continues with the profile's
//! canned user/assistant exchanges (multi-shot priming), then recent history
//! lines as user messages, and ends with the live prompt.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ProgramProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub profile: ProgramProfile,
    /// Previously entered lines, oldest first.
    pub history: Vec<String>,
    pub live_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("the prompt is empty")]
    EmptyPrompt,
}

/// Tag carried by the comment line that replaces the buffer on failure.
pub const ERROR_TAG: &str = "ai-cli error:";
/// Suffix marking a prompt that was pushed to history after a failed request.
pub const FAILED_MARK: &str = "ai-cli: failed";

/// Text appended to every system prompt unless the profile overrides it.
pub fn default_instructions(comment_leader: &str) -> String {
    format!(
        "Reply with a single executable command and nothing else: no explanations, \
         no surrounding quotes or code fences. When the request calls for a textual \
         answer rather than a command, write it as lines starting with the comment \
         leader \"{comment_leader}\"."
    )
}

pub fn system_prompt(profile: &ProgramProfile) -> ChatMessage {
    let instructions = match &profile.instructions {
        Some(text) => text.clone(),
        None => default_instructions(&profile.comment_leader),
    };
    let content = match (profile.system_prompt.is_empty(), instructions.is_empty()) {
        (true, _) => instructions,
        (false, true) => profile.system_prompt.clone(),
        (false, false) => format!("{} {}", profile.system_prompt, instructions),
    };
    ChatMessage::system(content)
}

/// Builds the message list for `ctx`, keeping the last `history_limit`
/// history lines.
///
/// The result always has `1 + 2 * exchanges + min(history_limit, history) + 1`
/// messages.
pub fn assemble(ctx: &PromptContext, history_limit: usize) -> Result<Vec<ChatMessage>, ChatError> {
    if ctx.live_prompt.trim().is_empty() {
        return Err(ChatError::EmptyPrompt);
    }
    let kept = history_limit.min(ctx.history.len());
    let mut messages = Vec::with_capacity(2 + 2 * ctx.profile.exchanges.len() + kept);
    messages.push(system_prompt(&ctx.profile));
    for ex in &ctx.profile.exchanges {
        messages.push(ChatMessage::user(ex.user.clone()));
        messages.push(ChatMessage::assistant(ex.assistant.clone()));
    }
    messages.extend(
        ctx.history[ctx.history.len() - kept..]
            .iter()
            .map(|line| ChatMessage::user(line.clone())),
    );
    messages.push(ChatMessage::user(ctx.live_prompt.clone()));
    Ok(messages)
}

/// History line recording a prompt whose request failed.
pub fn mark_failed(prompt: &str, comment_leader: &str) -> String {
    format!("{} {comment_leader} {FAILED_MARK}", prompt.trim_end())
}

/// Whether `line` is a failed prompt or an error comment left by ai-cli.
pub fn is_marked(line: &str) -> bool {
    line.trim_end().ends_with(FAILED_MARK) || line.contains(ERROR_TAG)
}

/// Removes a trailing failure mark, returning the original prompt.
pub fn strip_failed_mark<'a>(line: &'a str, comment_leader: &str) -> &'a str {
    line.trim_end()
        .strip_suffix(FAILED_MARK)
        .and_then(|rest| rest.trim_end().strip_suffix(comment_leader))
        .map(str::trim_end)
        .unwrap_or(line)
}

/// The last `limit` usable lines of `raw`, oldest first. Blank lines and
/// lines marked by [`mark_failed`] or carrying [`ERROR_TAG`] are dropped.
pub fn harvest_history<S: AsRef<str>>(raw: &[S], limit: usize) -> Vec<String> {
    let usable: Vec<&str> = raw
        .iter()
        .map(AsRef::as_ref)
        .filter(|line| !line.trim().is_empty() && !is_marked(line))
        .collect();
    usable[usable.len().saturating_sub(limit)..]
        .iter()
        .map(|s| (*s).to_owned())
        .collect()
}
