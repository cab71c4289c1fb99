//! Segment summarization under a token budget.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::remote::OpenAiClient;

/// Smallest summary budget accepted by [`SummaryRequest::new`].
pub const MIN_SUMMARY_BUDGET: usize = 16;

/// Whitespace-delimited token count.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// First `n` whitespace tokens of `text`, joined by single spaces.
pub fn truncate_tokens(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            prompt_tokens,
            completion_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: Self) -> Self {
        TokenUsage::new(
            self.prompt_tokens + rhs.prompt_tokens,
            self.completion_tokens + rhs.completion_tokens,
        )
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRequest {
    member_texts: Vec<String>,
    budget_tokens: usize,
}

impl SummaryRequest {
    pub fn new(member_texts: Vec<String>, budget_tokens: usize) -> Result<Self> {
        if member_texts.is_empty() {
            return Err(Error::Input("summary request needs at least one member".into()));
        }
        if budget_tokens < MIN_SUMMARY_BUDGET {
            return Err(Error::Config(format!(
                "summary budget must be >= {MIN_SUMMARY_BUDGET} tokens (got {budget_tokens})"
            )));
        }
        Ok(Self {
            member_texts,
            budget_tokens,
        })
    }

    /// Builds a request without the minimum-budget check; the mock rules are
    /// defined for any positive budget.
    pub fn unchecked(member_texts: Vec<String>, budget_tokens: usize) -> Self {
        assert!(!member_texts.is_empty() && budget_tokens > 0);
        Self {
            member_texts,
            budget_tokens,
        }
    }

    pub fn member_texts(&self) -> &[String] {
        &self.member_texts
    }

    pub fn budget_tokens(&self) -> usize {
        self.budget_tokens
    }

    /// The summarization prompt sent to chat models.
    pub fn prompt(&self) -> String {
        summary_prompt(self.budget_tokens, &self.member_texts.join("\n\n"))
    }
}

pub fn summary_prompt(budget_tokens: usize, grouped_chunks: &str) -> String {
    format!(
        "Summarize the following text within {budget_tokens} tokens.\n\
         Include as many key details as possible. Output ONLY the summary: {grouped_chunks}"
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutput {
    pub text: String,
    pub usage: TokenUsage,
    /// The provider overshot the budget and the text was cut to fit.
    pub truncated: bool,
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, req: &SummaryRequest) -> Result<SummaryOutput>;
}

/// Extractive summarizer: the first `budget` tokens of the members, in order.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockSummarizer;

impl Summarizer for MockSummarizer {
    fn summarize(&self, req: &SummaryRequest) -> Result<SummaryOutput> {
        let joined = req.member_texts.join(" ");
        let text = truncate_tokens(&joined, req.budget_tokens);
        let usage = TokenUsage::new(token_count(&joined) as u64, token_count(&text) as u64);
        Ok(SummaryOutput {
            text,
            usage,
            truncated: false,
        })
    }
}

/// Summarizer backed by `/v1/chat/completions`.
#[derive(Debug)]
pub struct RemoteSummarizer {
    client: OpenAiClient,
    model: String,
}

impl RemoteSummarizer {
    pub fn new(client: OpenAiClient, model: String) -> Self {
        Self { client, model }
    }
}

impl Summarizer for RemoteSummarizer {
    fn summarize(&self, req: &SummaryRequest) -> Result<SummaryOutput> {
        let prompt = req.prompt();
        let (raw, reported) = self.client.chat(&self.model, &prompt, None)?;
        let usage = match reported {
            Some(u) => TokenUsage::new(u.prompt_tokens, u.completion_tokens),
            None => TokenUsage::new(token_count(&prompt) as u64, token_count(&raw) as u64),
        };
        let over = token_count(&raw) > req.budget_tokens;
        if over {
            log::warn!(
                "summary of {} tokens exceeds budget {}; truncating",
                token_count(&raw),
                req.budget_tokens
            );
        }
        let text = if over {
            truncate_tokens(&raw, req.budget_tokens)
        } else {
            raw.trim().to_string()
        };
        if token_count(&text) == 0 {
            return Err(Error::provider("provider returned an empty summary", 1, false));
        }
        Ok(SummaryOutput {
            text,
            usage,
            truncated: over,
        })
    }
}

/// Chat-model provider used for summaries and answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LlmConfig {
    Mock,
    Remote {
        /// Endpoint root; empty means "read `ERA_API_BASE`".
        endpoint: String,
        model: String,
        api_key_env: String,
    },
}

impl LlmConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            LlmConfig::Remote { model, .. } if model.is_empty() => {
                Err(Error::Config("remote LLM needs a model name".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn client(&self) -> Result<Option<(OpenAiClient, String)>> {
        self.validate()?;
        match self {
            LlmConfig::Mock => Ok(None),
            LlmConfig::Remote {
                endpoint,
                model,
                api_key_env,
            } => Ok(Some((OpenAiClient::from_env(endpoint, api_key_env)?, model.clone()))),
        }
    }

    pub fn summarizer(&self) -> Result<Box<dyn Summarizer>> {
        Ok(match self.client()? {
            None => Box::new(MockSummarizer),
            Some((client, model)) => Box::new(RemoteSummarizer::new(client, model)),
        })
    }
}
