//! Chat-completion client used to turn instructions into profile text.
//!
//! One POST per instruction with a fixed system message and temperature 0,
//! retried with exponential backoff on transport errors, 429, and 5xx.
//! Batch generation runs a bounded worker pool; results come back in
//! row-id order so cache writes stay serialized.

use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value as Json};

use crate::profile::{Instruction, ProfileRecord, ProfileSource};
use crate::{Error, Result};

/// System message sent with every request.
pub const SYSTEM_MESSAGE: &str = "You are a helpful financial assistant.";

/// Environment variable holding the endpoint URL.
pub const ENV_API_BASE: &str = "FINPT_API_BASE";
/// Environment variable holding the bearer token, if the endpoint needs one.
pub const ENV_API_KEY: &str = "FINPT_API_KEY";

#[derive(Debug, Clone)]
pub struct ChatClientConfig {
    /// Full chat-completions endpoint URL; requests POST directly to it.
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Total attempts per request (first try plus retries).
    pub max_attempts: u32,
    /// Delay before the first retry; doubles per retry.
    pub retry_base_delay: Duration,
    /// Maximum in-flight requests during batch generation.
    pub concurrency: usize,
    pub timeout: Duration,
}

impl ChatClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: "gpt-3.5-turbo".to_string(),
            max_attempts: 3,
            retry_base_delay: Duration::from_secs(1),
            concurrency: 4,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads the endpoint and key from `FINPT_API_BASE` / `FINPT_API_KEY`.
    /// Returns None when no endpoint is configured.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var(ENV_API_BASE).ok()?;
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        Some(cfg)
    }
}

/// A generated profile plus how many retries the request needed.
#[derive(Debug, Clone)]
pub struct GeneratedProfile {
    pub record: ProfileRecord,
    pub retries: u32,
}

pub struct ChatClient {
    cfg: ChatClientConfig,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(cfg: ChatClientConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder().timeout(cfg.timeout).build()?;
        Ok(Self { cfg, http })
    }

    /// The exact JSON body sent for an instruction. Temperature is the
    /// integer 0 in every request.
    pub fn request_body(&self, instr: &Instruction) -> Json {
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": instr.text},
            ],
            "temperature": 0,
        })
    }

    /// Issues one chat-completion request (with retries) and returns the
    /// reply text as a ProfileRecord.
    pub fn generate_profile(&self, instr: &Instruction) -> Result<GeneratedProfile> {
        if instr.text.is_empty() {
            return Err(Error::Generation {
                row_id: instr.row_id,
                reason: "empty instruction".into(),
            });
        }
        let body = self.request_body(instr);
        let mut last_reason = String::new();
        for attempt in 0..self.cfg.max_attempts {
            if attempt > 0 {
                let delay = self.cfg.retry_base_delay * 2u32.pow(attempt - 1);
                std::thread::sleep(delay);
            }
            match self.try_once(&body) {
                Ok(content) => {
                    if content.is_empty() {
                        return Err(Error::Generation {
                            row_id: instr.row_id,
                            reason: "service returned an empty reply".into(),
                        });
                    }
                    return Ok(GeneratedProfile {
                        record: ProfileRecord {
                            row_id: instr.row_id,
                            instruction: instr.text.clone(),
                            profile: content,
                            source: ProfileSource::Llm,
                            model_id: self.cfg.model.clone(),
                        },
                        retries: attempt,
                    });
                }
                Err(Attempt::Retryable(reason)) => last_reason = reason,
                Err(Attempt::Fatal(reason)) => {
                    return Err(Error::Generation { row_id: instr.row_id, reason })
                }
            }
        }
        Err(Error::Generation {
            row_id: instr.row_id,
            reason: format!("{} attempts exhausted: {last_reason}", self.cfg.max_attempts),
        })
    }

    fn try_once(&self, body: &Json) -> std::result::Result<String, Attempt> {
        let mut req = self.http.post(&self.cfg.base_url).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = req.send().map_err(|e| Attempt::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let reply: Json = resp.json().map_err(|e| Attempt::Fatal(e.to_string()))?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(Json::as_str)
            .ok_or_else(|| Attempt::Fatal("reply has no choices[0].message.content".into()))?;
        Ok(content.to_string())
    }

    /// Generates profiles for all instructions with at most
    /// `cfg.concurrency` requests in flight. Output is sorted by row_id;
    /// the first failure aborts the batch.
    pub fn generate_profiles(&self, instructions: &[Instruction]) -> Result<Vec<ProfileRecord>> {
        if instructions.is_empty() {
            return Ok(Vec::new());
        }
        let workers = self.cfg.concurrency.max(1).min(instructions.len());
        let queue = Arc::new(Mutex::new(instructions.to_vec().into_iter()));
        let (tx, rx) = mpsc::channel::<Result<ProfileRecord>>();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                let queue = Arc::clone(&queue);
                let tx = tx.clone();
                scope.spawn(move || loop {
                    let next = queue.lock().unwrap().next();
                    let Some(instr) = next else { break };
                    let result = self.generate_profile(&instr).map(|g| g.record);
                    let failed = result.is_err();
                    if tx.send(result).is_err() || failed {
                        break;
                    }
                });
            }
            drop(tx);
            let mut records = Vec::with_capacity(instructions.len());
            for result in rx {
                records.push(result?);
            }
            records.sort_by_key(|r| r.row_id);
            Ok(records)
        })
    }
}

enum Attempt {
    Retryable(String),
    Fatal(String),
}
