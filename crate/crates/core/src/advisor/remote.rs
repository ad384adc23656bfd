// SPDX-License-Identifier: Apache-2.0
//! Chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::{
    build_prompt, extract_script, heuristic_propose, Advisor, AdvisorConfig, AdvisorError,
    AdvisorProposal, AdvisorRequest, Provenance, FORMAT_REMINDER,
};

const ATTEMPTS: usize = 2;

pub struct RemoteAdvisor {
    config: AdvisorConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteAdvisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteAdvisor")
            .field("base_url", &self.config.base_url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl RemoteAdvisor {
    /// Reads the credential from the environment variable named in `config`.
    pub fn from_env(config: AdvisorConfig) -> Result<RemoteAdvisor, AdvisorError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                AdvisorError::Configuration(format!(
                    "environment variable {} is not set",
                    config.api_key_env
                ))
            })?;
        RemoteAdvisor::with_key(config, key)
    }

    pub fn with_key(config: AdvisorConfig, api_key: String) -> Result<RemoteAdvisor, AdvisorError> {
        if config.base_url.trim().is_empty() || config.model.trim().is_empty() {
            return Err(AdvisorError::Configuration("base_url and model must be set".into()));
        }
        if !(config.request_timeout_s.is_finite() && config.request_timeout_s > 0.0) {
            return Err(AdvisorError::Configuration("request_timeout_s must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteAdvisor {
            config,
            api_key,
            agent,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn complete_once(&self, body: &str) -> Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        if !(200..300).contains(&status) {
            let head: String = text.chars().take(200).collect();
            return Err(format!("HTTP {status}: {head}"));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| format!("invalid JSON reply: {e}"))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "reply has no choices[0].message.content".to_string())
    }

    /// One chat turn, retried once on transport or HTTP failure.
    fn complete(&self, prompt: &str) -> Result<String, AdvisorError> {
        let body = json!({
            "model": self.config.model,
            "max_tokens": self.config.max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        })
        .to_string();
        let mut last = String::new();
        for _ in 0..ATTEMPTS {
            match self.complete_once(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
        }
        Err(AdvisorError::Network {
            attempts: ATTEMPTS,
            message: last,
        })
    }
}

impl Advisor for RemoteAdvisor {
    fn propose(&mut self, req: &AdvisorRequest) -> Result<AdvisorProposal, AdvisorError> {
        let prompt = build_prompt(req);
        let first = self.complete(&prompt)?;
        let remote = |script, raw: String| AdvisorProposal {
            script,
            provenance: Provenance::Remote {
                model: self.config.model.clone(),
            },
            raw_response: Some(raw),
        };
        if let Ok(script) = extract_script(&first) {
            return Ok(remote(script, first));
        }
        let second = self.complete(&format!("{prompt}\n{FORMAT_REMINDER}\n"))?;
        if let Ok(script) = extract_script(&second) {
            return Ok(remote(script, second));
        }
        let mut fallback = heuristic_propose(req);
        fallback.raw_response = Some(second);
        Ok(fallback)
    }
}
