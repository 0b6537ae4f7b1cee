//! Blocking JSON-over-HTTP client for the model shim.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("remote endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("malformed remote response: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub base_url: String,
    pub timeout: Duration,
    /// Additional attempts after a transport failure or 5xx status.
    pub retries: u32,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> RemoteConfig {
        RemoteConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpJsonClient {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl HttpJsonClient {
    pub fn new(config: RemoteConfig) -> HttpJsonClient {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        HttpJsonClient { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, request: &Req) -> Result<Resp, RemoteError> {
        let url = self.endpoint(path);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                log::warn!("retrying {url} (attempt {}): {last}", attempt + 1);
            }
            match self.agent.post(&url).send_json(request) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<Resp>()
                        .map_err(|e| RemoteError::Malformed(e.to_string()));
                }
                Err(ureq::Error::StatusCode(code)) if code < 500 => {
                    return Err(RemoteError::Malformed(format!("{url} answered HTTP {code}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(RemoteError::Unavailable(format!("{url}: {last}")))
    }
}
