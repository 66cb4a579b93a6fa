//! HTTP transport: POST `{role, payload, schema_version}` as JSON, expect a
//! JSON object back. One retry on transport failure or timeout.

use std::time::Duration;

use serde_json::Value;

use super::{envelope, Advisor, AdvisorError, Role};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub struct RemoteAdvisor {
    url: String,
    agent: ureq::Agent,
    retries: usize,
}

impl RemoteAdvisor {
    pub fn new(url: impl Into<String>) -> Self {
        Self::with_timeout(url, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            retries: 1,
        }
    }

    fn once(&self, body: &Value) -> Result<Value, AdvisorError> {
        let resp = self.agent.post(&self.url).send_json(body).map_err(map_err)?;
        let text = resp.into_body().read_to_string().map_err(map_err)?;
        serde_json::from_str(&text).map_err(|e| AdvisorError::Malformed(e.to_string()))
    }
}

fn map_err(e: ureq::Error) -> AdvisorError {
    match e {
        ureq::Error::Timeout(_) => AdvisorError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => AdvisorError::Timeout,
        other => AdvisorError::Transport(other.to_string()),
    }
}

impl Advisor for RemoteAdvisor {
    fn name(&self) -> &str {
        &self.url
    }

    fn call(&self, role: Role, payload: &Value) -> Result<Value, AdvisorError> {
        let body = envelope(role, payload);
        let mut last = AdvisorError::Unavailable(self.url.clone());
        for _ in 0..=self.retries {
            match self.once(&body) {
                Ok(v) => return Ok(v),
                // a well-formed reply that fails to parse will not improve on retry
                Err(e @ AdvisorError::Malformed(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}
