use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingProvider};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding server reached over HTTP.
///
/// Request body `{"texts": [...]}`, response body `{"vectors": [[...], ...]}`,
/// one vector per text in order.
pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        RemoteProvider {
            endpoint: endpoint.into(),
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let unavailable = |e: ureq::Error| EmbeddingError::ProviderUnavailable(format!("{}: {e}", self.endpoint));
        let response: EmbedResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(EmbedRequest { texts })
            .map_err(unavailable)?
            .body_mut()
            .read_json()
            .map_err(unavailable)?;
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "{}: asked for {} vectors, got {}",
                self.endpoint,
                texts.len(),
                response.vectors.len()
            )));
        }
        Ok(response.vectors)
    }
}
