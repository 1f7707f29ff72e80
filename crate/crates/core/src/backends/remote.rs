use std::sync::Arc;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::http::Response;
use ureq::{Agent, Body};

use super::{Backend, ProbVector, Session};
use crate::error::{Error, Result};
use crate::stepserver::wire::*;
use crate::vocab::{parse_vocab, TokenId, Vocabulary};

/// Client for a backend served over the step wire protocol.
pub struct RemoteBackend {
    name: String,
    base_url: String,
    agent: Agent,
    vocab: Arc<Vocabulary>,
}

impl RemoteBackend {
    /// Connects to `base_url` (e.g. `http://127.0.0.1:7070`) and fetches the
    /// remote vocabulary.
    pub fn connect(name: impl Into<String>, base_url: &str) -> Result<Self> {
        let base_url = if base_url.contains("://") {
            base_url.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", base_url.trim_end_matches('/'))
        };
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        let mut response = agent
            .get(format!("{base_url}{ROUTE_VOCAB}"))
            .call()
            .map_err(transport)?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_to_string()
            .map_err(transport)?;
        if status != 200 {
            return Err(remote_failure(status, &body));
        }
        let vocab = parse_vocab(&body, &format!("{base_url}{ROUTE_VOCAB}"))
            .map_err(|e| Error::Protocol(format!("remote vocabulary: {e}")))?;
        Ok(RemoteBackend {
            name: name.into(),
            base_url,
            agent,
            vocab: Arc::new(vocab),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, body: &Req) -> Result<Resp> {
        let response = self
            .agent
            .post(format!("{}{route}", self.base_url))
            .send_json(body)
            .map_err(transport)?;
        decode(response)
    }
}

fn transport(e: ureq::Error) -> Error {
    Error::Transport(e.to_string())
}

fn remote_failure(status: u16, body: &str) -> Error {
    match serde_json::from_str::<ErrorBody>(body) {
        Ok(err) => Error::Remote {
            code: err.error.code,
            message: err.error.message,
        },
        Err(_) => Error::Protocol(format!("HTTP {status} without an error body")),
    }
}

fn decode<T: DeserializeOwned>(mut response: Response<Body>) -> Result<T> {
    let status = response.status().as_u16();
    let body = response
        .body_mut()
        .with_config()
        .limit(256 * 1024 * 1024)
        .read_to_string()
        .map_err(transport)?;
    if status != 200 {
        return Err(remote_failure(status, &body));
    }
    serde_json::from_str(&body).map_err(|e| Error::Protocol(format!("undecodable response: {e}")))
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocabulary(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    fn start_session(self: Arc<Self>, prompt_ids: &[TokenId]) -> Result<Box<dyn Session>> {
        self.vocab.check_ids(prompt_ids)?;
        let created: CreateSessionResponse = self.post(
            ROUTE_CREATE_SESSION,
            &CreateSessionRequest {
                prompt_ids: prompt_ids.to_vec(),
            },
        )?;
        Ok(Box::new(RemoteSession {
            backend: self,
            session_id: created.session_id,
            prefix: prompt_ids.to_vec(),
        }))
    }
}

/// Session mirrored between client and server; the client keeps its own
/// copy of the prefix and checks the server's length after every append.
pub struct RemoteSession {
    backend: Arc<RemoteBackend>,
    session_id: String,
    prefix: Vec<TokenId>,
}

impl RemoteSession {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }
}

impl Session for RemoteSession {
    fn prefix(&self) -> &[TokenId] {
        &self.prefix
    }

    fn step(&mut self) -> Result<ProbVector> {
        let response: StepResponse = self.backend.post(
            ROUTE_STEP,
            &StepRequest {
                session_id: self.session_id.clone(),
            },
        )?;
        response.into_distribution(self.backend.vocab.len())
    }

    fn append(&mut self, ids: &[TokenId]) -> Result<()> {
        self.backend.vocab.check_ids(ids)?;
        let response: AppendResponse = self.backend.post(
            ROUTE_APPEND,
            &AppendRequest {
                session_id: self.session_id.clone(),
                ids: ids.to_vec(),
            },
        )?;
        self.prefix.extend_from_slice(ids);
        if response.prefix_len != self.prefix.len() {
            return Err(Error::Protocol(format!(
                "server prefix length {} disagrees with client {}",
                response.prefix_len,
                self.prefix.len()
            )));
        }
        Ok(())
    }
}
