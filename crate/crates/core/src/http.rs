//! Thin blocking HTTP transport shared by the access probes, the collector
//! and the LLM provider client.

use std::time::Duration;

use thiserror::Error;

/// A response as received: status, headers (names lower-cased) and the
/// verbatim body bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl RawResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        crate::adapters::header(&self.headers, name)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Other(String),
}

impl From<reqwest::Error> for TransportError {
    fn from(e: reqwest::Error) -> Self {
        // reqwest messages carry the URL but never request headers.
        let (timeout, connect) = (e.is_timeout(), e.is_connect());
        let msg = e.without_url().to_string();
        if timeout {
            TransportError::Timeout(msg)
        } else if connect {
            TransportError::Connect(msg)
        } else {
            TransportError::Other(msg)
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    inner: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(timeout: Duration) -> Self {
        let inner = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout.min(Duration::from_secs(10)))
            .build()
            .expect("http client");
        Self { inner }
    }

    fn collect(resp: reqwest::blocking::Response) -> Result<RawResponse, TransportError> {
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_ascii_lowercase(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
            .collect();
        let body = resp.bytes()?.to_vec();
        Ok(RawResponse { status, headers, body })
    }

    pub fn get(&self, url: &str, headers: &[(&str, String)]) -> Result<RawResponse, TransportError> {
        let mut req = self.inner.get(url);
        for (k, v) in headers {
            req = req.header(*k, v);
        }
        Self::collect(req.send()?)
    }

    pub fn post_json(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: &serde_json::Value,
    ) -> Result<RawResponse, TransportError> {
        let mut req = self
            .inner
            .post(url)
            .header("content-type", "application/json")
            .body(serde_json::to_vec(body).expect("json body"));
        for (k, v) in headers {
            req = req.header(*k, v);
        }
        Self::collect(req.send()?)
    }
}

/// GET transport used by the collector; lets tests script responses.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str, headers: &[(&str, String)]) -> Result<RawResponse, TransportError>;
}

impl Transport for HttpClient {
    fn get(&self, url: &str, headers: &[(&str, String)]) -> Result<RawResponse, TransportError> {
        HttpClient::get(self, url, headers)
    }
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}
