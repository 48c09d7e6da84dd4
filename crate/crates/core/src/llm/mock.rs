//! In-process chat clients for offline runs and tests.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use super::{ChatClient, ChatRequest, TransportError};

/// Replays a fixed list of replies in order and records every request.
#[derive(Default)]
pub struct ScriptedClient {
    replies: Mutex<VecDeque<Result<String, TransportError>>>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().map(|r| Ok(r.into())).collect()),
            requests: Mutex::default(),
        }
    }

    pub fn push_error(&self, err: TransportError) {
        self.replies.lock().unwrap().push_back(Err(err));
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl ChatClient for ScriptedClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.requests.lock().unwrap().push(request.clone());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Err(TransportError::Protocol("scripted replies exhausted".into())))
    }
}

/// Answers every request with a function of the request, optionally after
/// a fixed delay standing in for network latency.
pub struct FnClient<F> {
    respond: F,
    latency: Duration,
    calls: Mutex<usize>,
}

impl<F> FnClient<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    pub fn new(respond: F) -> Self {
        Self {
            respond,
            latency: Duration::ZERO,
            calls: Mutex::new(0),
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl<F> ChatClient for FnClient<F>
where
    F: Fn(&ChatRequest) -> Result<String, TransportError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        *self.calls.lock().unwrap() += 1;
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        (self.respond)(request)
    }
}
