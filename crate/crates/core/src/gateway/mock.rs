//! In-process backends for tests and offline tooling.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, Usage};

type Responder = dyn Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync;

/// A backend answering from a closure; counts calls and keeps the last request.
pub struct ScriptedBackend {
    responder: Box<Responder>,
    calls: AtomicUsize,
    last: Mutex<Option<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(
        responder: impl Fn(&ChatRequest) -> Result<ChatResponse, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self { responder: Box::new(responder), calls: AtomicUsize::new(0), last: Mutex::new(None) }
    }

    /// Always answers `text`.
    pub fn constant(text: &str) -> Self {
        let text = text.to_string();
        Self::new(move |req| Ok(reply(req, &text)))
    }

    /// Answers with `texts` in order, then repeats the last one.
    pub fn queue<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let queue: Mutex<VecDeque<String>> = Mutex::new(texts.into_iter().map(Into::into).collect());
        let last = Mutex::new(String::new());
        Self::new(move |req| {
            let mut q = queue.lock().expect("queue poisoned");
            let mut last = last.lock().expect("last poisoned");
            if let Some(next) = q.pop_front() {
                *last = next;
            }
            Ok(reply(req, &last))
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn last_request(&self) -> Option<ChatRequest> {
        self.last.lock().expect("last poisoned").clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        *self.last.lock().expect("last poisoned") = Some(request.clone());
        (self.responder)(request)
    }
}

/// Wraps `text` in a response with a rough whitespace-token usage estimate.
pub fn reply(request: &ChatRequest, text: &str) -> ChatResponse {
    let input = request.system.split_whitespace().count() + request.user_text().split_whitespace().count();
    ChatResponse {
        text: text.to_string(),
        usage: Usage {
            input_tokens: input as u64,
            output_tokens: text.split_whitespace().count() as u64,
        },
    }
}
