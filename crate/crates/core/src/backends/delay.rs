use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::{Backend, ProbVector, Session};
use crate::error::Result;
use crate::vocab::{TokenId, Vocabulary};

/// Wraps a backend and sleeps before every step, simulating model latency.
///
/// An optional one-time startup cost is paid by the first step the backend
/// ever serves, across all of its sessions.
pub struct DelayBackend {
    inner: Arc<dyn Backend>,
    delay: Duration,
    startup: Duration,
    warm: AtomicBool,
}

pub fn with_delay(backend: Arc<dyn Backend>, millis: u64) -> DelayBackend {
    DelayBackend::new(backend, Duration::from_millis(millis))
}

impl DelayBackend {
    pub fn new(inner: Arc<dyn Backend>, delay: Duration) -> Self {
        DelayBackend {
            inner,
            delay,
            startup: Duration::ZERO,
            warm: AtomicBool::new(false),
        }
    }

    pub fn with_startup_cost(mut self, startup: Duration) -> Self {
        self.startup = startup;
        self
    }

    pub fn delay(&self) -> Duration {
        self.delay
    }
}

impl Backend for DelayBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn vocabulary(&self) -> &Arc<Vocabulary> {
        self.inner.vocabulary()
    }

    fn start_session(self: Arc<Self>, prompt_ids: &[TokenId]) -> Result<Box<dyn Session>> {
        let inner = self.inner.clone().start_session(prompt_ids)?;
        Ok(Box::new(DelaySession { backend: self, inner }))
    }
}

struct DelaySession {
    backend: Arc<DelayBackend>,
    inner: Box<dyn Session>,
}

impl Session for DelaySession {
    fn prefix(&self) -> &[TokenId] {
        self.inner.prefix()
    }

    fn step(&mut self) -> Result<ProbVector> {
        if !self.backend.warm.swap(true, Ordering::SeqCst) && !self.backend.startup.is_zero() {
            thread::sleep(self.backend.startup);
        }
        if !self.backend.delay.is_zero() {
            thread::sleep(self.backend.delay);
        }
        self.inner.step()
    }

    fn append(&mut self, ids: &[TokenId]) -> Result<()> {
        self.inner.append(ids)
    }
}
