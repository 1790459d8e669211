//! Single-slot latest-value handoff between the network reader and the tick loop.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;

/// A message together with the receive-side timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Stamped<T> {
    pub value: T,
    /// Session time at which the message was fully read, seconds.
    pub arrival: f64,
    /// Sender's `t_send_s`.
    pub t_send: f64,
    pub seq: u64,
}

/// Writers replace the slot; the reader takes it. A message replaced before
/// being taken counts as an overwrite. Never blocks either side.
#[derive(Debug)]
pub struct Mailbox<T> {
    slot: ArcSwapOption<Stamped<T>>,
    overwrites: AtomicU64,
    posted: AtomicU64,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self {
            slot: ArcSwapOption::empty(),
            overwrites: AtomicU64::new(0),
            posted: AtomicU64::new(0),
        }
    }
}

impl<T> Mailbox<T> {
    pub fn post(&self, msg: Stamped<T>) {
        self.posted.fetch_add(1, Ordering::Relaxed);
        if self.slot.swap(Some(Arc::new(msg))).is_some() {
            self.overwrites.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn take(&self) -> Option<Arc<Stamped<T>>> {
        self.slot.swap(None)
    }

    pub fn overwrites(&self) -> u64 {
        self.overwrites.load(Ordering::Relaxed)
    }

    pub fn posted(&self) -> u64 {
        self.posted.load(Ordering::Relaxed)
    }
}
