//! Counting gate bounding concurrent outstanding requests.

use std::sync::{Condvar, Mutex};

#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

/// Held slot; released on drop.
pub struct Permit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        Self { cap: cap.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn in_flight(&self) -> usize {
        *self.used.lock().expect("limit lock")
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("limit lock");
        while *used >= self.cap {
            used = self.freed.wait(used).expect("limit lock");
        }
        *used += 1;
        Permit { limit: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.limit.used.lock().expect("limit lock");
        *used -= 1;
        self.limit.freed.notify_one();
    }
}
