//! Bounded multi-producer, single-consumer queue that records its peak
//! occupancy.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

#[derive(Debug)]
struct State<T> {
    items: VecDeque<T>,
    closed: bool,
    peak: usize,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    bound: usize,
    state: Mutex<State<T>>,
    not_empty: Condvar,
    not_full: Condvar,
}

impl<T> BoundedQueue<T> {
    pub fn new(bound: usize) -> Self {
        assert!(bound >= 1);
        BoundedQueue {
            bound,
            state: Mutex::new(State {
                items: VecDeque::with_capacity(bound),
                closed: false,
                peak: 0,
            }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
        }
    }

    /// Blocks while full. Returns the item back if the queue was closed.
    pub fn push(&self, item: T) -> Result<(), T> {
        let mut s = self.state.lock().unwrap();
        while s.items.len() >= self.bound && !s.closed {
            s = self.not_full.wait(s).unwrap();
        }
        if s.closed {
            return Err(item);
        }
        s.items.push_back(item);
        s.peak = s.peak.max(s.items.len());
        self.not_empty.notify_one();
        Ok(())
    }

    /// Blocks while empty; `None` once closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(item) = s.items.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.not_empty.wait(s).unwrap();
        }
    }

    /// Stops producers; items already queued can still be popped.
    pub fn close(&self) {
        let mut s = self.state.lock().unwrap();
        s.closed = true;
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    /// Drops queued items and closes.
    pub fn abandon(&self) {
        let mut s = self.state.lock().unwrap();
        s.closed = true;
        s.items.clear();
        self.not_empty.notify_all();
        self.not_full.notify_all();
    }

    pub fn peak(&self) -> usize {
        self.state.lock().unwrap().peak
    }

    pub fn bound(&self) -> usize {
        self.bound
    }
}
