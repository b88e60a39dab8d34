//! Reference priority queue: a binary heap with lazy deletion against a set
//! of live keys.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

#[derive(Default)]
pub struct Oracle {
    heap: BinaryHeap<Reverse<u64>>,
    live: HashSet<u64>,
}

impl Oracle {
    pub fn new() -> Self {
        Oracle::default()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn contains(&self, v: u64) -> bool {
        self.live.contains(&v)
    }

    /// False if `v` was already live.
    pub fn insert(&mut self, v: u64) -> bool {
        if !self.live.insert(v) {
            return false;
        }
        self.heap.push(Reverse(v));
        true
    }

    /// False if `v` was not live.
    pub fn delete(&mut self, v: u64) -> bool {
        self.live.remove(&v)
    }

    pub fn findmin(&mut self) -> Option<u64> {
        while let Some(&Reverse(v)) = self.heap.peek() {
            if self.live.contains(&v) {
                return Some(v);
            }
            self.heap.pop();
        }
        None
    }
}
