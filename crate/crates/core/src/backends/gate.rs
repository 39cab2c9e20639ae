use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding in-flight calls to one backend.
#[derive(Debug)]
pub struct Gate {
    available: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a> {
    gate: &'a Gate,
}

impl Gate {
    pub fn new(limit: usize) -> Self {
        Gate {
            available: Mutex::new(limit.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { gate: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.gate.cv.notify_one();
    }
}
