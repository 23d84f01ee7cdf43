//! In-process AllReduce: every worker contributes a dense gradient buffer
//! and every worker receives the elementwise mean.
//!
//! The mean is a fixed-shape pairwise sum over worker slots, taken in slot
//! order regardless of arrival order, so all replicas see bit-identical
//! results run to run.

use std::sync::{Arc, Condvar, Mutex};

use crate::error::{Error, Result};

fn tree_sum(parts: &[&[f64]], out: &mut [f64]) {
    match parts {
        [] => out.fill(0.0),
        [only] => out.copy_from_slice(only),
        _ => {
            let (left, right) = parts.split_at(parts.len() / 2);
            let mut tmp = vec![0.0; out.len()];
            tree_sum(left, out);
            tree_sum(right, &mut tmp);
            for (o, t) in out.iter_mut().zip(&tmp) {
                *o += t;
            }
        }
    }
}

/// Elementwise mean of equally shaped buffers.
pub fn allreduce_mean(contributions: &[&[f64]]) -> Result<Vec<f64>> {
    let Some(first) = contributions.first() else {
        return Err(Error::Sync("allreduce with no contributions".into()));
    };
    if let Some(bad) = contributions.iter().position(|c| c.len() != first.len()) {
        return Err(Error::Sync(format!(
            "contribution {bad} has {} values, expected {}",
            contributions[bad].len(),
            first.len()
        )));
    }
    let mut out = vec![0.0; first.len()];
    tree_sum(contributions, &mut out);
    let p = contributions.len() as f64;
    for x in &mut out {
        *x /= p;
    }
    Ok(out)
}

struct State {
    generation: u64,
    slots: Vec<Option<(u64, Vec<f64>)>>,
    arrived: usize,
    result: Option<Arc<Vec<f64>>>,
    aborted: Option<String>,
}

/// Reusable reduce-then-broadcast barrier for a fixed set of workers.
pub struct ReduceBarrier {
    parties: usize,
    state: Mutex<State>,
    cv: Condvar,
}

impl ReduceBarrier {
    pub fn new(parties: usize) -> Self {
        ReduceBarrier {
            parties,
            state: Mutex::new(State {
                generation: 0,
                slots: vec![None; parties],
                arrived: 0,
                result: None,
                aborted: None,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    /// Blocks until all workers have contributed for this round, then
    /// returns the mean. `round` must agree across workers.
    pub fn reduce(&self, worker: usize, round: u64, payload: Vec<f64>) -> Result<Arc<Vec<f64>>> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(msg) = &st.aborted {
            return Err(Error::Sync(msg.clone()));
        }
        if st.slots[worker].is_some() {
            let msg = format!("worker {worker} contributed twice to one reduction");
            st.aborted = Some(msg.clone());
            self.cv.notify_all();
            return Err(Error::Sync(msg));
        }
        let generation = st.generation;
        st.slots[worker] = Some((round, payload));
        st.arrived += 1;
        if st.arrived == self.parties {
            let slots: Vec<(u64, Vec<f64>)> = st.slots.iter_mut().map(|s| s.take().unwrap()).collect();
            st.arrived = 0;
            let outcome = if let Some((w, (r, _))) =
                slots.iter().enumerate().find(|(_, (r, _))| *r != slots[0].0)
            {
                Err(Error::Sync(format!(
                    "reduction round mismatch: worker 0 at round {}, worker {w} at round {r}",
                    slots[0].0
                )))
            } else {
                let refs: Vec<&[f64]> = slots.iter().map(|(_, v)| v.as_slice()).collect();
                allreduce_mean(&refs)
            };
            match outcome {
                Ok(mean) => {
                    let mean = Arc::new(mean);
                    st.result = Some(mean.clone());
                    st.generation += 1;
                    self.cv.notify_all();
                    Ok(mean)
                }
                Err(e) => {
                    st.aborted = Some(e.to_string());
                    self.cv.notify_all();
                    Err(e)
                }
            }
        } else {
            while st.generation == generation && st.aborted.is_none() {
                st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
            }
            if st.generation == generation {
                return Err(Error::Sync(st.aborted.clone().unwrap_or_default()));
            }
            Ok(st.result.clone().expect("completed round has a result"))
        }
    }

    /// Releases all waiting workers with an error.
    pub fn abort(&self, reason: impl Into<String>) {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        if st.aborted.is_none() {
            st.aborted = Some(reason.into());
        }
        self.cv.notify_all();
    }
}
