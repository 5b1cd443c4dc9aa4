//! Prioritized replay: ring storage plus a sum tree over `priority^alpha`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// One environment transition. `terminal` marks success or collision; an
/// episode cut by the step limit is stored with `terminal = false` so that
/// its value is bootstrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub proprio: Vec<f64>,
    pub window: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_proprio: Vec<f64>,
    pub next_window: Vec<f64>,
    pub terminal: bool,
}

/// Row widths of the stored vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionShape {
    pub proprio: usize,
    pub window: usize,
    pub action: usize,
}

/// Binary tree whose internal nodes hold the sum of their children.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass` (`0 <= mass < total`).
    /// Zero-weight leaves are never returned.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }

    /// Every internal node equals the sum of its children.
    pub fn is_consistent(&self) -> bool {
        (1..self.leaves).all(|k| self.nodes[k] == self.nodes[2 * k] + self.nodes[2 * k + 1])
    }
}

/// A sampled minibatch in storage precision, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    /// Importance weights `(N P(i))^-beta`, divided by their batch maximum.
    pub weights: Vec<f64>,
    pub proprio: Vec<f32>,
    pub window: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: Vec<f32>,
    pub next_proprio: Vec<f32>,
    pub next_window: Vec<f32>,
    pub terminal: Vec<bool>,
}

/// Fixed-capacity ring of transitions with proportional prioritization.
/// Observations are stored in 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    shape: TransitionShape,
    capacity: usize,
    alpha: f64,
    next: usize,
    len: usize,
    max_priority: f64,
    tree: SumTree,
    proprio: Vec<f32>,
    window: Vec<f32>,
    action: Vec<f32>,
    reward: Vec<f32>,
    next_proprio: Vec<f32>,
    next_window: Vec<f32>,
    terminal: Vec<bool>,
}

fn check_priority(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidTransition(format!(
            "priority must be positive and finite, got {p}"
        )))
    }
}

impl ReplayBuffer {
    pub fn new(shape: TransitionShape, capacity: usize, alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(crate::error::invalid("replay capacity must be positive"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(crate::error::invalid(format!(
                "priority exponent must be >= 0, got {alpha}"
            )));
        }
        Ok(Self {
            shape,
            capacity,
            alpha,
            next: 0,
            len: 0,
            max_priority: 1.0,
            tree: SumTree::new(capacity),
            proprio: Vec::new(),
            window: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_proprio: Vec::new(),
            next_window: Vec::new(),
            terminal: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn shape(&self) -> TransitionShape {
        self.shape
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn max_priority(&self) -> f64 {
        self.max_priority
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    /// Slot that the next insert overwrites.
    pub fn cursor(&self) -> usize {
        self.next
    }

    /// Sampling weight `p^alpha` of a slot.
    pub fn weight(&self, i: usize) -> f64 {
        self.tree.get(i)
    }

    fn validate(&self, t: &Transition) -> Result<()> {
        let s = &self.shape;
        let checks = [
            ("proprio", t.proprio.len(), s.proprio),
            ("window", t.window.len(), s.window),
            ("action", t.action.len(), s.action),
            ("next proprio", t.next_proprio.len(), s.proprio),
            ("next window", t.next_window.len(), s.window),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::InvalidTransition(format!(
                    "{name} has {got} values, expected {want}"
                )));
            }
        }
        if !t.reward.is_finite() {
            return Err(Error::InvalidTransition(format!("reward {}", t.reward)));
        }
        let all = t
            .proprio
            .iter()
            .chain(&t.window)
            .chain(&t.action)
            .chain(&t.next_proprio)
            .chain(&t.next_window);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransition(
                "non-finite observation or action".into(),
            ));
        }
        Ok(())
    }

    /// Insert with the largest priority seen so far.
    pub fn push(&mut self, t: &Transition) -> Result<usize> {
        self.insert(t, self.max_priority)
    }

    /// Insert with an explicit priority, evicting the oldest entry when full.
    /// Returns the slot written.
    pub fn insert(&mut self, t: &Transition, priority: f64) -> Result<usize> {
        check_priority(priority)?;
        self.validate(t)?;
        let slot = self.next;
        let s = self.shape;
        write_row(&mut self.proprio, slot, s.proprio, &t.proprio);
        write_row(&mut self.window, slot, s.window, &t.window);
        write_row(&mut self.action, slot, s.action, &t.action);
        write_row(&mut self.reward, slot, 1, &[t.reward]);
        write_row(&mut self.next_proprio, slot, s.proprio, &t.next_proprio);
        write_row(&mut self.next_window, slot, s.window, &t.next_window);
        if slot == self.terminal.len() {
            self.terminal.push(t.terminal);
        } else {
            self.terminal[slot] = t.terminal;
        }
        self.tree.set(slot, Float::powf(priority, self.alpha));
        self.max_priority = self.max_priority.max(priority);
        self.next = (slot + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(slot)
    }

    /// Stored transition at `slot`, widened back to 64-bit.
    pub fn get(&self, slot: usize) -> Option<Transition> {
        if slot >= self.len {
            return None;
        }
        let s = self.shape;
        let row = |v: &[f32], w: usize| {
            v[slot * w..(slot + 1) * w]
                .iter()
                .map(|&x| x as f64)
                .collect::<Vec<_>>()
        };
        Some(Transition {
            proprio: row(&self.proprio, s.proprio),
            window: row(&self.window, s.window),
            action: row(&self.action, s.action),
            reward: self.reward[slot] as f64,
            next_proprio: row(&self.next_proprio, s.proprio),
            next_window: row(&self.next_window, s.window),
            terminal: self.terminal[slot],
        })
    }

    /// Index drawn with probability `p_i^alpha / sum_j p_j^alpha`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.tree.total();
        let u: f64 = rng.random::<f64>() * total;
        self.tree.find(u.min(total)).min(self.len - 1)
    }

    /// Draw `n` transitions independently by priority.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampledBatch> {
        if n == 0 || self.len < n {
            return Err(Error::NotReady {
                have: self.len,
                need: n.max(1),
            });
        }
        let s = self.shape;
        let total = self.tree.total();
        let mut b = SampledBatch {
            indices: Vec::with_capacity(n),
            weights: Vec::with_capacity(n),
            proprio: Vec::with_capacity(n * s.proprio),
            window: Vec::with_capacity(n * s.window),
            action: Vec::with_capacity(n * s.action),
            reward: Vec::with_capacity(n),
            next_proprio: Vec::with_capacity(n * s.proprio),
            next_window: Vec::with_capacity(n * s.window),
            terminal: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let i = self.sample_index(rng);
            b.indices.push(i);
            let p = self.tree.get(i) / total;
            b.weights.push(Float::powf(self.len as f64 * p, -beta));
            b.proprio
                .extend_from_slice(&self.proprio[i * s.proprio..(i + 1) * s.proprio]);
            b.window
                .extend_from_slice(&self.window[i * s.window..(i + 1) * s.window]);
            b.action
                .extend_from_slice(&self.action[i * s.action..(i + 1) * s.action]);
            b.reward.push(self.reward[i]);
            b.next_proprio
                .extend_from_slice(&self.next_proprio[i * s.proprio..(i + 1) * s.proprio]);
            b.next_window
                .extend_from_slice(&self.next_window[i * s.window..(i + 1) * s.window]);
            b.terminal.push(self.terminal[i]);
        }
        let max = b.weights.iter().cloned().fold(0.0, f64::max);
        b.weights.iter_mut().for_each(|w| *w /= max);
        Ok(b)
    }

    /// Replace the priorities of previously sampled slots.
    pub fn update_priorities(&mut self, indices: &[usize], priorities: &[f64]) -> Result<()> {
        if indices.len() != priorities.len() {
            return Err(crate::error::shape_err(indices.len(), priorities.len()));
        }
        for (&i, &p) in indices.iter().zip(priorities) {
            check_priority(p)?;
            if i >= self.len {
                return Err(crate::error::invalid(format!("slot {i} is empty")));
            }
        }
        for (&i, &p) in indices.iter().zip(priorities) {
            self.tree.set(i, Float::powf(p, self.alpha));
            self.max_priority = self.max_priority.max(p);
        }
        Ok(())
    }

    /// Raw storage for persistence: `(cursor, max priority, sampling
    /// weights, transitions in slot order)`.
    pub fn export(&self) -> ReplayParts {
        ReplayParts {
            cursor: self.next,
            max_priority: self.max_priority,
            weights: (0..self.len).map(|i| self.tree.get(i)).collect(),
            proprio: self.proprio.clone(),
            window: self.window.clone(),
            action: self.action.clone(),
            reward: self.reward.clone(),
            next_proprio: self.next_proprio.clone(),
            next_window: self.next_window.clone(),
            terminal: self.terminal.clone(),
        }
    }

    /// Rebuild from [`ReplayBuffer::export`] output.
    pub fn restore(
        shape: TransitionShape,
        capacity: usize,
        alpha: f64,
        parts: ReplayParts,
    ) -> Result<Self> {
        let mut b = Self::new(shape, capacity, alpha)?;
        let n = parts.weights.len();
        let ok = n <= capacity
            && parts.cursor < capacity
            && (n == capacity || parts.cursor == n)
            && parts.proprio.len() == n * shape.proprio
            && parts.next_proprio.len() == n * shape.proprio
            && parts.window.len() == n * shape.window
            && parts.next_window.len() == n * shape.window
            && parts.action.len() == n * shape.action
            && parts.reward.len() == n
            && parts.terminal.len() == n;
        if !ok {
            return Err(Error::InvalidTransition(
                "replay contents do not match the buffer shape".into(),
            ));
        }
        for (i, &w) in parts.weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidTransition(format!("slot {i} has weight {w}")));
            }
            b.tree.set(i, w);
        }
        b.len = n;
        b.next = parts.cursor;
        b.max_priority = parts.max_priority;
        b.proprio = parts.proprio;
        b.window = parts.window;
        b.action = parts.action;
        b.reward = parts.reward;
        b.next_proprio = parts.next_proprio;
        b.next_window = parts.next_window;
        b.terminal = parts.terminal;
        Ok(b)
    }
}

/// Flat contents of a [`ReplayBuffer`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayParts {
    pub cursor: usize,
    pub max_priority: f64,
    pub weights: Vec<f64>,
    pub proprio: Vec<f32>,
    pub window: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: Vec<f32>,
    pub next_proprio: Vec<f32>,
    pub next_window: Vec<f32>,
    pub terminal: Vec<bool>,
}

fn write_row(store: &mut Vec<f32>, slot: usize, width: usize, values: &[f64]) {
    let start = slot * width;
    if start == store.len() {
        store.extend(values.iter().map(|&v| v as f32));
    } else {
        for (d, &v) in store[start..start + width].iter_mut().zip(values) {
            *d = v as f32;
        }
    }
}
