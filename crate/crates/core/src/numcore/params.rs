use rand::Rng;

use super::{NumArray, NumError, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: NumArray,
    /// Running statistics are stored alongside learnable arrays but are
    /// never bound to a tape or touched by the optimizer.
    pub trainable: bool,
}

/// Named parameter arrays in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

/// Tape handles for the trainable entries of a [`ParamStore`].
pub struct Bindings {
    vars: Vec<Option<Var>>,
}

impl Bindings {
    /// Panics for non-trainable entries; those are read from the store.
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("parameter is not trainable")
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: NumArray, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &NumArray {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut NumArray {
        &mut self.entries[id.0].value
    }

    /// Mutable access to two distinct entries at once.
    pub fn get_pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut NumArray, &mut NumArray) {
        assert_ne!(a, b);
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].value, &mut hi[0].value)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].value, &mut lo[b.0].value)
        }
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Registers every trainable entry as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|e| e.trainable.then(|| tape.leaf(e.value.clone())))
            .collect();
        Bindings { vars }
    }

    /// Binds every trainable entry as a constant (no gradients tracked).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bindings {
        let vars = self
            .entries
            .iter()
            .map(|e| e.trainable.then(|| tape.constant(e.value.clone())))
            .collect();
        Bindings { vars }
    }

    /// Gradients for each entry after `tape.backward`; `None` for
    /// non-trainable entries.
    pub fn collect_grads(&self, tape: &mut Tape, bindings: &Bindings) -> Vec<Option<NumArray>> {
        bindings.vars.iter().map(|v| v.map(|v| tape.take_grad(v))).collect()
    }
}

/// Uniform initialization in `±sqrt(1/fan_in)`.
pub fn init_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> NumArray {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt() as f32;
    let mut out = NumArray::zeros(shape);
    for v in out.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
    out
}

/// `param ← param − lr · grad`
pub fn sgd_step(param: &mut NumArray, grad: &NumArray, lr: f32) -> Result<(), NumError> {
    if !param.same_shape(grad) {
        return Err(NumError::Shape {
            op: "sgd_step",
            detail: format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        });
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Stochastic gradient descent with optional heavy-ball momentum.
///
/// With `momentum == 0` each step is exactly [`sgd_step`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f32,
    pub momentum: f32,
    velocity: Vec<Option<NumArray>>,
}

impl Sgd {
    pub fn new(lr: f32, momentum: f32) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Updates every trainable entry of `store` that has a gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<NumArray>]) -> Result<(), NumError> {
        if grads.len() != store.len() {
            return Err(NumError::Shape {
                op: "sgd_step",
                detail: format!("{} gradients for {} parameters", grads.len(), store.len()),
            });
        }
        if self.velocity.len() != grads.len() {
            self.velocity = vec![None; grads.len()];
        }
        for ((entry, grad), vel) in store.entries.iter_mut().zip(grads).zip(&mut self.velocity) {
            let (true, Some(g)) = (entry.trainable, grad) else {
                continue;
            };
            if self.momentum == 0.0 {
                sgd_step(&mut entry.value, g, self.lr)?;
                continue;
            }
            let v = vel.get_or_insert_with(|| NumArray::zeros(g.shape()));
            if !v.same_shape(g) {
                return Err(NumError::Shape {
                    op: "sgd_step",
                    detail: format!("velocity {:?} vs grad {:?}", v.shape(), g.shape()),
                });
            }
            for (vv, &gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = self.momentum * *vv + gv;
            }
            sgd_step(&mut entry.value, v, self.lr)?;
        }
        Ok(())
    }
}
