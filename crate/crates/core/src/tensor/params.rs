use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a parameter registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Trainable (or frozen) tensor with a gradient slot of identical shape.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Owns every parameter of a model family. Registration order is
/// deterministic, and names are unique; checkpoints address parameters
/// by name.
#[derive(Default, Debug)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            self.find(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.dims());
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    /// Register with fan-in uniform init `U(-a, a)`, `a = sqrt(1/(in_ch*k))`.
    pub fn register_conv_weight(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = (1.0 / fan_in as f32).sqrt();
        let numel: usize = dims.iter().product();
        let data: Vec<f32> = (0..numel)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let value = Tensor::new(dims.to_vec(), data).expect("conv weight dims");
        self.register(name, value, true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub(crate) fn params_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.dims() != p.value.dims() {
            return Err(Error::Shape(format!(
                "parameter {}: cannot assign {:?} over {:?}",
                p.name,
                value.dims(),
                p.value.dims()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[f32]) {
        let g = self.params[id.0].grad.data_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    /// Ids registered while `f` ran; used to split optimizer ownership.
    pub fn scope<T>(&mut self, f: impl FnOnce(&mut Self) -> T) -> (T, Vec<ParamId>) {
        let start = self.params.len();
        let out = f(self);
        let ids = (start..self.params.len()).map(ParamId).collect();
        (out, ids)
    }

    /// Total number of scalar values across all parameters.
    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn grad_matches_value_shape() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::zeros(&[2, 3]), true);
        assert_eq!(store.grad(id).dims(), store.value(id).dims());
    }

    #[test]
    fn scope_reports_new_ids() {
        let mut store = ParamStore::new();
        store.register("a", Tensor::zeros(&[1]), true);
        let (_, ids) = store.scope(|s| {
            s.register("b", Tensor::zeros(&[1]), true);
            s.register("c", Tensor::zeros(&[1]), true);
        });
        assert_eq!(ids.len(), 2);
        assert_eq!(store.get(ids[0]).name, "b");
    }

    #[test]
    fn fan_in_init_bound() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let id = store.register_conv_weight("w", &[4, 2, 5], 2 * 5, &mut rng);
        let bound = (1.0f32 / 10.0).sqrt();
        assert!(store.value(id).data().iter().all(|v| v.abs() < bound));
    }
}
