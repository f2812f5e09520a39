use indexmap::IndexMap;
use rand::Rng;

use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// A learnable tensor and its Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub value: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self { value, m, v }
    }
}

/// Named parameters plus optimizer state. `clone()` is the snapshot operation.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamGroup<T> {
    entries: IndexMap<String, ParamEntry<T>>,
    step: u64,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(name.into(), ParamEntry::new(value));
    }

    /// Glorot-uniform weight `fan_in x fan_out` plus zero bias `1 x fan_out`,
    /// registered as `{name}.w` / `{name}.b`.
    pub fn insert_dense(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| T::c(rng.gen_range(-limit..limit)))
            .collect();
        self.insert(
            format!("{name}.w"),
            Tensor::matrix(fan_in, fan_out, w).expect("positive dims"),
        );
        self.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Polyak averaging: `self = (1 - eta) * self + eta * online`.
    pub fn soft_update_from(&mut self, online: &ParamGroup<T>, eta: T) -> Result<()> {
        for (name, entry) in self.entries.iter_mut() {
            let src = online
                .get(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            if src.shape() != entry.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "soft_update",
                    left: entry.value.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            for (o, &s) in entry.value.data_mut().iter_mut().zip(src.data()) {
                // Written as an increment so equal inputs are a bitwise fixed point.
                *o = if eta == T::one() { s } else { *o + eta * (s - *o) };
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamGroup<U> {
        ParamGroup {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: e.value.cast(),
                            m: e.m.cast(),
                            v: e.v.cast(),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}

/// Gradient map keyed like a [`ParamGroup`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Gradients<T> {
    map: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Self {
            map: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, g: Tensor<T>) {
        self.map.insert(name, g);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn global_norm(&self) -> T {
        self.map.values().map(|g| g.sum_squares()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.map.values_mut() {
            g.scale_assign(s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|g| g.all_finite())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the applied scale (1 when no clipping happened).
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: T) -> T {
    let norm = grads.global_norm();
    if norm <= max_norm {
        return T::one();
    }
    let scale = max_norm / norm;
    grads.scale(scale);
    scale
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter of the group.
pub fn adam_step<T: Scalar>(
    params: &mut ParamGroup<T>,
    grads: &Gradients<T>,
    lr: T,
    cfg: AdamConfig,
) -> Result<()> {
    for name in params.entries.keys() {
        let g = grads
            .get(name)
            .ok_or_else(|| TensorError::MissingGradient(name.clone()))?;
        let value = &params.entries[name].value;
        if g.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                left: value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let (b1, b2, eps) = (T::c(cfg.beta1), T::c(cfg.beta2), T::c(cfg.eps));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for (name, entry) in params.entries.iter_mut() {
        let g = &grads.map[name];
        let ParamEntry { value, m, v } = entry;
        for (((p, mi), vi), &gi) in value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: f64) -> ParamGroup<f64> {
        let mut p = ParamGroup::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    fn grads(pairs: &[(&str, &[f64])]) -> Gradients<f64> {
        let mut g = Gradients::new();
        for (n, v) in pairs {
            g.insert(n.to_string(), Tensor::row_vector(v));
        }
        g
    }

    #[test]
    fn clip_under_threshold_is_identity() {
        let mut g = grads(&[("a", &[0.03, 0.04])]);
        let before = g.clone();
        assert_eq!(clip_global_norm(&mut g, 0.076), 1.0);
        assert_eq!(g, before);
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = grads(&[("a", &[3.0, 4.0])]);
        let s = clip_global_norm(&mut g, 0.076);
        assert!((s - 0.0152).abs() < 1e-15);
        assert!((g.global_norm() - 0.076).abs() < 1e-15);
    }

    #[test]
    fn clip_zero_gradients() {
        let mut g = grads(&[("a", &[0.0, 0.0])]);
        assert_eq!(clip_global_norm(&mut g, 0.076), 1.0);
        assert_eq!(g.get("a").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = single("x", 0.7);
        let g = grads(&[("x", &[0.0])]);
        adam_step(&mut p, &g, 0.01, AdamConfig::default()).unwrap();
        let e = p.entry("x").unwrap();
        assert_eq!(e.value.item(), 0.7);
        assert_eq!(e.m.item(), 0.0);
        assert_eq!(e.v.item(), 0.0);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = single("x", 0.0);
        let g = grads(&[("x", &[1.0])]);
        adam_step(&mut p, &g, 0.001, AdamConfig::default()).unwrap();
        // m_hat = 1, v_hat = 1 -> update = lr / (1 + 1e-8)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.get("x").unwrap().item() - expected).abs() < 1e-18);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = single("x", 0.3);
        let mut b = a.clone();
        let g = grads(&[("x", &[0.25])]);
        adam_step(&mut a, &g, 0.01, AdamConfig::default()).unwrap();
        adam_step(&mut b, &g, 0.01, AdamConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_missing_key_errors() {
        let mut p = single("x", 0.0);
        let g = grads(&[("y", &[1.0])]);
        assert!(matches!(
            adam_step(&mut p, &g, 0.1, AdamConfig::default()),
            Err(TensorError::MissingGradient(_))
        ));
        assert_eq!(p.step(), 0);
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut p = single("x", 1.0);
        let snap = p.clone();
        *p.get_mut("x").unwrap() = Tensor::scalar(2.0);
        assert_eq!(snap.get("x").unwrap().item(), 1.0);
    }

    #[test]
    fn soft_update_cases() {
        let online = single("x", 1.0);
        let mut target = single("x", 0.0);
        target.soft_update_from(&online, 0.00067).unwrap();
        assert!((target.get("x").unwrap().item() - 0.00067).abs() < 1e-18);
        let mut target = single("x", 0.25);
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target.get("x").unwrap().item(), 1.0);
        let mut same = online.clone();
        same.soft_update_from(&online, 0.3).unwrap();
        assert_eq!(same, online);
    }
}
