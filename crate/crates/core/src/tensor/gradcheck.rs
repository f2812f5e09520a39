use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamGroup, Result, TensorError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Check at most this many randomly chosen coordinates per parameter tensor.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Smallest denominator of the relative error.
    pub floor: f64,
}

impl FdOptions {
    pub fn new(step: f64) -> Self {
        Self {
            step,
            max_coords_per_param: None,
            seed: 0,
            floor: 1e-8,
        }
    }

    pub fn sampled(step: f64, per_param: usize, seed: u64) -> Self {
        Self {
            step,
            max_coords_per_param: Some(per_param),
            seed,
            floor: 1e-8,
        }
    }
}

fn eval<T, F>(loss_fn: &F, params: &ParamGroup<T>) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamGroup<T>) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let root = loss_fn(&mut g, params)?;
    Ok(g.value(root).item())
}

/// Compares analytic gradients with central differences and returns the worst
/// relative error, `|a - n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check<T, F>(loss_fn: F, params: &ParamGroup<T>, opts: FdOptions) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamGroup<T>) -> Result<NodeId>,
{
    if opts.step <= 0.0 {
        return Err(TensorError::Invalid(format!(
            "finite-difference step must be positive, got {}",
            opts.step
        )));
    }
    let mut g = Graph::new();
    let root = loss_fn(&mut g, params)?;
    let analytic = g.backward(root)?.param_grads(params);
    let first = g.value(root).item();
    let second = eval(&loss_fn, params)?;
    if first.to_bits_f64() != second.to_bits_f64() {
        return Err(TensorError::NonDeterministic {
            first: first.f64(),
            second: second.f64(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = T::c(opts.step);
    let mut work = params.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).map(|t| t.len()).unwrap_or(0);
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let grad = analytic.get(&name).expect("complete gradient map");
        for i in coords {
            let orig = work.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let up = eval(&loss_fn, &work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let down = eval(&loss_fn, &work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down).f64() / (2.0 * opts.step);
            let a = grad.data()[i].f64();
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            log::debug!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

trait Bits {
    fn to_bits_f64(self) -> u64;
}

impl<T: Scalar> Bits for T {
    fn to_bits_f64(self) -> u64 {
        self.f64().to_bits()
    }
}
