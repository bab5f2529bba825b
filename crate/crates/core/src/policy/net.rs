use rand::Rng;

use super::actions::ActionMatrix;
use crate::error::{Error, Result};
use crate::features::{RlState, FEATURE_DIM};
use crate::Scalar;

pub const CONV_OUT: usize = 16;
pub const CONV_WIDTH: usize = 3;
pub const HIDDEN: usize = 32;

/// Weights of the selection network.
///
/// Feature branch: 1-D convolution over the rows of `S_a` (features as
/// channels, zero padding), tanh, mean-pool over rows, dense 16→32, tanh.
/// Mask branch: dense N_interp→32, tanh. Head: dense 64→2M, row softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<T> {
    pub n_interp: usize,
    pub m: usize,
    /// When false the mask branch sees zeros.
    pub use_mask: bool,
    /// `[out][in][tap]`
    pub conv_w: Vec<T>,
    pub conv_b: Vec<T>,
    /// `[out][in]`
    pub fc1_w: Vec<T>,
    pub fc1_b: Vec<T>,
    pub fc2_w: Vec<T>,
    pub fc2_b: Vec<T>,
    pub fc3_w: Vec<T>,
    pub fc3_b: Vec<T>,
}

pub const LAYER_NAMES: [&str; 8] = [
    "conv.weight",
    "conv.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
    "fc3.weight",
    "fc3.bias",
];

impl<T: Scalar> PolicyParams<T> {
    pub fn zeros(n_interp: usize, m: usize) -> Self {
        let shapes = Self::shapes_for(n_interp, m);
        let z = |k: usize| vec![T::zero(); shapes[k].iter().product()];
        Self {
            n_interp,
            m,
            use_mask: true,
            conv_w: z(0),
            conv_b: z(1),
            fc1_w: z(2),
            fc1_b: z(3),
            fc2_w: z(4),
            fc2_b: z(5),
            fc3_w: z(6),
            fc3_b: z(7),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init<R: Rng + ?Sized>(n_interp: usize, m: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(n_interp, m);
        let fill = |w: &mut Vec<T>, fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for x in w.iter_mut() {
                *x = T::of(rng.random_range(-bound..bound));
            }
        };
        fill(&mut p.conv_w, FEATURE_DIM * CONV_WIDTH, rng);
        fill(&mut p.fc1_w, CONV_OUT, rng);
        fill(&mut p.fc2_w, n_interp, rng);
        fill(&mut p.fc3_w, 2 * HIDDEN, rng);
        p
    }

    pub fn shapes_for(n_interp: usize, m: usize) -> [Vec<usize>; 8] {
        [
            vec![CONV_OUT, FEATURE_DIM, CONV_WIDTH],
            vec![CONV_OUT],
            vec![HIDDEN, CONV_OUT],
            vec![HIDDEN],
            vec![HIDDEN, n_interp],
            vec![HIDDEN],
            vec![2 * m, 2 * HIDDEN],
            vec![2 * m],
        ]
    }

    pub fn shapes(&self) -> [Vec<usize>; 8] {
        Self::shapes_for(self.n_interp, self.m)
    }

    pub fn tensors(&self) -> [&Vec<T>; 8] {
        [
            &self.conv_w,
            &self.conv_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.fc3_w,
            &self.fc3_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 8] {
        [
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.fc3_w,
            &mut self.fc3_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn load_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} weights, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_state(&self, state: &RlState<T>) -> Result<()> {
        if state.sb.len() != self.n_interp {
            return Err(Error::Config(format!(
                "mask length {} does not match network input {}",
                state.sb.len(),
                self.n_interp
            )));
        }
        let selected = state.selected_rows();
        if selected != self.m {
            return Err(Error::Config(format!(
                "state selects {selected} points, network expects M = {}",
                self.m
            )));
        }
        if state.sa.len() <= self.m {
            return Err(Error::Config("feature block has no segment rows".into()));
        }
        Ok(())
    }

    pub fn forward(&self, state: &RlState<T>) -> Result<ActionMatrix<T>> {
        Ok(self.forward_cached(state)?.actions)
    }

    pub(crate) fn forward_cached(&self, state: &RlState<T>) -> Result<ForwardCache<T>> {
        self.check_state(state)?;
        let rows = state.sa.len();
        let x = &state.sa;

        let mut conv = vec![T::zero(); CONV_OUT * rows];
        let taps = FEATURE_DIM * CONV_WIDTH;
        let mut win = vec![T::zero(); taps];
        for r in 0..rows {
            window_into(x, r, &mut win);
            for c in 0..CONV_OUT {
                let w = &self.conv_w[c * taps..(c + 1) * taps];
                let z = self.conv_b[c] + w.iter().zip(&win).map(|(a, b)| *a * *b).sum::<T>();
                conv[c * rows + r] = z.tanh();
            }
        }
        let inv_rows = T::one() / T::of_usize(rows);
        let pooled: Vec<T> = (0..CONV_OUT)
            .map(|c| conv[c * rows..(c + 1) * rows].iter().copied().sum::<T>() * inv_rows)
            .collect();

        let dense = |w: &[T], b: &[T], input: &[T]| -> Vec<T> {
            b.iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let row = &w[o * input.len()..(o + 1) * input.len()];
                    (bias + row.iter().zip(input).map(|(a, b)| *a * *b).sum::<T>()).tanh()
                })
                .collect()
        };
        let h1 = dense(&self.fc1_w, &self.fc1_b, &pooled);
        let mask: Vec<T> = if self.use_mask {
            state.sb.clone()
        } else {
            vec![T::zero(); self.n_interp]
        };
        let h2 = dense(&self.fc2_w, &self.fc2_b, &mask);
        let mut hidden = h1.clone();
        hidden.extend_from_slice(&h2);

        let probs: Vec<[T; 2]> = (0..self.m)
            .map(|i| {
                let logit = |o: usize| {
                    let row = &self.fc3_w[o * 2 * HIDDEN..(o + 1) * 2 * HIDDEN];
                    self.fc3_b[o] + row.iter().zip(&hidden).map(|(a, b)| *a * *b).sum::<T>()
                };
                let (l0, l1) = (logit(2 * i), logit(2 * i + 1));
                let top = l0.max(l1);
                let (e0, e1) = ((l0 - top).exp(), (l1 - top).exp());
                let s = e0 + e1;
                [e0 / s, e1 / s]
            })
            .collect();
        if probs.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Numerical { layer: "softmax" });
        }
        Ok(ForwardCache {
            conv,
            pooled,
            h1,
            h2,
            mask,
            actions: ActionMatrix { probs },
        })
    }
}

/// Zero-padded receptive field of row `r`, laid out like a conv filter
/// (`[in][tap]`).
fn window_into<T: Scalar>(x: &[[T; FEATURE_DIM]], r: usize, win: &mut [T]) {
    for k in 0..CONV_WIDTH {
        let src = r as isize + k as isize - 1;
        let row = (src >= 0 && (src as usize) < x.len()).then(|| &x[src as usize]);
        for f in 0..FEATURE_DIM {
            win[f * CONV_WIDTH + k] = row.map_or(T::zero(), |xr| xr[f]);
        }
    }
}

pub(crate) struct ForwardCache<T> {
    conv: Vec<T>,
    pooled: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    mask: Vec<T>,
    pub(crate) actions: ActionMatrix<T>,
}

/// One action iteration: the state it was taken in, the sampled actions and
/// the credit assigned to them.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep<T> {
    pub state: RlState<T>,
    pub actions: Vec<usize>,
    pub reward: T,
}

/// `-(1/B)(1/M) Σ_j Σ_i log π(a_i^j | S^j) r^j`.
pub fn policy_loss<T: Scalar>(params: &PolicyParams<T>, episode: &[EpisodeStep<T>]) -> Result<T> {
    if episode.is_empty() {
        return Err(Error::Precondition("empty episode".into()));
    }
    let scale = T::one() / (T::of_usize(episode.len()) * T::of_usize(params.m));
    let mut total = T::zero();
    for step in episode {
        let a = params.forward(&step.state)?;
        for (p, &act) in a.probs.iter().zip(&step.actions) {
            total -= p[act].ln() * step.reward;
        }
    }
    Ok(total * scale)
}

fn ensure_finite<T: Scalar>(layer: &'static str, xs: &[T]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { layer })
    }
}

/// Analytic gradient of [`policy_loss`], accumulated into `grad` (same shapes
/// as `params`).
pub fn backward_into<T: Scalar>(
    params: &PolicyParams<T>,
    episode: &[EpisodeStep<T>],
    grad: &mut PolicyParams<T>,
) -> Result<()> {
    if episode.is_empty() {
        return Err(Error::Precondition("empty episode".into()));
    }
    if grad.shapes() != params.shapes() {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    let scale = T::one() / (T::of_usize(episode.len()) * T::of_usize(params.m));
    let width = 2 * HIDDEN;
    for step in episode {
        if !step.reward.is_finite() {
            return Err(Error::Numerical { layer: "reward" });
        }
        if step.actions.len() != params.m {
            return Err(Error::Shape(format!(
                "{} actions for M = {}",
                step.actions.len(),
                params.m
            )));
        }
        let cache = params.forward_cached(&step.state)?;
        let mut hidden = cache.h1.clone();
        hidden.extend_from_slice(&cache.h2);

        // Softmax + log-likelihood.
        let mut dlogit = vec![T::zero(); 2 * params.m];
        for (i, (p, &act)) in cache.actions.probs.iter().zip(&step.actions).enumerate() {
            for c in 0..2 {
                let indicator = if c == act { T::one() } else { T::zero() };
                dlogit[2 * i + c] = -scale * step.reward * (indicator - p[c]);
            }
        }
        ensure_finite("fc3", &dlogit)?;

        let mut dhidden = vec![T::zero(); width];
        for (o, &g) in dlogit.iter().enumerate() {
            grad.fc3_b[o] += g;
            let w_row = &params.fc3_w[o * width..(o + 1) * width];
            let g_row = &mut grad.fc3_w[o * width..(o + 1) * width];
            for h in 0..width {
                g_row[h] += g * hidden[h];
                dhidden[h] += g * w_row[h];
            }
        }

        // Mask branch.
        for o in 0..HIDDEN {
            let dz = dhidden[HIDDEN + o] * (T::one() - cache.h2[o] * cache.h2[o]);
            grad.fc2_b[o] += dz;
            let g_row = &mut grad.fc2_w[o * params.n_interp..(o + 1) * params.n_interp];
            for (g, x) in g_row.iter_mut().zip(&cache.mask) {
                *g += dz * *x;
            }
        }
        ensure_finite("fc2", &grad.fc2_w)?;

        // Feature branch.
        let mut dpooled = vec![T::zero(); CONV_OUT];
        for o in 0..HIDDEN {
            let dz = dhidden[o] * (T::one() - cache.h1[o] * cache.h1[o]);
            grad.fc1_b[o] += dz;
            for i in 0..CONV_OUT {
                grad.fc1_w[o * CONV_OUT + i] += dz * cache.pooled[i];
                dpooled[i] += dz * params.fc1_w[o * CONV_OUT + i];
            }
        }
        ensure_finite("fc1", &dpooled)?;

        let rows = step.state.sa.len();
        let inv_rows = T::one() / T::of_usize(rows);
        let taps = FEATURE_DIM * CONV_WIDTH;
        let mut win = vec![T::zero(); taps];
        for r in 0..rows {
            window_into(&step.state.sa, r, &mut win);
            for c in 0..CONV_OUT {
                let h = cache.conv[c * rows + r];
                let dz = dpooled[c] * inv_rows * (T::one() - h * h);
                grad.conv_b[c] += dz;
                for (g, x) in grad.conv_w[c * taps..(c + 1) * taps].iter_mut().zip(&win) {
                    *g += dz * *x;
                }
            }
        }
        ensure_finite("conv", &grad.conv_w)?;
    }
    Ok(())
}

/// Gradient of [`policy_loss`] with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &PolicyParams<T>,
    episode: &[EpisodeStep<T>],
) -> Result<PolicyParams<T>> {
    let mut grad = PolicyParams::zeros(params.n_interp, params.m);
    grad.use_mask = params.use_mask;
    backward_into(params, episode, &mut grad)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{assemble_state, SelectionState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_state(n_interp: usize, selected: Vec<usize>) -> RlState<f64> {
        let interp: Vec<usize> = (0..n_interp).collect();
        let rows: Vec<[f64; 8]> = (0..n_interp)
            .map(|i| {
                let x = i as f64 / n_interp as f64;
                [x, x * x, -x, 0.3, 1.0 - x, 0.0, 0.0, 1.0]
            })
            .collect();
        let sel = SelectionState::from_indices(&interp, selected).unwrap();
        assemble_state(&rows, &sel).unwrap()
    }

    #[test]
    fn zero_network_is_uniform() {
        let p = PolicyParams::<f64>::zeros(6, 2);
        let a = p.forward(&toy_state(6, vec![1, 4])).unwrap();
        assert!(a.probs.iter().all(|r| r == &[0.5, 0.5]));
    }

    #[test]
    fn rows_sum_to_one_and_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::<f64>::init(6, 3, &mut rng);
        let s = toy_state(6, vec![0, 2, 5]);
        let a = p.forward(&s).unwrap();
        for r in &a.probs {
            assert!((r[0] + r[1] - 1.0).abs() <= 1e-9);
        }
        assert_eq!(a, p.forward(&s).unwrap());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let p = PolicyParams::<f64>::zeros(6, 2);
        assert!(matches!(p.forward(&toy_state(6, vec![1, 2, 3])), Err(Error::Config(_))));
        assert!(matches!(p.forward(&toy_state(5, vec![1, 2])), Err(Error::Config(_))));
    }

    #[test]
    fn zero_reward_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PolicyParams::<f64>::init(6, 2, &mut rng);
        let ep = vec![EpisodeStep { state: toy_state(6, vec![1, 4]), actions: vec![0, 1], reward: 0.0 }];
        assert!(backward(&p, &ep).unwrap().flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_linear_in_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PolicyParams::<f64>::init(6, 2, &mut rng);
        let step = |r| EpisodeStep { state: toy_state(6, vec![1, 4]), actions: vec![0, 1], reward: r };
        let g1 = backward(&p, &[step(1.5)]).unwrap().flatten();
        let g3 = backward(&p, &[step(4.5)]).unwrap().flatten();
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicyParams::<f32>::init(7, 3, &mut rng);
        let mut q = PolicyParams::<f32>::zeros(7, 3);
        q.load_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.load_flat(&[0.0; 3]).is_err());
    }
}
