use rand::{Rng, RngCore};

use super::params::{ModelParams, J_B, J_W, L_B, L_WH, L_WX, O_B, O_W, Q_B, Q_W};
use super::train::{FeatureStore, Instance};
use super::Real;
use crate::encode::SparseVector;
use crate::error::{Error, Result};

pub const LOSS_EPSILON: f64 = 1e-7;

/// Binary cross-entropy with the probability clamped to `[ε, 1 − ε]`.
pub fn bce_loss(prob: f64, label: f64) -> f64 {
    let p = prob.clamp(LOSS_EPSILON, 1.0 - LOSS_EPSILON);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut total = acc.iter().copied().sum::<T>();
    for (&x, &y) in ra.iter().zip(rb) {
        total += x * y;
    }
    total
}

struct StepTrace<T> {
    x: Vec<T>,
    /// Activated gates: input, forget, candidate, output.
    gates: Vec<T>,
    tanh_c: Vec<T>,
    /// d(projected justification) / d(pre-activation): ReLU slope times
    /// the dropout scale.
    j_factor: Vec<T>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
pub struct Trace<T> {
    q_factor: Vec<T>,
    steps: Vec<StepTrace<T>>,
    hs: Vec<Vec<T>>,
    cs: Vec<Vec<T>>,
    pub logit: T,
    pub prob: T,
}

/// ReLU(W x + b) followed by inverted dropout; returns the activation and
/// its derivative with respect to the pre-activation.
fn project<T: Real>(
    weight: &[T],
    bias: &[T],
    x: &SparseVector,
    dropout: &mut Option<(&mut dyn RngCore, f64)>,
) -> (Vec<T>, Vec<T>) {
    let p = bias.len();
    let mut out = bias.to_vec();
    for &(k, v) in &x.entries {
        let k = k as usize;
        axpy(&mut out, T::of32(v), &weight[k * p..(k + 1) * p]);
    }
    let mut factor = vec![T::one(); p];
    if let Some((rng, rate)) = dropout.as_mut() {
        if *rate > 0.0 {
            let keep = T::of(1.0 / (1.0 - *rate));
            for f in factor.iter_mut() {
                *f = if rng.random::<f64>() < *rate { T::zero() } else { keep };
            }
        }
    }
    for (o, f) in out.iter_mut().zip(factor.iter_mut()) {
        if *o > T::zero() {
            *o *= *f;
        } else {
            *o = T::zero();
            *f = T::zero();
        }
    }
    (out, factor)
}

fn vector<'a>(store: &'a FeatureStore, index: Option<usize>, dim: usize) -> Result<&'a SparseVector> {
    let v = index
        .map(|i| store.get(i))
        .ok_or_else(|| Error::InvalidConfig("instance lacks a required text vector".into()))?;
    if v.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.dim,
        });
    }
    Ok(v)
}

/// Runs the network over one instance. Passing a random source and a rate
/// turns on dropout (training mode); `None` evaluates deterministically.
pub fn forward<T: Real>(
    params: &ModelParams<T>,
    store: &FeatureStore,
    instance: &Instance,
    mut dropout: Option<(&mut dyn RngCore, f64)>,
) -> Result<Trace<T>> {
    if instance.steps.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let shape = params.shape;
    let (h, i_dim) = (shape.hidden, shape.step_dim());
    let t = &params.tensors;

    let (q, q_factor) = match shape.question_offset() {
        Some(_) => {
            let v = vector(store, instance.question, shape.input_dim)?;
            project(&t[Q_W], &t[Q_B], v, &mut dropout)
        }
        None => (Vec::new(), Vec::new()),
    };

    let mut hs = vec![vec![T::zero(); h]];
    let mut cs = vec![vec![T::zero(); h]];
    let mut steps = Vec::with_capacity(instance.steps.len());
    for step in &instance.steps {
        let mut x = Vec::with_capacity(i_dim);
        x.push(if step.current { T::one() } else { T::zero() });
        x.push(T::of32(step.prediction));
        let mut j_factor = Vec::new();
        if shape.justification_offset().is_some() {
            let v = vector(store, step.justification, shape.input_dim)?;
            let (j, factor) = project(&t[J_W], &t[J_B], v, &mut dropout);
            x.extend_from_slice(&j);
            j_factor = factor;
        }
        x.extend_from_slice(&q);

        let h_prev = hs.last().expect("initial state");
        let c_prev = cs.last().expect("initial state");
        let mut z = t[L_B].clone();
        for (k, &xk) in x.iter().enumerate() {
            if xk != T::zero() {
                axpy(&mut z, xk, &t[L_WX][k * 4 * h..(k + 1) * 4 * h]);
            }
        }
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != T::zero() {
                axpy(&mut z, hk, &t[L_WH][k * 4 * h..(k + 1) * 4 * h]);
            }
        }
        for (k, g) in z.iter_mut().enumerate() {
            *g = if (2 * h..3 * h).contains(&k) {
                g.tanh()
            } else {
                sigmoid(*g)
            };
        }
        let mut c = vec![T::zero(); h];
        let mut tanh_c = vec![T::zero(); h];
        let mut h_new = vec![T::zero(); h];
        for k in 0..h {
            c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
            tanh_c[k] = c[k].tanh();
            h_new[k] = z[3 * h + k] * tanh_c[k];
        }
        hs.push(h_new);
        cs.push(c);
        steps.push(StepTrace {
            x,
            gates: z,
            tanh_c,
            j_factor,
        });
    }

    let h_last = hs.last().expect("at least one step");
    let logit = t[O_B][0] + dot(&t[O_W], h_last);
    Ok(Trace {
        q_factor,
        steps,
        hs,
        cs,
        logit,
        prob: sigmoid(logit),
    })
}

/// Probability of `yes` with dropout off.
pub fn predict<T: Real>(params: &ModelParams<T>, store: &FeatureStore, instance: &Instance) -> Result<f64> {
    Ok(forward(params, store, instance, None)?.prob.as_f64())
}

/// Adds `weight · ∂loss/∂params` for one instance into `grads`, given the
/// trace of its forward pass (dropout masks are taken from the trace).
///
/// The output gradient is `σ(logit) − label`, the derivative of the
/// unclamped cross-entropy; it matches the clamped loss wherever the clamp
/// is inactive.
pub fn backward<T: Real>(
    params: &ModelParams<T>,
    store: &FeatureStore,
    instance: &Instance,
    trace: &Trace<T>,
    weight: T,
    grads: &mut ModelParams<T>,
) {
    let shape = params.shape;
    let h = shape.hidden;
    let p = shape.proj_dim;
    let t = &params.tensors;
    let [g_qw, g_qb, g_jw, g_jb, g_wx, g_wh, g_b, g_ow, g_ob] = &mut grads.tensors;

    let dlogit = (trace.prob - T::of32(instance.label)) * weight;
    let h_last = trace.hs.last().expect("at least one step");
    axpy(g_ow, dlogit, h_last);
    g_ob[0] += dlogit;

    let mut dh: Vec<T> = t[O_W].iter().map(|&w| w * dlogit).collect();
    let mut dc = vec![T::zero(); h];
    let mut dz = vec![T::zero(); 4 * h];
    let mut dq = vec![T::zero(); if shape.ablation.use_question { p } else { 0 }];
    let j_off = shape.justification_offset();
    let q_off = shape.question_offset();
    let needs_dx = j_off.is_some() || q_off.is_some();

    for (n, step) in trace.steps.iter().enumerate().rev() {
        let g = &step.gates;
        let c_prev = &trace.cs[n];
        let h_prev = &trace.hs[n];
        for k in 0..h {
            let (ig, fg, cg, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
            let tc = step.tanh_c[k];
            let d_o = dh[k] * tc;
            let dck = dc[k] + dh[k] * og * (T::one() - tc * tc);
            dz[k] = dck * cg * ig * (T::one() - ig);
            dz[h + k] = dck * c_prev[k] * fg * (T::one() - fg);
            dz[2 * h + k] = dck * ig * (T::one() - cg * cg);
            dz[3 * h + k] = d_o * og * (T::one() - og);
            dc[k] = dck * fg;
        }
        axpy(g_b, T::one(), &dz);
        for (k, &xk) in step.x.iter().enumerate() {
            if xk != T::zero() {
                axpy(&mut g_wx[k * 4 * h..(k + 1) * 4 * h], xk, &dz);
            }
        }
        for (k, &hk) in h_prev.iter().enumerate() {
            if hk != T::zero() {
                axpy(&mut g_wh[k * 4 * h..(k + 1) * 4 * h], hk, &dz);
            }
        }
        if n > 0 {
            for (k, d) in dh.iter_mut().enumerate() {
                *d = dot(&t[L_WH][k * 4 * h..(k + 1) * 4 * h], &dz);
            }
        }
        if !needs_dx {
            continue;
        }
        let row = |k: usize| &t[L_WX][k * 4 * h..(k + 1) * 4 * h];
        if let Some(off) = j_off {
            let v = store.get(instance.steps[n].justification.expect("checked in forward"));
            let dpre: Vec<T> = (0..p)
                .map(|m| {
                    let f = step.j_factor[m];
                    if f == T::zero() {
                        T::zero()
                    } else {
                        dot(row(off + m), &dz) * f
                    }
                })
                .collect();
            axpy(g_jb, T::one(), &dpre);
            for &(k, val) in &v.entries {
                let k = k as usize;
                axpy(&mut g_jw[k * p..(k + 1) * p], T::of32(val), &dpre);
            }
        }
        if let Some(off) = q_off {
            for (m, d) in dq.iter_mut().enumerate() {
                if trace.q_factor[m] != T::zero() {
                    *d += dot(row(off + m), &dz);
                }
            }
        }
    }

    if q_off.is_some() {
        let v = store.get(instance.question.expect("checked in forward"));
        let dpre: Vec<T> = dq.iter().zip(&trace.q_factor).map(|(&d, &f)| d * f).collect();
        axpy(g_qb, T::one(), &dpre);
        for &(k, val) in &v.entries {
            let k = k as usize;
            axpy(&mut g_qw[k * p..(k + 1) * p], T::of32(val), &dpre);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::ModelShape;
    use crate::neural::{Ablation, Step};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_store(dim: usize, n: usize, rng: &mut ChaCha8Rng) -> FeatureStore {
        let mut store = FeatureStore::new(dim);
        for _ in 0..n {
            let dense: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            store.push(SparseVector::from_dense(&dense));
        }
        store
    }

    fn instance(preds: &[f32], label: f32) -> Instance {
        Instance {
            question_id: "q".into(),
            day: 0,
            question: Some(0),
            steps: preds
                .iter()
                .enumerate()
                .map(|(i, &p)| Step {
                    current: i % 2 == 0,
                    prediction: p,
                    justification: Some(1 + i),
                })
                .collect(),
            label,
        }
    }

    #[test]
    fn loss_values() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce_loss(1.0 - LOSS_EPSILON, 1.0) - 1e-7).abs() < 1e-12);
        assert!((bce_loss(0.9, 0.0) - 2.302585092994046).abs() < 1e-9);
        assert!(bce_loss(0.0, 1.0).is_finite());
    }

    #[test]
    fn zero_parameters_output_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let store = toy_store(8, 4, &mut rng);
        let params = ModelParams::<f64>::zeros(ModelShape {
            input_dim: 8,
            proj_dim: 3,
            hidden: 4,
            ablation: Ablation::FULL,
        });
        assert_eq!(predict(&params, &store, &instance(&[0.9, 0.1, 0.7], 1.0)).unwrap(), 0.5);
    }

    #[test]
    fn output_is_a_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let store = toy_store(8, 4, &mut rng);
        let params = ModelParams::<f32>::init(
            ModelShape {
                input_dim: 8,
                proj_dim: 6,
                hidden: 5,
                ablation: Ablation::FULL,
            },
            &mut rng,
        );
        let p = predict(&params, &store, &instance(&[0.2, 0.8, 0.4], 1.0)).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    /// Hidden size 2, no text, one forecast: the gate equations evaluated
    /// by hand.
    #[test]
    fn matches_hand_computed_pass() {
        let shape = ModelShape {
            input_dim: 1,
            proj_dim: 1,
            hidden: 2,
            ablation: Ablation::PREDICTION,
        };
        let mut params = ModelParams::<f64>::zeros(shape);
        // Rows: flag, prediction; columns: i0 i1 f0 f1 g0 g1 o0 o1.
        params.tensors[L_WX] = vec![
            0.1, -0.2, 0.3, 0.0, 0.5, -0.5, 0.2, 0.1, //
            0.4, 0.6, -0.1, 0.2, 1.0, 0.7, -0.3, 0.9,
        ];
        params.tensors[L_B] = vec![0.0, 0.1, 1.0, 1.0, 0.0, -0.2, 0.05, 0.0];
        params.tensors[O_W] = vec![1.5, -2.0];
        params.tensors[O_B] = vec![0.25];

        let store = FeatureStore::new(1);
        let inst = Instance {
            question_id: "q".into(),
            day: 0,
            question: None,
            steps: vec![Step {
                current: true,
                prediction: 0.8,
                justification: None,
            }],
            label: 1.0,
        };
        let got = predict(&params, &store, &inst).unwrap();
        // Evaluated independently in double precision with the prediction
        // widened from f32, as the network sees it.
        assert!((got - 0.673_601_406_353).abs() < 1e-9, "{got}");
    }

    #[test]
    fn order_matters_for_the_recurrent_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let store = toy_store(8, 4, &mut rng);
        let params = ModelParams::<f64>::init(
            ModelShape {
                input_dim: 8,
                proj_dim: 3,
                hidden: 4,
                ablation: Ablation::PREDICTION,
            },
            &mut rng,
        );
        let a = predict(&params, &store, &instance(&[0.1, 0.9], 1.0)).unwrap();
        let b = predict(&params, &store, &instance(&[0.9, 0.1], 1.0)).unwrap();
        assert!((a - b).abs() > 1e-6);
    }

    /// Mean of the step inputs fed straight to the output layer; any
    /// permutation of the steps leaves it unchanged.
    fn mean_pool(params: &ModelParams<f64>, inst: &Instance) -> f64 {
        let n = inst.steps.len() as f64;
        let flag = inst.steps.iter().map(|s| if s.current { 1.0 } else { 0.0 }).sum::<f64>() / n;
        let pred = inst.steps.iter().map(|s| f64::from(s.prediction)).sum::<f64>() / n;
        let w = &params.tensors[O_W];
        sigmoid(params.tensors[O_B][0] + w[0] * flag + w[1] * pred)
    }

    #[test]
    fn mean_pool_stub_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = ModelParams::<f64>::init(
            ModelShape {
                input_dim: 8,
                proj_dim: 3,
                hidden: 4,
                ablation: Ablation::PREDICTION,
            },
            &mut rng,
        );
        let mut a = instance(&[0.1, 0.9, 0.4], 1.0);
        let before = mean_pool(&params, &a);
        a.steps.reverse();
        assert_eq!(mean_pool(&params, &a), before);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let store = toy_store(6, 4, &mut rng);
        let params = ModelParams::<f32>::zeros(ModelShape {
            input_dim: 8,
            proj_dim: 3,
            hidden: 4,
            ablation: Ablation::FULL,
        });
        assert!(matches!(
            predict(&params, &store, &instance(&[0.5], 1.0)),
            Err(Error::DimensionMismatch { expected: 8, found: 6 })
        ));
    }
}
