//! Analytic gradients for the proposal scorer under binary cross-entropy, and
//! a central-difference checker for them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layers::{Linear, Mlp2};
use super::GnnError;

/// One training pair: features in both orders and a 0/1 target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub forward: Vec<f64>,
    pub backward: Vec<f64>,
    pub label: f64,
}

/// Pair logit: the mean of the scorer's outputs over both pair orders.
pub fn pair_logit(mlp: &Mlp2<f64>, s: &PairSample) -> Result<f64, GnnError> {
    let a = mlp.forward(&s.forward)?[0];
    let b = mlp.forward(&s.backward)?[0];
    Ok(0.5 * (a + b))
}

/// `-[y ln s + (1 - y) ln(1 - s)]` with `s = sigmoid(logit)`, evaluated in
/// the overflow-free softplus form.
pub fn bce_with_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - y * logit + (-logit.abs()).exp().ln_1p()
}

/// Mean BCE over a batch.
pub fn proposal_loss(mlp: &Mlp2<f64>, batch: &[PairSample]) -> Result<f64, GnnError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in batch {
        total += bce_with_logit(pair_logit(mlp, s)?, s.label);
    }
    Ok(total / batch.len() as f64)
}

/// Mean BCE and its gradient, returned in the scorer's own layout.
pub fn proposal_loss_and_grad(mlp: &Mlp2<f64>, batch: &[PairSample]) -> Result<(f64, Mlp2<f64>), GnnError> {
    if mlp.norm.is_some() || mlp.fc2.out_dim != 1 {
        return Err(GnnError::Usage(
            "analytic gradients cover the norm-free single-output scorer".into(),
        ));
    }
    let mut grad = Mlp2 {
        fc1: Linear::zeros(mlp.fc1.out_dim, mlp.fc1.in_dim),
        norm: None,
        fc2: Linear::zeros(1, mlp.fc2.in_dim),
    };
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let hidden = mlp.fc1.out_dim;
    let in_dim = mlp.fc1.in_dim;
    let mut loss = 0.0;
    for s in batch {
        let mut outs = [0.0; 2];
        let mut acts: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (slot, x) in [&s.forward, &s.backward].into_iter().enumerate() {
            let pre = mlp.fc1.forward(x)?;
            let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            outs[slot] = mlp.fc2.forward(&h)?[0];
            acts[slot] = pre;
        }
        let logit = 0.5 * (outs[0] + outs[1]);
        loss += bce_with_logit(logit, s.label);
        let dlogit = (super::real::sigmoid(logit) - s.label) * inv_n;
        let dout = 0.5 * dlogit;
        for (x, pre) in [&s.forward, &s.backward].into_iter().zip(&acts) {
            grad.fc2.bias[0] += dout;
            for j in 0..hidden {
                if pre[j] > 0.0 {
                    grad.fc2.weight[j] += dout * pre[j];
                    let dh = dout * mlp.fc2.weight[j];
                    grad.fc1.bias[j] += dh;
                    let row = &mut grad.fc1.weight[j * in_dim..(j + 1) * in_dim];
                    for (g, &xv) in row.iter_mut().zip(x.iter()) {
                        *g += dh * xv;
                    }
                }
            }
        }
    }
    Ok((loss * inv_n, grad))
}

/// Flat mutable views of the scorer's parameters, in a fixed order.
pub fn params_mut(mlp: &mut Mlp2<f64>) -> [&mut Vec<f64>; 4] {
    [
        &mut mlp.fc1.weight,
        &mut mlp.fc1.bias,
        &mut mlp.fc2.weight,
        &mut mlp.fc2.bias,
    ]
}

pub fn params(mlp: &Mlp2<f64>) -> [&Vec<f64>; 4] {
    [&mlp.fc1.weight, &mlp.fc1.bias, &mlp.fc2.weight, &mlp.fc2.bias]
}

/// Relative error between an analytic and a numeric derivative. Below a
/// magnitude of 1e-6 the denominator is floored, which turns the measure into
/// an absolute error where roundoff dominates.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GradcheckTarget {
    /// `L = g . (W x + b)` for a fixed cotangent `g`: linear in the
    /// parameters, so central differences are exact up to roundoff.
    Linear,
    /// The proposal scorer with pair-order averaging and BCE.
    ProposalMlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub seed: u64,
    /// Independent random parameter draws.
    pub draws: usize,
    /// Parameter coordinates compared per draw (every tensor is sampled).
    pub coords_per_draw: usize,
    pub batch: usize,
    pub input_dim: usize,
    pub hidden: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            seed: 0,
            draws: 100,
            coords_per_draw: 48,
            batch: 8,
            input_dim: 33,
            hidden: crate::protocol::PROPOSAL_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub target: GradcheckTarget,
    pub draws: usize,
    pub coordinates_checked: usize,
    pub max_relative_error: f64,
}

/// Compares analytic gradients with central differences over random draws.
pub fn finite_diff_gradcheck(target: GradcheckTarget, opts: &GradcheckOptions) -> Result<GradcheckReport, GnnError> {
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(GnnError::Usage(format!("finite-difference step must be positive, got {}", opts.eps)));
    }
    if opts.draws == 0 || opts.coords_per_draw == 0 {
        return Err(GnnError::Usage("need at least one draw and one coordinate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut max_err = 0.0f64;
    let mut checked = 0;
    for _ in 0..opts.draws {
        let err = match target {
            GradcheckTarget::Linear => check_linear(&mut rng, opts)?,
            GradcheckTarget::ProposalMlp => check_proposal(&mut rng, opts)?,
        };
        max_err = max_err.max(err);
        checked += opts.coords_per_draw;
    }
    Ok(GradcheckReport {
        target,
        draws: opts.draws,
        coordinates_checked: checked,
        max_relative_error: max_err,
    })
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

fn signed_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.5..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn check_linear(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<f64, GnnError> {
    let (o, i) = (16, 8);
    let mut lin = Linear::new(o, i, uniform(rng, o * i, 1.0), uniform(rng, o, 1.0))?;
    // magnitudes kept in [0.5, 1) so derivatives stay well above the roundoff
    // floor of the central difference
    let x = signed_unit(rng, i);
    let g = signed_unit(rng, o);
    let loss = |l: &Linear<f64>| -> Result<f64, GnnError> {
        Ok(l.forward(&x)?.iter().zip(&g).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    for _ in 0..opts.coords_per_draw {
        let is_bias = rng.gen_bool(0.25);
        let (idx, analytic) = if is_bias {
            let r = rng.gen_range(0..o);
            (r, g[r])
        } else {
            let k = rng.gen_range(0..o * i);
            (k, g[k / i] * x[k % i])
        };
        let slot = if is_bias { &mut lin.bias } else { &mut lin.weight };
        let orig = slot[idx];
        slot[idx] = orig + opts.eps;
        let plus = loss(&lin)?;
        let slot = if is_bias { &mut lin.bias } else { &mut lin.weight };
        slot[idx] = orig - opts.eps;
        let minus = loss(&lin)?;
        let slot = if is_bias { &mut lin.bias } else { &mut lin.weight };
        slot[idx] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        if !numeric.is_finite() {
            return Err(GnnError::NonFinite("numeric gradient".into()));
        }
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

fn check_proposal(rng: &mut ChaCha8Rng, opts: &GradcheckOptions) -> Result<f64, GnnError> {
    let (d, h) = (opts.input_dim, opts.hidden);
    let b1 = (6.0 / d as f64).sqrt();
    let b2 = (6.0 / h as f64).sqrt();
    let mut mlp = Mlp2 {
        fc1: Linear::new(h, d, uniform(rng, h * d, b1), uniform(rng, h, 0.1))?,
        norm: None,
        fc2: Linear::new(1, h, uniform(rng, h, b2), uniform(rng, 1, 0.1))?,
    };
    let batch: Vec<PairSample> = (0..opts.batch)
        .map(|_| PairSample {
            forward: uniform(rng, d, 1.0),
            backward: uniform(rng, d, 1.0),
            label: if rng.gen_bool(0.5) { 1.0 } else { 0.0 },
        })
        .collect();
    let (_, grad) = proposal_loss_and_grad(&mlp, &batch)?;
    let sizes: Vec<usize> = params(&mlp).iter().map(|p| p.len()).collect();
    let mut worst = 0.0f64;
    for c in 0..opts.coords_per_draw {
        // cycle through tensors so each one is covered
        let t = c % sizes.len();
        let idx = rng.gen_range(0..sizes[t]);
        let analytic = params(&grad)[t][idx];
        let orig = params(&mlp)[t][idx];
        params_mut(&mut mlp)[t][idx] = orig + opts.eps;
        let plus = proposal_loss(&mlp, &batch)?;
        params_mut(&mut mlp)[t][idx] = orig - opts.eps;
        let minus = proposal_loss(&mlp, &batch)?;
        params_mut(&mut mlp)[t][idx] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        if !numeric.is_finite() || !analytic.is_finite() {
            return Err(GnnError::NonFinite("gradient".into()));
        }
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_with_logit_matches_direct_form() {
        for &(l, y) in &[(0.0f64, 1.0), (2.0, 0.0), (-3.0, 1.0), (0.7, 0.0)] {
            let s: f64 = 1.0 / (1.0 + (-l).exp());
            let direct = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
            assert!((bce_with_logit(l, y) - direct).abs() < 1e-12);
        }
        assert!((bce_with_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn linear_gradcheck_is_exact() {
        let opts = GradcheckOptions {
            draws: 10,
            ..Default::default()
        };
        let r = finite_diff_gradcheck(GradcheckTarget::Linear, &opts).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn proposal_gradcheck_small() {
        let opts = GradcheckOptions {
            draws: 5,
            hidden: 32,
            ..Default::default()
        };
        let r = finite_diff_gradcheck(GradcheckTarget::ProposalMlp, &opts).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_step_is_a_usage_error() {
        let opts = GradcheckOptions {
            eps: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            finite_diff_gradcheck(GradcheckTarget::Linear, &opts),
            Err(GnnError::Usage(_))
        ));
    }
}
