//! One-dimensional variational Bayesian Gaussian mixture with a truncated
//! Dirichlet-process (stick-breaking) prior on the weights.
//!
//! Mean-field coordinate ascent with Normal-Gamma component priors. A small
//! weight concentration drives unneeded components towards zero weight so they
//! can be pruned afterwards.

use statrs::function::gamma::{digamma, ln_gamma};

#[derive(Clone, Debug)]
pub struct VgmConfig {
    pub max_components: usize,
    /// Concentration of the stick-breaking prior.
    pub weight_concentration: f64,
    pub max_iter: usize,
    /// Convergence threshold on the per-sample change of the lower bound.
    pub tol: f64,
    /// Added to every component variance.
    pub reg_var: f64,
}

impl Default for VgmConfig {
    fn default() -> Self {
        Self {
            max_components: 10,
            weight_concentration: 1e-3,
            max_iter: 300,
            tol: 1e-7,
            reg_var: 1e-6,
        }
    }
}

/// Posterior summary of every fitted component (no pruning applied).
#[derive(Clone, Debug)]
pub struct VgmFit {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub lower_bound: f64,
}

struct Posterior {
    stick_a: Vec<f64>,
    stick_b: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<f64>,
    dof: Vec<f64>,
    /// Scale of the Gamma posterior over the precision (the 1-D Wishart W).
    scale: Vec<f64>,
}

impl Posterior {
    fn without(&self, drop: usize) -> Posterior {
        let keep = |v: &Vec<f64>| {
            v.iter()
                .enumerate()
                .filter(|&(j, _)| j != drop)
                .map(|(_, x)| *x)
                .collect::<Vec<f64>>()
        };
        Posterior {
            stick_a: keep(&self.stick_a),
            stick_b: keep(&self.stick_b),
            beta: keep(&self.beta),
            mean: keep(&self.mean),
            dof: keep(&self.dof),
            scale: keep(&self.scale),
        }
    }
}

/// Fit the mixture. `values` must contain at least two distinct numbers.
///
/// Coordinate ascent alone is slow to empty redundant components, so after
/// convergence the lightest components are tentatively deleted and the fit is
/// rerun; a deletion is kept whenever it raises the variational lower bound.
pub fn fit(values: &[f64], cfg: &VgmConfig) -> VgmFit {
    let priors = Priors::from_data(values, cfg);
    let k = cfg.max_components.max(1);
    let mut best = run(values, kmeans_responsibilities(values, k), cfg, &priors);

    'search: while best.post.mean.len() > 1 {
        let weights = stick_weights(&best.post);
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]));
        for &drop in order.iter().take(MAX_DELETION_TRIALS) {
            let reduced = best.post.without(drop);
            let mut resp = vec![vec![0.0; reduced.mean.len()]; values.len()];
            e_step(values, &reduced, &mut resp);
            let candidate = run(values, resp, cfg, &priors);
            if candidate.elbo > best.elbo {
                best = candidate;
                continue 'search;
            }
        }
        break;
    }

    let weights = stick_weights(&best.post);
    let stds = (0..weights.len())
        .map(|j| (1.0 / (best.post.dof[j] * best.post.scale[j])).sqrt())
        .collect();
    VgmFit {
        weights,
        means: best.post.mean,
        stds,
        iterations: best.iterations,
        converged: best.converged,
        lower_bound: best.elbo,
    }
}

/// Deletion candidates tried per round, lightest first.
const MAX_DELETION_TRIALS: usize = 3;

struct Priors {
    mean: f64,
    /// Inverse of the prior precision scale.
    var: f64,
    beta: f64,
    dof: f64,
}

impl Priors {
    fn from_data(values: &[f64], cfg: &VgmConfig) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64)
            .max(cfg.reg_var);
        Self {
            mean,
            var,
            beta: 1.0,
            dof: 1.0,
        }
    }
}

struct Run {
    post: Posterior,
    elbo: f64,
    iterations: usize,
    converged: bool,
}

fn run(values: &[f64], mut resp: Vec<Vec<f64>>, cfg: &VgmConfig, priors: &Priors) -> Run {
    let mut post = m_step(values, &resp, cfg, priors);
    let mut elbo = lower_bound(values, &resp, &post, cfg, priors);
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        e_step(values, &post, &mut resp);
        post = m_step(values, &resp, cfg, priors);
        let next = lower_bound(values, &resp, &post, cfg, priors);
        let delta = (next - elbo).abs();
        elbo = next;
        if delta < cfg.tol * values.len() as f64 {
            converged = true;
            break;
        }
    }
    Run {
        post,
        elbo,
        iterations,
        converged,
    }
}

/// Expected stick-breaking weights, normalized over the truncation.
fn stick_weights(post: &Posterior) -> Vec<f64> {
    let k = post.mean.len();
    let mut weights = Vec::with_capacity(k);
    let mut remaining = 1.0;
    for j in 0..k {
        let v = post.stick_a[j] / (post.stick_a[j] + post.stick_b[j]);
        weights.push(remaining * v);
        remaining *= 1.0 - v;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

/// Sufficient statistics (N_k, mean_k, var_k) of the responsibilities.
fn statistics(x: &[f64], resp: &[Vec<f64>], reg_var: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = resp[0].len();
    let mut nk = vec![0.0; k];
    let mut xbar = vec![0.0; k];
    for (r, &v) in resp.iter().zip(x) {
        for j in 0..k {
            nk[j] += r[j];
            xbar[j] += r[j] * v;
        }
    }
    for j in 0..k {
        nk[j] += 10.0 * f64::EPSILON;
        xbar[j] /= nk[j];
    }
    let mut sk = vec![0.0; k];
    for (r, &v) in resp.iter().zip(x) {
        for j in 0..k {
            sk[j] += r[j] * (v - xbar[j]).powi(2);
        }
    }
    for j in 0..k {
        sk[j] = sk[j] / nk[j] + reg_var;
    }
    (nk, xbar, sk)
}

fn expected_log_weights(post: &Posterior) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = post.mean.len();
    let mut log_v = vec![0.0; k];
    let mut log_1mv = vec![0.0; k];
    let mut log_pi = vec![0.0; k];
    let mut acc = 0.0;
    for j in 0..k {
        let total = digamma(post.stick_a[j] + post.stick_b[j]);
        log_v[j] = digamma(post.stick_a[j]) - total;
        log_1mv[j] = digamma(post.stick_b[j]) - total;
        log_pi[j] = log_v[j] + acc;
        acc += log_1mv[j];
    }
    (log_pi, log_v, log_1mv)
}

fn expected_log_precision(post: &Posterior, j: usize) -> f64 {
    digamma(post.dof[j] / 2.0) + std::f64::consts::LN_2 + post.scale[j].ln()
}

/// Log normalizer of the one-dimensional Wishart (scaled Gamma) density.
fn ln_wishart_norm(scale: f64, dof: f64) -> f64 {
    -(dof / 2.0) * scale.ln() - (dof / 2.0) * std::f64::consts::LN_2 - ln_gamma(dof / 2.0)
}

/// Variational lower bound on the log evidence.
fn lower_bound(x: &[f64], resp: &[Vec<f64>], post: &Posterior, cfg: &VgmConfig, p: &Priors) -> f64 {
    let k = post.mean.len();
    let (nk, xbar, sk) = statistics(x, resp, cfg.reg_var);
    let (log_pi, log_v, log_1mv) = expected_log_weights(post);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let w0 = 1.0 / p.var;
    let alpha = cfg.weight_concentration;
    let mut bound = 0.0;
    for j in 0..k {
        let e_log_prec = expected_log_precision(post, j);
        let (beta, m, dof, w) = (post.beta[j], post.mean[j], post.dof[j], post.scale[j]);
        // likelihood
        bound += 0.5
            * nk[j]
            * (e_log_prec - 1.0 / beta - dof * sk[j] * w - dof * w * (xbar[j] - m).powi(2) - ln_2pi);
        // assignments given weights
        bound += nk[j] * log_pi[j];
        // stick prior Beta(1, alpha)
        bound += alpha.ln() + (alpha - 1.0) * log_1mv[j];
        // Normal-Wishart prior
        bound += 0.5
            * ((p.beta / (2.0 * std::f64::consts::PI)).ln() + e_log_prec
                - p.beta * dof * w * (m - p.mean).powi(2)
                - p.beta / beta);
        bound += ln_wishart_norm(w0, p.dof) + (p.dof - 2.0) / 2.0 * e_log_prec - 0.5 * dof * w / w0;
        // minus entropy terms of q
        let (a, b) = (post.stick_a[j], post.stick_b[j]);
        bound -= ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
            + (a - 1.0) * log_v[j]
            + (b - 1.0) * log_1mv[j];
        let entropy_prec = -ln_wishart_norm(w, dof) - (dof - 2.0) / 2.0 * e_log_prec + dof / 2.0;
        bound -= 0.5 * e_log_prec + 0.5 * (beta / (2.0 * std::f64::consts::PI)).ln() - 0.5
            - entropy_prec;
    }
    for r in resp {
        for &rj in r {
            if rj > 0.0 {
                bound -= rj * rj.ln();
            }
        }
    }
    bound
}

fn m_step(x: &[f64], resp: &[Vec<f64>], cfg: &VgmConfig, p: &Priors) -> Posterior {
    let k = resp[0].len();
    let (nk, xbar, sk) = statistics(x, resp, cfg.reg_var);
    let mut post = Posterior {
        stick_a: vec![0.0; k],
        stick_b: vec![0.0; k],
        beta: vec![0.0; k],
        mean: vec![0.0; k],
        dof: vec![0.0; k],
        scale: vec![0.0; k],
    };
    let mut tail: f64 = nk.iter().sum();
    for j in 0..k {
        tail -= nk[j];
        post.stick_a[j] = 1.0 + nk[j];
        post.stick_b[j] = cfg.weight_concentration + tail.max(0.0);
        post.beta[j] = p.beta + nk[j];
        post.mean[j] = (p.beta * p.mean + nk[j] * xbar[j]) / post.beta[j];
        post.dof[j] = p.dof + nk[j];
        let inv_scale =
            p.var + nk[j] * sk[j] + p.beta * nk[j] / (p.beta + nk[j]) * (xbar[j] - p.mean).powi(2);
        post.scale[j] = 1.0 / inv_scale;
    }
    post
}

fn e_step(x: &[f64], post: &Posterior, resp: &mut [Vec<f64>]) {
    let k = post.mean.len();
    let (log_pi, _, _) = expected_log_weights(post);
    let half_log_prec: Vec<f64> = (0..k).map(|j| 0.5 * expected_log_precision(post, j)).collect();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    for (r, &v) in resp.iter_mut().zip(x) {
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let quad = 1.0 / post.beta[j] + post.dof[j] * post.scale[j] * (v - post.mean[j]).powi(2);
            r[j] = log_pi[j] + half_log_prec[j] - half_ln_2pi - 0.5 * quad;
            max = max.max(r[j]);
        }
        let mut sum = 0.0;
        for rj in r.iter_mut() {
            *rj = (*rj - max).exp();
            sum += *rj;
        }
        r.iter_mut().for_each(|rj| *rj /= sum);
    }
}

/// Hard responsibilities from a quantile-initialized 1-D k-means.
fn kmeans_responsibilities(x: &[f64], k: usize) -> Vec<Vec<f64>> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut centers: Vec<f64> = (0..k)
        .map(|j| sorted[((2 * j + 1) * n / (2 * k)).min(n - 1)])
        .collect();
    let nearest = |v: f64, centers: &[f64]| {
        let mut best = 0;
        for j in 1..centers.len() {
            if (v - centers[j]).abs() < (v - centers[best]).abs() {
                best = j;
            }
        }
        best
    };
    for _ in 0..50 {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for &v in x {
            let j = nearest(v, &centers);
            sum[j] += v;
            cnt[j] += 1;
        }
        let mut moved = false;
        for j in 0..k {
            if cnt[j] > 0 {
                let c = sum[j] / cnt[j] as f64;
                moved |= c != centers[j];
                centers[j] = c;
            }
        }
        if !moved {
            break;
        }
    }
    x.iter()
        .map(|&v| {
            let mut r = vec![0.0; k];
            r[nearest(v, &centers)] = 1.0;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Normal::new(5.0, 2.0).unwrap();
        let x: Vec<f64> = (0..2000).map(|_| d.sample(&mut rng)).collect();
        let fit = fit(&x, &VgmConfig::default());
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fit.stds.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn lower_bound_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Normal::new(-3.0, 1.0).unwrap();
        let b = Normal::new(4.0, 0.5).unwrap();
        let x: Vec<f64> = (0..3000)
            .map(|i| if i % 3 == 0 { a.sample(&mut rng) } else { b.sample(&mut rng) })
            .collect();
        let cfg = VgmConfig::default();
        let priors = Priors::from_data(&x, &cfg);
        let mut resp = kmeans_responsibilities(&x, 6);
        let mut post = m_step(&x, &resp, &cfg, &priors);
        let mut prev = lower_bound(&x, &resp, &post, &cfg, &priors);
        for _ in 0..50 {
            e_step(&x, &post, &mut resp);
            post = m_step(&x, &resp, &cfg, &priors);
            let next = lower_bound(&x, &resp, &post, &cfg, &priors);
            assert!(next >= prev - 1e-6 * prev.abs(), "{prev} -> {next}");
            prev = next;
        }
    }
}
