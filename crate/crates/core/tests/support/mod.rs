//! Numerical oracles shared by the integration tests and the acceptance
//! report: finite differences, Monte Carlo estimates and brute-force AUC.
#![allow(dead_code)]

use bvi_core::dist::{kl_on_tape, sample_on_tape, DiagonalGaussian, PriorSpec};
use bvi_core::eval::{pr_curve_auc, roc_curve_auc, ScoredBinary};
use bvi_core::layers::{DenseDeterministic, DenseVariational, DropoutSpec, Estimator, Phase};
use bvi_core::model::{build_head, HeadConfig, Variant};
use bvi_core::tensor::{Tape, Tensor, Var};
use bvi_core::train::loss_and_grads;
use bvi_core::uncertainty::{bald, expected_entropy, predictive_entropy, PredictiveDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    t
}

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    t
}

/// Uniform values kept at least `gap` away from every point in `avoid`.
fn uniform_avoiding(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, avoid: &[f64], gap: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = loop {
            let x = rng.random_range(lo..hi);
            if avoid.iter().all(|a| (x - a).abs() > gap) {
                break x;
            }
        };
    }
    t
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

type Builder<'a> = dyn Fn(&mut Tape, &[Var]) -> bvi_core::Result<Var> + 'a;

fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.constant(weights.clone()).unwrap();
    let p = tape.mul(out, w).unwrap();
    tape.sum(p).unwrap()
}

/// Worst relative error between the tape gradient of `Σ build(inputs) ∘ R`
/// and central differences, over every input coordinate.
pub fn fd_check(inputs: &[Tensor], build: &Builder<'_>, rng: &mut ChaCha8Rng) -> f64 {
    let shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).shape().to_vec()
    };
    let weights = uniform(rng, &shape, -1.0, 1.0);
    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars).unwrap();
        let s = project(&mut tape, out, &weights);
        tape.value(s).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let s = project(&mut tape, out, &weights);
    let grads = tape.backward(s).unwrap();

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v).unwrap();
        for j in 0..inputs[k].len() {
            let x0 = inputs[k].data()[j];
            probe[k].data_mut()[j] = x0 + FD_STEP;
            let up = eval(&probe);
            probe[k].data_mut()[j] = x0 - FD_STEP;
            let down = eval(&probe);
            probe[k].data_mut()[j] = x0;
            worst = worst.max(rel_err(g.data()[j], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn random_prior(rng: &mut ChaCha8Rng) -> PriorSpec {
    PriorSpec::new(rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0)).unwrap()
}

fn random_vlayer(rng: &mut ChaCha8Rng, i: usize, o: usize, est: Estimator) -> DenseVariational {
    DenseVariational::new(
        DiagonalGaussian::new(normal(rng, &[i, o]), uniform(rng, &[i, o], -3.0, 0.5)).unwrap(),
        DiagonalGaussian::new(normal(rng, &[o]), uniform(rng, &[o], -3.0, 0.5)).unwrap(),
        est,
        random_prior(rng),
    )
    .unwrap()
}

/// One random point for the named op, returning its worst relative error.
fn fd_point(op: &str, rng: &mut ChaCha8Rng) -> f64 {
    let (m, n, k) = (3, 4, 2);
    match op {
        "matmul" => {
            let ins = [normal(rng, &[m, n]), normal(rng, &[n, k])];
            fd_check(&ins, &|t, v| t.matmul(v[0], v[1]), rng)
        }
        "add" | "sub" | "mul" => {
            let ins = [normal(rng, &[m, n]), normal(rng, &[m, n])];
            let f = |t: &mut Tape, v: &[Var]| match op {
                "add" => t.add(v[0], v[1]),
                "sub" => t.sub(v[0], v[1]),
                _ => t.mul(v[0], v[1]),
            };
            fd_check(&ins, &f, rng)
        }
        "add_bias" => {
            let ins = [normal(rng, &[m, n]), normal(rng, &[n])];
            fd_check(&ins, &|t, v| t.add(v[0], v[1]), rng)
        }
        "relu" => {
            let ins = [uniform_avoiding(rng, &[m, n], -3.0, 3.0, &[0.0], 1e-2)];
            fd_check(&ins, &|t, v| t.relu(v[0]), rng)
        }
        "softplus" => {
            // spans the saturated branch above 30
            let ins = [uniform_avoiding(rng, &[m, n], -40.0, 40.0, &[30.0], 1e-2)];
            fd_check(&ins, &|t, v| t.softplus(v[0]), rng)
        }
        "log_softmax" => {
            let ins = [uniform(rng, &[m, 5], -5.0, 5.0)];
            fd_check(&ins, &|t, v| t.log_softmax(v[0]), rng)
        }
        "nll" => {
            let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..5)).collect();
            let ins = [uniform(rng, &[m, 5], -5.0, 5.0)];
            let f = move |t: &mut Tape, v: &[Var]| {
                let lp = t.log_softmax(v[0])?;
                t.nll(lp, &labels)
            };
            fd_check(&ins, &f, rng)
        }
        "sum" => {
            let ins = [normal(rng, &[m, n])];
            fd_check(&ins, &|t, v| t.sum(v[0]), rng)
        }
        "scale" => {
            let c = rng.random_range(-3.0..3.0);
            let ins = [normal(rng, &[m, n])];
            fd_check(&ins, &move |t, v| t.scale(v[0], c), rng)
        }
        "kl_to_prior" => {
            let prior = random_prior(rng);
            let ins = [normal(rng, &[n]), uniform(rng, &[n], -4.0, 2.0)];
            fd_check(&ins, &move |t, v| kl_on_tape(t, v[0], v[1], prior), rng)
        }
        "sample" => {
            let eps = normal(rng, &[n]);
            let ins = [normal(rng, &[n]), uniform(rng, &[n], -4.0, 2.0)];
            fd_check(&ins, &move |t, v| sample_on_tape(t, v[0], v[1], &eps), rng)
        }
        "dropout" => {
            let spec = DropoutSpec::new(0.3, false).unwrap();
            let u = uniform(rng, &[m, n], 0.0, 1.0);
            let ins = [normal(rng, &[m, n])];
            fd_check(&ins, &move |t, v| spec.forward(t, v[0], Some(&u), Phase::Train), rng)
        }
        "dense" => dense_layer_point(rng),
        "variational_reparam" => variational_layer_point(rng, Estimator::Reparam),
        "variational_flipout" => variational_layer_point(rng, Estimator::Flipout),
        other => panic!("unknown op {other}"),
    }
}

/// Finite-difference check of `sum(R ∘ layer(x))` for a dense layer with
/// respect to its input, weight and bias.
fn dense_layer_point(rng: &mut ChaCha8Rng) -> f64 {
    let (m, n, k) = (3, 4, 2);
    let layer = DenseDeterministic::new(normal(rng, &[n, k]), normal(rng, &[k])).unwrap();
    let x = normal(rng, &[m, n]);
    let weights = uniform(rng, &[m, k], -1.0, 1.0);
    let objective = |l: &DenseDeterministic, x: &Tensor| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone()).unwrap();
        let mut params = Vec::new();
        let out = l.forward(&mut tape, xv, &mut params).unwrap();
        let s = project(&mut tape, out, &weights);
        let value = tape.value(s).data()[0];
        let mut g = tape.backward(s).unwrap();
        let mut grads = vec![g.take(xv).unwrap()];
        grads.extend(params.iter().map(|&p| g.take(p).unwrap()));
        (value, grads)
    };
    let (_, analytic) = objective(&layer, &x);
    let mut worst = 0.0f64;
    for (slot, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let eval_at = |delta: f64| {
                let mut l = layer.clone();
                let mut xx = x.clone();
                let target = match slot {
                    0 => &mut xx,
                    1 => &mut l.weight,
                    _ => &mut l.bias,
                };
                target.data_mut()[j] += delta;
                objective(&l, &xx).0
            };
            let numeric = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

/// Finite-difference check of a variational layer's `sum(R ∘ out) + c·kl`
/// with respect to its four parameter tensors and its input.
fn variational_layer_point(rng: &mut ChaCha8Rng, est: Estimator) -> f64 {
    let (m, n, k) = (3, 4, 2);
    let layer = random_vlayer(rng, n, k, est);
    let noise = layer.sample_noise(m, rng);
    let x = normal(rng, &[m, n]);
    let weights = uniform(rng, &[m, k], -1.0, 1.0);
    let c = rng.random_range(0.1..1.0);

    let objective = |l: &DenseVariational, x: &Tensor, grads: bool| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let xv = tape.param(x.clone()).unwrap();
        let mut params = Vec::new();
        let (out, kl) = l.forward(&mut tape, xv, &noise, &mut params).unwrap();
        let s = project(&mut tape, out, &weights);
        let klc = tape.scale(kl, c).unwrap();
        let total = tape.add(s, klc).unwrap();
        let value = tape.value(total).data()[0];
        if !grads {
            return (value, vec![]);
        }
        let mut g = tape.backward(total).unwrap();
        let mut out = vec![g.take(xv).unwrap()];
        out.extend(params.iter().map(|&p| g.take(p).unwrap()));
        (value, out)
    };

    let (_, analytic) = objective(&layer, &x, true);
    let mut worst = 0.0f64;
    // coordinate 0 is the input, then w_mu, w_rho, b_mu, b_rho
    for slot in 0..5 {
        let len = analytic[slot].len();
        for j in 0..len {
            let eval_at = |delta: f64| {
                let mut l = layer.clone();
                let mut xx = x.clone();
                let target = match slot {
                    0 => &mut xx,
                    1 => l.weight.mu_mut(),
                    2 => l.weight.rho_mut(),
                    3 => l.bias.mu_mut(),
                    _ => l.bias.rho_mut(),
                };
                target.data_mut()[j] += delta;
                objective(&l, &xx, false).0
            };
            let numeric = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[slot].data()[j], numeric));
        }
    }
    worst
}

/// Full-head ELBO with frozen noise: analytic gradients from
/// `loss_and_grads` against central differences on every parameter.
pub fn elbo_point(rng: &mut ChaCha8Rng, variant: Variant, est: Estimator) -> f64 {
    let (f, k, m) = (4, 3, 5);
    let mut cfg = HeadConfig::new(f, k, variant);
    cfg.hidden_dims = [5, 5];
    cfg.estimator = est;
    let mut head = build_head(&cfg, rng.random()).unwrap();
    if variant == Variant::StochasticVi {
        for (i, p) in head.parameters_mut().into_iter().enumerate() {
            if i % 2 == 1 {
                for v in p.data_mut() {
                    *v = rng.random_range(-3.0..0.0);
                }
            }
        }
    } else {
        // nonzero biases so no unit sits exactly at a ReLU kink
        for p in head.parameters_mut().into_iter().skip(1).step_by(2) {
            for v in p.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    let x = normal(rng, &[m, f]);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
    let noise = head.sample_noise(m, Phase::Train, rng);
    let kl_weight = rng.random_range(0.01..0.5);

    let analytic = loss_and_grads(&head, &x, &labels, &noise, kl_weight).unwrap().grads;
    let mut worst = 0.0f64;
    for (slot, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let eval_at = |delta: f64| {
                let mut h = head.clone();
                h.parameters_mut()[slot].data_mut()[j] += delta;
                loss_and_grads(&h, &x, &labels, &noise, kl_weight).unwrap().loss
            };
            let numeric = (eval_at(FD_STEP) - eval_at(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

pub const FD_OPS: [&str; 17] = [
    "matmul",
    "add",
    "sub",
    "mul",
    "add_bias",
    "relu",
    "softplus",
    "log_softmax",
    "nll",
    "sum",
    "scale",
    "kl_to_prior",
    "sample",
    "dropout",
    "dense",
    "variational_reparam",
    "variational_flipout",
];

/// Worst relative error per op over `points` random points each,
/// including the variational layers and the composed ELBO.
pub fn gradient_suite(points: usize, seed: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let mut r = rng(seed);
    for op in FD_OPS {
        let worst = (0..points).map(|_| fd_point(op, &mut r)).fold(0.0, f64::max);
        out.push((op.to_string(), worst));
    }
    for (name, variant, est) in [
        ("elbo_vi_flipout", Variant::StochasticVi, Estimator::Flipout),
        ("elbo_vi_reparam", Variant::StochasticVi, Estimator::Reparam),
        ("elbo_mc_dropout", Variant::McDropout, Estimator::Flipout),
        ("elbo_deterministic", Variant::Deterministic, Estimator::Flipout),
    ] {
        let worst = (0..points)
            .map(|_| elbo_point(&mut r, variant, est))
            .fold(0.0, f64::max);
        out.push((name.to_string(), worst));
    }
    out
}

/// `(analytic, monte_carlo)` KL pairs for random single-element posteriors
/// and priors. The estimate averages `log q(w) − log p(w)` over antithetic
/// pairs `mu ± std·z`.
pub fn kl_oracle(settings: usize, samples: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut r = rng(seed);
    (0..settings)
        .map(|_| {
            let mu = r.random_range(-3.0..3.0);
            let rho = r.random_range(-5.0..2.0);
            let prior = random_prior(&mut r);
            let q = DiagonalGaussian::new(
                Tensor::vector(vec![mu]).unwrap(),
                Tensor::vector(vec![rho]).unwrap(),
            )
            .unwrap();
            let s = bvi_core::tensor::softplus(rho);
            let log_ratio = |w: f64| {
                let zq = (w - mu) / s;
                let zp = (w - prior.mean) / prior.std;
                (prior.std / s).ln() - 0.5 * zq * zq + 0.5 * zp * zp
            };
            let mut acc = 0.0;
            for _ in 0..samples / 2 {
                let z: f64 = StandardNormal.sample(&mut r);
                acc += log_ratio(mu + s * z) + log_ratio(mu - s * z);
            }
            (q.kl_to_prior(&prior), acc / (2 * (samples / 2)) as f64)
        })
        .collect()
}

/// Running first and second moments.
#[derive(Default, Clone, Copy)]
pub struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
    sum_4: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        self.sum += x;
        self.sum_sq += x * x;
        self.sum_4 += x * x * x * x;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n
    }

    pub fn second(&self) -> f64 {
        self.sum_sq / self.n
    }

    pub fn var(&self) -> f64 {
        (self.sum_sq / self.n - self.mean() * self.mean()) * self.n / (self.n - 1.0)
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        (self.var() / self.n).sqrt()
    }

    /// Standard error of the second-moment estimate.
    pub fn se_second(&self) -> f64 {
        let v = self.sum_4 / self.n - self.second() * self.second();
        (v / self.n).sqrt()
    }
}

/// Per-(example, output) moments of a variational layer's output over
/// `draws` independent noise draws on the batch `x`.
pub fn layer_output_moments(layer: &DenseVariational, x: &Tensor, draws: usize, rng: &mut ChaCha8Rng) -> Vec<Moments> {
    let m = x.rows();
    let mut acc = vec![Moments::default(); m * layer.out_dim()];
    for _ in 0..draws {
        let noise = layer.sample_noise(m, rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone()).unwrap();
        let (out, _) = layer.forward(&mut tape, xv, &noise, &mut Vec::new()).unwrap();
        for (a, &v) in acc.iter_mut().zip(tape.value(out).data()) {
            a.push(v);
        }
    }
    acc
}

/// Largest `|mean − mean-weight output| / SE` over every example and
/// output unit, for `inputs` random rows and `draws` draws.
pub fn unbiasedness_z(est: Estimator, inputs: usize, draws: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let layer = random_vlayer(&mut r, 4, 2, est);
    let x = normal(&mut r, &[inputs, 4]);
    let mean_layer = layer.mean_layer();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone()).unwrap();
    let target = mean_layer.forward(&mut tape, xv, &mut Vec::new()).unwrap();
    let target = tape.value(target).clone();
    let moments = layer_output_moments(&layer, &x, draws, &mut r);
    moments
        .iter()
        .zip(target.data())
        .map(|(mo, &t)| (mo.mean() - t).abs() / mo.se())
        .fold(0.0, f64::max)
}

/// Random probability rows: Dirichlet(α) with `α` drawn per row, so some
/// rows are near one-hot and some near uniform.
pub fn random_pd(rng: &mut ChaCha8Rng) -> PredictiveDistribution {
    let t = rng.random_range(1..=30);
    let k = rng.random_range(2..=12);
    let mut rows = Vec::with_capacity(t * k);
    for _ in 0..t {
        let alpha: f64 = 10f64.powf(rng.random_range(-2.0..1.0));
        let gamma = rand_distr::Gamma::new(alpha, 1.0).unwrap();
        let mut row: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let s: f64 = row.iter().sum();
        if s == 0.0 {
            row = vec![0.0; k];
            row[0] = 1.0;
        } else {
            row.iter_mut().for_each(|v| *v /= s);
        }
        rows.extend(row);
    }
    PredictiveDistribution::new(rows, k).unwrap()
}

fn permute_classes(pd: &PredictiveDistribution, perm: &[usize]) -> PredictiveDistribution {
    let rows: Vec<f64> = (0..pd.num_samples())
        .flat_map(|t| perm.iter().map(move |&c| pd.sample(t)[c]))
        .collect();
    PredictiveDistribution::new(rows, pd.num_classes()).unwrap()
}

fn permute_rows(pd: &PredictiveDistribution, perm: &[usize]) -> PredictiveDistribution {
    let rows: Vec<f64> = perm.iter().flat_map(|&t| pd.sample(t).to_vec()).collect();
    PredictiveDistribution::new(rows, pd.num_classes()).unwrap()
}

/// Checks the entropy/BALD bounds and permutation invariances on `n`
/// random predictive distributions; returns the first violation.
pub fn metric_properties(n: usize, seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    let mut r = rng(seed);
    for case in 0..n {
        let pd = random_pd(&mut r);
        let k = pd.num_classes();
        let ln_k = (k as f64).ln();
        let (pe, ee, b) = (predictive_entropy(&pd), expected_entropy(&pd), bald(&pd));
        if !(0.0..=ln_k + 1e-9).contains(&pe) || !(0.0..=ln_k + 1e-9).contains(&ee) {
            return Err(format!("case {case}: entropies {pe}, {ee} outside [0, ln {k}]"));
        }
        if !(-1e-9..=pe + 1e-9).contains(&b) {
            return Err(format!("case {case}: BALD {b} outside [-1e-9, {pe}]"));
        }
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let pc = permute_classes(&pd, &perm);
        for (i, &c) in perm.iter().enumerate() {
            if (pc.mean_probs()[i] - pd.mean_probs()[c]).abs() > 1e-12 {
                return Err(format!("case {case}: class permutation changed mean_probs"));
            }
        }
        let mut tperm: Vec<usize> = (0..pd.num_samples()).collect();
        tperm.shuffle(&mut r);
        let pr = permute_rows(&pd, &tperm);
        for other in [&pc, &pr] {
            let d = [
                (predictive_entropy(other) - pe).abs(),
                (expected_entropy(other) - ee).abs(),
                (bald(other) - b).abs(),
            ];
            if d.iter().any(|&x| x > 1e-12) {
                return Err(format!("case {case}: permutation changed metrics by {d:?}"));
            }
        }
        let first = pd.sample(0).to_vec();
        let same = PredictiveDistribution::new(first.repeat(pd.num_samples()), k).unwrap();
        if bald(&same) != 0.0 {
            return Err(format!("case {case}: identical rows give BALD {}", bald(&same)));
        }
    }
    Ok(())
}

/// Mann–Whitney fraction of correctly ordered (positive, negative) pairs,
/// ties counted one half.
pub fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    good += 1.0;
                } else if si == sj {
                    good += 0.5;
                }
            }
        }
    }
    good / pairs
}

/// Largest `|roc_auc − brute force|` over random small instances with
/// heavy ties.
pub fn roc_auc_oracle(instances: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = r.random_range(2..=50);
        let levels = r.random_range(1..=n);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random()).collect();
        labels[0] = true;
        labels[1] = false;
        let sb = ScoredBinary::new(scores.clone(), labels.clone()).unwrap();
        let auc = roc_curve_auc(&sb).unwrap().auc;
        worst = worst.max((auc - brute_force_auc(&scores, &labels)).abs());
    }
    worst
}

/// `(computed, expected)` average precision on the hand-enumerated
/// fixtures.
pub fn pr_fixtures() -> Vec<(f64, f64)> {
    let cases: [(&[f64], &[bool], f64); 3] = [
        (&[0.9, 0.8, 0.7], &[true, false, true], 1.0 * 0.5 + (2.0 / 3.0) * 0.5),
        (&[0.9, 0.1], &[false, true], 0.5),
        (&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false], 1.0),
    ];
    cases
        .iter()
        .map(|(s, l, want)| {
            let sb = ScoredBinary::new(s.to_vec(), l.to_vec()).unwrap();
            (pr_curve_auc(&sb).unwrap().auc, *want)
        })
        .collect()
}
