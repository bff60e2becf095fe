//! Self-checking property suite: finite-difference gradient checks for every
//! differentiable primitive and for the composite blocks, attention oracle
//! comparisons, convexity/normalization invariants, shape goldens, and a
//! metrics recount oracle. The CLI `verify` command runs this and exits with
//! the number of failed groups.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    brute_force_linear_attention, linear_attention_factorized, linear_attention_gram,
    ChannelAttention, SpatialAttention,
};
use crate::decoder::{DownsampleConnection, LargeFieldUpsample};
use crate::encoder::SwinBlock;
use crate::metrics::ConfusionMatrix;
use crate::model::ModelConfig;
use crate::nn::{named_tensors, Module, Phase};
use crate::tensor::ops::{
    add, batch_norm2d, bilinear_upsample, concat, conv2d, div, gelu, index_select, layer_norm,
    log_softmax_lastdim, l2_normalize_lastdim, matmul, mul, narrow, pad_axis, permute, relu,
    reshape, roll_axis, softmax_lastdim, sub, sum_all, sum_axis, transpose_conv2d,
};
use crate::tensor::{backward, init, no_grad, Tensor};
use crate::train::soft_cross_entropy;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(group: &'static str, name: &str, passed: bool, detail: String) -> Self {
        CheckResult { group, name: name.to_string(), passed, detail }
    }
}

/// Count of groups containing at least one failed check.
pub fn failed_groups(results: &[CheckResult]) -> usize {
    let mut groups: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.group).collect();
    groups.sort_unstable();
    groups.dedup();
    groups.len()
}

/// Render one line per check plus a closing summary.
pub fn render(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "[{}] {} :: {} — {}\n",
            if r.passed { "PASS" } else { "FAIL" },
            r.group,
            r.name,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!(
        "{} checks, {} failed, {} group(s) failing\n",
        results.len(),
        failed,
        failed_groups(results)
    ));
    out
}

// ---------------------------------------------------------------------------
// Gradient checking harness
// ---------------------------------------------------------------------------

/// Deterministic projection weights so that a scalar loss exercises every
/// output element with distinct coefficients (a plain sum would let
/// sign-symmetric errors cancel).
fn projection<T: crate::tensor::Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of_f64(rng.gen_range(-1.0..1.0))).collect();
    Tensor::from_vec(shape.to_vec(), data)
}

fn weighted_sum(out: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    sum_all(&mul(out, &projection::<f64>(out.shape(), seed)))
}

/// Compare analytic gradients of `f` (w.r.t. every listed leaf) against
/// central finite differences. Leaves must already be `requires_grad`.
/// `fault` adds a deliberate offset to the analytic side so the suite can
/// demonstrate it would notice a wrong gradient.
fn gradcheck(
    group: &'static str,
    name: &str,
    leaves: &[(&str, &Tensor<f64>)],
    f: &dyn Fn() -> Tensor<f64>,
    tol: f64,
    fault: f64,
) -> CheckResult {
    for (_, leaf) in leaves {
        leaf.zero_grad();
    }
    let loss = f();
    if let Err(e) = backward(&loss) {
        return CheckResult::new(group, name, false, format!("backward failed: {e}"));
    }
    let mut max_rel = 0.0f64;
    let mut at = String::new();
    let mut elements = 0usize;
    for (leaf_name, leaf) in leaves {
        let analytic = leaf
            .grad()
            .unwrap_or_else(|| vec![0.0; leaf.elem_count()]);
        for j in 0..leaf.elem_count() {
            let fd_at = |h: f64| {
                let orig = leaf.data()[j];
                leaf.data_mut()[j] = orig + h;
                let up = no_grad(|| f().item());
                leaf.data_mut()[j] = orig - h;
                let dn = no_grad(|| f().item());
                leaf.data_mut()[j] = orig;
                (up - dn) / (2.0 * h)
            };
            let a = analytic[j] + fault;
            let rel_at = |fd: f64| (a - fd).abs() / (a.abs().max(fd.abs()) + 1e-6);
            let mut rel = rel_at(fd_at(1e-5));
            if rel > tol {
                // Piecewise-linear kinks (ReLU and friends) make any single
                // step unreliable: a crossing inside the stencil corrupts the
                // difference quotient at that one scale. A genuinely wrong
                // gradient disagrees at every scale, so retry two others and
                // keep the best agreement.
                rel = rel.min(rel_at(fd_at(1e-6))).min(rel_at(fd_at(1e-4)));
            }
            if rel > max_rel {
                max_rel = rel;
                at = format!("{leaf_name}[{j}]");
            }
            elements += 1;
        }
    }
    let passed = max_rel <= tol && max_rel.is_finite();
    CheckResult::new(
        group,
        name,
        passed,
        format!("max rel err {max_rel:.2e} over {elements} gradient elements (worst at {at}, tol {tol:.0e})"),
    )
}

/// Finite-difference gradient checks for every differentiable primitive, in
/// 64-bit. `fault` offsets one analytic gradient to prove the suite can fail.
pub fn grad_primitives(fault: bool) -> Vec<CheckResult> {
    const G: &str = "gradcheck_primitives";
    let tol = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut out = Vec::new();
    let fault_offset = if fault { 0.05 } else { 0.0 };

    let a: Tensor<f64> = init::uniform(vec![2, 3, 4], 1.0, &mut rng).requires_grad();
    let b: Tensor<f64> = init::uniform(vec![2, 4, 2], 1.0, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "matmul",
        &[("a", &a), ("b", &b)],
        &|| weighted_sum(&matmul(&a, &b), 1),
        tol,
        fault_offset,
    ));

    let x: Tensor<f64> = init::uniform(vec![2, 3, 1], 1.0, &mut rng).requires_grad();
    let y: Tensor<f64> = init::uniform(vec![1, 3, 5], 1.0, &mut rng).requires_grad();
    let z: Tensor<f64> = init::uniform(vec![2, 1, 5], 0.5, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "broadcast add/mul/sub/div",
        &[("x", &x), ("y", &y), ("z", &z)],
        &|| {
            let p = mul(&add(&x, &y), &z);
            let q = div(&sub(&p, &z), &crate::tensor::ops::add_scalar(&mul(&y, &y), 1.5));
            weighted_sum(&q, 2)
        },
        tol,
        0.0,
    ));

    // Keep activations away from their kinks so finite differences are clean.
    let x: Tensor<f64> = Tensor::from_vec(vec![2, 4], vec![-1.7, -0.6, 0.4, 1.9, 0.8, -1.2, 2.3, -0.3]).requires_grad();
    out.push(gradcheck(G, "relu", &[("x", &x)], &|| weighted_sum(&relu(&x), 3), tol, 0.0));
    out.push(gradcheck(G, "gelu", &[("x", &x)], &|| weighted_sum(&gelu(&x), 4), tol, 0.0));

    let x: Tensor<f64> = init::uniform(vec![2, 5, 6], 1.0, &mut rng).requires_grad();
    let gamma: Tensor<f64> = init::uniform(vec![6], 0.5, &mut rng).requires_grad();
    let beta: Tensor<f64> = init::uniform(vec![6], 0.5, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "layer_norm",
        &[("x", &x), ("gamma", &gamma), ("beta", &beta)],
        &|| weighted_sum(&layer_norm(&x, &gamma, &beta, 1e-5), 5),
        tol,
        0.0,
    ));

    let x: Tensor<f64> = init::uniform(vec![2, 3, 4, 4], 1.0, &mut rng).requires_grad();
    let gamma: Tensor<f64> = init::uniform(vec![3], 0.5, &mut rng).requires_grad();
    let beta: Tensor<f64> = init::uniform(vec![3], 0.5, &mut rng).requires_grad();
    let state = crate::tensor::ops::BatchNormState::new(3);
    out.push(gradcheck(
        G,
        "batch_norm2d (training stats)",
        &[("x", &x), ("gamma", &gamma), ("beta", &beta)],
        &|| weighted_sum(&batch_norm2d(&x, &gamma, &beta, &state, true, 0.1, 1e-5), 6),
        tol,
        0.0,
    ));
    out.push(gradcheck(
        G,
        "batch_norm2d (running stats)",
        &[("x", &x), ("gamma", &gamma), ("beta", &beta)],
        &|| weighted_sum(&batch_norm2d(&x, &gamma, &beta, &state, false, 0.1, 1e-5), 7),
        tol,
        0.0,
    ));

    let x: Tensor<f64> = init::uniform(vec![3, 6], 2.0, &mut rng).requires_grad();
    out.push(gradcheck(G, "softmax", &[("x", &x)], &|| weighted_sum(&softmax_lastdim(&x), 8), tol, 0.0));
    out.push(gradcheck(
        G,
        "log_softmax",
        &[("x", &x)],
        &|| weighted_sum(&log_softmax_lastdim(&x), 9),
        tol,
        0.0,
    ));
    out.push(gradcheck(
        G,
        "l2_normalize",
        &[("x", &x)],
        &|| weighted_sum(&l2_normalize_lastdim(&x), 10),
        tol,
        0.0,
    ));

    let x: Tensor<f64> = init::uniform(vec![1, 2, 6, 6], 1.0, &mut rng).requires_grad();
    let w: Tensor<f64> = init::uniform(vec![3, 2, 3, 3], 0.5, &mut rng).requires_grad();
    let bias: Tensor<f64> = init::uniform(vec![3], 0.5, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "conv2d stride 2 pad 1",
        &[("x", &x), ("w", &w), ("b", &bias)],
        &|| weighted_sum(&conv2d(&x, &w, Some(&bias), 2, 1, 1), 11),
        tol,
        0.0,
    ));
    out.push(gradcheck(
        G,
        "conv2d dilation 2",
        &[("x", &x), ("w", &w), ("b", &bias)],
        &|| weighted_sum(&conv2d(&x, &w, Some(&bias), 1, 2, 2), 12),
        tol,
        0.0,
    ));

    let x: Tensor<f64> = init::uniform(vec![1, 3, 3, 3], 1.0, &mut rng).requires_grad();
    let w: Tensor<f64> = init::uniform(vec![3, 2, 2, 2], 0.5, &mut rng).requires_grad();
    let bias: Tensor<f64> = init::uniform(vec![2], 0.5, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "transpose_conv2d k2 s2",
        &[("x", &x), ("w", &w), ("b", &bias)],
        &|| weighted_sum(&transpose_conv2d(&x, &w, Some(&bias), 2, 0), 13),
        tol,
        0.0,
    ));

    let x: Tensor<f64> = init::uniform(vec![1, 2, 3, 4], 1.0, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "bilinear_upsample",
        &[("x", &x)],
        &|| weighted_sum(&bilinear_upsample(&x, 6, 8), 14),
        tol,
        0.0,
    ));

    let x: Tensor<f64> = init::uniform(vec![2, 4, 3], 1.0, &mut rng).requires_grad();
    let y: Tensor<f64> = init::uniform(vec![2, 2, 3], 1.0, &mut rng).requires_grad();
    out.push(gradcheck(
        G,
        "shape ops chain (reshape/permute/narrow/pad/concat/select/roll)",
        &[("x", &x), ("y", &y)],
        &|| {
            let c = concat(&[&x, &y], 1); // [2,6,3]
            let r = roll_axis(&c, 1, 2);
            let s = index_select(&r, 1, &[0, 2, 4, 5]); // [2,4,3]
            let n = narrow(&pad_axis(&s, 2, 1, 0), 1, 1, 3); // [2,3,4]
            let p = permute(&reshape(&n, vec![2, 3, 2, 2]), &[0, 2, 1, 3]);
            let y2 = reshape(&sum_all(&mul(&y, &y)), vec![1, 1, 1, 1]);
            weighted_sum(&add(&sum_axis(&p, 2), &y2), 15)
        },
        tol,
        0.0,
    ));

    out
}

/// Overwrite every parameter with O(1) random values. Composite blocks chain
/// several 0.02-std initialized layers, whose product at fresh init is of the
/// same magnitude as the finite-difference step — useless for checking. The
/// chain rule doesn't care where the point came from, so check somewhere
/// numerically healthy.
fn randomize_params<M: Module<f64>>(module: &M, rng: &mut ChaCha8Rng) {
    for (_, t) in named_tensors(module).params {
        let mut d = t.data_mut();
        for v in d.iter_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
}

/// Finite-difference gradient checks for the composite layers: both
/// connection types, spatial/channel attention, a Swin block pair, and the
/// smoothed cross-entropy loss.
pub fn grad_composites() -> Vec<CheckResult> {
    const G: &str = "gradcheck_composites";
    let tol = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut out = Vec::new();

    // Strided two-path downsampling connection (both branches, training BN).
    let conn: DownsampleConnection<f64> = DownsampleConnection::new(4, 8, &mut rng);
    randomize_params(&conn, &mut rng);
    let x: Tensor<f64> = init::uniform(vec![2, 4, 6, 6], 1.0, &mut rng).requires_grad();
    let named = named_tensors(&conn);
    let mut leaves: Vec<(&str, &Tensor<f64>)> = vec![("x", &x)];
    for (n, t) in &named.params {
        leaves.push((n.as_str(), t));
    }
    out.push(gradcheck(
        G,
        "downsampling connection",
        &leaves,
        &|| weighted_sum(&conn.forward(&x, Phase::Train), 20),
        tol,
        0.0,
    ));

    // Factorized spatial attention block, residual and projections included.
    // 16 channels keep the query dim at 2: a one-dimensional q̂ row is pure
    // sign(q) whose (correct) zero gradient finite differences cannot see.
    let sa: SpatialAttention<f64> = SpatialAttention::new(16, &mut rng);
    randomize_params(&sa, &mut rng);
    let x: Tensor<f64> = init::uniform(vec![1, 16, 4, 4], 1.0, &mut rng).requires_grad();
    let named = named_tensors(&sa);
    let mut leaves: Vec<(&str, &Tensor<f64>)> = vec![("x", &x)];
    for (n, t) in &named.params {
        leaves.push((n.as_str(), t));
    }
    out.push(gradcheck(
        G,
        "spatial attention",
        &leaves,
        &|| weighted_sum(&sa.forward(&x), 21),
        tol,
        0.0,
    ));

    let ca: ChannelAttention<f64> = ChannelAttention::new(16, &mut rng);
    randomize_params(&ca, &mut rng);
    let named = named_tensors(&ca);
    let mut leaves: Vec<(&str, &Tensor<f64>)> = vec![("x", &x)];
    for (n, t) in &named.params {
        leaves.push((n.as_str(), t));
    }
    out.push(gradcheck(
        G,
        "channel attention",
        &leaves,
        &|| weighted_sum(&ca.forward(&x), 22),
        tol,
        0.0,
    ));

    // A plain + shifted windowed block pair on an 8×8 token grid.
    let b1: SwinBlock<f64> = SwinBlock::new(8, 2, 4, 2.0, false, &mut rng);
    let b2: SwinBlock<f64> = SwinBlock::new(8, 2, 4, 2.0, true, &mut rng);
    randomize_params(&b1, &mut rng);
    randomize_params(&b2, &mut rng);
    let x: Tensor<f64> = init::uniform(vec![1, 64, 8], 1.0, &mut rng).requires_grad();
    let (n1, n2) = (named_tensors(&b1), named_tensors(&b2));
    let mut leaves: Vec<(&str, &Tensor<f64>)> = vec![("x", &x)];
    for (n, t) in n1.params.iter().chain(n2.params.iter()) {
        leaves.push((n.as_str(), t));
    }
    out.push(gradcheck(
        G,
        "windowed block pair (plain + shifted)",
        &leaves,
        &|| weighted_sum(&b2.forward(&b1.forward(&x, 8, 8), 8, 8), 23),
        tol,
        0.0,
    ));

    // Dilated-upsampling chain.
    let lu: LargeFieldUpsample<f64> = LargeFieldUpsample::new(4, 2, &mut rng);
    randomize_params(&lu, &mut rng);
    let x: Tensor<f64> = init::uniform(vec![1, 4, 3, 3], 1.0, &mut rng).requires_grad();
    let named = named_tensors(&lu);
    let mut leaves: Vec<(&str, &Tensor<f64>)> = vec![("x", &x)];
    for (n, t) in &named.params {
        leaves.push((n.as_str(), t));
    }
    out.push(gradcheck(
        G,
        "large-field upsampling",
        &leaves,
        &|| weighted_sum(&lu.forward(&x), 24),
        tol,
        0.0,
    ));

    // Label-smoothed loss against fixed labels.
    let logits: Tensor<f64> = init::uniform(vec![1, 4, 4, 4], 1.0, &mut rng).requires_grad();
    let labels: Vec<u32> = (0..16).map(|i| (i % 4) as u32).collect();
    out.push(gradcheck(
        G,
        "soft cross-entropy",
        &[("logits", &logits)],
        &|| soft_cross_entropy(&logits, &labels, 0.1, None).unwrap(),
        tol,
        0.0,
    ));

    out
}

// ---------------------------------------------------------------------------
// Attention oracles and invariants
// ---------------------------------------------------------------------------

/// Factorized and similarity-matrix attention orders vs the O(N²) brute-force
/// reference on 20 random instances (N ≤ 64, head dims ≤ 16), 32-bit.
pub fn attention_oracle() -> Vec<CheckResult> {
    const G: &str = "attention_oracle";
    let mut worst_fact = 0.0f64;
    let mut worst_gram = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.gen_range(1..=2);
        let r = rng.gen_range(2..=64);
        let dk = rng.gen_range(1..=16);
        let dv = rng.gen_range(1..=16);
        let qhat: Tensor<f32> =
            l2_normalize_lastdim(&init::uniform(vec![b, r, dk], 1.0, &mut rng));
        let khat: Tensor<f32> =
            l2_normalize_lastdim(&init::uniform(vec![b, r, dk], 1.0, &mut rng));
        let v: Tensor<f32> = init::uniform(vec![b, r, dv], 1.0, &mut rng);
        let (reference, _) = brute_force_linear_attention(&qhat, &khat, &v);
        let fact = linear_attention_factorized(&qhat, &khat, &v);
        let gram = linear_attention_gram(&qhat, &khat, &v);
        let refv = reference.to_vec();
        let d1 = fact
            .to_vec()
            .iter()
            .zip(refv.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        let d2 = gram
            .to_vec()
            .iter()
            .zip(refv.iter())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        worst_fact = worst_fact.max(d1);
        worst_gram = worst_gram.max(d2);
    }
    vec![
        CheckResult::new(
            G,
            "factorized vs quadratic reference (20 instances)",
            worst_fact <= 1e-5,
            format!("max abs diff {worst_fact:.2e} (tol 1e-5)"),
        ),
        CheckResult::new(
            G,
            "similarity-matrix order vs quadratic reference (20 instances)",
            worst_gram <= 1e-5,
            format!("max abs diff {worst_gram:.2e} (tol 1e-5)"),
        ),
    ]
}

/// Attention-weight convexity over 100 random trials: rows non-negative and
/// summing to 1, outputs inside the per-coordinate value hull, and constant
/// values preserved exactly.
pub fn attention_convexity() -> Vec<CheckResult> {
    const G: &str = "attention_convexity";
    let tol = 1e-6f64;
    let mut worst_neg = 0.0f64; // most negative weight seen
    let mut worst_rowsum = 0.0f64; // worst |Σw − 1|
    let mut worst_hull = 0.0f64; // worst hull violation of factorized output
    for seed in 100..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.gen_range(2..=32);
        let dk = rng.gen_range(1..=8);
        let dv = rng.gen_range(1..=8);
        let qhat: Tensor<f32> =
            l2_normalize_lastdim(&init::uniform(vec![1, r, dk], 1.0, &mut rng));
        let khat: Tensor<f32> =
            l2_normalize_lastdim(&init::uniform(vec![1, r, dk], 1.0, &mut rng));
        let v: Tensor<f32> = init::uniform(vec![1, r, dv], 1.0, &mut rng);
        let (_, weights) = brute_force_linear_attention(&qhat, &khat, &v);
        let wv = weights.to_vec();
        for i in 0..r {
            let row = &wv[i * r..(i + 1) * r];
            let neg = row.iter().cloned().fold(0.0f32, f32::min) as f64;
            worst_neg = worst_neg.min(neg);
            let s: f64 = row.iter().map(|&x| x as f64).sum();
            worst_rowsum = worst_rowsum.max((s - 1.0).abs());
        }
        // Each output row of the factorized path must lie inside the
        // per-dimension value hull, because it is a convex combination.
        let out = linear_attention_factorized(&qhat, &khat, &v).to_vec();
        let vv = v.to_vec();
        for d in 0..dv {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for j in 0..r {
                lo = lo.min(vv[j * dv + d]);
                hi = hi.max(vv[j * dv + d]);
            }
            for i in 0..r {
                let o = out[i * dv + d];
                let viol = ((lo - o).max(0.0)).max((o - hi).max(0.0)) as f64;
                worst_hull = worst_hull.max(viol);
            }
        }
    }
    vec![
        CheckResult::new(
            G,
            "weights nonnegative (100 trials)",
            worst_neg >= -tol,
            format!("most negative weight {worst_neg:.2e} (tol -1e-6)"),
        ),
        CheckResult::new(
            G,
            "weight rows sum to one (100 trials)",
            worst_rowsum <= tol,
            format!("worst |row sum - 1| = {worst_rowsum:.2e} (tol 1e-6)"),
        ),
        CheckResult::new(
            G,
            "outputs inside value hull (100 trials)",
            worst_hull <= tol,
            format!("worst hull violation {worst_hull:.2e} (tol 1e-6)"),
        ),
    ]
}

// ---------------------------------------------------------------------------
// Shape goldens
// ---------------------------------------------------------------------------

/// Literal shape goldens: encoder/aggregation ladders at 64² (run for real on
/// the smallest preset) and at 1024² (analytic plan for swin_s), the swin_s
/// encoder parameter count, patch-embed/convolution equivalence, and the
/// short-grid window clamp.
pub fn shape_goldens() -> Vec<CheckResult> {
    const G: &str = "shape_goldens";
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(50);

    // Smallest preset, forwarded for real at 64².
    let mc = ModelConfig::swin_nano(6);
    let model: crate::model::DcSwin<f32> = crate::model::DcSwin::new(&mc, &mut rng).unwrap();
    let x: Tensor<f32> = init::uniform(vec![1, 3, 64, 64], 1.0, &mut rng);
    let pyr = model.encoder.forward(&x);
    let got: Vec<Vec<usize>> = pyr.as_array().iter().map(|t| t.shape().to_vec()).collect();
    let want = vec![
        vec![1, 32, 16, 16],
        vec![1, 64, 8, 8],
        vec![1, 128, 4, 4],
        vec![1, 256, 2, 2],
    ];
    out.push(CheckResult::new(
        G,
        "smallest preset pyramid at 64²",
        got == want,
        format!("got {got:?}"),
    ));
    // Aggregation ladder on the same real pyramid: same channel/resolution
    // plan as the encoder taps, finest first.
    let agg_got: Vec<Vec<usize>> = match &model.decoder {
        crate::model::Decoder::Aggregated { dcfam, .. } => dcfam
            .forward(&pyr, Phase::Eval)
            .iter()
            .map(|t| t.shape().to_vec())
            .collect(),
        crate::model::Decoder::Direct(_) => Vec::new(),
    };
    out.push(CheckResult::new(
        G,
        "smallest preset aggregation ladder at 64²",
        agg_got == want,
        format!("got {agg_got:?}"),
    ));
    let logits = model.forward(&x, Phase::Eval);
    out.push(CheckResult::new(
        G,
        "smallest preset logits at 64²",
        logits.shape() == [1, 6, 64, 64],
        format!("got {:?}", logits.shape()),
    ));

    // Large preset shapes computed analytically (no 1024² allocation).
    let mc = ModelConfig::swin_s(6);
    let got = mc.pyramid_shapes(1024, 1024);
    let want = [(96, 256, 256), (192, 128, 128), (384, 64, 64), (768, 32, 32)];
    out.push(CheckResult::new(
        G,
        "swin_s pyramid plan at 1024²",
        got == want,
        format!("got {got:?}"),
    ));
    let agg = mc.aggregated_shapes(1024, 1024);
    out.push(CheckResult::new(
        G,
        "swin_s aggregation plan at 1024²",
        agg == want,
        format!("got {agg:?}"),
    ));

    let model: crate::model::DcSwin<f32> = crate::model::DcSwin::new(&mc, &mut rng).unwrap();
    let params = model.encoder_param_count();
    let (lo, hi) = (45_000_000, 55_000_000);
    out.push(CheckResult::new(
        G,
        "swin_s encoder parameter count within 50M ± 10%",
        (lo..=hi).contains(&params),
        format!("{params} parameters (window [{lo}, {hi}])"),
    ));

    // The patch embedding (linear over channel-major patch rows, then
    // layer norm) must equal a stride-4 4×4 convolution with the same
    // weights reshaped, followed by the same norm.
    let pe: crate::encoder::PatchEmbed<f32> = crate::encoder::PatchEmbed::new(4, 8, &mut rng);
    let img: Tensor<f32> = init::uniform(vec![2, 3, 16, 16], 1.0, &mut rng);
    let (tokens, gh, gw) = pe.forward(&img);
    // Linear weight is [3·4·4, 8] with rows in channel-major (c, ky, kx)
    // order; a conv kernel is [8, 3, 4, 4] in the same element order.
    let kernel = reshape(&permute(&pe.proj.weight, &[1, 0]), vec![8, 3, 4, 4]);
    let conv = conv2d(&img, &kernel, pe.proj.bias.as_ref(), 4, 0, 1);
    let conv_tokens = pe
        .norm
        .forward(&permute(&reshape(&conv, vec![2, 8, gh * gw]), &[0, 2, 1]));
    let diff = tokens
        .to_vec()
        .iter()
        .zip(conv_tokens.to_vec().iter())
        .map(|(x, y)| (x - y).abs() as f64)
        .fold(0.0, f64::max);
    out.push(CheckResult::new(
        G,
        "patch embedding equals stride-4 convolution",
        diff <= 1e-5 && tokens.shape()[1] == gh * gw,
        format!("max abs diff {diff:.2e} (tol 1e-5)"),
    ));

    // Window clamp: attention on a grid smaller than the window still works.
    let msa: crate::attention::WindowMsa<f32> = crate::attention::WindowMsa::new(8, 2, 7, &mut rng);
    let tiny: Tensor<f32> = init::uniform(vec![1, 6, 8], 1.0, &mut rng);
    let y = msa.forward(&tiny, 2, 3, true);
    out.push(CheckResult::new(
        G,
        "window clamps to short grid side",
        y.shape() == tiny.shape(),
        format!("got {:?}", y.shape()),
    ));

    out
}

// ---------------------------------------------------------------------------
// Metrics recount oracle
// ---------------------------------------------------------------------------

/// Independent recount: no confusion matrix, just direct set arithmetic per
/// class over the raw label vectors.
fn recount(
    truth: &[u32],
    pred: &[u32],
    k: usize,
    ignore: Option<u32>,
) -> (f64, Vec<Option<f64>>, Vec<f64>) {
    let pairs: Vec<(u32, u32)> = truth
        .iter()
        .zip(pred.iter())
        .filter(|(t, _)| Some(**t) != ignore)
        .map(|(t, p)| (*t, *p))
        .collect();
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let oa = correct as f64 / pairs.len() as f64;
    let mut ious = Vec::with_capacity(k);
    let mut f1s = Vec::with_capacity(k);
    for c in 0..k as u32 {
        let tp = pairs.iter().filter(|(t, p)| *t == c && *p == c).count() as f64;
        let fp = pairs.iter().filter(|(t, p)| *t != c && *p == c).count() as f64;
        let fn_ = pairs.iter().filter(|(t, p)| *t == c && *p != c).count() as f64;
        if tp + fp + fn_ == 0.0 {
            ious.push(None);
            f1s.push(0.0);
        } else {
            ious.push(Some(tp / (tp + fp + fn_)));
            f1s.push(if 2.0 * tp + fp + fn_ == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) });
        }
    }
    (oa, ious, f1s)
}

/// Confusion-matrix metrics vs an independent set-arithmetic recount over
/// 1000 random label-map pairs, plus the per-class F1/IoU identity.
pub fn metrics_oracle() -> Vec<CheckResult> {
    const G: &str = "metrics_oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut worst = 0.0f64;
    let mut worst_identity = 0.0f64;
    let mut trials = 0usize;
    for trial in 0..1000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=200);
        let ignore = if rng.gen_bool(0.3) { Some(255u32) } else { None };
        // Every tenth pair draws from a restricted class range so some classes
        // never occur, exercising the absent-class policy (IoU `None`). Those
        // pairs skip the F1 comparison, because F1 on an absent class is
        // defined to warn on stderr — the policy itself is pinned by unit
        // tests and the warning would drown out the report here. All other
        // pairs get one guaranteed correct pixel per class so every ratio is
        // defined.
        let absent_case = trial % 10 == 0;
        let hi = if absent_case { (k - 1).max(1) } else { k };
        let mut truth: Vec<u32> = (0..n)
            .map(|_| {
                if ignore.is_some() && rng.gen_bool(0.1) {
                    255
                } else {
                    rng.gen_range(0..hi) as u32
                }
            })
            .collect();
        let mut pred: Vec<u32> = (0..n).map(|_| rng.gen_range(0..hi) as u32).collect();
        if !absent_case {
            for c in 0..k as u32 {
                truth.push(c);
                pred.push(c);
            }
        }
        if truth.iter().all(|t| Some(*t) == ignore) {
            continue;
        }
        trials += 1;
        let mut cm = ConfusionMatrix::new(k, ignore);
        cm.accumulate(&truth, &pred).unwrap();
        let (oa, ious, f1s) = recount(&truth, &pred, k, ignore);
        worst = worst.max((cm.overall_accuracy().unwrap() - oa).abs());
        let got_iou = cm.per_class_iou();
        for c in 0..k {
            match (got_iou[c], ious[c]) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => worst = worst.max(1.0),
            }
        }
        if !absent_case {
            let got_f1 = cm.f1_scores();
            for c in 0..k {
                worst = worst.max((got_f1.per_class[c] - f1s[c]).abs());
                // F1 and IoU are linked: F1 = 2·IoU / (1 + IoU).
                let a = got_iou[c].expect("class forced present");
                worst_identity =
                    worst_identity.max((got_f1.per_class[c] - 2.0 * a / (1.0 + a)).abs());
            }
        }
    }
    let mut out = vec![
        CheckResult::new(
            G,
            "confusion metrics match a direct recount",
            worst <= 1e-12,
            format!("max abs diff {worst:.2e} over {trials} random pairs"),
        ),
        CheckResult::new(
            G,
            "F1 equals 2·IoU/(1+IoU) per class",
            worst_identity <= 1e-12,
            format!("max abs diff {worst_identity:.2e}"),
        ),
    ];
    let mut cm = ConfusionMatrix::new(2, None);
    cm.accumulate(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
    let oa = cm.overall_accuracy().unwrap();
    out.push(CheckResult::new(
        G,
        "hand-counted case [0,0,1,1] vs [0,1,1,1]",
        (oa - 0.75).abs() < 1e-15,
        format!("overall accuracy {oa}"),
    ));
    out
}

/// Run every group. `inject_fault` deliberately offsets one analytic gradient
/// so the suite demonstrably notices wrong gradients.
pub fn run(inject_fault: bool) -> Vec<CheckResult> {
    let mut results = Vec::new();
    results.extend(grad_primitives(inject_fault));
    results.extend(grad_composites());
    results.extend(attention_oracle());
    results.extend(attention_convexity());
    results.extend(shape_goldens());
    results.extend(metrics_oracle());
    results
}
