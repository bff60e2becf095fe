//! Attention scaling benchmark: wall-clock of the factorized linear path
//! against the quadratic reference across token counts, with log-log slope
//! fits and an allocation probe proving the factorized path never
//! materializes an N×N buffer.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    brute_force_linear_attention, linear_attention_factorized, spatial_attention_dims,
};
use crate::error::{Error, Result};
use crate::tensor::ops::l2_normalize_lastdim;
use crate::tensor::probe::with_probe;
use crate::tensor::{init, no_grad, Tensor};

/// Token counts above this are refused on the quadratic path unless forced:
/// the N×N weight matrix grows past half a gigabyte shortly after.
pub const ORACLE_GUARD: usize = 4096;

/// Channel width the timed rows use; the spatial-attention head sets the
/// query/key and value dims from it.
pub const BENCH_CHANNELS: usize = 64;

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub n: usize,
    /// Seconds per call, factorized path.
    pub t_linear: f64,
    /// Seconds per call, quadratic reference; None when guarded off.
    pub t_quadratic: Option<f64>,
    /// Largest single buffer (elements) allocated by the factorized call.
    pub max_alloc_elems: usize,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Log-log slope of t_linear over every size.
    pub linear_slope: f64,
    /// Log-log slope of t_quadratic over the sizes that ran it (needs ≥ 2).
    pub quadratic_slope: Option<f64>,
}

/// Least-squares slope of ln(t) against ln(n).
pub fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    assert!(points.len() >= 2, "slope needs at least two points");
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| t.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

/// Run `f` repeatedly until at least `floor_secs` of work accumulates (and at
/// least 3 runs), returning seconds per call. Amortizes timer resolution and
/// one-off allocation effects at small sizes.
fn time_per_call(floor_secs: f64, mut f: impl FnMut()) -> f64 {
    let mut calls = 0u32;
    let start = Instant::now();
    loop {
        f();
        calls += 1;
        let elapsed = start.elapsed().as_secs_f64();
        if calls >= 3 && elapsed >= floor_secs {
            return elapsed / calls as f64;
        }
        if calls >= 1000 {
            return elapsed / calls as f64;
        }
    }
}

/// Time both paths over `sizes`. The quadratic reference only runs where
/// `n ≤ ORACLE_GUARD` or `force` is set.
pub fn run(sizes: &[usize], force: bool, seed: u64) -> Result<BenchReport> {
    if sizes.len() < 2 {
        return Err(Error::Invalid(
            "benchmark needs at least two sizes to fit a slope".into(),
        ));
    }
    let (dk, dv) = spatial_attention_dims(BENCH_CHANNELS);
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        if n == 0 {
            return Err(Error::Invalid("token count 0 is not benchmarkable".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ n as u64);
        let qhat: Tensor<f32> = l2_normalize_lastdim(&init::uniform(vec![1, n, dk], 1.0, &mut rng));
        let khat: Tensor<f32> = l2_normalize_lastdim(&init::uniform(vec![1, n, dk], 1.0, &mut rng));
        let v: Tensor<f32> = init::uniform(vec![1, n, dv], 1.0, &mut rng);

        let (_, stats) = with_probe(|| {
            no_grad(|| linear_attention_factorized(&qhat, &khat, &v))
        });
        let t_linear = time_per_call(0.01, || {
            no_grad(|| {
                std::hint::black_box(linear_attention_factorized(&qhat, &khat, &v));
            });
        });
        let t_quadratic = if n <= ORACLE_GUARD || force {
            Some(time_per_call(0.01, || {
                no_grad(|| {
                    std::hint::black_box(brute_force_linear_attention(&qhat, &khat, &v));
                });
            }))
        } else {
            None
        };
        rows.push(BenchRow { n, t_linear, t_quadratic, max_alloc_elems: stats.max_elems });
    }

    let linear_slope = log_log_slope(
        &rows.iter().map(|r| (r.n, r.t_linear)).collect::<Vec<_>>(),
    );
    let quad_pts: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|r| r.t_quadratic.map(|t| (r.n, t)))
        .collect();
    let quadratic_slope = if quad_pts.len() >= 2 {
        Some(log_log_slope(&quad_pts))
    } else {
        None
    };
    Ok(BenchReport { rows, linear_slope, quadratic_slope })
}

impl BenchReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("n\tt_linear\tt_quadratic\tmax_alloc_elems\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{:.6e}\t{}\t{}\n",
                r.n,
                r.t_linear,
                r.t_quadratic.map(|t| format!("{t:.6e}")).unwrap_or_default(),
                r.max_alloc_elems
            ));
        }
        s.push_str(&format!("# linear_slope\t{:.4}\n", self.linear_slope));
        if let Some(q) = self.quadratic_slope {
            s.push_str(&format!("# quadratic_slope\t{q:.4}\n"));
        }
        s
    }
}
