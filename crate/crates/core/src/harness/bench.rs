use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptation::{asa_attention, matrix_attention_scores, SpeakerEmbedding};
use crate::autodiff::{Graph, Tensor};
use crate::error::{arg_err, Result};

/// Cost of vector–matrix (ASA) versus matrix–matrix attention on the same
/// pooled embedding.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub n: usize,
    pub t: usize,
    pub m: usize,
    pub t_m: usize,
    pub reps: usize,
    pub asa_madds: u64,
    pub matrix_madds: u64,
    pub madds_ratio: f64,
    /// Mean wall time per repetition.
    pub asa_seconds: f64,
    pub matrix_seconds: f64,
    pub time_ratio: f64,
    /// Bytes of intermediates the attention allocates (scores, weights, bias).
    pub asa_bytes: usize,
    pub matrix_bytes: usize,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!(
            "N={} T={} M={} T_m={} reps={}\n{:<8} {:>14} {:>14} {:>14}\n",
            self.n, self.t, self.m, self.t_m, self.reps, "method", "madds", "seconds", "bytes"
        );
        s.push_str(&format!("{:<8} {:>14} {:>14.3e} {:>14}\n", "asa", self.asa_madds, self.asa_seconds, self.asa_bytes));
        s.push_str(&format!(
            "{:<8} {:>14} {:>14.3e} {:>14}\n",
            "matrix", self.matrix_madds, self.matrix_seconds, self.matrix_bytes
        ));
        s.push_str(&format!(
            "{:<8} {:>14.1} {:>14.1} {:>14.1}\n",
            "ratio",
            self.madds_ratio,
            self.time_ratio,
            self.matrix_bytes as f64 / self.asa_bytes as f64
        ));
        s
    }
}

/// Times both attentions on a random `[N×T_m]` pooled embedding, where
/// `T_m = ⌈T/M⌉`.
pub fn bench_attention(n: usize, t: usize, m: usize, reps: usize) -> Result<BenchReport> {
    if n == 0 || t == 0 || m == 0 || reps == 0 {
        return arg_err("bench sizes must be positive");
    }
    let t_m = t.div_ceil(m);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let u = Tensor::new(&[n, t_m], (0..n * t_m).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let e = Tensor::new(&[n, 1], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let asa = |u: &Tensor, e: &Tensor| -> Result<u64> {
        let mut g = Graph::new();
        let uv = g.input(u.clone());
        let ev = g.input(e.clone());
        let se = SpeakerEmbedding::new(&g, ev)?;
        let att = asa_attention(&mut g, uv, se, false)?;
        black_box(g.value(att.bias));
        Ok(g.stats().madds)
    };
    let matrix = |u: &Tensor| -> Result<u64> {
        let mut g = Graph::new();
        let uv = g.input(u.clone());
        let s = matrix_attention_scores(&mut g, uv)?;
        black_box(g.value(s));
        Ok(g.stats().madds)
    };

    let asa_madds = asa(&u, &e)?;
    let matrix_madds = matrix(&u)?;
    let t0 = Instant::now();
    for _ in 0..reps {
        asa(black_box(&u), black_box(&e))?;
    }
    let asa_seconds = t0.elapsed().as_secs_f64() / reps as f64;
    let t0 = Instant::now();
    for _ in 0..reps {
        matrix(black_box(&u))?;
    }
    let matrix_seconds = t0.elapsed().as_secs_f64() / reps as f64;

    let f = std::mem::size_of::<f64>();
    Ok(BenchReport {
        n,
        t,
        m,
        t_m,
        reps,
        asa_madds,
        matrix_madds,
        madds_ratio: matrix_madds as f64 / asa_madds as f64,
        asa_seconds,
        matrix_seconds,
        time_ratio: matrix_seconds / asa_seconds,
        // scores d, weights w, bias e·w
        asa_bytes: (2 * t_m + n * t_m) * f,
        // UᵀU scores and their row softmax
        matrix_bytes: 2 * t_m * t_m * f,
    })
}
