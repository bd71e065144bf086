//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The run reports; it exits non-zero on a failed criterion only when
//! `STREAMCLUST_ACCEPTANCE_STRICT` is set, so `cargo test` still reaches the
//! remaining test targets.
//!
//! Reference values are computed here from first principles (closed-form
//! distribution functions, explicit inverses, raw-point replays, Monte
//! Carlo) and never from the library routine under test.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use streamclust::benchmark::{BenchMatrix, BenchRow};
use streamclust::metric::{hotelling_threshold, mahalanobis_sq};
use streamclust::shrinkage::{estimator_coefficients, shrunk_covariance, trace_estimates};
use streamclust::{ClusterSummary, Execution, MetricMode, SpdMatrix};

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

// ---------------------------------------------------------------- helpers

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

/// Draws from N(mean, Σ) given the lower Cholesky factor of Σ.
fn gaussian(rng: &mut ChaCha8Rng, mean: &DVector<f64>, chol: &DMatrix<f64>) -> Vec<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    (mean + chol * z).iter().copied().collect()
}

fn summarize(points: &[Vec<f64>]) -> ClusterSummary {
    let mut s = ClusterSummary::from_pair(&points[0], &points[1]).unwrap();
    for x in &points[2..] {
        s.add_point(x).unwrap();
    }
    s
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Running mean and standard error.
#[derive(Default)]
struct Moments {
    n: f64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        self.sum += v;
        self.sum_sq += v * v;
    }
    fn mean(&self) -> f64 {
        self.sum / self.n
    }
    fn se(&self) -> f64 {
        let var = (self.sum_sq - self.sum * self.sum / self.n) / (self.n - 1.0);
        (var / self.n).sqrt()
    }
    /// Deviation from `truth` in standard errors.
    fn z(&self, truth: f64) -> f64 {
        (self.mean() - truth).abs() / self.se()
    }
}

// ------------------------------------------------- criteria 1–3: benchmark

fn bench(ks: Vec<usize>, ps: Vec<usize>, chunks: Vec<usize>, metric: MetricMode) -> Vec<BenchRow> {
    let m = BenchMatrix { ks, ps, chunks, metrics: vec![metric], ..BenchMatrix::default() };
    m.run(Execution::Parallel).expect("benchmark run")
}

fn criterion_1(full: &[BenchRow]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [5, 10, 20] {
        for chunk in [25, 50] {
            let rows: Vec<&BenchRow> = full.iter().filter(|r| r.p == p && r.chunk == chunk).collect();
            let hits = rows.iter().filter(|r| r.estimated_clusters == 5).count();
            let max_ret = rows.iter().map(|r| r.retained).max().unwrap_or(0);
            let max_secs = rows.iter().map(|r| r.runtime_secs).fold(0.0, f64::max);
            let mut counts: Vec<usize> = rows.iter().map(|r| r.estimated_clusters).collect();
            counts.sort_unstable();
            let ok = hits >= 8 && max_ret <= 5 && max_secs < 60.0;
            pass &= ok;
            parts.push(format!(
                "p={p} chunk={chunk}: 5 in {hits}/{} seeds, counts {counts:?}, max unclustered {max_ret}, max {max_secs:.1}s",
                rows.len()
            ));
        }
    }
    outcome(1, "five clusters recovered with the full metric", pass, parts.join("; "))
}

fn criterion_2(full: &[BenchRow], diag: &[BenchRow]) -> Outcome {
    let mut eligible = 0;
    let mut over = 0;
    for f in full.iter().filter(|r| r.p == 5 && r.estimated_clusters == 5) {
        let d = diag.iter().find(|d| d.chunk == f.chunk && d.seed == f.seed).expect("matching diagonal run");
        eligible += 1;
        if d.estimated_clusters >= 6 {
            over += 1;
        }
    }
    let mut counts: Vec<usize> = diag.iter().map(|r| r.estimated_clusters).collect();
    counts.sort_unstable();
    let pass = eligible > 0 && 2 * over > eligible;
    outcome(
        2,
        "diagonal metric over-splits where the full metric is right",
        pass,
        format!("{over}/{eligible} runs with full = 5 have diagonal >= 6; diagonal counts {counts:?}"),
    )
}

fn criterion_3(rows: &[BenchRow]) -> Outcome {
    let hits = rows.iter().filter(|r| (18..=22).contains(&r.estimated_clusters)).count();
    let mut counts: Vec<usize> = rows.iter().map(|r| r.estimated_clusters).collect();
    counts.sort_unstable();
    let max_secs = rows.iter().map(|r| r.runtime_secs).fold(0.0, f64::max);
    outcome(
        3,
        "twenty clusters in twenty dimensions",
        2 * hits > rows.len(),
        format!("count in [18, 22] for {hits}/{} seeds, counts {counts:?}, max {max_secs:.1}s", rows.len()),
    )
}

// ---------------------------------------- criterion 4: unbiased estimates

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reps = 10_000;
    let n = 50;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [3usize, 5] {
        let sigma = random_spd(&mut rng, p);
        let chol = sigma.clone().cholesky().unwrap().l();
        let mean = DVector::from_fn(p, |_, _| rng.gen_range(-3.0..3.0));
        let tr_sq: f64 = sigma.iter().map(|v| v * v).sum();
        let diag_sq: f64 = sigma.diagonal().iter().map(|v| v * v).sum();
        let truth = [tr_sq, tr_sq - diag_sq];
        // Whole streams, and streams summarized in two pieces and merged.
        for merged in [false, true] {
            let mut m = [Moments::default(), Moments::default()];
            for _ in 0..reps {
                let pts: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, &mean, &chol)).collect();
                let s = if merged {
                    summarize(&pts[..20]).merge(&summarize(&pts[20..])).unwrap()
                } else {
                    summarize(&pts)
                };
                let z = trace_estimates(&s).unwrap().z_est;
                m[0].push(z[0]);
                m[1].push(z[1]);
            }
            let (z0, z1) = (m[0].z(truth[0]), m[1].z(truth[1]));
            pass &= z0 <= 3.0 && z1 <= 3.0;
            parts.push(format!(
                "p={p}{}: tr Σ² {:.4} vs {:.4} ({z0:.2} SE), off-diag {:.4} vs {:.4} ({z1:.2} SE)",
                if merged { " merged" } else { "" },
                m[0].mean(),
                truth[0],
                m[1].mean(),
                truth[1]
            ));
        }
    }
    outcome(4, "trace estimators are unbiased", pass, parts.join("; "))
}

// ------------------------------------ criterion 5: closed-form coefficients

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 100 {
        // Coefficients from a real history: adds, optionally a merge.
        let p = rng.gen_range(1..=4);
        let n1 = rng.gen_range(2..=60);
        let pts: Vec<Vec<f64>> = (0..n1).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut s = summarize(&pts);
        if rng.gen_bool(0.5) {
            let n2 = rng.gen_range(2..=40);
            let more: Vec<Vec<f64>> = (0..n2).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            s = s.merge(&summarize(&more)).unwrap();
        }
        let (n, ss, tt) = (s.n() as f64, s.s_coef(), s.t_coef());
        let Ok(c) = estimator_coefficients(s.n(), ss, tt) else { continue };
        let a = Matrix4::new(
            1.0 / n, n / (n - 1.0), 1.0 / (n - 1.0), 0.0,
            1.0 / n, 2.0 / (n - 1.0), 1.0, 0.0,
            1.0 / (n - 1.0), 0.0, 0.0, (n + 1.0) / (n - 1.0),
            ss, 2.0 * tt, tt, 0.0,
        );
        let b = nalgebra::Matrix2x4::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0);
        let want = b * a.try_inverse().expect("invertible");
        let scale = want.abs().max();
        for r in 0..2 {
            for k in 0..4 {
                worst = worst.max((c[r][k] - want[(r, k)]).abs() / scale);
            }
        }
        cases += 1;
    }
    outcome(
        5,
        "closed-form coefficients equal B·A⁻¹",
        worst <= 1e-10,
        format!("{cases} cases, worst relative deviation {worst:.2e}"),
    )
}

// --------------------------------------------- criterion 6: Q replay oracle

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut merge_worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = rng.gen_range(1..=8);
        let n = rng.gen_range(2..=30);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen_range(-10.0..10.0)).collect()).collect();
        // Replay: ‖x_k − mean of the first k points‖⁴, the first term being
        // the squared distance of the seeding pair.
        let mut q = sq_dist(&pts[0], &pts[1]).powi(2);
        for k in 2..n {
            let mean: Vec<f64> = (0..p).map(|j| pts[..k].iter().map(|x| x[j]).sum::<f64>() / k as f64).collect();
            q += sq_dist(&pts[k], &mean).powi(2);
        }
        let s = summarize(&pts);
        worst = worst.max((s.q() - q).abs() / q.max(f64::MIN_POSITIVE));

        if n >= 4 {
            let cut = rng.gen_range(2..=n - 2);
            let (a, b) = (summarize(&pts[..cut]), summarize(&pts[cut..]));
            let m = a.merge(&b).unwrap();
            let want = a.q() + b.q();
            merge_worst = merge_worst.max((m.q() - want).abs() / want.max(f64::MIN_POSITIVE));
        }
    }
    outcome(
        6,
        "streamed Q equals its replay; merges add Q",
        worst <= 1e-10 && merge_worst <= 1e-10,
        format!("1000 streams, worst replay deviation {worst:.2e}, worst merge deviation {merge_worst:.2e}"),
    )
}

// ------------------------------------------ criterion 7: PD under scarcity

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0;
    let mut min_eig = f64::INFINITY;
    for case in 0..1000 {
        let p = rng.gen_range(2..=20);
        let n = rng.gen_range(2..=p);
        // Every third case pins some coordinates to a constant.
        let frozen: Vec<bool> = (0..p).map(|_| case % 3 == 0 && rng.gen_bool(0.3)).collect();
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|j| if frozen[j] { 1.5 } else { rng.gen_range(-2.0..2.0) }).collect())
            .collect();
        let sh = shrunk_covariance(&summarize(&pts));
        let m = sh.matrix().clone();
        let eig = m.clone().symmetric_eigen().eigenvalues.min();
        min_eig = min_eig.min(eig / m.diagonal().max());
        if !(eig > 0.0) || m.cholesky().is_none() {
            failures += 1;
        }
    }
    outcome(
        7,
        "shrunk covariance is positive-definite when n <= p",
        failures == 0,
        format!("1000 cases, {failures} not positive-definite, smallest eigenvalue/max diagonal {min_eig:.2e}"),
    )
}

// ------------------------------------ criterion 8: determinant-form distance

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.gen_range(1..=12);
        let cov = random_spd(&mut rng, p);
        let x: Vec<f64> = (0..p).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let y: Vec<f64> = (0..p).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let v = DVector::from_iterator(p, x.iter().zip(&y).map(|(a, b)| a - b));
        let want = (v.transpose() * cov.clone().try_inverse().unwrap() * &v)[(0, 0)];
        let got = mahalanobis_sq(&cov, &x, &y).unwrap();
        let via_factor = SpdMatrix::new(cov).unwrap().mahalanobis_sq(&x, &y);
        worst = worst.max((got - want).abs() / want).max((via_factor - want).abs() / want);
    }
    outcome(
        8,
        "determinant-form Mahalanobis equals the explicit inverse",
        worst <= 1e-8,
        format!("100 cases, worst relative deviation {worst:.2e}"),
    )
}

// ------------------------------------------- criterion 9: Hotelling limits

/// P(|T| ≤ t) for Student's t with integer degrees of freedom, by the
/// finite trigonometric series.
fn t_two_sided(t: f64, nu: u32) -> f64 {
    let theta = (t / (nu as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    if nu % 2 == 1 {
        let mut sum = 0.0;
        if nu > 1 {
            let mut term = 1.0;
            sum = 1.0;
            let mut k = 2;
            while k <= nu - 3 {
                term *= c2 * k as f64 / (k + 1) as f64;
                sum += term;
                k += 2;
            }
        }
        2.0 / std::f64::consts::PI * (theta + s * c * sum)
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1;
        while k < nu - 2 {
            term *= c2 * k as f64 / (k + 1) as f64;
            sum += term;
            k += 2;
        }
        s * sum
    }
}

fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Chi-square CDF for even degrees of freedom.
fn chi2_cdf_even(x: f64, k: u32) -> f64 {
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..k / 2 {
        term *= h / j as f64;
        sum += term;
    }
    1.0 - (-h).exp() * sum
}

fn criterion_9() -> Outcome {
    let mut worst: f64 = 0.0;
    for n in 3..=50u64 {
        for alpha in [0.01, 0.05, 0.1] {
            let t = bisect(|t| t_two_sided(t, (n - 1) as u32), 1.0 - alpha, 0.0, 1e4);
            let got = hotelling_threshold(1, n, alpha).unwrap();
            worst = worst.max((got - t * t).abs() / (t * t));
        }
    }
    let mut chi_worst: f64 = 0.0;
    for p in [2usize, 4, 10, 20] {
        for alpha in [0.01, 0.05, 0.1] {
            let q = bisect(|x| chi2_cdf_even(x, p as u32), 1.0 - alpha, 0.0, 1e3);
            let got = hotelling_threshold(p, 10_000, alpha).unwrap();
            chi_worst = chi_worst.max((got - q).abs() / q);
        }
    }
    outcome(
        9,
        "Hotelling threshold matches t² at p = 1 and tends to chi-square",
        worst <= 1e-8 && chi_worst <= 0.01,
        format!("worst t² deviation {worst:.2e}; worst chi-square gap at n = 10⁴ {:.3}%", 100.0 * chi_worst),
    )
}

// ------------------------------------- criterion 10: moment identities

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (p, n, reps) = (4usize, 8usize, 200_000);
    let sigma = random_spd(&mut rng, p);
    let chol = sigma.clone().cholesky().unwrap().l();
    let zero = DVector::zeros(p);
    let mean = DVector::from_fn(p, |_, _| rng.gen_range(-3.0..3.0));
    let tr = sigma.trace();
    let tr_sq: f64 = sigma.iter().map(|v| v * v).sum();
    let nm1 = (n - 1) as f64;

    let reference = summarize(&vec![vec![0.0; p]; n]);
    let merged_ref = summarize(&vec![vec![0.0; p]; 3]).merge(&summarize(&vec![vec![0.0; p]; n - 3])).unwrap();
    let q_truth = |t: f64| t * (2.0 * tr_sq + tr * tr);

    let mut m = [Moments::default(), Moments::default(), Moments::default(), Moments::default(), Moments::default()];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for _ in 0..reps {
        let y: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, &zero, &chol)).collect();
        let msum: Vec<f64> = (0..p).map(|j| y[..n - 1].iter().map(|v| v[j]).sum()).collect();
        let last = &y[n - 1];
        m[0].push(dot(last, &msum).powi(2));
        m[1].push(dot(&msum, &msum).powi(2));
        m[2].push(dot(last, last) * dot(&msum, &msum));
        let x: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, &mean, &chol)).collect();
        m[3].push(summarize(&x).q());
        m[4].push(summarize(&x[..3]).merge(&summarize(&x[3..])).unwrap().q());
    }
    let truths = [
        nm1 * tr_sq,
        2.0 * nm1 * nm1 * tr_sq + nm1 * nm1 * tr * tr,
        nm1 * tr * tr,
        q_truth(reference.t_coef()),
        q_truth(merged_ref.t_coef()),
    ];
    let labels = ["E(y·M)²", "E(M·M)²", "E(y·y)(M·M)", "E Q", "E Q merged"];
    let zs: Vec<f64> = m.iter().zip(&truths).map(|(mm, &t)| mm.z(t)).collect();
    let detail = labels
        .iter()
        .zip(m.iter().zip(&truths).zip(&zs))
        .map(|(l, ((mm, t), z))| format!("{l} {:.3} vs {t:.3} ({z:.2} SE)", mm.mean()))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(10, "Gaussian moment identities behind the estimator", zs.iter().all(|&z| z <= 3.0), detail)
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut out = vec![
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let full5 = bench(vec![5], vec![5, 10, 20], vec![25, 50], MetricMode::Full);
    let diag5 = bench(vec![5], vec![5], vec![25, 50], MetricMode::Diagonal);
    let full20 = bench(vec![20], vec![20], vec![50], MetricMode::Full);
    out.push(criterion_1(&full5));
    out.push(criterion_2(&full5, &diag5));
    out.push(criterion_3(&full20));
    out.sort_by_key(|o| o.id);

    for o in &out {
        println!("{} criterion {:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed = out.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria passed in {:.0}s", out.len() - failed, out.len(), start.elapsed().as_secs_f64());
    if failed == 0 || std::env::var_os("STREAMCLUST_ACCEPTANCE_STRICT").is_none() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
