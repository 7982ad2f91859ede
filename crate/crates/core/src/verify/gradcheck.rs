use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{
    bimap_backward, bimap_forward, fc_backward, fc_forward, logeig_backward, logeig_forward,
    reeig_backward, reeig_forward, softmax_ce, subsec_backward, subsec_forward, trilcan_backward,
    trilcan_forward, window_index_sets,
};
use crate::linalg::{qr_row_orthonormalize, sym_eig, Mat};
use crate::optim::init_semi_orthogonal;
use crate::rng::SeededRng;
use crate::verify::fd::{discrepancy, finite_diff, finite_diff_sym, pair_sum, Discrepancy};

/// Analytic gradients smaller than this in magnitude are judged on absolute error.
pub const SMALL_GRADIENT: f64 = 1e-6;
/// Absolute tolerance used for small gradients.
pub const ABS_FALLBACK: f64 = 1e-8;

/// Worst discrepancy of one tensor across every evaluated seed.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel: f64,
    pub max_abs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub target: String,
    pub tensors: Vec<TensorCheck>,
    pub tol: f64,
    pub seeds: Vec<u64>,
    /// Seeds whose inputs sat next to a non-differentiable point and were skipped.
    pub excluded: Vec<u64>,
    pub pass: bool,
}

impl GradCheckReport {
    pub(crate) fn new(target: impl Into<String>, tol: f64) -> Self {
        GradCheckReport {
            target: target.into(),
            tensors: Vec::new(),
            tol,
            seeds: Vec::new(),
            excluded: Vec::new(),
            pass: true,
        }
    }

    pub(crate) fn record(&mut self, name: &str, d: Discrepancy) {
        let ok = if d.analytic_scale < SMALL_GRADIENT {
            d.abs <= ABS_FALLBACK
        } else {
            d.rel <= self.tol
        };
        let entry = match self.tensors.iter_mut().position(|t| t.name == name) {
            Some(i) => &mut self.tensors[i],
            None => {
                self.tensors.push(TensorCheck {
                    name: name.to_string(),
                    max_rel: 0.0,
                    max_abs: 0.0,
                    pass: true,
                });
                self.tensors.last_mut().unwrap()
            }
        };
        entry.max_rel = entry.max_rel.max(d.rel);
        entry.max_abs = entry.max_abs.max(d.abs);
        entry.pass &= ok;
        self.pass = self.tensors.iter().all(|t| t.pass);
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorCheck> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Worst relative error over all tensors.
    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel))
    }

    pub fn csv_header() -> &'static str {
        "target,tensor,max_rel_err,max_abs_err,pass"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.tensors
            .iter()
            .map(|t| {
                format!(
                    "{},{},{:e},{:e},{}",
                    self.target, t.name, t.max_rel, t.max_abs, t.pass
                )
            })
            .collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck {}: {} (tol {:e}, {} seeds, {} excluded)",
            self.target,
            if self.pass { "PASS" } else { "FAIL" },
            self.tol,
            self.seeds.len(),
            self.excluded.len()
        )?;
        for t in &self.tensors {
            writeln!(
                f,
                "  {:<14} max_rel {:>10.3e}  max_abs {:>10.3e}  {}",
                t.name,
                t.max_rel,
                t.max_abs,
                if t.pass { "ok" } else { "FAIL" }
            )?;
        }
        if !self.excluded.is_empty() {
            writeln!(f, "  kink-adjacent seeds excluded: {:?}", self.excluded)?;
        }
        Ok(())
    }
}

/// Result of checking the finite-difference oracle against closed forms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleCheck {
    /// Max deviation of the numeric gradient of `trace` from the identity.
    pub trace_abs: f64,
    /// Relative error of the numeric gradient of `log det` against the inverse.
    pub logdet_rel: f64,
    pub pass: bool,
}

/// Runs the symmetric oracle on `trace` and `log det`, whose gradients are `I` and
/// `S⁻¹`. Under the pair-slot convention the log-det slots read `2(S⁻¹)_ij` off
/// the diagonal.
pub fn validate_oracle(seed: u64, h: f64) -> Result<OracleCheck> {
    let mut rng = SeededRng::new(seed);
    let s = conditioned_spd(&mut rng, 6, 0.5, 3.0);
    let trace = finite_diff_sym(|m| m.trace(), &s, h)?;
    let trace_abs = trace.sub(&Mat::identity(6)).max_abs();

    let logdet = |m: &Mat| -> f64 {
        match sym_eig(m) {
            Ok(d) => d.values.iter().map(|v| v.ln()).sum(),
            Err(_) => f64::NAN,
        }
    };
    let numeric = finite_diff_sym(logdet, &s, h)?;
    let inverse = sym_eig(&s)?.reconstruct_with(|l| 1.0 / l);
    let logdet_rel = discrepancy(pair_sum(&inverse).as_slice(), numeric.as_slice()).rel;
    Ok(OracleCheck {
        trace_abs,
        logdet_rel,
        pass: trace_abs <= 1e-10 && logdet_rel <= 1e-6,
    })
}

/// Random SPD matrix `U diag(λ) Uᵀ` with `U` Haar-like orthogonal and eigenvalues in
/// `[lo, hi]`, pairwise at least `(hi − lo) / 2n` apart.
pub fn conditioned_spd(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> Mat {
    let values = spread_values(rng, n, lo, hi);
    with_spectrum(rng, &values)
}

fn spread_values(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    // Jittered uniform grid: neighbours stay at least half a cell apart.
    let cell = (hi - lo) / n as f64;
    let mut values: Vec<f64> = (0..n)
        .map(|i| lo + cell * (i as f64 + 0.25 + 0.5 * rng.uniform()))
        .collect();
    rng.shuffle(&mut values);
    values
}

fn random_orthogonal(rng: &mut SeededRng, n: usize) -> Mat {
    loop {
        let g = Mat::from_fn(n, n, |_, _| rng.gaussian());
        if let Ok(q) = qr_row_orthonormalize(&g) {
            return q;
        }
    }
}

fn with_spectrum(rng: &mut SeededRng, values: &[f64]) -> Mat {
    let n = values.len();
    let u = random_orthogonal(rng, n);
    let scaled = Mat::from_fn(n, n, |i, j| u[(j, i)] * values[j]);
    scaled.matmul(&u).sym()
}

fn random_sym(rng: &mut SeededRng, n: usize) -> Mat {
    Mat::from_fn(n, n, |_, _| rng.gaussian()).sym()
}

fn random_mat(rng: &mut SeededRng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.gaussian())
}

fn row(v: &[f64]) -> Mat {
    Mat::from_vec(1, v.len(), v.to_vec()).unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    BiMap,
    ReEig,
    LogEig,
    /// Window selection followed by LogEig on every window.
    SubSecLogEig,
    TrilCan,
    Fc,
    SoftmaxCe,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::BiMap,
        LayerKind::ReEig,
        LayerKind::LogEig,
        LayerKind::SubSecLogEig,
        LayerKind::TrilCan,
        LayerKind::Fc,
        LayerKind::SoftmaxCe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::BiMap => "bimap",
            LayerKind::ReEig => "reeig",
            LayerKind::LogEig => "logeig",
            LayerKind::SubSecLogEig => "subsec",
            LayerKind::TrilCan => "trilcan",
            LayerKind::Fc => "fc",
            LayerKind::SoftmaxCe => "softmax-ce",
        }
    }

    /// Shapes used when none are given:
    /// bimap `[d_out, d_in]`, reeig/logeig `[n]`, subsec `[grid, k]`, trilcan
    /// `[n, count]`, fc `[classes, features]`, softmax-ce `[classes]`.
    pub fn default_dims(self) -> Vec<usize> {
        match self {
            LayerKind::BiMap => vec![10, 25],
            LayerKind::ReEig | LayerKind::LogEig => vec![6],
            LayerKind::SubSecLogEig => vec![3, 2],
            LayerKind::TrilCan => vec![4, 3],
            LayerKind::Fc => vec![5, 12],
            LayerKind::SoftmaxCe => vec![6],
        }
    }

    /// Tolerance used when none is given: tighter for the purely linear BiMap and FC.
    pub fn default_tol(self) -> f64 {
        if matches!(self, LayerKind::BiMap | LayerKind::Fc) {
            1e-6
        } else {
            1e-5
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "bimap" => Ok(LayerKind::BiMap),
            "reeig" => Ok(LayerKind::ReEig),
            "logeig" => Ok(LayerKind::LogEig),
            "subsec" | "subsec-logeig" | "subsec+logeig" => Ok(LayerKind::SubSecLogEig),
            "trilcan" => Ok(LayerKind::TrilCan),
            "fc" => Ok(LayerKind::Fc),
            "softmax-ce" | "softmax" | "ce" => Ok(LayerKind::SoftmaxCe),
            _ => Err(Error::Config {
                field: "layer",
                msg: format!(
                    "unknown layer `{s}`; expected one of {}",
                    LayerKind::ALL.map(LayerKind::name).join(", ")
                ),
            }),
        }
    }
}

/// One layer-level gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub kind: LayerKind,
    pub dims: Vec<usize>,
    /// ReEig threshold.
    pub eps: f64,
    pub seeds: Vec<u64>,
    pub tol: f64,
    /// Finite-difference step.
    pub h: f64,
    /// Places one ReEig input eigenvalue `1e-8` above the threshold.
    pub near_kink: bool,
}

impl LayerCheck {
    pub fn new(kind: LayerKind) -> Self {
        LayerCheck {
            kind,
            dims: kind.default_dims(),
            eps: 0.1,
            seeds: (0..20).collect(),
            tol: kind.default_tol(),
            h: super::DEFAULT_STEP,
            near_kink: false,
        }
    }
}

fn dim(dims: &[usize], i: usize, what: &str) -> Result<usize> {
    dims.get(i)
        .copied()
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Config {
            field: "dims",
            msg: format!("missing or zero {what}"),
        })
}

/// Compares every hand-written backward pass of `check.kind` against the oracle on
/// conditioned random inputs, probing scalar loss `⟨G, output⟩` with random `G`.
pub fn gradcheck_layer(check: &LayerCheck) -> Result<GradCheckReport> {
    let mut report = GradCheckReport::new(check.kind.name(), check.tol);
    let h = check.h;
    for &seed in &check.seeds {
        let mut rng = SeededRng::stream(seed, 0x6c61_7965);
        match check.kind {
            LayerKind::BiMap => {
                let (d_out, d_in) = (dim(&check.dims, 0, "d_out")?, dim(&check.dims, 1, "d_in")?);
                let w = init_semi_orthogonal(&mut rng, d_out, d_in)?.into_mat();
                let s = conditioned_spd(&mut rng, d_in, 0.5, 3.0);
                let g = random_sym(&mut rng, d_out);
                let (_, tape) = bimap_forward(&w, &s)?;
                let (gw, gs) = bimap_backward(&tape, &g)?;
                let loss =
                    |w: &Mat, s: &Mat| bimap_forward(w, s).map_or(f64::NAN, |(y, _)| g.dot(&y));
                let nw = finite_diff(|w| loss(w, &s), &w, h)?;
                let ns = finite_diff_sym(|s| loss(&w, s), &s, h)?;
                report.record("grad_W", discrepancy(gw.as_slice(), nw.as_slice()));
                report.record(
                    "grad_S",
                    discrepancy(pair_sum(&gs).as_slice(), ns.as_slice()),
                );
            }
            LayerKind::ReEig => {
                let n = dim(&check.dims, 0, "n")?;
                let eps = check.eps;
                let below = n / 2;
                let mut values = spread_values(&mut rng, below.max(1), eps / 100.0, eps / 10.0);
                values.truncate(below);
                values.extend(spread_values(
                    &mut rng,
                    n - below,
                    10.0 * eps,
                    10.0 * eps + 3.0,
                ));
                if check.near_kink {
                    values[n - 1] = eps + 1e-8;
                }
                let margin = (1e-7f64).max(2.0 * h);
                if values.iter().any(|v| (v - eps).abs() <= margin) {
                    report.excluded.push(seed);
                    report.seeds.push(seed);
                    continue;
                }
                let s = with_spectrum(&mut rng, &values);
                let g = random_sym(&mut rng, n);
                let (_, tape) = reeig_forward(&s, eps)?;
                let analytic = reeig_backward(&tape, &g)?;
                let numeric = finite_diff_sym(
                    |s| reeig_forward(s, eps).map_or(f64::NAN, |(y, _)| g.dot(&y)),
                    &s,
                    h,
                )?;
                report.record(
                    "grad_S",
                    discrepancy(pair_sum(&analytic).as_slice(), numeric.as_slice()),
                );
            }
            LayerKind::LogEig => {
                let n = dim(&check.dims, 0, "n")?;
                let s = conditioned_spd(&mut rng, n, 0.5, 3.0);
                let g = random_sym(&mut rng, n);
                let (_, tape) = logeig_forward(&s)?;
                let analytic = logeig_backward(&tape, &g)?;
                let numeric = finite_diff_sym(
                    |s| logeig_forward(s).map_or(f64::NAN, |(y, _)| g.dot(&y)),
                    &s,
                    h,
                )?;
                report.record(
                    "grad_S",
                    discrepancy(pair_sum(&analytic).as_slice(), numeric.as_slice()),
                );
            }
            LayerKind::SubSecLogEig => {
                let (d, k) = (dim(&check.dims, 0, "grid")?, dim(&check.dims, 1, "k")?);
                let step = check.dims.get(2).copied().unwrap_or(1);
                let sets = window_index_sets(d, k, step)?;
                let s = conditioned_spd(&mut rng, d * d, 0.5, 3.0);
                let gs: Vec<Mat> = sets.iter().map(|_| random_sym(&mut rng, k * k)).collect();
                let probe = |s: &Mat| -> Result<f64> {
                    let (subs, _) = subsec_forward(s, &sets)?;
                    let mut total = 0.0;
                    for (m, g) in subs.iter().zip(&gs) {
                        total += g.dot(&logeig_forward(m)?.0);
                    }
                    Ok(total)
                };
                let (subs, st) = subsec_forward(&s, &sets)?;
                let through = subs
                    .iter()
                    .zip(&gs)
                    .map(|(m, g)| logeig_backward(&logeig_forward(m)?.1, g))
                    .collect::<Result<Vec<_>>>()?;
                let analytic = subsec_backward(&st, &through)?;
                let numeric = finite_diff_sym(|s| probe(s).unwrap_or(f64::NAN), &s, h)?;
                report.record(
                    "grad_S",
                    discrepancy(pair_sum(&analytic).as_slice(), numeric.as_slice()),
                );
            }
            LayerKind::TrilCan => {
                let (n, count) = (dim(&check.dims, 0, "n")?, dim(&check.dims, 1, "count")?);
                let mats: Vec<Mat> = (0..count).map(|_| random_sym(&mut rng, n)).collect();
                let (v, tape) = trilcan_forward(&mats);
                let g = rng.gaussian_vec(v.len());
                let grads = trilcan_backward(&tape, &g)?;
                for (i, m) in mats.iter().enumerate() {
                    let numeric = finite_diff_sym(
                        |x| {
                            let mut ms = mats.clone();
                            ms[i] = x.clone();
                            crate::linalg::dot(&trilcan_forward(&ms).0, &g)
                        },
                        m,
                        h,
                    )?;
                    report.record(
                        "grad_S",
                        discrepancy(pair_sum(&grads[i]).as_slice(), numeric.as_slice()),
                    );
                }
            }
            LayerKind::Fc => {
                let (c, f) = (
                    dim(&check.dims, 0, "classes")?,
                    dim(&check.dims, 1, "features")?,
                );
                let w = random_mat(&mut rng, c, f);
                let b = rng.gaussian_vec(c);
                let v = rng.gaussian_vec(f);
                let g = rng.gaussian_vec(c);
                let (_, tape) = fc_forward(&w, &b, &v)?;
                let (gw, gb, gv) = fc_backward(&tape, &w, &g)?;
                let loss = |w: &Mat, b: &[f64], v: &[f64]| {
                    fc_forward(w, b, v).map_or(f64::NAN, |(y, _)| crate::linalg::dot(&y, &g))
                };
                let nw = finite_diff(|x| loss(x, &b, &v), &w, h)?;
                let nb = finite_diff(|x| loss(&w, x.as_slice(), &v), &row(&b), h)?;
                let nv = finite_diff(|x| loss(&w, &b, x.as_slice()), &row(&v), h)?;
                report.record("grad_W", discrepancy(gw.as_slice(), nw.as_slice()));
                report.record("grad_b", discrepancy(&gb, nb.as_slice()));
                report.record("grad_v", discrepancy(&gv, nv.as_slice()));
            }
            LayerKind::SoftmaxCe => {
                let c = dim(&check.dims, 0, "classes")?;
                let logits: Vec<f64> = (0..c).map(|_| 2.0 * rng.gaussian()).collect();
                let label = rng.below(c);
                let (_, grad) = softmax_ce(&logits, label)?;
                let numeric = finite_diff(
                    |x| softmax_ce(x.as_slice(), label).map_or(f64::NAN, |(l, _)| l),
                    &row(&logits),
                    h,
                )?;
                report.record("grad_logits", discrepancy(&grad, numeric.as_slice()));
            }
        }
        report.seeds.push(seed);
    }
    Ok(report)
}
