//! Synthetic linear representation-learning problems.
//!
//! Ground truth is a Haar-random `B*` (d x k) and a head matrix `W*` (n x k)
//! with prescribed spectrum and row incoherence. Every client draws standard
//! Gaussian inputs and observes noiseless responses `y = <w*_i, B*^T x>`.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CentaurError, Result};
use crate::linalg;
use crate::metrics::OrthonormalBasis;
use crate::stream::{derive_stream, Domain};

/// Resampling budget for the incoherent row factor.
pub const MAX_INCOHERENCE_ATTEMPTS: usize = 1000;

/// The representation and heads a simulation tries to recover.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub b_star: OrthonormalBasis,
    /// Row `i` is the optimal head `w*_i`.
    pub w_star: DMatrix<f64>,
    /// Singular values of `W*/sqrt(n)`, descending.
    pub singular_values: Vec<f64>,
    pub kappa: f64,
    /// Incoherence bound: `max_i ‖w*_i‖ <= mu sqrt(k) s_k`.
    pub mu: f64,
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.b_star.d()
    }

    pub fn k(&self) -> usize {
        self.b_star.k()
    }

    pub fn n(&self) -> usize {
        self.w_star.nrows()
    }

    pub fn s_1(&self) -> f64 {
        self.singular_values[0]
    }

    pub fn s_k(&self) -> f64 {
        *self.singular_values.last().expect("k >= 1")
    }

    pub fn head(&self, client: usize) -> DVector<f64> {
        self.w_star.row(client).transpose()
    }

    /// Smallest `mu` for which the incoherence bound holds.
    pub fn realized_mu(&self) -> f64 {
        let max_row = self.w_star.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        max_row / ((self.k() as f64).sqrt() * self.s_k())
    }
}

/// Geometric profile from `kappa` down to 1.
fn singular_profile(k: usize, kappa: f64) -> Vec<f64> {
    if k == 1 {
        return vec![1.0];
    }
    (0..k)
        .map(|j| kappa.powf((k - 1 - j) as f64 / (k - 1) as f64))
        .collect()
}

/// Draw a ground truth with `s_1 = kappa_target`, `s_k = 1` and
/// `max_i ‖w*_i‖ <= mu_target sqrt(k)`.
pub fn gen_ground_truth<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    n: usize,
    kappa_target: f64,
    mu_target: f64,
    rng: &mut R,
) -> Result<GroundTruth> {
    if k == 0 || k > d || k > n {
        return Err(CentaurError::param(format!(
            "need 1 <= k <= min(d, n), got d={d}, k={k}, n={n}"
        )));
    }
    if !(kappa_target >= 1.0 && kappa_target.is_finite()) {
        return Err(CentaurError::param(format!("kappa must be finite and >= 1, got {kappa_target}")));
    }
    if k == 1 && kappa_target != 1.0 {
        return Err(CentaurError::param("a rank-one problem always has kappa = 1"));
    }
    if !(mu_target > 0.0 && mu_target.is_finite()) {
        return Err(CentaurError::param(format!("mu must be positive, got {mu_target}")));
    }

    let b_star = OrthonormalBasis::random(d, k, rng)?;
    let s = singular_profile(k, kappa_target);
    let rotation = linalg::thin_q(&linalg::gaussian_matrix(k, k, rng))?;
    let mut scaled_sv = rotation.transpose();
    for (j, sj) in s.iter().enumerate() {
        scaled_sv.row_mut(j).scale_mut(*sj);
    }
    let sqrt_n = (n as f64).sqrt();
    let bound = mu_target * (k as f64).sqrt() * s[k - 1];
    for _ in 0..MAX_INCOHERENCE_ATTEMPTS {
        let u = linalg::thin_q(&linalg::gaussian_matrix(n, k, rng))?;
        let w_star = (&u * &scaled_sv) * sqrt_n;
        let max_row = w_star.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        if max_row <= bound {
            return Ok(GroundTruth {
                b_star,
                w_star,
                kappa: s[0] / s[k - 1],
                singular_values: s,
                mu: mu_target,
            });
        }
    }
    Err(CentaurError::param(format!(
        "mu = {mu_target} admits no incoherent head matrix after {MAX_INCOHERENCE_ATTEMPTS} attempts"
    )))
}

/// One client's local samples; column `j` of `inputs` is `x_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub inputs: DMatrix<f64>,
    pub responses: DVector<f64>,
}

impl ClientDataset {
    pub fn new(inputs: DMatrix<f64>, responses: DVector<f64>) -> Result<Self> {
        if inputs.ncols() != responses.len() {
            return Err(CentaurError::input(format!(
                "{} inputs but {} responses",
                inputs.ncols(),
                responses.len()
            )));
        }
        Ok(Self { inputs, responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn has_non_finite(&self) -> bool {
        self.inputs.iter().chain(self.responses.iter()).any(|v| !v.is_finite())
    }
}

/// `<w*_i, B*^T x>`, the noiseless response of client `i` at `x`.
pub fn response(truth: &GroundTruth, client: usize, x: &[f64]) -> f64 {
    let b = truth.b_star.matrix();
    let mut y = 0.0;
    for a in 0..truth.k() {
        let z: f64 = b.column(a).iter().zip(x).map(|(bi, xi)| bi * xi).sum();
        y += truth.w_star[(client, a)] * z;
    }
    y
}

/// `m` standard Gaussian inputs for client `client` (0-based) and their responses.
pub fn gen_client_data<R: Rng + ?Sized>(
    truth: &GroundTruth,
    client: usize,
    m: usize,
    rng: &mut R,
) -> Result<ClientDataset> {
    if client >= truth.n() {
        return Err(CentaurError::param(format!(
            "client index {client} out of range for n = {}",
            truth.n()
        )));
    }
    let inputs = linalg::gaussian_matrix(m, truth.d(), rng).transpose();
    let responses = DVector::from_iterator(
        m,
        (0..m).map(|j| response(truth, client, inputs.column(j).as_slice())),
    );
    ClientDataset::new(inputs, responses)
}

/// Problem sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub k: usize,
    pub n: usize,
    pub m: usize,
}

/// Ground truth plus every client's dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FrlProblem {
    pub truth: GroundTruth,
    pub clients: Vec<ClientDataset>,
    pub dims: Dims,
}

/// Deterministic problem for `seed`: the truth comes from the `data_gen`
/// stream `(0, 0)`, client `i` from `(1, i)`.
pub fn gen_problem(
    d: usize,
    k: usize,
    n: usize,
    m: usize,
    kappa_target: f64,
    mu_target: f64,
    seed: u64,
) -> Result<FrlProblem> {
    if m < 2 {
        return Err(CentaurError::param(format!("need m >= 2 samples per client, got {m}")));
    }
    let mut rng = derive_stream(seed, Domain::DataGen, 0, 0);
    let truth = gen_ground_truth(d, k, n, kappa_target, mu_target, &mut rng)?;
    let clients = (0..n)
        .map(|i| {
            let mut rng = derive_stream(seed, Domain::DataGen, 1, i as u64);
            gen_client_data(&truth, i, m, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrlProblem {
        truth,
        clients,
        dims: Dims { d, k, n, m },
    })
}

/// A dense array stored as base64 of little-endian f64 in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedArray {
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedArray {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut bytes = Vec::with_capacity(8 * m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data: BASE64.encode(bytes),
        }
    }

    fn from_slice(v: &[f64]) -> Self {
        let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
        Self {
            shape: vec![v.len()],
            data: BASE64.encode(bytes),
        }
    }

    fn values(&self) -> Result<Vec<f64>> {
        let bytes = BASE64
            .decode(&self.data)
            .map_err(|e| CentaurError::input(format!("bad base64 payload: {e}")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != 8 * expected {
            return Err(CentaurError::input(format!(
                "array of shape {:?} needs {} bytes, got {}",
                self.shape,
                8 * expected,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.shape.len() != 2 {
            return Err(CentaurError::input(format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok(DMatrix::from_row_slice(self.shape[0], self.shape[1], &self.values()?))
    }

    fn to_vec(&self) -> Result<Vec<f64>> {
        if self.shape.len() != 1 {
            return Err(CentaurError::input(format!("expected a vector, got shape {:?}", self.shape)));
        }
        self.values()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthRecord {
    b_star: EncodedArray,
    w_star: EncodedArray,
    singular_values: EncodedArray,
    kappa: f64,
    mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClientRecord {
    /// `m x d`, one sample per row.
    inputs: EncodedArray,
    responses: EncodedArray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProblemRecord {
    format: String,
    dims: Dims,
    truth: TruthRecord,
    clients: Vec<ClientRecord>,
}

const PROBLEM_FORMAT: &str = "centaur-problem/v1";

impl FrlProblem {
    /// Portable JSON dump; floats are stored bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        let record = ProblemRecord {
            format: PROBLEM_FORMAT.to_string(),
            dims: self.dims,
            truth: TruthRecord {
                b_star: EncodedArray::from_matrix(self.truth.b_star.matrix()),
                w_star: EncodedArray::from_matrix(&self.truth.w_star),
                singular_values: EncodedArray::from_slice(&self.truth.singular_values),
                kappa: self.truth.kappa,
                mu: self.truth.mu,
            },
            clients: self
                .clients
                .iter()
                .map(|c| ClientRecord {
                    inputs: EncodedArray::from_matrix(&c.inputs.transpose()),
                    responses: EncodedArray::from_slice(c.responses.as_slice()),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: ProblemRecord = serde_json::from_str(text)?;
        if record.format != PROBLEM_FORMAT {
            return Err(CentaurError::input(format!("unknown problem format {}", record.format)));
        }
        let truth = GroundTruth {
            b_star: OrthonormalBasis::new(record.truth.b_star.to_matrix()?)?,
            w_star: record.truth.w_star.to_matrix()?,
            singular_values: record.truth.singular_values.to_vec()?,
            kappa: record.truth.kappa,
            mu: record.truth.mu,
        };
        let clients = record
            .clients
            .iter()
            .map(|c| {
                ClientDataset::new(
                    c.inputs.to_matrix()?.transpose(),
                    DVector::from_vec(c.responses.to_vec()?),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let dims = record.dims;
        if truth.d() != dims.d || truth.k() != dims.k || truth.n() != dims.n || clients.len() != dims.n {
            return Err(CentaurError::input("problem arrays disagree with the recorded dims"));
        }
        Ok(Self { truth, clients, dims })
    }
}
