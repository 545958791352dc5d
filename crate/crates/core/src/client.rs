//! Client-side procedures: the LRL client (exact head solve, representation
//! gradient on a disjoint batch) and the general client running local steps
//! against a [`LocalModel`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{CentaurError, Result};
use crate::metrics::OrthonormalBasis;
use crate::synthetic::ClientDataset;

/// Gram condition number above which the head solve is regularized.
pub const RIDGE_CONDITION_LIMIT: f64 = 1e12;
/// Ridge magnitude relative to `trace(Gram) / k`.
pub const RIDGE_SCALE: f64 = 1e-9;

/// A client's personalized head. It is kept on the client and is not part of
/// any update sent to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalHead {
    w: DVector<f64>,
    ridge_applied: bool,
}

impl LocalHead {
    pub fn new(w: DVector<f64>) -> Self {
        Self { w, ridge_applied: false }
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn norm(&self) -> f64 {
        self.w.norm()
    }

    pub fn ridge_applied(&self) -> bool {
        self.ridge_applied
    }
}

/// What a client sends back for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub payload: DMatrix<f64>,
    pub pre_clip_norm: f64,
    pub client_id: usize,
    pub round: u64,
}

impl ClientUpdate {
    fn new(payload: DMatrix<f64>, client_id: usize, round: u64) -> Self {
        let pre_clip_norm = payload.norm();
        Self {
            payload,
            pre_clip_norm,
            client_id,
            round,
        }
    }
}

/// `size` distinct indices from `0..m` by a partial Fisher-Yates shuffle,
/// in draw order.
fn partial_shuffle<R: Rng + ?Sized>(m: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..m).collect();
    for i in 0..size {
        let j = rng.random_range(i..m);
        pool.swap(i, j);
    }
    pool.truncate(size);
    pool
}

/// A sorted subset of `0..m` of the given size, drawn without replacement.
pub fn sample_subset<R: Rng + ?Sized>(m: usize, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if size == 0 || size > m {
        return Err(CentaurError::param(format!(
            "cannot draw {size} of {m} samples without replacement"
        )));
    }
    let mut s = partial_shuffle(m, size, rng);
    s.sort_unstable();
    Ok(s)
}

/// Two disjoint sorted index sets of size `mbar` from one partial shuffle:
/// the first `mbar` draws form `S1`, the next `mbar` form `S2`.
pub fn sample_disjoint_subsets<R: Rng + ?Sized>(
    m: usize,
    mbar: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if mbar == 0 || 2 * mbar > m {
        return Err(CentaurError::param(format!(
            "two disjoint batches of {mbar} need at least {} samples, have {m}",
            2 * mbar
        )));
    }
    let drawn = partial_shuffle(m, 2 * mbar, rng);
    let mut s1 = drawn[..mbar].to_vec();
    let mut s2 = drawn[mbar..].to_vec();
    s1.sort_unstable();
    s2.sort_unstable();
    Ok((s1, s2))
}

fn check_batch(data: &ClientDataset, idx: &[usize]) -> Result<()> {
    if idx.is_empty() {
        return Err(CentaurError::param("empty batch"));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= data.len()) {
        return Err(CentaurError::param(format!(
            "sample index {bad} out of range for {} samples",
            data.len()
        )));
    }
    Ok(())
}

fn check_shapes(b: &DMatrix<f64>, w: &DVector<f64>, data: &ClientDataset) -> Result<()> {
    if b.nrows() != data.dim() || b.ncols() != w.len() {
        return Err(CentaurError::param(format!(
            "representation {}x{} and head of length {} do not fit inputs of dimension {}",
            b.nrows(),
            b.ncols(),
            w.len(),
            data.dim()
        )));
    }
    Ok(())
}

/// `(1/|S|) sum_j 1/2 (<B^T x_j, w> - y_j)^2` over the batch.
pub fn local_loss(b: &DMatrix<f64>, w: &DVector<f64>, data: &ClientDataset, idx: &[usize]) -> Result<f64> {
    check_batch(data, idx)?;
    check_shapes(b, w, data)?;
    let v = b * w;
    let mut total = 0.0;
    for &j in idx {
        let r = data.inputs.column(j).dot(&v) - data.responses[j];
        total += 0.5 * r * r;
    }
    Ok(total / idx.len() as f64)
}

/// Least-squares head on the projected features `z = B^T x`.
pub fn solve_local_head(b: &OrthonormalBasis, data: &ClientDataset, idx: &[usize]) -> Result<LocalHead> {
    solve_head_dense(b.matrix(), data, idx)
}

fn solve_head_dense(b: &DMatrix<f64>, data: &ClientDataset, idx: &[usize]) -> Result<LocalHead> {
    check_batch(data, idx)?;
    if b.nrows() != data.dim() {
        return Err(CentaurError::param("representation and inputs disagree on dimension"));
    }
    let k = b.ncols();
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let mut z = vec![0.0; k];
    for &j in idx {
        let x = data.inputs.column(j);
        for (a, za) in z.iter_mut().enumerate() {
            *za = b.column(a).dot(&x);
        }
        for a in 0..k {
            rhs[a] += data.responses[j] * z[a];
            for c in 0..k {
                gram[(a, c)] += z[a] * z[c];
            }
        }
    }
    // NaN or infinite samples surface here.
    if gram.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(CentaurError::input("batch has non-finite entries"));
    }
    let trace = gram.trace();
    if trace == 0.0 {
        // Every projected feature vanished; the zero head is a minimizer.
        return Ok(LocalHead {
            w: DVector::zeros(k),
            ridge_applied: true,
        });
    }
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let ridge_applied = !(lo > 0.0 && hi / lo <= RIDGE_CONDITION_LIMIT);
    if ridge_applied {
        let ridge = RIDGE_SCALE * trace / k as f64;
        for a in 0..k {
            gram[(a, a)] += ridge;
        }
    }
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| CentaurError::numeric("head normal equations are singular"))?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(CentaurError::numeric("head solve produced non-finite weights"));
    }
    Ok(LocalHead { w, ridge_applied })
}

/// Gradient of [`local_loss`] with respect to the representation:
/// `(1/|S|) sum_j (<B^T x_j, w> - y_j) x_j w^T`.
pub fn rep_gradient(b: &OrthonormalBasis, head: &LocalHead, data: &ClientDataset, idx: &[usize]) -> Result<DMatrix<f64>> {
    rep_gradient_dense(b.matrix(), &head.w, data, idx)
}

fn rep_gradient_dense(b: &DMatrix<f64>, w: &DVector<f64>, data: &ClientDataset, idx: &[usize]) -> Result<DMatrix<f64>> {
    check_batch(data, idx)?;
    check_shapes(b, w, data)?;
    let v = b * w;
    let mut u = DVector::<f64>::zeros(data.dim());
    for &j in idx {
        let x = data.inputs.column(j);
        let r = x.dot(&v) - data.responses[j];
        u.axpy(r, &x, 1.0);
    }
    u /= idx.len() as f64;
    let g = &u * w.transpose();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(CentaurError::input("representation gradient is not finite"));
    }
    Ok(g)
}

/// Gradient of [`local_loss`] with respect to the head.
fn head_gradient_dense(b: &DMatrix<f64>, w: &DVector<f64>, data: &ClientDataset, idx: &[usize]) -> Result<DVector<f64>> {
    check_batch(data, idx)?;
    check_shapes(b, w, data)?;
    let v = b * w;
    let mut u = DVector::<f64>::zeros(data.dim());
    for &j in idx {
        let x = data.inputs.column(j);
        let r = x.dot(&v) - data.responses[j];
        u.axpy(r, &x, 1.0);
    }
    u /= idx.len() as f64;
    Ok(b.tr_mul(&u))
}

/// One round of the LRL client: sample `S1`, `S2`; fit the head on `S1`;
/// return the representation gradient on `S2`. The head is handed back to
/// the caller separately and never enters the update.
pub fn lrl_client_round<R: Rng + ?Sized>(
    b_t: &OrthonormalBasis,
    data: &ClientDataset,
    mbar: usize,
    client_id: usize,
    round: u64,
    rng: &mut R,
) -> Result<(ClientUpdate, LocalHead)> {
    lrl_client_round_dense(b_t.matrix(), data, mbar, client_id, round, rng)
}

/// [`lrl_client_round`] for a representation that need not be orthonormal.
pub(crate) fn lrl_client_round_dense<R: Rng + ?Sized>(
    b_t: &DMatrix<f64>,
    data: &ClientDataset,
    mbar: usize,
    client_id: usize,
    round: u64,
    rng: &mut R,
) -> Result<(ClientUpdate, LocalHead)> {
    let (s1, s2) = sample_disjoint_subsets(data.len(), mbar, rng)?;
    let head = solve_head_dense(b_t, data, &s1)?;
    let g = rep_gradient_dense(b_t, &head.w, data, &s2)?;
    Ok((ClientUpdate::new(g, client_id, round), head))
}

/// A local model `l([b, w]; S)` with a shared parameter matrix `b` and a
/// per-client head vector `w`.
pub trait LocalModel: Send + Sync {
    fn head_dim(&self, b: &DMatrix<f64>) -> usize;

    fn loss(&self, b: &DMatrix<f64>, w: &DVector<f64>, data: &ClientDataset, idx: &[usize]) -> Result<f64>;

    fn head_gradient(
        &self,
        b: &DMatrix<f64>,
        w: &DVector<f64>,
        data: &ClientDataset,
        idx: &[usize],
    ) -> Result<DVector<f64>>;

    fn rep_gradient(
        &self,
        b: &DMatrix<f64>,
        w: &DVector<f64>,
        data: &ClientDataset,
        idx: &[usize],
    ) -> Result<DMatrix<f64>>;

    /// Approximately minimize over the head. The default runs `epochs`
    /// full-batch gradient steps of size `step` from zero.
    fn fit_head(
        &self,
        b: &DMatrix<f64>,
        data: &ClientDataset,
        idx: &[usize],
        epochs: usize,
        step: f64,
    ) -> Result<DVector<f64>> {
        let mut w = DVector::zeros(self.head_dim(b));
        for _ in 0..epochs {
            let g = self.head_gradient(b, &w, data, idx)?;
            w.axpy(-step, &g, 1.0);
        }
        Ok(w)
    }
}

/// The linear model `y = <w, B^T x>`; its head fit is the exact solve.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearModel;

impl LocalModel for LinearModel {
    fn head_dim(&self, b: &DMatrix<f64>) -> usize {
        b.ncols()
    }

    fn loss(&self, b: &DMatrix<f64>, w: &DVector<f64>, data: &ClientDataset, idx: &[usize]) -> Result<f64> {
        local_loss(b, w, data, idx)
    }

    fn head_gradient(
        &self,
        b: &DMatrix<f64>,
        w: &DVector<f64>,
        data: &ClientDataset,
        idx: &[usize],
    ) -> Result<DVector<f64>> {
        head_gradient_dense(b, w, data, idx)
    }

    fn rep_gradient(
        &self,
        b: &DMatrix<f64>,
        w: &DVector<f64>,
        data: &ClientDataset,
        idx: &[usize],
    ) -> Result<DMatrix<f64>> {
        rep_gradient_dense(b, w, data, idx)
    }

    fn fit_head(
        &self,
        b: &DMatrix<f64>,
        data: &ClientDataset,
        idx: &[usize],
        _epochs: usize,
        _step: f64,
    ) -> Result<DVector<f64>> {
        Ok(solve_head_dense(b, data, idx)?.w)
    }
}

/// Local-training knobs of the general client.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSteps {
    pub t_l: usize,
    pub eta_l: f64,
    pub head_epochs: usize,
    pub head_step: f64,
}

impl LocalSteps {
    pub fn new(t_l: usize, eta_l: f64, head_epochs: usize, head_step: f64) -> Result<Self> {
        if t_l > 0 && !(eta_l > 0.0 && eta_l.is_finite()) {
            return Err(CentaurError::param(format!("local step size must be positive, got {eta_l}")));
        }
        if head_epochs > 0 && !(head_step > 0.0 && head_step.is_finite()) {
            return Err(CentaurError::param(format!("head step size must be positive, got {head_step}")));
        }
        Ok(Self {
            t_l,
            eta_l,
            head_epochs,
            head_step,
        })
    }
}

/// One round of the general client: fit the head on the whole local set,
/// then `T_l` mini-batch steps on `b`. The payload is the drift
/// `b^{T_l} - b^t`, so the server moves along it.
pub fn general_client_round<M: LocalModel + ?Sized, R: Rng + ?Sized>(
    b_t: &DMatrix<f64>,
    model: &M,
    data: &ClientDataset,
    mbar: usize,
    steps: &LocalSteps,
    client_id: usize,
    round: u64,
    rng: &mut R,
) -> Result<(ClientUpdate, DVector<f64>)> {
    let all: Vec<usize> = (0..data.len()).collect();
    let w = model.fit_head(b_t, data, &all, steps.head_epochs, steps.head_step)?;
    let mut b = b_t.clone();
    for _ in 0..steps.t_l {
        let batch = sample_subset(data.len(), mbar, rng)?;
        let g = model.rep_gradient(&b, &w, data, &batch)?;
        b -= g * steps.eta_l;
    }
    Ok((ClientUpdate::new(b - b_t, client_id, round), w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn dataset(points: &[(&[f64], f64)]) -> ClientDataset {
        let d = points[0].0.len();
        let cols: Vec<f64> = points.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        ClientDataset::new(
            DMatrix::from_column_slice(d, points.len(), &cols),
            DVector::from_iterator(points.len(), points.iter().map(|p| p.1)),
        )
        .unwrap()
    }

    fn e1() -> OrthonormalBasis {
        OrthonormalBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap()
    }

    #[test]
    fn exact_partition_and_forced_disjointness() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (a, b) = sample_disjoint_subsets(10, 5, &mut rng).unwrap();
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let (a, b) = sample_disjoint_subsets(2, 1, &mut rng).unwrap();
        assert_ne!(a, b);
        assert!(sample_disjoint_subsets(5, 3, &mut rng).is_err());
        assert!(sample_disjoint_subsets(5, 0, &mut rng).is_err());
    }

    #[test]
    fn hand_solved_head() {
        let data = dataset(&[(&[1.0, 0.0], 2.0), (&[2.0, 0.0], 4.0)]);
        let head = solve_local_head(&e1(), &data, &[0, 1]).unwrap();
        assert!((head.weights()[0] - 2.0).abs() < 1e-15);
        assert!(!head.ridge_applied());
    }

    #[test]
    fn zero_targets_give_zero_head() {
        let data = dataset(&[(&[1.0, 3.0], 0.0), (&[-2.0, 1.0], 0.0)]);
        let head = solve_local_head(&e1(), &data, &[0, 1]).unwrap();
        assert_eq!(head.weights()[0], 0.0);
    }

    #[test]
    fn hand_evaluated_gradient() {
        let data = dataset(&[(&[1.0, 1.0], 0.0)]);
        let head = LocalHead::new(DVector::from_element(1, 1.0));
        let g = rep_gradient(&e1(), &head, &data, &[0]).unwrap();
        assert_eq!(g, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]));
    }

    #[test]
    fn degenerate_batch_uses_ridge() {
        // one point, two head coordinates: the Gram matrix has rank one
        let b = OrthonormalBasis::new(DMatrix::identity(3, 2)).unwrap();
        let data = dataset(&[(&[1.0, 2.0, 0.5], 3.0)]);
        let head = solve_local_head(&b, &data, &[0]).unwrap();
        assert!(head.ridge_applied());
        assert!(head.weights().iter().all(|v| v.is_finite()));
        // the ridge solution still nearly interpolates
        let fit = 1.0 * head.weights()[0] + 2.0 * head.weights()[1];
        assert!((fit - 3.0).abs() < 1e-6);
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let data = dataset(&[(&[f64::NAN, 0.0], 1.0)]);
        assert!(matches!(
            solve_local_head(&e1(), &data, &[0]),
            Err(CentaurError::Input(_))
        ));
    }

    #[test]
    fn zero_local_steps_give_zero_payload() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let data = dataset(&[(&[1.0, 0.5], 1.0), (&[0.3, -1.0], 2.0), (&[2.0, 2.0], 0.1)]);
        let b = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        let steps = LocalSteps::new(0, 0.0, 0, 0.0).unwrap();
        let (u, _) = general_client_round(&b, &LinearModel, &data, 2, &steps, 0, 0, &mut rng).unwrap();
        assert_eq!(u.payload, DMatrix::zeros(2, 1));
        assert_eq!(u.pre_clip_norm, 0.0);
        assert!(LocalSteps::new(3, 0.0, 0, 0.0).is_err());
    }
}
