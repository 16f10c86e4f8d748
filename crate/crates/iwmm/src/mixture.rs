//! Collapsed Dirichlet-process Gaussian-Wishart mixture over latent
//! coordinates: per-component sufficient statistics with O(Q²) add/remove via
//! rank-one Cholesky updates, the collapsed marginal p(X|Z), analytic
//! component predictive densities, the CRP partition prior, and the gradient
//! of the collapsed marginal with respect to a single point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{chol_downdate, chol_log_det, chol_lower, chol_update, ln_gamma, LN_PI};

/// Gaussian-Wishart prior over component (mean, precision) pairs plus the
/// Dirichlet-process concentration.
#[derive(Debug, Clone)]
pub struct GwPrior {
    u: DVector<f64>,
    r: f64,
    s: DMatrix<f64>,
    nu: f64,
    eta: f64,
    s_chol: DMatrix<f64>,
    log_det_s: f64,
}

impl GwPrior {
    pub fn new(u: DVector<f64>, r: f64, s: DMatrix<f64>, nu: f64, eta: f64) -> Result<Self> {
        let q = u.len();
        let mut violations = Vec::new();
        if q == 0 {
            violations.push("prior mean must be nonempty".to_string());
        }
        if s.nrows() != q || s.ncols() != q {
            violations.push(format!(
                "scale matrix is {}x{} but mean has dimension {q}",
                s.nrows(),
                s.ncols()
            ));
        }
        if !(r > 0.0) {
            violations.push(format!("relative precision r = {r} must be > 0"));
        }
        if !(nu > q as f64 - 1.0) {
            violations.push(format!(
                "degrees of freedom nu = {nu} must exceed Q-1 = {}",
                q - 1
            ));
        }
        if !(eta > 0.0) {
            violations.push(format!("concentration eta = {eta} must be > 0"));
        }
        if !violations.is_empty() {
            return Err(Error::Config(violations));
        }
        let s_chol = chol_lower(&s).ok_or_else(|| {
            Error::Config(vec!["scale matrix S is not positive definite".to_string()])
        })?;
        let log_det_s = chol_log_det(&s_chol);
        Ok(Self {
            u,
            r,
            s,
            nu,
            eta,
            s_chol,
            log_det_s,
        })
    }

    /// Unit-scale default: u = 0, r = 1, S = I, ν = Q+1, η = 1.
    pub fn unit(q: usize) -> Self {
        Self::new(
            DVector::zeros(q),
            1.0,
            DMatrix::identity(q, q),
            q as f64 + 1.0,
            1.0,
        )
        .expect("unit prior is valid")
    }

    pub fn q(&self) -> usize {
        self.u.len()
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn s_chol(&self) -> &DMatrix<f64> {
        &self.s_chol
    }
}

/// Scalar knobs from which a [`GwPrior`] of any dimension can be built:
/// u = mean·1, S = scale·I, ν = dof (Q+1 when unset).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GwPriorSpec {
    pub mean: f64,
    pub rel_precision: f64,
    pub scale: f64,
    pub dof: Option<f64>,
    pub eta: f64,
}

impl Default for GwPriorSpec {
    fn default() -> Self {
        Self {
            mean: 0.0,
            rel_precision: 1.0,
            scale: 1.0,
            dof: None,
            eta: 1.0,
        }
    }
}

impl GwPriorSpec {
    pub fn build(&self, q: usize) -> Result<GwPrior> {
        GwPrior::new(
            DVector::from_element(q, self.mean),
            self.rel_precision,
            DMatrix::identity(q, q) * self.scale,
            self.dof.unwrap_or(q as f64 + 1.0),
            self.eta,
        )
    }
}

/// Sufficient statistics of one mixture component under the Gaussian-Wishart
/// posterior. An empty component equals the prior exactly.
#[derive(Debug, Clone)]
pub struct ComponentStats {
    count: usize,
    r_c: f64,
    nu_c: f64,
    u_c: DVector<f64>,
    s_chol: DMatrix<f64>,
    log_det_s: f64,
    sum_x: DVector<f64>,
    sum_xxt: DMatrix<f64>,
}

impl ComponentStats {
    pub fn empty(prior: &GwPrior) -> Self {
        let q = prior.q();
        Self {
            count: 0,
            r_c: prior.r,
            nu_c: prior.nu,
            u_c: prior.u.clone(),
            s_chol: prior.s_chol.clone(),
            log_det_s: prior.log_det_s,
            sum_x: DVector::zeros(q),
            sum_xxt: DMatrix::zeros(q, q),
        }
    }

    /// Batch construction straight from the defining formulas; used as the
    /// rebuild path and as an independent route in tests.
    pub fn from_points<'a, I>(points: I, prior: &GwPrior) -> Result<Self>
    where
        I: IntoIterator<Item = DVector<f64>>,
    {
        let mut stats = Self::empty(prior);
        for x in points {
            stats.count += 1;
            stats.sum_x += &x;
            stats.sum_xxt += &x * x.transpose();
        }
        stats.r_c = prior.r + stats.count as f64;
        stats.nu_c = prior.nu + stats.count as f64;
        stats.u_c = (prior.r * &prior.u + &stats.sum_x) / stats.r_c;
        stats.refactor(prior)?;
        Ok(stats)
    }

    /// Full refactorization of S_c from the sum caches.
    fn refactor(&mut self, prior: &GwPrior) -> Result<()> {
        let s_c = &prior.s + &self.sum_xxt + prior.r * &prior.u * prior.u.transpose()
            - self.r_c * &self.u_c * self.u_c.transpose();
        self.s_chol = chol_lower(&s_c).ok_or_else(|| {
            Error::Numerical("posterior scale matrix lost positive definiteness".into())
        })?;
        self.log_det_s = chol_log_det(&self.s_chol);
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn r_c(&self) -> f64 {
        self.r_c
    }

    pub fn nu_c(&self) -> f64 {
        self.nu_c
    }

    pub fn u_c(&self) -> &DVector<f64> {
        &self.u_c
    }

    pub fn log_det_s(&self) -> f64 {
        self.log_det_s
    }

    pub fn s_chol(&self) -> &DMatrix<f64> {
        &self.s_chol
    }

    /// Reconstruct S_c densely (diagnostics and tests).
    pub fn s_matrix(&self) -> DMatrix<f64> {
        &self.s_chol * self.s_chol.transpose()
    }

    fn q(&self) -> usize {
        self.u_c.len()
    }

    /// Include a point: posterior parameter update in O(Q²).
    ///
    /// The scale update collapses to a single rank-one Cholesky update with
    /// vector sqrt(r_c/(r_c+1))·(x − u_c).
    pub fn add(&mut self, x: &DVector<f64>, prior: &GwPrior) {
        debug_assert_eq!(x.len(), self.q());
        let r_new = prior.r + (self.count + 1) as f64;
        let u_new = (self.r_c * &self.u_c + x) / r_new;
        let mut w = (x - &self.u_c) * (self.r_c / r_new).sqrt();
        chol_update(&mut self.s_chol, &mut w);
        self.log_det_s = chol_log_det(&self.s_chol);

        self.count += 1;
        self.r_c = r_new;
        self.nu_c = prior.nu + self.count as f64;
        self.u_c = u_new;
        self.sum_x += x;
        self.sum_xxt += x * x.transpose();
    }

    /// Exclude a previously added point: exact inverse of [`Self::add`].
    ///
    /// The rank-one downdate is numerically guarded; if cancellation drives a
    /// pivot non-positive the factor is rebuilt from the sum caches instead.
    /// Removing the sole point resets the component to the prior exactly.
    pub fn remove(&mut self, x: &DVector<f64>, prior: &GwPrior) {
        assert!(self.count >= 1, "remove called on an empty component");
        if self.count == 1 {
            *self = Self::empty(prior);
            return;
        }
        let r_new = prior.r + (self.count - 1) as f64;
        let u_new = (self.r_c * &self.u_c - x) / r_new;
        let mut w = (x - &u_new) * (r_new / self.r_c).sqrt();

        self.count -= 1;
        self.r_c = r_new;
        self.nu_c = prior.nu + self.count as f64;
        self.u_c = u_new;
        self.sum_x -= x;
        self.sum_xxt -= x * x.transpose();

        if chol_downdate(&mut self.s_chol, &mut w).is_ok() {
            self.log_det_s = chol_log_det(&self.s_chol);
        } else {
            self.refactor(prior)
                .expect("scale matrix rebuild from sum caches failed");
        }
    }

    /// Log predictive density of `x` under this component (prior predictive
    /// when the component is empty): the ratio of collapsed marginals with
    /// and without `x`, evaluated through the primed posterior parameters.
    pub fn log_pred(&self, x: &DVector<f64>) -> f64 {
        let q = self.q();
        let r1 = self.r_c + 1.0;
        let nu1 = self.nu_c + 1.0;
        let mut l1 = self.s_chol.clone();
        let mut w = (x - &self.u_c) * (self.r_c / r1).sqrt();
        chol_update(&mut l1, &mut w);
        let log_det_1 = chol_log_det(&l1);

        let mut value = -0.5 * q as f64 * LN_PI
            + 0.5 * q as f64 * (self.r_c.ln() - r1.ln())
            + 0.5 * (self.nu_c * self.log_det_s - nu1 * log_det_1);
        for d in 1..=q {
            value += ln_gamma(0.5 * (nu1 + 1.0 - d as f64))
                - ln_gamma(0.5 * (self.nu_c + 1.0 - d as f64));
        }
        value
    }

    /// This component's factor of the collapsed marginal p(X|Z).
    pub fn log_marginal_term(&self, prior: &GwPrior) -> f64 {
        let q = self.q() as f64;
        let mut value = -0.5 * self.count as f64 * q * LN_PI
            + 0.5 * q * (prior.r.ln() - self.r_c.ln())
            + 0.5 * (prior.nu * prior.log_det_s - self.nu_c * self.log_det_s);
        for d in 1..=self.q() {
            value += ln_gamma(0.5 * (self.nu_c + 1.0 - d as f64))
                - ln_gamma(0.5 * (prior.nu + 1.0 - d as f64));
        }
        value
    }

    /// Gradient of the collapsed marginal with respect to a member point:
    /// −ν_c · S_c⁻¹ (x − u_c).
    pub fn prior_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let diff = x - &self.u_c;
        let z = self
            .s_chol
            .solve_lower_triangular(&diff)
            .expect("cholesky factor has positive diagonal");
        let v = self
            .s_chol
            .tr_solve_lower_triangular(&z)
            .expect("cholesky factor has positive diagonal");
        -self.nu_c * v
    }
}

/// Cluster assignments plus per-cluster sufficient statistics.
///
/// Clusters live in slots with free-list reuse so Gibbs sweeps never pay for
/// relabeling; canonical labels are produced only on output.
#[derive(Debug, Clone)]
pub struct Assignments {
    z: Vec<usize>,
    slots: Vec<Option<ComponentStats>>,
    free: Vec<usize>,
}

impl Assignments {
    /// Everyone in one cluster.
    pub fn single_cluster(x: &DMatrix<f64>, prior: &GwPrior) -> Result<Self> {
        Self::from_labels(x, &vec![0; x.nrows()], prior)
    }

    pub fn from_labels(x: &DMatrix<f64>, labels: &[usize], prior: &GwPrior) -> Result<Self> {
        if labels.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} labels for {} points",
                labels.len(),
                x.nrows()
            )));
        }
        let n_slots = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut slots: Vec<Option<ComponentStats>> = vec![None; n_slots];
        for (i, &c) in labels.iter().enumerate() {
            let stats = slots[c].get_or_insert_with(|| ComponentStats::empty(prior));
            stats.add(&x.row(i).transpose(), prior);
        }
        let free = (0..n_slots).filter(|&s| slots[s].is_none()).collect();
        Ok(Self {
            z: labels.to_vec(),
            slots,
            free,
        })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn slot_of(&self, n: usize) -> usize {
        self.z[n]
    }

    pub fn stats(&self, slot: usize) -> &ComponentStats {
        self.slots[slot].as_ref().expect("slot is active")
    }

    pub fn active(&self) -> impl Iterator<Item = (usize, &ComponentStats)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|st| (i, st)))
    }

    /// Remove point `n` from its cluster, retiring the cluster if it empties.
    pub fn detach(&mut self, n: usize, x: &DVector<f64>, prior: &GwPrior) {
        let slot = self.z[n];
        let stats = self.slots[slot].as_mut().expect("point's slot is active");
        stats.remove(x, prior);
        if stats.count() == 0 {
            self.slots[slot] = None;
            self.free.push(slot);
        }
    }

    /// Add point `n` to an existing slot, or to a fresh cluster when `slot`
    /// is `None`. Returns the slot used.
    pub fn attach(
        &mut self,
        n: usize,
        x: &DVector<f64>,
        slot: Option<usize>,
        prior: &GwPrior,
    ) -> usize {
        let slot = match slot {
            Some(s) => s,
            None => match self.free.pop() {
                Some(s) => {
                    self.slots[s] = Some(ComponentStats::empty(prior));
                    s
                }
                None => {
                    self.slots.push(Some(ComponentStats::empty(prior)));
                    self.slots.len() - 1
                }
            },
        };
        self.slots[slot]
            .as_mut()
            .expect("target slot is active")
            .add(x, prior);
        self.z[n] = slot;
        slot
    }

    /// Cluster sizes of the active clusters, keyed by slot.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        self.active().map(|(slot, st)| (slot, st.count())).collect()
    }

    /// Rebuild every cluster's sufficient statistics from the given
    /// coordinates, keeping the membership. Required after the coordinates
    /// move (an accepted HMC proposal).
    pub fn refresh(&mut self, x: &DMatrix<f64>, prior: &GwPrior) {
        debug_assert_eq!(x.nrows(), self.z.len());
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (i, &slot) in self.z.iter().enumerate() {
            groups.entry(slot).or_default().push(i);
        }
        for (slot, members) in groups {
            let stats =
                ComponentStats::from_points(members.iter().map(|&i| x.row(i).transpose()), prior)
                    .expect("posterior scale stays SPD for finite coordinates");
            self.slots[slot] = Some(stats);
        }
    }

    /// Relabel clusters by order of first appearance (serialization form).
    pub fn canonical_labels(&self) -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        let mut next = 0usize;
        self.z
            .iter()
            .map(|&slot| {
                *map.entry(slot).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                })
            })
            .collect()
    }
}

/// Collapsed marginal log p(X|Z): the points are already folded into the
/// per-cluster sufficient statistics.
pub fn log_marginal_x_given_z(asgn: &Assignments, prior: &GwPrior) -> f64 {
    asgn.active()
        .map(|(_, st)| st.log_marginal_term(prior))
        .sum()
}

/// Same quantity recomputed from scratch by batch construction: the
/// independent route used by the cached-state consistency check.
pub fn log_marginal_batch(x: &DMatrix<f64>, labels: &[usize], prior: &GwPrior) -> Result<f64> {
    let mut groups: std::collections::BTreeMap<usize, Vec<DVector<f64>>> = Default::default();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(x.row(i).transpose());
    }
    let mut total = 0.0;
    for pts in groups.into_values() {
        total += ComponentStats::from_points(pts, prior)?.log_marginal_term(prior);
    }
    Ok(total)
}

/// CRP log probability of a partition given by cluster sizes.
pub fn crp_log_prob_counts(counts: &[usize], eta: f64) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let c = counts.len() as f64;
    c * eta.ln() + counts.iter().map(|&nc| ln_gamma(nc as f64)).sum::<f64>()
        - (ln_gamma(eta + n as f64) - ln_gamma(eta))
}

/// CRP log probability of an assignment vector.
pub fn crp_log_prob_labels(labels: &[usize], eta: f64) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for &c in labels {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let counts: Vec<usize> = counts.into_values().collect();
    crp_log_prob_counts(&counts, eta)
}

/// CRP log probability of the current assignments.
pub fn crp_log_prob(asgn: &Assignments, eta: f64) -> f64 {
    let counts: Vec<usize> = asgn.active().map(|(_, st)| st.count()).collect();
    crp_log_prob_counts(&counts, eta)
}

/// Unnormalized CRP weights for reassigning a removed point: the size of
/// each existing cluster (keyed by slot), plus `eta` for a new cluster.
pub fn crp_gibbs_weights(asgn: &Assignments, eta: f64) -> (Vec<(usize, f64)>, f64) {
    let existing = asgn
        .active()
        .map(|(slot, st)| (slot, st.count() as f64))
        .collect();
    (existing, eta)
}

/// Value of log p(X|Z) and its gradient with respect to every point, with
/// statistics rebuilt for the given coordinates (the HMC target path).
pub fn mixture_value_and_grad(
    x: &DMatrix<f64>,
    slots: &[usize],
    prior: &GwPrior,
) -> Result<(f64, DMatrix<f64>)> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &c) in slots.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(x.nrows(), x.ncols());
    for members in groups.values() {
        let stats =
            ComponentStats::from_points(members.iter().map(|&i| x.row(i).transpose()), prior)?;
        value += stats.log_marginal_term(prior);
        for &i in members {
            grad.row_mut(i)
                .copy_from(&stats.prior_grad(&x.row(i).transpose()).transpose());
        }
    }
    Ok((value, grad))
}
