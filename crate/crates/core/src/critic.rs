//! Bootstrapped Q ensemble: a shared trunk feeding `L` small value heads.
//!
//! Each head sees a different bootstrap sample of the data, arranged by
//! Bernoulli head masks drawn per environment step: only the heads active in
//! a step's mask receive gradient from that step's learning phase. The
//! spread of the heads' predictions on a state-action pair is then an
//! estimate of the critic's epistemic uncertainty there, which is what the
//! replay-priority formula feeds on.

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::{hstack, Activation, Gradients, Matrix, Mlp};

/// Which heads participate in a learning phase. Guaranteed non-empty: a
/// mask with every bit clear cannot be constructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadMask {
    bits: Vec<bool>,
}

impl HeadMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidMask("mask has no entries".into()));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::InvalidMask("mask must activate at least one head".into()));
        }
        Ok(Self { bits })
    }

    /// Draws `heads` independent Bernoulli(`prob`) bits, redrawing the whole
    /// mask in the (rare) all-zero case so the invariant holds.
    pub fn sample(heads: usize, prob: f64, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 {
            return Err(Error::InvalidArgument("head count must be >= 1".into()));
        }
        if !(prob > 0.0 && prob <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mask probability must be in (0, 1], got {prob}"
            )));
        }
        loop {
            let bits: Vec<bool> = (0..heads).map(|_| rng.random_bool(prob)).collect();
            if bits.iter().any(|&b| b) {
                return Ok(Self { bits });
            }
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor guarantees at least one active head
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_active(&self, head: usize) -> bool {
        self.bits.get(head).copied().unwrap_or(false)
    }

    /// Number of active heads, `M >= 1`.
    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Mean and population variance of the active heads' predictions.
pub fn head_stats(q_values: &[f64], mask: &HeadMask) -> Result<(f64, f64)> {
    if q_values.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} q-values for a {}-head mask",
            q_values.len(),
            mask.len()
        )));
    }
    let m = mask.active_count() as f64;
    let mean = q_values
        .iter()
        .zip(mask.bits())
        .filter_map(|(&q, &b)| b.then_some(q))
        .sum::<f64>()
        / m;
    let var = q_values
        .iter()
        .zip(mask.bits())
        .filter_map(|(&q, &b)| b.then_some((q - mean) * (q - mean)))
        .sum::<f64>()
        / m;
    Ok((mean, var))
}

/// Gradients for the critic: one block for the trunk, one per head.
/// Heads outside the mask keep all-zero blocks.
#[derive(Debug, Clone)]
pub struct CriticGradients {
    pub trunk: Gradients,
    pub heads: Vec<Gradients>,
}

impl CriticGradients {
    pub fn scale(&mut self, c: f64) {
        self.trunk.scale(c);
        for h in &mut self.heads {
            h.scale(c);
        }
    }
}

/// Result of a critic learning pass on one batch.
pub struct CriticStep {
    /// Masked mean-squared TD error, `mean over active heads and samples of
    /// (q - y)^2`, before any per-sample gradient scaling. Diagnostic.
    pub loss: f64,
    /// Gradient of the scaled objective (see [`EnsembleCritic::loss_and_grads`]).
    pub grads: CriticGradients,
    /// Online predictions, one row per sample, one column per head; columns
    /// of inactive heads are zero.
    pub q_values: Matrix,
}

pub struct EnsembleCritic {
    trunk: Mlp,
    heads: Vec<Mlp>,
    target_trunk: Mlp,
    target_heads: Vec<Mlp>,
    gamma: f64,
    state_dim: usize,
    action_dim: usize,
}

impl EnsembleCritic {
    /// Builds an `head_count`-head critic over `(state, action)` inputs.
    /// Targets start as exact copies of the online networks.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        trunk_width: usize,
        head_width: usize,
        head_count: usize,
        gamma: f64,
        seed: u64,
    ) -> Result<Self> {
        if head_count < 2 {
            return Err(Error::InvalidArgument(
                "an ensemble needs at least two heads".into(),
            ));
        }
        if state_dim == 0 || action_dim == 0 || trunk_width == 0 || head_width == 0 {
            return Err(Error::InvalidArgument("all critic dimensions must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "discount must be in [0, 1), got {gamma}"
            )));
        }
        let trunk = Mlp::init(&[state_dim + action_dim, trunk_width], &[Activation::Relu], seed)?;
        let mut heads = Vec::with_capacity(head_count);
        for h in 0..head_count {
            heads.push(Mlp::init(
                &[trunk_width, head_width, 1],
                &[Activation::Relu, Activation::Identity],
                crate::mix_seed(seed, 1 + h as u64),
            )?);
        }
        let target_trunk = trunk.clone();
        let target_heads = heads.clone();
        Ok(Self { trunk, heads, target_trunk, target_heads, gamma, state_dim, action_dim })
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn heads(&self) -> &[Mlp] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Mlp] {
        &mut self.heads
    }

    pub fn target_trunk_mut(&mut self) -> &mut Mlp {
        &mut self.target_trunk
    }

    pub fn target_heads_mut(&mut self) -> &mut [Mlp] {
        &mut self.target_heads
    }

    fn check_pair(&self, states: &Matrix, actions: &Matrix) -> Result<()> {
        if states.cols() != self.state_dim || actions.cols() != self.action_dim {
            return Err(Error::ShapeMismatch(format!(
                "critic expects {}-dim states and {}-dim actions, got {} and {}",
                self.state_dim,
                self.action_dim,
                states.cols(),
                actions.cols()
            )));
        }
        if states.rows() != actions.rows() {
            return Err(Error::ShapeMismatch("state/action row counts differ".into()));
        }
        Ok(())
    }

    fn check_mask(&self, mask: &HeadMask) -> Result<()> {
        if mask.len() != self.heads.len() {
            return Err(Error::InvalidMask(format!(
                "{}-entry mask for a {}-head critic",
                mask.len(),
                self.heads.len()
            )));
        }
        Ok(())
    }

    /// All `L` heads' predictions for a single state-action pair, from the
    /// online or the target networks.
    pub fn q_all_heads(&self, state: &[f64], action: &[f64], use_target: bool) -> Result<Vec<f64>> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::ShapeMismatch("state/action lengths differ from critic dims".into()));
        }
        let mut sa = state.to_vec();
        sa.extend_from_slice(action);
        let sa = Matrix::from_vec(1, sa.len(), sa)?;
        let (trunk, heads) = if use_target {
            (&self.target_trunk, &self.target_heads)
        } else {
            (&self.trunk, &self.heads)
        };
        let feats = trunk.infer(&sa)?;
        heads.iter().map(|h| Ok(h.infer(&feats)?.row(0)[0])).collect()
    }

    /// Per-head bootstrap regression targets `y = r + gamma * Q_target(s',
    /// a')`, truncated to `y = r` on terminal transitions. One row per
    /// sample, one column per head; inactive heads' columns are zero.
    pub fn td_targets(
        &self,
        rewards: &[f64],
        dones: &[bool],
        next_states: &Matrix,
        next_actions: &Matrix,
        mask: &HeadMask,
    ) -> Result<Matrix> {
        self.check_pair(next_states, next_actions)?;
        self.check_mask(mask)?;
        let k = next_states.rows();
        if rewards.len() != k || dones.len() != k {
            return Err(Error::ShapeMismatch("reward/done lengths differ from batch".into()));
        }
        let sa = hstack(next_states, next_actions)?;
        let feats = self.target_trunk.infer(&sa)?;
        let mut targets = Matrix::zeros(k, self.heads.len());
        for m in mask.active_indices() {
            let q = self.target_heads[m].infer(&feats)?;
            for j in 0..k {
                targets.row_mut(j)[m] =
                    rewards[j] + if dones[j] { 0.0 } else { self.gamma * q.row(j)[0] };
            }
        }
        Ok(targets)
    }

    /// Learning pass with per-sample gradient weights of `1 / visit_count`,
    /// so often-revisited transitions contribute progressively less. The
    /// objective whose gradient is returned is
    /// `1/(M*k) * sum_m sum_j scale_j * (q_mj - y_mj)^2` over active heads;
    /// the reported loss is the same quantity with all scales at one.
    pub fn loss_and_grads(
        &self,
        states: &Matrix,
        actions: &Matrix,
        targets: &Matrix,
        mask: &HeadMask,
        visit_counts: &[u32],
    ) -> Result<CriticStep> {
        if let Some(j) = visit_counts.iter().position(|&n| n == 0) {
            return Err(Error::ContractViolation(format!(
                "sample {j} has a zero visit count; counts are incremented at draw time"
            )));
        }
        let scales: Vec<f64> = visit_counts.iter().map(|&n| 1.0 / f64::from(n)).collect();
        self.loss_and_grads_scaled(states, actions, targets, mask, &scales)
    }

    /// Generalization of [`Self::loss_and_grads`] to arbitrary per-sample
    /// gradient weights (e.g. importance weights folded together with visit
    /// discounts).
    pub fn loss_and_grads_scaled(
        &self,
        states: &Matrix,
        actions: &Matrix,
        targets: &Matrix,
        mask: &HeadMask,
        scales: &[f64],
    ) -> Result<CriticStep> {
        self.check_pair(states, actions)?;
        self.check_mask(mask)?;
        let k = states.rows();
        if targets.rows() != k || targets.cols() != self.heads.len() {
            return Err(Error::ShapeMismatch(format!(
                "targets are {}x{}, expected {}x{}",
                targets.rows(),
                targets.cols(),
                k,
                self.heads.len()
            )));
        }
        if scales.len() != k {
            return Err(Error::ShapeMismatch("one gradient scale per sample required".into()));
        }

        let sa = hstack(states, actions)?;
        let (feats, trunk_tape) = self.trunk.forward(&sa)?;
        let m_count = mask.active_count() as f64;
        let norm = 1.0 / (m_count * k as f64);

        let mut loss = 0.0;
        let mut q_values = Matrix::zeros(k, self.heads.len());
        let mut head_grads: Vec<Gradients> =
            self.heads.iter().map(Gradients::zeros_like).collect();
        let mut dfeats = Matrix::zeros(k, feats.cols());

        for m in mask.active_indices() {
            let (q, tape) = self.heads[m].forward(&feats)?;
            let mut out_grad = Matrix::zeros(k, 1);
            for j in 0..k {
                let diff = q.row(j)[0] - targets.row(j)[m];
                q_values.row_mut(j)[m] = q.row(j)[0];
                loss += diff * diff;
                out_grad.row_mut(j)[0] = 2.0 * diff * scales[j] * norm;
            }
            let (grads, dfeat) = self.heads[m].backward(&tape, &out_grad)?;
            head_grads[m] = grads;
            for (acc, &d) in dfeats.data_mut().iter_mut().zip(dfeat.data()) {
                *acc += d;
            }
        }
        let (trunk_grads, _) = self.trunk.backward(&trunk_tape, &dfeats)?;
        Ok(CriticStep {
            loss: loss * norm,
            grads: CriticGradients { trunk: trunk_grads, heads: head_grads },
            q_values,
        })
    }

    /// Mean over samples and active heads of `Q(s, a)`, plus its gradient
    /// with respect to the stacked `(state, action)` input. This is the
    /// objective a deterministic policy ascends; the action columns of the
    /// returned gradient are the pieces chained into the actor.
    pub fn action_value_and_input_grads(
        &self,
        states: &Matrix,
        actions: &Matrix,
        mask: &HeadMask,
    ) -> Result<(f64, Matrix)> {
        self.check_pair(states, actions)?;
        self.check_mask(mask)?;
        let k = states.rows();
        let sa = hstack(states, actions)?;
        let (feats, trunk_tape) = self.trunk.forward(&sa)?;
        let norm = 1.0 / (mask.active_count() as f64 * k as f64);

        let mut value = 0.0;
        let mut dfeats = Matrix::zeros(k, feats.cols());
        let mut ones = Matrix::zeros(k, 1);
        for v in ones.data_mut() {
            *v = norm;
        }
        for m in mask.active_indices() {
            let (q, tape) = self.heads[m].forward(&feats)?;
            value += q.data().iter().sum::<f64>();
            let dfeat = self.heads[m].backward_input_only(&tape, &ones)?;
            for (acc, &d) in dfeats.data_mut().iter_mut().zip(dfeat.data()) {
                *acc += d;
            }
        }
        let dsa = self.trunk.backward_input_only(&trunk_tape, &dfeats)?;
        Ok((value * norm, dsa))
    }

    /// Soft-updates every target network toward its online twin.
    pub fn polyak_targets(&mut self, tau: f64) -> Result<()> {
        self.target_trunk.polyak_from(&self.trunk, tau)?;
        for (t, o) in self.target_heads.iter_mut().zip(&self.heads) {
            t.polyak_from(o, tau)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask(bits: &[bool]) -> HeadMask {
        HeadMask::new(bits.to_vec()).unwrap()
    }

    #[test]
    fn mask_construction_enforces_invariants() {
        assert!(matches!(HeadMask::new(vec![]), Err(Error::InvalidMask(_))));
        assert!(matches!(HeadMask::new(vec![false, false]), Err(Error::InvalidMask(_))));
        let m = mask(&[true, false, true]);
        assert_eq!(m.active_count(), 2);
        assert_eq!(m.active_indices(), vec![0, 2]);
        assert!(m.is_active(0) && !m.is_active(1));
        assert!(!m.is_active(99));
    }

    #[test]
    fn mask_sampling_never_yields_all_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let m = HeadMask::sample(3, 0.1, &mut rng).unwrap();
            assert!(m.active_count() >= 1);
        }
    }

    #[test]
    fn mask_sampling_validates_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(HeadMask::sample(0, 0.5, &mut rng).is_err());
        assert!(HeadMask::sample(4, 0.0, &mut rng).is_err());
        assert!(HeadMask::sample(4, 1.2, &mut rng).is_err());
        assert!(HeadMask::sample(4, f64::NAN, &mut rng).is_err());
        let m = HeadMask::sample(5, 1.0, &mut rng).unwrap();
        assert_eq!(m.active_count(), 5);
    }

    #[test]
    fn head_stats_hand_values() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let (mu, var) = head_stats(&q, &mask(&[true, false, true, false])).unwrap();
        assert_relative_eq!(mu, 2.0);
        assert_relative_eq!(var, 1.0);
        let (mu, var) = head_stats(&q, &mask(&[true; 4])).unwrap();
        assert_relative_eq!(mu, 2.5);
        assert_relative_eq!(var, 1.25);
        let (mu, var) = head_stats(&q, &mask(&[false, false, true, false])).unwrap();
        assert_relative_eq!(mu, 3.0);
        assert_eq!(var, 0.0);
        assert!(head_stats(&q[..2], &mask(&[true; 4])).is_err());
    }

    #[test]
    fn head_stats_ignore_inactive_entries() {
        let m = mask(&[true, false, true, false, true]);
        let base = [0.5, 9.0, -1.0, 9.0, 2.0];
        let (mu0, var0) = head_stats(&base, &m).unwrap();
        for junk in [-1e6, 0.0, 42.0, 1e9] {
            let mut q = base;
            q[1] = junk;
            q[3] = -junk;
            let (mu, var) = head_stats(&q, &m).unwrap();
            assert_eq!((mu, var), (mu0, var0));
        }
    }

    #[test]
    fn construction_validates_and_targets_start_equal() {
        assert!(EnsembleCritic::new(3, 1, 8, 4, 1, 0.99, 0).is_err());
        assert!(EnsembleCritic::new(3, 1, 8, 4, 4, 1.0, 0).is_err());
        assert!(EnsembleCritic::new(0, 1, 8, 4, 4, 0.9, 0).is_err());
        let critic = EnsembleCritic::new(3, 1, 8, 4, 4, 0.99, 7).unwrap();
        let s = [0.2, -0.4, 0.9];
        let a = [0.3];
        let online = critic.q_all_heads(&s, &a, false).unwrap();
        let target = critic.q_all_heads(&s, &a, true).unwrap();
        assert_eq!(online.len(), 4);
        assert_eq!(online, target);
        // Heads are distinct networks, not copies of one another.
        assert_ne!(online[0], online[1]);
    }

    #[test]
    fn td_targets_from_constant_heads() {
        let mut critic = EnsembleCritic::new(2, 1, 4, 3, 3, 0.5, 1).unwrap();
        // Pin each target head to a constant: zero last-layer weights, bias c_m.
        for (m, c) in [(0usize, 10.0), (1, 20.0), (2, 30.0)] {
            let head = &mut critic.target_heads_mut()[m];
            let last = head.layers_mut().last_mut().unwrap();
            for w in last.weight.data_mut() {
                *w = 0.0;
            }
            last.bias[0] = c;
        }
        let rewards = [1.0, 2.0];
        let dones = [false, true];
        let ns = Matrix::zeros(2, 2);
        let na = Matrix::zeros(2, 1);
        let m = mask(&[true, false, true]);
        let y = critic.td_targets(&rewards, &dones, &ns, &na, &m).unwrap();
        assert_relative_eq!(y.row(0)[0], 1.0 + 0.5 * 10.0);
        assert_relative_eq!(y.row(0)[2], 1.0 + 0.5 * 30.0);
        assert_eq!(y.row(0)[1], 0.0); // inactive head: no target
        assert_relative_eq!(y.row(1)[0], 2.0); // terminal: reward only
        assert_relative_eq!(y.row(1)[2], 2.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let critic = EnsembleCritic::new(2, 1, 5, 3, 3, 0.9, 11).unwrap();
        let states = Matrix::from_vec(2, 2, vec![0.4, -0.8, 1.1, 0.3]).unwrap();
        let actions = Matrix::from_vec(2, 1, vec![0.5, -0.9]).unwrap();
        let mut targets = Matrix::zeros(2, 3);
        for (j, row) in [[0.7, 0.0, -0.2], [0.1, 0.0, 0.9]].iter().enumerate() {
            targets.row_mut(j).copy_from_slice(row);
        }
        let m = mask(&[true, false, true]);
        let scales = [1.0, 0.25];

        let step = critic.loss_and_grads_scaled(&states, &actions, &targets, &m, &scales).unwrap();

        // Scaled objective as a closure over perturbed parameter copies.
        let objective = |c: &EnsembleCritic| -> f64 {
            let mut total = 0.0;
            for j in 0..2 {
                let q = c.q_all_heads(states.row(j), actions.row(j), false).unwrap();
                for h in [0usize, 2] {
                    let d = q[h] - targets.row(j)[h];
                    total += scales[j] * d * d;
                }
            }
            total / (2.0 * 2.0) // M * k
        };

        let h = 1e-5;
        let check = |analytic: f64, fd: f64, what: &str| {
            let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            assert!(err < 1e-4, "{what}: analytic {analytic} vs fd {fd}");
        };

        // Trunk weights.
        for idx in 0..critic.trunk().layers()[0].weight.data().len() {
            let mut plus = EnsembleCritic::new(2, 1, 5, 3, 3, 0.9, 11).unwrap();
            plus.trunk_mut().layers_mut()[0].weight.data_mut()[idx] += h;
            let mut minus = EnsembleCritic::new(2, 1, 5, 3, 3, 0.9, 11).unwrap();
            minus.trunk_mut().layers_mut()[0].weight.data_mut()[idx] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            check(step.grads.trunk.layers[0].weight.data()[idx], fd, "trunk weight");
        }
        // One active head's first-layer weights.
        for idx in 0..critic.heads()[2].layers()[0].weight.data().len() {
            let mut plus = EnsembleCritic::new(2, 1, 5, 3, 3, 0.9, 11).unwrap();
            plus.heads_mut()[2].layers_mut()[0].weight.data_mut()[idx] += h;
            let mut minus = EnsembleCritic::new(2, 1, 5, 3, 3, 0.9, 11).unwrap();
            minus.heads_mut()[2].layers_mut()[0].weight.data_mut()[idx] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            check(step.grads.heads[2].layers[0].weight.data()[idx], fd, "head weight");
        }

        // Inactive head receives exactly zero gradient.
        for lg in &step.grads.heads[1].layers {
            assert!(lg.weight.data().iter().all(|&g| g == 0.0));
            assert!(lg.bias.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn reported_loss_ignores_scales() {
        let critic = EnsembleCritic::new(2, 1, 4, 3, 2, 0.9, 5).unwrap();
        let states = Matrix::from_vec(2, 2, vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let actions = Matrix::from_vec(2, 1, vec![0.9, -0.5]).unwrap();
        let targets = Matrix::zeros(2, 2);
        let m = mask(&[true, true]);
        let a = critic.loss_and_grads_scaled(&states, &actions, &targets, &m, &[1.0, 1.0]).unwrap();
        let b = critic.loss_and_grads_scaled(&states, &actions, &targets, &m, &[0.5, 0.5]).unwrap();
        assert_eq!(a.loss, b.loss);
        let ga = a.grads.trunk.layers[0].weight.data()[0];
        let gb = b.grads.trunk.layers[0].weight.data()[0];
        assert_relative_eq!(gb, 0.5 * ga, epsilon = 1e-12);
        // Loss equals the hand mean of squared errors via q_values.
        let mut hand = 0.0;
        for j in 0..2 {
            for l in 0..2 {
                hand += a.q_values.row(j)[l].powi(2);
            }
        }
        assert_relative_eq!(a.loss, hand / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_visit_count_is_rejected() {
        let critic = EnsembleCritic::new(1, 1, 3, 2, 2, 0.9, 2).unwrap();
        let s = Matrix::zeros(1, 1);
        let a = Matrix::zeros(1, 1);
        let y = Matrix::zeros(1, 2);
        let m = mask(&[true, true]);
        assert!(matches!(
            critic.loss_and_grads(&s, &a, &y, &m, &[0]),
            Err(Error::ContractViolation(_))
        ));
        assert!(critic.loss_and_grads(&s, &a, &y, &m, &[1]).is_ok());
    }

    #[test]
    fn action_value_gradient_matches_finite_differences() {
        let critic = EnsembleCritic::new(2, 2, 5, 3, 3, 0.9, 13).unwrap();
        let states = Matrix::from_vec(2, 2, vec![0.3, -0.6, 0.8, 0.1]).unwrap();
        let actions = Matrix::from_vec(2, 2, vec![0.2, 0.7, -0.4, 0.5]).unwrap();
        let m = mask(&[true, true, false]);
        let (value, dsa) = critic.action_value_and_input_grads(&states, &actions, &m).unwrap();
        assert_eq!(dsa.rows(), 2);
        assert_eq!(dsa.cols(), 4);

        let eval = |st: &Matrix, ac: &Matrix| -> f64 {
            let mut total = 0.0;
            for j in 0..2 {
                let q = critic.q_all_heads(st.row(j), ac.row(j), false).unwrap();
                total += q[0] + q[1];
            }
            total / 4.0
        };
        assert_relative_eq!(value, eval(&states, &actions), epsilon = 1e-12);

        let h = 1e-5;
        for j in 0..2 {
            for c in 0..2 {
                let mut plus = actions.clone();
                plus.row_mut(j)[c] += h;
                let mut minus = actions.clone();
                minus.row_mut(j)[c] -= h;
                let fd = (eval(&states, &plus) - eval(&states, &minus)) / (2.0 * h);
                let an = dsa.row(j)[2 + c];
                let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-4, "action grad ({j},{c}): {an} vs {fd}");
            }
        }
    }

    #[test]
    fn polyak_contracts_target_toward_online() {
        let mut critic = EnsembleCritic::new(2, 1, 4, 3, 2, 0.9, 3).unwrap();
        let s = [0.5, -0.2];
        let a = [0.1];
        // Separate online from targets by a parameter bump.
        let mut bump = crate::net::Gradients::zeros_like(critic.trunk());
        for v in bump.layers[0].weight.data_mut() {
            *v = 1.0;
        }
        critic.trunk_mut().apply_update(&bump, 0.5).unwrap();
        let online = critic.q_all_heads(&s, &a, false).unwrap();
        let before = critic.q_all_heads(&s, &a, true).unwrap();
        critic.polyak_targets(0.1).unwrap();
        let after = critic.q_all_heads(&s, &a, true).unwrap();
        for l in 0..2 {
            let (gap_before, gap_after) = (online[l] - before[l], online[l] - after[l]);
            assert!(
                gap_after.abs() < gap_before.abs(),
                "head {l}: {gap_before} -> {gap_after}"
            );
        }
    }
}
