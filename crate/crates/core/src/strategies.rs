//! Permute providers for the epoch loop.
//!
//! An [`Orderer`] owns whatever state its strategy carries between epochs
//! (GraB's stale mean, an AP schedule, the fixed OP permutation) and turns the
//! data of the finished epoch into the next permutation.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::balancing::{self, BalanceConfig, BalancerState};
use crate::error::{Error, Result};
use crate::linalg::{self, Norm};
use crate::objectives::QuadraticEnsemble;
use crate::ordering::{self, BrInput};
use crate::perm::{Permutation, Sign, SignSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrdererKind {
    /// Arbitrary permutations from a caller-supplied source.
    Ap,
    /// Random reshuffling: a fresh uniform permutation every epoch.
    Rr,
    /// Incremental gradient: one fixed, caller-chosen (default identity) order.
    Ig,
    /// Shuffle once.
    So,
    /// One nice permutation built offline by repeated pair balancing.
    Np,
    GrabProto,
    PairgrabProto,
    Grab,
    Pairgrab,
}

impl OrdererKind {
    pub const ALL: [OrdererKind; 9] = [
        OrdererKind::Ap,
        OrdererKind::Rr,
        OrdererKind::Ig,
        OrdererKind::So,
        OrdererKind::Np,
        OrdererKind::GrabProto,
        OrdererKind::PairgrabProto,
        OrdererKind::Grab,
        OrdererKind::Pairgrab,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrdererKind::Ap => "ap",
            OrdererKind::Rr => "rr",
            OrdererKind::Ig => "ig",
            OrdererKind::So => "so",
            OrdererKind::Np => "np",
            OrdererKind::GrabProto => "grab-proto",
            OrdererKind::PairgrabProto => "pairgrab-proto",
            OrdererKind::Grab => "grab",
            OrdererKind::Pairgrab => "pairgrab",
        }
    }

    /// Strategies that keep `π_0` forever.
    pub fn is_one_permutation(self) -> bool {
        matches!(self, OrdererKind::Ig | OrdererKind::So | OrdererKind::Np)
    }

    /// Strategies built on pair balancing, which need an even `N`.
    pub fn needs_even(self) -> bool {
        matches!(self, OrdererKind::Np | OrdererKind::PairgrabProto | OrdererKind::Pairgrab)
    }

    pub fn is_grab_family(self) -> bool {
        matches!(
            self,
            OrdererKind::GrabProto | OrdererKind::PairgrabProto | OrdererKind::Grab | OrdererKind::Pairgrab
        )
    }
}

impl fmt::Display for OrdererKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrdererKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        OrdererKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = OrdererKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown orderer '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// Which of the two equivalent GraB listings drives the reorder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrabForm {
    /// Collect all signs, then `Reorder` once.
    #[default]
    EpochEnd,
    /// Two-pointer placement as each sign is emitted.
    Streaming,
}

/// Default number of offline pair-balancing rounds for NP: `3·⌈log₂ N⌉`.
pub fn default_np_rounds(n: usize) -> usize {
    let bits = usize::BITS - (n.max(2) - 1).leading_zeros();
    3 * bits as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdererSpec {
    pub kind: OrdererKind,
    pub balance: BalanceConfig,
    /// AP permutations, cycled through epoch by epoch.
    pub ap_schedule: Option<Vec<Permutation>>,
    pub np_rounds: Option<usize>,
    pub grab_form: GrabForm,
    /// Overrides the strategy's own choice of `π_0`.
    pub initial: Option<Permutation>,
}

impl OrdererSpec {
    pub fn new(kind: OrdererKind) -> Self {
        Self {
            kind,
            balance: BalanceConfig::default(),
            ap_schedule: None,
            np_rounds: None,
            grab_form: GrabForm::default(),
            initial: None,
        }
    }

    pub fn with_balance(mut self, balance: BalanceConfig) -> Self {
        self.balance = balance;
        self
    }
}

/// Data from the finished epoch handed to [`Orderer::next`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EpochFeed<'a> {
    /// Gradients used by the steps, in processing order.
    pub step_grads: Option<&'a [Vec<f64>]>,
    /// Gradients at the epoch-start point, indexed by example.
    pub point_grads: Option<&'a [Vec<f64>]>,
    /// Exact mean gradient at the epoch-start point.
    pub mean_grad: Option<&'a [f64]>,
}

/// A callback producing the AP permutation for epoch `q`.
pub type ApCallback = Arc<dyn Fn(usize) -> Permutation + Send + Sync>;

#[derive(Clone)]
enum ApSource {
    List(Vec<Permutation>),
    Callback(ApCallback),
}

#[derive(Clone)]
enum State {
    Ap(ApSource),
    Rr,
    Fixed(Option<Permutation>),
    Proto,
    Grab { mean: Vec<f64> },
    PairGrab,
}

/// Per-run ordering state machine.
#[derive(Clone)]
pub struct Orderer {
    spec: OrdererSpec,
    n: usize,
    d: usize,
    epoch: usize,
    state: State,
    np_herding: Option<Vec<f64>>,
    last_signs: Option<SignSequence>,
}

impl fmt::Debug for Orderer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Orderer")
            .field("kind", &self.spec.kind)
            .field("n", &self.n)
            .field("epoch", &self.epoch)
            .finish()
    }
}

impl Orderer {
    pub fn new(spec: &OrdererSpec, n: usize, d: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidSize("orderer needs n ≥ 1 and d ≥ 1".into()));
        }
        spec.balance.validate()?;
        if spec.kind.needs_even() && !n.is_multiple_of(2) {
            return Err(Error::OddLength(n));
        }
        if let Some(p) = &spec.initial {
            if p.len() != n {
                return Err(Error::LengthMismatch { expected: n, got: p.len() });
            }
        }
        if spec.np_rounds == Some(0) {
            return Err(Error::Config("np_rounds must be at least 1".into()));
        }
        let state = match spec.kind {
            OrdererKind::Ap => {
                let list = spec
                    .ap_schedule
                    .clone()
                    .ok_or_else(|| Error::Config("AP needs a permutation schedule".into()))?;
                if list.is_empty() {
                    return Err(Error::Config("AP schedule is empty".into()));
                }
                if let Some(p) = list.iter().find(|p| p.len() != n) {
                    return Err(Error::LengthMismatch { expected: n, got: p.len() });
                }
                State::Ap(ApSource::List(list))
            }
            OrdererKind::Rr => State::Rr,
            OrdererKind::Ig | OrdererKind::So | OrdererKind::Np => State::Fixed(None),
            OrdererKind::GrabProto | OrdererKind::PairgrabProto => State::Proto,
            OrdererKind::Grab => State::Grab { mean: vec![0.0; d] },
            OrdererKind::Pairgrab => State::PairGrab,
        };
        Ok(Self {
            spec: spec.clone(),
            n,
            d,
            epoch: 0,
            state,
            np_herding: None,
            last_signs: None,
        })
    }

    /// AP driven by a callback instead of a stored list.
    pub fn with_ap_callback(n: usize, d: usize, callback: ApCallback) -> Result<Self> {
        let mut spec = OrdererSpec::new(OrdererKind::Ap);
        spec.ap_schedule = Some(vec![callback(0)]);
        let mut o = Self::new(&spec, n, d)?;
        o.state = State::Ap(ApSource::Callback(callback));
        Ok(o)
    }

    pub fn kind(&self) -> OrdererKind {
        self.spec.kind
    }

    pub fn spec(&self) -> &OrdererSpec {
        &self.spec
    }

    pub fn needs_step_grads(&self) -> bool {
        matches!(self.state, State::Grab { .. } | State::PairGrab)
    }

    pub fn needs_point_grads(&self) -> bool {
        matches!(self.state, State::Proto)
    }

    /// Gradient evaluations per epoch beyond the `N` used by the steps.
    pub fn extra_grads_per_epoch(&self) -> usize {
        if self.needs_point_grads() {
            self.n
        } else {
            0
        }
    }

    /// Herding errors (∞-norm) recorded while building the NP permutation.
    pub fn np_herding(&self) -> Option<&[f64]> {
        self.np_herding.as_deref()
    }

    /// Signs emitted by the most recent balancing step, in the old order.
    pub fn last_signs(&self) -> Option<&SignSequence> {
        self.last_signs.as_ref()
    }

    fn ap_at(&self, q: usize) -> Option<Permutation> {
        match &self.state {
            State::Ap(ApSource::List(l)) => Some(l[q % l.len()].clone()),
            State::Ap(ApSource::Callback(f)) => Some(f(q)),
            _ => None,
        }
    }

    /// `π_0`. `np_vectors` supplies the per-example vectors NP balances (the
    /// deviations at `x_0` for SGD); it is only called for NP.
    pub fn initial<R, F>(&mut self, np_vectors: F, rng: &mut R) -> Result<Permutation>
    where
        R: Rng + ?Sized,
        F: FnOnce() -> Result<Vec<Vec<f64>>>,
    {
        self.epoch = 0;
        let pi = if let Some(p) = &self.spec.initial {
            if self.spec.kind == OrdererKind::Np {
                let rounds = self.spec.np_rounds.unwrap_or_else(|| default_np_rounds(self.n));
                let built = nice_from_vectors(&np_vectors()?, p.clone(), rounds, &self.spec.balance, rng)?;
                self.np_herding = Some(built.herding);
                built.permutation
            } else {
                p.clone()
            }
        } else {
            match self.spec.kind {
                OrdererKind::Ap => self.ap_at(0).expect("AP state"),
                OrdererKind::Ig => Permutation::identity(self.n)?,
                OrdererKind::Np => {
                    let rounds = self.spec.np_rounds.unwrap_or_else(|| default_np_rounds(self.n));
                    let start = Permutation::uniform_random(self.n, rng)?;
                    let built = nice_from_vectors(&np_vectors()?, start, rounds, &self.spec.balance, rng)?;
                    self.np_herding = Some(built.herding);
                    built.permutation
                }
                _ => Permutation::uniform_random(self.n, rng)?,
            }
        };
        if let State::Fixed(slot) = &mut self.state {
            *slot = Some(pi.clone());
        }
        Ok(pi)
    }

    /// `π_{q+1}` from `π_q` and the finished epoch's data.
    pub fn next<R: Rng + ?Sized>(&mut self, pi_q: &Permutation, feed: &EpochFeed<'_>, rng: &mut R) -> Result<Permutation> {
        if pi_q.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: pi_q.len() });
        }
        self.epoch += 1;
        let cfg = self.spec.balance;
        let ap = self.ap_at(self.epoch);
        let next = match &mut self.state {
            State::Ap(_) => ap.expect("AP state"),
            State::Rr => permute_rr(self.n, rng)?,
            State::Fixed(p) => permute_op(p.as_ref().unwrap_or(pi_q)),
            State::Proto => {
                let grads = feed
                    .point_grads
                    .ok_or_else(|| Error::InvalidArgument("prototype orderer needs epoch-start gradients".into()))?;
                let mean = feed
                    .mean_grad
                    .ok_or_else(|| Error::InvalidArgument("prototype orderer needs the mean gradient".into()))?;
                let out = permute_proto(self.spec.kind, pi_q, grads, mean, &cfg, rng)?;
                self.last_signs = Some(out.signs);
                out.permutation
            }
            State::Grab { mean } => {
                let grads = step_grads(feed, self.n, self.d)?;
                let (pi, signs, new_mean) = match self.spec.grab_form {
                    GrabForm::EpochEnd => permute_grab(pi_q, grads, mean, &cfg, rng)?,
                    GrabForm::Streaming => {
                        let c = grab_walk_constant(grads, mean, &cfg);
                        let mut st = GrabStreaming::begin(pi_q.clone(), mean.clone(), c, cfg.mode);
                        for g in grads {
                            st.step(g, rng)?;
                        }
                        st.finish()?
                    }
                };
                *mean = new_mean;
                self.last_signs = Some(signs);
                pi
            }
            State::PairGrab => {
                let grads = step_grads(feed, self.n, self.d)?;
                let (pi, pair_signs) = permute_pairgrab(pi_q, grads, &cfg, rng)?;
                self.last_signs = Some(pair_signs);
                pi
            }
        };
        if next.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: next.len() });
        }
        Ok(next)
    }
}

fn step_grads<'a>(feed: &EpochFeed<'a>, n: usize, d: usize) -> Result<&'a [Vec<f64>]> {
    let g = feed
        .step_grads
        .ok_or_else(|| Error::InvalidArgument("orderer needs the step gradients".into()))?;
    if g.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: g.len() });
    }
    if let Some(v) = g.iter().find(|v| v.len() != d) {
        return Err(Error::Shape { expected: d, got: v.len() });
    }
    Ok(g)
}

/// A fresh uniform draw.
pub fn permute_rr<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Permutation> {
    Permutation::uniform_random(n, rng)
}

/// One-permutation strategies replay their initial order.
pub fn permute_op(initial: &Permutation) -> Permutation {
    initial.clone()
}

/// Offline NP construction and its herding trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NiceBuild {
    pub permutation: Permutation,
    /// ∞-norm herding error of the centered vectors, before round 1 and after
    /// every round.
    pub herding: Vec<f64>,
}

/// Starts from a uniform permutation and applies PairBR `rounds` times to the
/// deviations `∇f_n(x_0) − ∇f(x_0)`.
pub fn nice_permutation<R: Rng + ?Sized>(
    ens: &QuadraticEnsemble,
    x0: &[f64],
    rounds: usize,
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<NiceBuild> {
    let vectors = ens.deviations(x0)?;
    let start = Permutation::uniform_random(ens.len(), rng)?;
    nice_from_vectors(&vectors, start, rounds, cfg, rng)
}

/// Repeated PairBR on fixed vectors (indexed by example) from `start`.
pub fn nice_from_vectors<R: Rng + ?Sized>(
    vectors: &[Vec<f64>],
    start: Permutation,
    rounds: usize,
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<NiceBuild> {
    if rounds == 0 {
        return Err(Error::InvalidArgument("at least one balancing round is required".into()));
    }
    if !vectors.len().is_multiple_of(2) {
        return Err(Error::OddLength(vectors.len()));
    }
    let d = vectors.first().map_or(0, Vec::len);
    let mean = linalg::mean(vectors, d);
    let centered: Vec<Vec<f64>> = vectors.iter().map(|v| linalg::sub(v, &mean)).collect();
    let herd = |p: &Permutation| {
        linalg::max_prefix_norm(p.order().iter().map(|&i| centered[i].as_slice()), d, Norm::Inf)
    };
    let mut pi = start;
    let mut herding = vec![herd(&pi)];
    for _ in 0..rounds {
        let out = ordering::pair_br(BrInput { pi: &pi, vectors: &centered, mean: &mean }, cfg, rng)?;
        pi = out.permutation;
        herding.push(herd(&pi));
    }
    Ok(NiceBuild { permutation: pi, herding })
}

/// Walk constant used by GraB for one epoch: resolved from the centered
/// gradients when not configured.
pub fn grab_walk_constant(grads: &[Vec<f64>], stale: &[f64], cfg: &BalanceConfig) -> f64 {
    if let Some(c) = cfg.c {
        return c;
    }
    let max_norm = grads
        .iter()
        .map(|g| linalg::dist2(g, stale))
        .fold(0.0_f64, f64::max);
    cfg.resolve_c(stale.len(), grads.len(), max_norm)
}

/// Epoch-end GraB. `stale` is the previous epoch's mean gradient (zero in the
/// first epoch). Returns `π_{q+1}`, the emitted signs and this epoch's mean.
///
/// Signs are chosen on `g − m_stale`, but the running sum accumulates the
/// uncentered `g`.
pub fn permute_grab<R: Rng + ?Sized>(
    pi_q: &Permutation,
    grads: &[Vec<f64>],
    stale: &[f64],
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<(Permutation, SignSequence, Vec<f64>)> {
    if grads.len() != pi_q.len() {
        return Err(Error::LengthMismatch { expected: pi_q.len(), got: grads.len() });
    }
    let d = stale.len();
    let n = grads.len() as f64;
    let c = grab_walk_constant(grads, stale, cfg);
    let mut state = BalancerState::new(d);
    let mut mean = vec![0.0; d];
    let mut signs = SignSequence::default();
    for g in grads {
        linalg::axpy(&mut mean, 1.0 / n, g);
        let centered = linalg::sub(g, stale);
        let e = state.decide(&centered, cfg.mode, c, rng)?;
        state.push(e, g)?;
        signs.push(e);
    }
    let next = ordering::reorder(pi_q, &signs)?;
    Ok((next, signs, mean))
}

/// Streaming GraB: places each example as soon as its sign is known, filling
/// the new order from both ends.
#[derive(Clone, Debug)]
pub struct GrabStreaming {
    pi_q: Permutation,
    stale: Vec<f64>,
    mean: Vec<f64>,
    c: f64,
    mode: balancing::BalanceMode,
    state: BalancerState,
    slots: Vec<usize>,
    signs: SignSequence,
    pos: usize,
    left: usize,
    right: usize,
}

impl GrabStreaming {
    pub fn begin(pi_q: Permutation, stale: Vec<f64>, c: f64, mode: balancing::BalanceMode) -> Self {
        let n = pi_q.len();
        let d = stale.len();
        Self {
            pi_q,
            mean: vec![0.0; d],
            state: BalancerState::new(d),
            stale,
            c,
            mode,
            slots: vec![usize::MAX; n],
            signs: SignSequence::default(),
            pos: 0,
            left: 0,
            right: n,
        }
    }

    /// Running mean `(1/N)·Σ_{i<n} g_i` of the gradients seen so far.
    pub fn running_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn step<R: Rng + ?Sized>(&mut self, g: &[f64], rng: &mut R) -> Result<Sign> {
        let n = self.pi_q.len();
        if self.pos >= n {
            return Err(Error::LengthMismatch { expected: n, got: n + 1 });
        }
        linalg::axpy(&mut self.mean, 1.0 / n as f64, g);
        let centered = linalg::sub(g, &self.stale);
        let e = self.state.decide(&centered, self.mode, self.c, rng)?;
        self.state.push(e, g)?;
        let idx = self.pi_q.apply(self.pos);
        match e {
            Sign::Plus => {
                self.slots[self.left] = idx;
                self.left += 1;
            }
            Sign::Minus => {
                self.right -= 1;
                self.slots[self.right] = idx;
            }
        }
        self.signs.push(e);
        self.pos += 1;
        Ok(e)
    }

    /// `π_{q+1}`, the signs, and the epoch mean that becomes the next stale mean.
    pub fn finish(self) -> Result<(Permutation, SignSequence, Vec<f64>)> {
        if self.pos != self.pi_q.len() {
            return Err(Error::LengthMismatch { expected: self.pi_q.len(), got: self.pos });
        }
        Ok((Permutation::from_order(self.slots)?, self.signs, self.mean))
    }
}

/// PairGraB: balance `d = g_{2l} − g_{2l+1}` and place each pair at once.
/// `ε̃ = +1` puts the later element of the pair in front. Returns `π_{q+1}` and
/// the pair signs.
pub fn permute_pairgrab<R: Rng + ?Sized>(
    pi_q: &Permutation,
    grads: &[Vec<f64>],
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<(Permutation, SignSequence)> {
    let n = pi_q.len();
    if grads.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: grads.len() });
    }
    if !n.is_multiple_of(2) {
        return Err(Error::OddLength(n));
    }
    let d = grads.first().map_or(0, Vec::len);
    let diffs: Vec<Vec<f64>> = grads.chunks_exact(2).map(|p| linalg::sub(&p[0], &p[1])).collect();
    let c = cfg.resolve_for(diffs.iter().map(Vec::as_slice), d, diffs.len());
    let mut state = BalancerState::new(d);
    let mut slots = vec![usize::MAX; n];
    let (mut left, mut right) = (0, n);
    let mut pair_signs = SignSequence::default();
    for (l, diff) in diffs.iter().enumerate() {
        let e = state.assign(diff, cfg.mode, c, rng)?;
        let (earlier, later) = (pi_q.apply(2 * l), pi_q.apply(2 * l + 1));
        let (front, back) = match e {
            Sign::Plus => (later, earlier),
            Sign::Minus => (earlier, later),
        };
        slots[left] = front;
        left += 1;
        right -= 1;
        slots[right] = back;
        pair_signs.push(e);
    }
    Ok((Permutation::from_order(slots)?, pair_signs))
}

/// GraB-proto / PairGraB-proto: BasicBR / PairBR on the epoch-start gradients
/// centered by the exact mean.
pub fn permute_proto<R: Rng + ?Sized>(
    kind: OrdererKind,
    pi_q: &Permutation,
    point_grads: &[Vec<f64>],
    mean_grad: &[f64],
    cfg: &BalanceConfig,
    rng: &mut R,
) -> Result<ordering::BrOutput> {
    let input = BrInput { pi: pi_q, vectors: point_grads, mean: mean_grad };
    match kind {
        OrdererKind::GrabProto => ordering::basic_br(input, cfg, rng),
        OrdererKind::PairgrabProto => ordering::pair_br(input, cfg, rng),
        other => Err(Error::InvalidArgument(format!("{other} is not a prototype orderer"))),
    }
}
