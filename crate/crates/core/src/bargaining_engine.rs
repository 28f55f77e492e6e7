//! Alternating-offer bargaining over the coupled demand and supply networks.
//!
//! A tick is one executed trade. Within a tick, randomly chosen agents from
//! alternating sides either accept the opposite side's best offer or concede
//! by a confidence-scaled step. After a trade both traders leave, each side
//! receives one newcomer whose clustering probability depends on how far the
//! traded price sits from the intrinsic value, and each side's oldest agent
//! may re-enter elsewhere in its network.
//!
//! Utilities are linear between a reference price (utility 0) and the
//! agent's own price (utility 1). The reference is the opposite side's best
//! offer at the last reset, so a seller's utility is zero at the initial best
//! bid and a buyer's is zero at the initial best ask.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_network::{
    add_node_restricted, avg_clustering, extreme_offer, init_network, reconnect_oldest, remove_node, NetworkError,
    NodeId, Side, TradingNetwork,
};
use crate::rng::{stream, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("price inputs must be positive (S = {price}, S_I = {intrinsic})")]
    NonPositivePrice { price: f64, intrinsic: f64 },
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("neighborhood sizes must be at least 1 (own = {own}, opposite best = {best})")]
    ZeroDegree { own: usize, best: usize },
    #[error("utility undefined: own price equals reference price {0}")]
    DegenerateUtility(f64),
    #[error("tick aborted after {moves} moves without a trade")]
    TickAborted { moves: usize },
    #[error("intrinsic series has {have} values but {need} ticks were requested")]
    IntrinsicTooShort { have: usize, need: usize },
    #[error("intrinsic value must be positive at tick {tick}: {value}")]
    BadIntrinsic { tick: usize, value: f64 },
    #[error("window {window} invalid for a run of length {len}")]
    BadWindow { window: usize, len: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// All model parameters of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Agents per side.
    pub n_agents: usize,
    /// Feedback strength in the clustering probabilities.
    pub alpha: f64,
    /// Probability that each side's oldest agent reconnects after a trade.
    pub beta: f64,
    /// Sensitivity of confidence to the intrinsic return.
    pub gamma: f64,
    /// Copy-branch probability used while the networks are built.
    pub p_construct: f64,
    /// Seller concession constant (nonpositive).
    pub concession_supply: f64,
    /// Buyer concession constant (nonnegative).
    pub concession_demand: f64,
    /// Seller ladder step for newcomers.
    pub step_supply: f64,
    /// Buyer ladder step for newcomers.
    pub step_demand: f64,
    /// Number of trades to simulate.
    pub ticks: usize,
    pub seed: u64,
    /// Move cap per trade; `None` means `400 * n_agents`.
    pub steps_per_tick_limit: Option<usize>,
    /// Record average clustering of both networks after every tick.
    pub record_clustering: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_agents: 500,
            alpha: 0.2,
            beta: 0.3,
            gamma: 120.0,
            p_construct: 0.2,
            concession_supply: -0.005,
            concession_demand: 0.005,
            step_supply: 0.01,
            step_demand: -0.01,
            ticks: 1000,
            seed: 0,
            steps_per_tick_limit: None,
            record_clustering: true,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        if self.n_agents < 2 {
            return bad(format!("n_agents must be at least 2, got {}", self.n_agents));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.gamma >= 0.0) {
            return bad(format!("gamma must be nonnegative, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.p_construct) {
            return bad(format!("p_construct must lie in [0, 1], got {}", self.p_construct));
        }
        if !(self.concession_supply <= 0.0 && self.concession_demand >= 0.0) {
            return bad(format!(
                "concessions need supply <= 0 <= demand, got {} and {}",
                self.concession_supply, self.concession_demand
            ));
        }
        for (name, v) in [("step_supply", self.step_supply), ("step_demand", self.step_demand)] {
            if !(v > -1.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > -1, got {v}"));
            }
        }
        if self.steps_per_tick_limit == Some(0) {
            return bad("steps_per_tick_limit must be positive".into());
        }
        Ok(())
    }

    pub fn move_limit(&self) -> usize {
        self.steps_per_tick_limit.unwrap_or(400 * self.n_agents)
    }

    fn concession(&self, side: Side) -> f64 {
        match side {
            Side::Supply => self.concession_supply,
            Side::Demand => self.concession_demand,
        }
    }

    fn ladder_step(&self, side: Side) -> f64 {
        match side {
            Side::Supply => self.step_supply,
            Side::Demand => self.step_demand,
        }
    }
}

/// Clustering probabilities `(p_s, p_d)` of the two sides given the last
/// traded price and the intrinsic value.
pub fn structural_probabilities(price: f64, intrinsic: f64, alpha: f64) -> Result<(f64, f64), EngineError> {
    if !(price > 0.0 && intrinsic > 0.0) {
        return Err(EngineError::NonPositivePrice { price, intrinsic });
    }
    if !(alpha > 0.0) {
        return Err(EngineError::NonPositiveAlpha(alpha));
    }
    let ratio = price / intrinsic;
    Ok((-(-alpha * ratio).exp_m1(), -(-alpha / ratio).exp_m1()))
}

/// Probability an agent assigns to its counteroffer being accepted next.
///
/// Grows with the best opposite offer's neighborhood and shrinks with the
/// agent's own; a rising intrinsic value makes sellers more confident and
/// buyers less.
pub fn confidence(
    side: Side,
    n_own: usize,
    n_best_opposite: usize,
    intrinsic_return: f64,
    gamma: f64,
) -> Result<f64, EngineError> {
    if n_own == 0 || n_best_opposite == 0 {
        return Err(EngineError::ZeroDegree {
            own: n_own,
            best: n_best_opposite,
        });
    }
    let tilt = match side {
        Side::Supply => -gamma * intrinsic_return,
        Side::Demand => gamma * intrinsic_return,
    };
    Ok(1.0 / (1.0 + (n_own as f64 / n_best_opposite as f64) * tilt.exp()))
}

/// Linear utility: 0 at `reference`, 1 at the agent's own price `own`.
pub fn utility(side: Side, price: f64, reference: f64, own: f64) -> Result<f64, EngineError> {
    if own == reference {
        return Err(EngineError::DegenerateUtility(reference));
    }
    Ok(match side {
        Side::Supply => (price - reference) / (own - reference),
        Side::Demand => (reference - price) / (reference - own),
    })
}

/// Outcome of one agent's move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decision {
    Accept,
    Counter(f64),
}

/// Accept `offer` when its utility is at least the confidence-weighted
/// utility of conceding one step, otherwise concede by `step * (1 - λ)`.
///
/// An offer at least as good as the agent's own price is always accepted.
pub fn accept_or_counter(
    side: Side,
    own: f64,
    reference: f64,
    offer: f64,
    lambda: f64,
    step: f64,
) -> Result<Decision, EngineError> {
    // a seller receiving at least its ask, or a buyer asked at most its bid
    if !side.is_better(offer, own) {
        return Ok(Decision::Accept);
    }
    let counter = own * (1.0 + step * (1.0 - lambda));
    let now = utility(side, offer, reference, own)?;
    let later = lambda * utility(side, counter, reference, own)?;
    if now >= later {
        Ok(Decision::Accept)
    } else {
        Ok(Decision::Counter(counter))
    }
}

/// Proportional change of the intrinsic series at `t`.
pub fn intrinsic_return_at(intrinsic: &[f64], t: usize) -> f64 {
    if t == 0 || t >= intrinsic.len() {
        0.0
    } else {
        (intrinsic[t] - intrinsic[t - 1]) / intrinsic[t - 1]
    }
}

/// Both networks plus the bargaining bookkeeping carried between trades.
#[derive(Debug, Clone)]
pub struct MarketState {
    pub demand: TradingNetwork,
    pub supply: TradingNetwork,
    /// Best bid when the current bargaining round started.
    pub reference_bid: f64,
    /// Best ask when the current bargaining round started.
    pub reference_ask: f64,
    pub last_price: f64,
    best_bid: NodeId,
    best_ask: NodeId,
}

impl MarketState {
    /// Builds both networks from single seeds priced at `initial_price`.
    pub fn new<R: Rng + ?Sized>(cfg: &SimulationConfig, initial_price: f64, rng: &mut R) -> Result<Self, EngineError> {
        cfg.validate()?;
        let demand = init_network(
            cfg.n_agents,
            cfg.p_construct,
            cfg.step_demand,
            Side::Demand,
            initial_price,
            rng,
        )?;
        let supply = init_network(
            cfg.n_agents,
            cfg.p_construct,
            cfg.step_supply,
            Side::Supply,
            initial_price,
            rng,
        )?;
        let mut state = MarketState {
            demand,
            supply,
            reference_bid: initial_price,
            reference_ask: initial_price,
            last_price: initial_price,
            best_bid: 0,
            best_ask: 0,
        };
        state.reset_round();
        Ok(state)
    }

    pub fn network(&self, side: Side) -> &TradingNetwork {
        match side {
            Side::Demand => &self.demand,
            Side::Supply => &self.supply,
        }
    }

    fn network_mut(&mut self, side: Side) -> &mut TradingNetwork {
        match side {
            Side::Demand => &mut self.demand,
            Side::Supply => &mut self.supply,
        }
    }

    pub fn best(&self, side: Side) -> NodeId {
        match side {
            Side::Demand => self.best_bid,
            Side::Supply => self.best_ask,
        }
    }

    fn set_best(&mut self, side: Side, id: NodeId) {
        match side {
            Side::Demand => self.best_bid = id,
            Side::Supply => self.best_ask = id,
        }
    }

    /// Price at which `side`'s utility is zero.
    pub fn reference_for(&self, side: Side) -> f64 {
        match side {
            Side::Supply => self.reference_bid,
            Side::Demand => self.reference_ask,
        }
    }

    /// Recomputes best offers and resets the utility references to them.
    fn reset_round(&mut self) {
        let bid = extreme_offer(&self.demand).expect("nonempty demand");
        let ask = extreme_offer(&self.supply).expect("nonempty supply");
        self.best_bid = bid.id;
        self.best_ask = ask.id;
        self.reference_bid = bid.price;
        self.reference_ask = ask.price;
    }
}

/// Record of one executed trade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub price: f64,
    pub moves: usize,
    pub p_supply: f64,
    pub p_demand: f64,
    pub lambda_supply: f64,
    pub lambda_demand: f64,
}

/// Bargains until one trade executes, then replaces the traders and lets
/// the oldest agents reconnect.
pub fn run_trade_cycle<R: Rng + ?Sized>(
    state: &mut MarketState,
    cfg: &SimulationConfig,
    intrinsic: f64,
    intrinsic_return: f64,
    rng: &mut R,
) -> Result<Trade, EngineError> {
    let limit = cfg.move_limit();
    let mut side = if rng.random_bool(0.5) {
        Side::Demand
    } else {
        Side::Supply
    };

    for moves in 1..=limit {
        let net = state.network(side);
        let agent = net.random_node(rng);
        let own = net.price(agent);
        let opposite = side.opposite();
        let best = state.best(opposite);
        let best_net = state.network(opposite);
        let offer = best_net.price(best);
        let lambda = confidence(
            side,
            net.degree(agent),
            best_net.degree(best),
            intrinsic_return,
            cfg.gamma,
        )?;
        let decision = accept_or_counter(
            side,
            own,
            state.reference_for(side),
            offer,
            lambda,
            cfg.concession(side),
        )?;

        match decision {
            Decision::Counter(price) => {
                state.network_mut(side).set_price(agent, price)?;
                let current = state.best(side);
                let cur_price = state.network(side).price(current);
                if side.is_better(price, cur_price) || (price == cur_price && agent < current) {
                    state.set_best(side, agent);
                }
            }
            Decision::Accept => {
                let counterpart_lambda = confidence(
                    opposite,
                    best_net.degree(best),
                    net.degree(state.best(side)),
                    intrinsic_return,
                    cfg.gamma,
                )?;
                let (lambda_supply, lambda_demand) = match side {
                    Side::Supply => (lambda, counterpart_lambda),
                    Side::Demand => (counterpart_lambda, lambda),
                };
                let (p_supply, p_demand) = structural_probabilities(offer, intrinsic, cfg.alpha)?;
                remove_node(state.network_mut(side), agent)?;
                remove_node(state.network_mut(opposite), best)?;
                for (s, p) in [(Side::Supply, p_supply), (Side::Demand, p_demand)] {
                    let step = cfg.ladder_step(s);
                    let net = state.network_mut(s);
                    add_node_restricted(net, p, step, rng);
                    reconnect_oldest(net, cfg.beta, p, step, rng);
                }
                state.last_price = offer;
                state.reset_round();
                return Ok(Trade {
                    price: offer,
                    moves,
                    p_supply,
                    p_demand,
                    lambda_supply,
                    lambda_demand,
                });
            }
        }
        side = opposite;
    }
    Err(EngineError::TickAborted { moves: limit })
}

/// Price path and per-tick diagnostics of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    pub seed: u64,
    pub run_index: u64,
    pub prices: Vec<f64>,
    pub intrinsic: Vec<f64>,
    pub p_supply: Vec<f64>,
    pub p_demand: Vec<f64>,
    /// Empty unless clustering was recorded.
    pub clustering_demand: Vec<f64>,
    pub clustering_supply: Vec<f64>,
    pub lambda_supply: Vec<Option<f64>>,
    pub lambda_demand: Vec<Option<f64>>,
    pub moves: Vec<usize>,
    pub aborted: Vec<bool>,
    pub aborted_ticks: usize,
}

impl SimulationRun {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Market-to-intrinsic ratio per tick.
    pub fn ratio(&self) -> Vec<f64> {
        self.prices.iter().zip(&self.intrinsic).map(|(p, i)| p / i).collect()
    }

    /// CSV with one row per tick.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out =
            String::from("tick,price,p_s,p_d,clustering_d,clustering_s,intrinsic,lambda_s,lambda_d,moves,aborted\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let clus = |v: &Vec<f64>, t: usize| v.get(t).map(|x| x.to_string()).unwrap_or_default();
        for t in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                t,
                self.prices[t],
                self.p_supply[t],
                self.p_demand[t],
                clus(&self.clustering_demand, t),
                clus(&self.clustering_supply, t),
                self.intrinsic[t],
                opt(self.lambda_supply[t]),
                opt(self.lambda_demand[t]),
                self.moves[t],
                u8::from(self.aborted[t]),
            );
        }
        out
    }
}

/// Runs `cfg.ticks` trades on the intrinsic series using stream 0 of
/// `cfg.seed`.
pub fn simulate(cfg: &SimulationConfig, intrinsic: &[f64]) -> Result<SimulationRun, EngineError> {
    simulate_run(cfg, intrinsic, 0)
}

/// Runs one member of an ensemble with its own random stream.
pub fn simulate_run(cfg: &SimulationConfig, intrinsic: &[f64], run_index: u64) -> Result<SimulationRun, EngineError> {
    let mut rng = stream(cfg.seed, run_index);
    simulate_with_rng(cfg, intrinsic, run_index, &mut rng)
}

fn simulate_with_rng(
    cfg: &SimulationConfig,
    intrinsic: &[f64],
    run_index: u64,
    rng: &mut SimRng,
) -> Result<SimulationRun, EngineError> {
    cfg.validate()?;
    let ticks = cfg.ticks;
    let mut run = SimulationRun {
        seed: cfg.seed,
        run_index,
        prices: Vec::with_capacity(ticks),
        intrinsic: Vec::with_capacity(ticks),
        p_supply: Vec::with_capacity(ticks),
        p_demand: Vec::with_capacity(ticks),
        clustering_demand: Vec::new(),
        clustering_supply: Vec::new(),
        lambda_supply: Vec::with_capacity(ticks),
        lambda_demand: Vec::with_capacity(ticks),
        moves: Vec::with_capacity(ticks),
        aborted: Vec::with_capacity(ticks),
        aborted_ticks: 0,
    };
    if ticks == 0 {
        return Ok(run);
    }
    if intrinsic.len() < ticks {
        return Err(EngineError::IntrinsicTooShort {
            have: intrinsic.len(),
            need: ticks,
        });
    }
    if let Some((tick, &value)) = intrinsic[..ticks].iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(EngineError::BadIntrinsic { tick, value });
    }

    let mut state = MarketState::new(cfg, intrinsic[0], rng)?;
    for t in 0..ticks {
        let value = intrinsic[t];
        let r = intrinsic_return_at(intrinsic, t);
        match run_trade_cycle(&mut state, cfg, value, r, rng) {
            Ok(trade) => {
                run.prices.push(trade.price);
                run.p_supply.push(trade.p_supply);
                run.p_demand.push(trade.p_demand);
                run.lambda_supply.push(Some(trade.lambda_supply));
                run.lambda_demand.push(Some(trade.lambda_demand));
                run.moves.push(trade.moves);
                run.aborted.push(false);
            }
            Err(EngineError::TickAborted { moves }) => {
                let (ps, pd) = structural_probabilities(state.last_price, value, cfg.alpha)?;
                run.prices.push(state.last_price);
                run.p_supply.push(ps);
                run.p_demand.push(pd);
                run.lambda_supply.push(None);
                run.lambda_demand.push(None);
                run.moves.push(moves);
                run.aborted.push(true);
                run.aborted_ticks += 1;
            }
            Err(e) => return Err(e),
        }
        run.intrinsic.push(value);
        if cfg.record_clustering {
            run.clustering_demand.push(avg_clustering(&state.demand));
            run.clustering_supply.push(avg_clustering(&state.supply));
        }
    }
    Ok(run)
}

/// Runs `n_runs` independent simulations in parallel; element `k` uses
/// stream `k` of `cfg.seed` regardless of scheduling.
pub fn simulate_ensemble(
    cfg: &SimulationConfig,
    intrinsic: &[f64],
    n_runs: usize,
) -> Vec<Result<SimulationRun, EngineError>> {
    (0..n_runs as u64)
        .into_par_iter()
        .map(|k| simulate_run(cfg, intrinsic, k))
        .collect()
}

/// Rolling scaled variance `Var(S) / mean(S)^2` over a trailing window.
///
/// Element `i` covers ticks `i ..= i + window - 1`.
pub fn variance_indicator(prices: &[f64], window: usize) -> Result<Vec<f64>, EngineError> {
    if window < 2 || window > prices.len() {
        return Err(EngineError::BadWindow {
            window,
            len: prices.len(),
        });
    }
    Ok(prices
        .windows(window)
        .map(|w| {
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            var / (mean * mean)
        })
        .collect())
}
