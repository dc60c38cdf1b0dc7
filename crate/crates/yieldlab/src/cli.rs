//! Scenario runner: loads a JSON config, runs named experiments across the
//! library, and writes deterministic CSV/JSON artifacts.

use crate::aggregation::{aggregate, OrderBookView, Side};
use crate::amm::{
    efficient_curve, futures_menu_from_token_menu, indifference_menu, trader_action_utility,
};
use crate::dist::{PaymentDist, YieldDistribution};
use crate::fixed_rate::{execute_fixed, net_cashflows, quote_fixed, QuoteSide};
use crate::lending::{
    equilibrium_hedge, hedging_premium, interest_rate, welfare_gamma_sweep, AgentSpec, PoolState,
    Role,
};
use crate::pricing::{
    check_maturity_consistency, fmt12, price_token_strip_mc, price_yield_token_mc,
    solve_pricing_pde_1d, YieldFunctionSpec,
};
use crate::staking::{
    insurance_expected_profit, insurance_position, price_principal_multi, StakingYieldModel,
};
use crate::stochastic::ModelSpec;
use crate::utility::UtilitySpec;
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("verification failed: {0} check(s) did not pass")]
    Verification(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

macro_rules! run_err {
    ($e:expr) => {
        $e.map_err(|err| CliError::Run(err.to_string()))?
    };
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Geometric { mu: f64, sigma: f64, rate: f64, x0: f64 },
    Arithmetic { mu: f64, sigma: f64, rate: f64, x0: f64 },
    MeanReverting { kappa: f64, theta: f64, sigma: f64, rate: f64, x0: f64 },
}

impl ModelConfig {
    pub fn build(&self) -> (ModelSpec, f64) {
        match *self {
            ModelConfig::Geometric { mu, sigma, rate, x0 } => {
                (ModelSpec::geometric(mu, sigma, rate), x0)
            }
            ModelConfig::Arithmetic { mu, sigma, rate, x0 } => {
                (ModelSpec::arithmetic(mu, sigma, rate), x0)
            }
            ModelConfig::MeanReverting { kappa, theta, sigma, rate, x0 } => {
                (ModelSpec::mean_reverting(kappa, theta, sigma, rate), x0)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub yield_fraction: f64,
    pub maturity: f64,
    pub n_paths: usize,
    pub steps: usize,
    pub payments: Vec<PaymentDist>,
    pub lp_utility: UtilitySpec,
    pub trader_utility: UtilitySpec,
    pub delta: f64,
    pub pool: PoolState,
    pub agents: Vec<AgentSpec>,
    pub blocks: usize,
    pub fee_rate: f64,
    pub slash_fraction: f64,
    pub slash_prob: f64,
}

pub const REFERENCE_CONFIG: &str = include_str!("../config/reference.json");

impl ScenarioConfig {
    pub fn reference() -> Self {
        serde_json::from_str(REFERENCE_CONFIG).expect("reference config must parse")
    }

    pub fn yield_dist(&self) -> Result<YieldDistribution, CliError> {
        YieldDistribution::new(self.payments.clone())
            .map_err(|e| CliError::Run(e.to_string()))
    }
}

/// Loads a config, applying `--set key=value` overrides (dotted paths into
/// the JSON tree) before schema validation, so misspelled keys are rejected.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<ScenarioConfig, CliError> {
    let (raw, label) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.display().to_string(),
                source,
            })?,
            p.display().to_string(),
        ),
        None => (REFERENCE_CONFIG.to_string(), "<builtin reference>".to_string()),
    };
    let mut value: serde_json::Value =
        serde_json::from_str(&raw).map_err(|e| CliError::Config {
            path: label.clone(),
            msg: e.to_string(),
        })?;
    for (key, val) in overrides {
        apply_override(&mut value, key, val).map_err(|msg| CliError::Config {
            path: format!("{label}:{key}"),
            msg,
        })?;
    }
    serde_json::from_value(value).map_err(|e| CliError::Config { path: label, msg: e.to_string() })
}

fn apply_override(root: &mut serde_json::Value, key: &str, val: &str) -> Result<(), String> {
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let next = if let Ok(idx) = part.parse::<usize>() {
            cursor
                .as_array_mut()
                .ok_or_else(|| format!("{part} is not an array index here"))?
                .get_mut(idx)
                .ok_or_else(|| format!("index {idx} out of range"))?
        } else {
            cursor
                .as_object_mut()
                .ok_or_else(|| format!("{part} is not an object key here"))?
                .entry(part.to_string())
                .or_insert(serde_json::Value::Null)
        };
        if last {
            *next = parse_override_value(val);
            return Ok(());
        }
        cursor = next;
    }
    Err("empty key".into())
}

fn parse_override_value(val: &str) -> serde_json::Value {
    if let Ok(v) = serde_json::from_str(val) {
        v
    } else {
        serde_json::Value::String(val.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "yieldlab", about = "Yield-tokenization numerical laboratory")]
pub struct Cli {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Override a config field, e.g. --set pool.gamma=1.25
    #[arg(long = "set", global = true, value_parser = parse_key_value)]
    pub sets: Vec<(String, String)>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s}"))
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Monte Carlo and PDE pricing sweep.
    Price,
    /// AMM bonding curves and price menus.
    Curve,
    /// Liquidity aggregation into an order-book view.
    Aggregate,
    /// Lending hedge report and welfare gamma sweep.
    Hedge,
    /// Fixed-rate quoting against per-future books.
    Quote,
    /// Staking prices and slash insurance.
    Stake,
    /// Full invariant suite; exit 1 on any failure.
    Verify,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut config = load_config(cli.config.as_deref(), &cli.sets)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(paths) = cli.paths {
        config.n_paths = paths;
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    match cli.command {
        Command::Price => cmd_price(&config, &out_dir),
        Command::Curve => cmd_curve(&config, &out_dir),
        Command::Aggregate => cmd_aggregate(&config, &out_dir),
        Command::Hedge => cmd_hedge(&config, &out_dir),
        Command::Quote => cmd_quote(&config, &out_dir),
        Command::Stake => cmd_stake(&config, &out_dir),
        Command::Verify => cmd_verify(&config, &out_dir),
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// JSON with sorted keys and floats rounded to 12 significant digits.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Run(e.to_string()))?;
    let rounded = round_floats(v);
    let text = serde_json::to_string_pretty(&rounded).map_err(|e| CliError::Run(e.to_string()))?;
    write_text(dir, name, &(text + "\n"))
}

fn round_floats(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if n.is_f64() {
                    let rounded: f64 = format!("{f:.12e}").parse().unwrap_or(f);
                    return serde_json::Number::from_f64(rounded)
                        .map(serde_json::Value::Number)
                        .unwrap_or(serde_json::Value::Null);
                }
            }
            serde_json::Value::Number(n)
        }
        serde_json::Value::Array(items) => {
            serde_json::Value::Array(items.into_iter().map(round_floats).collect())
        }
        serde_json::Value::Object(map) => serde_json::Value::Object(
            map.into_iter().map(|(k, val)| (k, round_floats(val))).collect(),
        ),
        other => other,
    }
}

fn cmd_price(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let (model, x0) = config.model.build();
    let yf = YieldFunctionSpec::constant(config.yield_fraction, 1);
    let mut csv = String::from("t,x0,price,stderr,implied_yield\n");
    let est = run_err!(price_yield_token_mc(
        &model,
        &yf,
        0.0,
        &[x0],
        config.maturity,
        config.n_paths,
        config.steps,
        config.seed
    ));
    let rate = model.rate_at(0.0);
    let implied = run_err!(crate::pricing::implied_yield(
        est.mean / x0,
        |_| rate,
        0.0,
        config.maturity
    ));
    csv.push_str(&format!(
        "0,{},{},{},{}\n",
        fmt12(x0),
        fmt12(est.mean),
        fmt12(est.stderr),
        fmt12(implied)
    ));
    write_text(out, "price.csv", &csv)?;

    let surface = run_err!(solve_pricing_pde_1d(&model, &yf, config.maturity, 4.0 * x0, 200, 200));
    let mut pde_csv = String::from("x,price\n");
    for k in 0..=8 {
        let x = x0 * (0.5 + k as f64 * 0.125);
        pde_csv.push_str(&format!("{},{}\n", fmt12(x), fmt12(surface.at_t0(x))));
    }
    write_text(out, "price_pde.csv", &pde_csv)
}

fn cmd_curve(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let payments = config.yield_dist()?;
    let grid: Vec<f64> = (1..=20).map(|k| k as f64 * config.delta / 10.0).collect();
    let curve = run_err!(efficient_curve(&config.lp_utility, 1.0, 1.0, &payments, &grid));
    let mut csv = String::from("delta,sell_price,buy_price\n");
    for &d in &grid {
        let sell = if curve.sell.deltas.contains(&d) { curve.sell_price(d) } else { f64::NAN };
        let buy = if curve.buy.deltas.contains(&d) { curve.buy_price(d) } else { f64::NAN };
        csv.push_str(&format!("{},{},{}\n", fmt12(d), fmt12(sell), fmt12(buy)));
    }
    write_text(out, "curve.csv", &csv)?;

    let menu = run_err!(indifference_menu(&config.trader_utility, config.delta, &payments));
    write_text(out, "menu.csv", &menu.to_csv())?;
    let futures = futures_menu_from_token_menu(&menu);
    let mut fut_csv = String::from("block,price\n");
    for (i, p) in futures.iter().enumerate() {
        fut_csv.push_str(&format!("{},{}\n", i + 1, fmt12(*p)));
    }
    write_text(out, "futures_menu.csv", &fut_csv)
}

/// Books per future block built from the trader indifference menu: a deep
/// flat book centered at each future's menu price.
fn books_from_menu(config: &ScenarioConfig) -> Result<Vec<OrderBookView>, CliError> {
    use crate::aggregation::{LiquidityCurve, Segment, SegmentKind};
    let payments = config.yield_dist()?;
    let menu = run_err!(indifference_menu(&config.trader_utility, config.delta, &payments));
    let futures = futures_menu_from_token_menu(&menu);
    let mut books = Vec::new();
    for (i, &q) in futures.iter().cycle().take(config.blocks).enumerate() {
        let curve = run_err!(LiquidityCurve::new(vec![Segment {
            lo: q * 0.5,
            hi: q * 1.5,
            kind: SegmentKind::Const { level: 1e6 / (1.0 + i as f64) },
        }]));
        books.push(run_err!(aggregate(vec![("menu-lp".into(), curve)], Some(q))));
    }
    Ok(books)
}

fn cmd_aggregate(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let books = books_from_menu(config)?;
    for (i, book) in books.iter().enumerate() {
        write_text(out, &format!("orderbook_{}.csv", i + 1), &book.to_csv(8))?;
    }
    let rows = crate::fixed_rate::maturity_orderbook(&books);
    write_text(out, "maturities.csv", &crate::fixed_rate::maturity_orderbook_csv(&rows))
}

fn cmd_hedge(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let payments = config.yield_dist()?;
    let lenders: Vec<AgentSpec> = config
        .agents
        .iter()
        .filter(|a| a.role == Role::Lender)
        .cloned()
        .collect();
    let borrowers: Vec<AgentSpec> = config
        .agents
        .iter()
        .filter(|a| a.role == Role::Borrower)
        .cloned()
        .collect();
    let price = payments.total_mean();
    let report = run_err!(equilibrium_hedge(&config.pool, &lenders, &borrowers, price, &payments));
    write_text(out, "hedge.csv", &report.to_csv())?;
    let sweep = run_err!(welfare_gamma_sweep(
        &config.pool,
        &config.agents,
        &payments,
        &[1.0, 1.1, 1.25, 1.5]
    ));
    let mut csv = String::from("gamma,welfare\n");
    for (g, w) in sweep {
        csv.push_str(&format!("{},{}\n", fmt12(g), fmt12(w)));
    }
    write_text(out, "welfare_gamma.csv", &csv)
}

fn cmd_quote(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let books = books_from_menu(config)?;
    let lend = run_err!(quote_fixed(QuoteSide::Lend, config.delta, 0, config.blocks, &books));
    let borrow = run_err!(quote_fixed(QuoteSide::Borrow, config.delta, 0, config.blocks, &books));
    #[derive(Serialize)]
    struct QuotePair {
        lend: crate::fixed_rate::FixedQuote,
        borrow: crate::fixed_rate::FixedQuote,
        lend_per_block: f64,
        borrow_per_block: f64,
    }
    let pair = QuotePair {
        lend_per_block: lend.per_block_rate(),
        borrow_per_block: borrow.per_block_rate(),
        lend,
        borrow,
    };
    write_json(out, "quote.json", &pair)
}

fn cmd_stake(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let model = StakingYieldModel {
        payments: config.yield_dist()?,
        slash_fraction: config.slash_fraction,
        slash_prob: config.slash_prob,
    };
    let (p_p, p_y) = run_err!(price_principal_multi(&model));
    let insurance = run_err!(insurance_position(&model));
    #[derive(Serialize)]
    struct StakeReport {
        principal_price: f64,
        yield_price: f64,
        insurance_k: f64,
        insurance_premium: f64,
        closed_form_premium: f64,
        discrepancy: f64,
        warnings: Vec<String>,
    }
    write_json(
        out,
        "stake.json",
        &StakeReport {
            principal_price: p_p,
            yield_price: p_y,
            insurance_k: insurance.k,
            insurance_premium: insurance.p_i,
            closed_form_premium: insurance.closed_form_p_i,
            discrepancy: insurance.discrepancy,
            warnings: model.warnings(),
        },
    )
}

#[derive(Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), pass, detail }
}

/// The full invariant suite: one row per check, written to verify.csv and
/// verify.json. Any failure makes the command exit nonzero.
pub fn run_verification(config: &ScenarioConfig) -> Result<Vec<CheckResult>, CliError> {
    let mut results = Vec::new();
    let (model, x0) = config.model.build();
    let yf = YieldFunctionSpec::constant(config.yield_fraction, 1);

    // Constant-yield geometric price has the closed form y * x0 * (T - t).
    let est = run_err!(price_yield_token_mc(
        &model,
        &yf,
        0.0,
        &[x0],
        config.maturity,
        config.n_paths,
        config.steps,
        config.seed
    ));
    let closed = config.yield_fraction * x0 * config.maturity;
    let tol = 3.0 * est.stderr + 1e-9;
    results.push(check(
        "mc_price_closed_form",
        (est.mean - closed).abs() <= tol,
        format!("mc {} vs closed {} (3se {})", fmt12(est.mean), fmt12(closed), fmt12(tol)),
    ));

    // PDE solution at the spot within max(1%, 3 stderr) of MC.
    let surface = run_err!(solve_pricing_pde_1d(&model, &yf, config.maturity, 4.0 * x0, 240, 240));
    let pde = surface.at_t0(x0);
    let tol = (0.01 * est.mean.abs()).max(3.0 * est.stderr);
    results.push(check(
        "pde_mc_cross_check",
        (pde - est.mean).abs() <= tol,
        format!("pde {} mc {}", fmt12(pde), fmt12(est.mean)),
    ));

    // Token price equals the sum of its accrual futures on a common grid.
    let boundaries: Vec<f64> = (1..=4).map(|k| k as f64 * config.maturity / 4.0).collect();
    let (tokens, futures) = run_err!(price_token_strip_mc(
        &model,
        &yf,
        0.0,
        &[x0],
        &boundaries,
        &boundaries,
        config.n_paths.min(20_000),
        16,
        config.seed
    ));
    let report = run_err!(check_maturity_consistency(0.0, &tokens, &futures, 3.0, 1e-10));
    let max_residual = report
        .rows
        .iter()
        .map(|r| r.residual.abs())
        .fold(0.0f64, f64::max);
    results.push(check(
        "maturity_consistency",
        report.all_pass,
        format!("max residual {}", fmt12(max_residual)),
    ));

    // CARA-Gaussian hedging premium closed form.
    let agent = AgentSpec {
        role: Role::Lender,
        notional: 1.0,
        utility: UtilitySpec::Cara { a: 2.0 },
    };
    let y = run_err!(YieldDistribution::single(PaymentDist::Gaussian { mean: 0.05, sd: 0.1 }));
    let d = run_err!(hedging_premium(&agent, &y, 0.8));
    results.push(check(
        "hedging_premium_closed_form",
        (d - 0.01).abs() <= 1e-8,
        format!("delta {}", fmt12(d)),
    ));

    // Efficient-curve closed forms at delta = 0.5.
    let curve = run_err!(efficient_curve(
        &UtilitySpec::Cara { a: 2.0 },
        1.0,
        1.0,
        &y,
        &[0.5]
    ));
    let ok = (curve.sell.prices[0] - 0.025).abs() <= 1e-8
        && (curve.buy.prices[0] - 0.035).abs() <= 1e-8;
    results.push(check(
        "efficient_curve_closed_form",
        ok,
        format!("sell {} buy {}", fmt12(curve.sell.prices[0]), fmt12(curve.buy.prices[0])),
    ));

    // Indifference menu fixture and equal trader utilities.
    let two = run_err!(YieldDistribution::new(vec![
        PaymentDist::Gaussian { mean: 0.05, sd: 0.1 },
        PaymentDist::Gaussian { mean: 0.05, sd: 0.1 },
    ]));
    let menu = run_err!(indifference_menu(&UtilitySpec::Cara { a: 2.0 }, 1.0, &two));
    let utils: Vec<f64> = (1..=3)
        .map(|t| trader_action_utility(&UtilitySpec::Cara { a: 2.0 }, 1.0, &menu, &two, t))
        .collect();
    let span = utils.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - utils.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = (menu.prices[0] - 0.08).abs() <= 1e-8
        && (menu.prices[1] - 0.04).abs() <= 1e-8
        && span <= 1e-8;
    results.push(check(
        "indifference_menu_fixture",
        ok,
        format!("menu ({}, {}) span {}", fmt12(menu.prices[0]), fmt12(menu.prices[1]), fmt12(span)),
    ));

    // Welfare ordering at the configured population.
    let payments = config.yield_dist()?;
    let w_without =
        run_err!(crate::lending::welfare(&config.pool, &config.agents, &payments, false, 1.0));
    let w_with =
        run_err!(crate::lending::welfare(&config.pool, &config.agents, &payments, true, 1.0));
    let sweep = run_err!(welfare_gamma_sweep(
        &config.pool,
        &config.agents,
        &payments,
        &[1.0, 1.1, 1.25, 1.5]
    ));
    let monotone = sweep.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    results.push(check(
        "welfare_ordering",
        w_with >= w_without && monotone,
        format!("with {} without {}", fmt12(w_with), fmt12(w_without)),
    ));

    // Fee conservation on the menu-derived books.
    let books = books_from_menu(config)?;
    let book = &books[0];
    let (lo, _) = book.support().ok_or_else(|| CliError::Run("empty book".into()))?;
    let fill = run_err!(book.cost_to_trade(Side::Buy, book.depth_between(lo, book.anchor) * 0.5, Some(lo)));
    let fees = run_err!(book.pro_rata_fees(&fill, config.fee_rate));
    let total: f64 = fees.values().sum();
    results.push(check(
        "fee_conservation",
        (total - config.fee_rate * fill.notional).abs() <= 1e-12,
        format!("sum {} expected {}", fmt12(total), fmt12(config.fee_rate * fill.notional)),
    ));

    // Fixed-rate guarantee: per-block net cash flow variance of zero.
    let quote = run_err!(quote_fixed(QuoteSide::Borrow, config.delta, 0, config.blocks, &books));
    let (record, _, _) = run_err!(execute_fixed(&quote, &config.pool, &books));
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut totals = Vec::new();
    for _ in 0..100 {
        let path: Vec<f64> = (0..config.blocks).map(|_| 0.05 * rng.gen::<f64>()).collect();
        totals.push(net_cashflows(&record, &path).iter().sum::<f64>());
    }
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let var = totals.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / totals.len() as f64;
    let rate_identity =
        (record.per_block_rate * (record.n2 - record.n1) as f64 - record.p_delta).abs();
    results.push(check(
        "fixed_rate_guarantee",
        var < 1e-10 && rate_identity < 1e-12,
        format!("variance {} rate identity {}", fmt12(var), fmt12(rate_identity)),
    ));

    // Staking prices and the insurance zero-profit root.
    let smodel = StakingYieldModel {
        payments: run_err!(YieldDistribution::single(PaymentDist::Degenerate { value: 0.05 })),
        slash_fraction: config.slash_fraction,
        slash_prob: config.slash_prob,
    };
    let (p_p, p_y) = run_err!(price_principal_multi(&smodel));
    let insurance = run_err!(insurance_position(&smodel));
    let profit = insurance_expected_profit(&smodel, insurance.k);
    let ok = (p_p + p_y - 1.0).abs() <= 1e-15
        && (p_p - 0.952381).abs() <= 1e-6
        && profit.abs() <= 1e-10;
    results.push(check(
        "staking_prices_and_insurance",
        ok,
        format!("p_P {} profit at K {}", fmt12(p_p), fmt12(profit)),
    ));

    // Pool rate fixture.
    let rate = run_err!(interest_rate(&config.pool));
    results.push(check("pool_rate_finite", rate.is_finite() && rate >= 0.0, format!("r {}", fmt12(rate))));

    Ok(results)
}

fn cmd_verify(config: &ScenarioConfig, out: &Path) -> Result<(), CliError> {
    let results = run_verification(config)?;
    let mut csv = String::from("check,pass,detail\n");
    for r in &results {
        csv.push_str(&format!("{},{},\"{}\"\n", r.name, r.pass, r.detail));
        println!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
    }
    write_text(out, "verify.csv", &csv)?;
    write_json(out, "verify.json", &results)?;
    let failures = results.iter().filter(|r| !r.pass).count();
    if failures > 0 {
        return Err(CliError::Verification(failures));
    }
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
