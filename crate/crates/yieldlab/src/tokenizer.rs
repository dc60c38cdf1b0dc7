//! Yield tokenizer state machine: deposits of the yield-bearing token, 1:1
//! minting of principal and yield tokens, yield accrual and routing, splitting
//! into per-emission yield futures, and redemption at maturity.

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum TokenizerError {
    #[error("amount must be positive, got {0}")]
    NonPositiveAmount(f64),
    #[error("operation not allowed at clock {clock} (maturity {maturity}): {what}")]
    Lifecycle { clock: f64, maturity: f64, what: String },
    #[error("payment schedule mismatch: {0}")]
    Schedule(String),
    #[error("duplicate emission at time {0}")]
    DuplicateEmission(f64),
    #[error("insufficient balance: requested {requested}, available {available}")]
    Insufficient { requested: f64, available: f64 },
    #[error("clock cannot move backwards: {from} -> {to}")]
    ClockRegression { from: f64, to: f64 },
}

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FutureSlot {
    pub time: f64,
    pub notional: f64,
    pub paid: bool,
    pub realized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Deposit,
    Split,
    Accrue,
    Redeem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub kind: EventKind,
    pub time: f64,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerState {
    pub maturity: f64,
    /// Emission times, ascending, all in (0, maturity].
    pub schedule: Vec<f64>,
    pub deposits: f64,
    pub principal_supply: f64,
    pub yield_supply: f64,
    pub futures: Vec<FutureSlot>,
    /// Yield routed to live yield-token holders, in numeraire.
    pub yield_routed: f64,
    pub total_emitted: f64,
    /// Notional of yield tokens burned into futures.
    pub converted_notional: f64,
    pub clock: f64,
    pub events: Vec<EventRecord>,
}

impl TokenizerState {
    pub fn new(maturity: f64, schedule: Vec<f64>) -> Result<Self, TokenizerError> {
        let mut s = schedule;
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if s.iter().any(|&t| t <= 0.0 || t > maturity + TIME_EPS) {
            return Err(TokenizerError::Schedule(format!(
                "emission times must lie in (0, {maturity}]"
            )));
        }
        Ok(Self {
            maturity,
            futures: s.iter().map(|&time| FutureSlot { time, notional: 0.0, paid: false, realized: 0.0 }).collect(),
            schedule: s,
            deposits: 0.0,
            principal_supply: 0.0,
            yield_supply: 0.0,
            yield_routed: 0.0,
            total_emitted: 0.0,
            converted_notional: 0.0,
            clock: 0.0,
            events: vec![],
        })
    }

    /// Remaining emission times strictly after the clock.
    pub fn remaining_schedule(&self) -> Vec<f64> {
        self.schedule
            .iter()
            .copied()
            .filter(|&t| t > self.clock + TIME_EPS)
            .collect()
    }

    pub fn deposit(&mut self, amount: f64) -> Result<(f64, f64), TokenizerError> {
        if amount <= 0.0 {
            return Err(TokenizerError::NonPositiveAmount(amount));
        }
        if self.clock >= self.maturity {
            return Err(TokenizerError::Lifecycle {
                clock: self.clock,
                maturity: self.maturity,
                what: "deposit after maturity".into(),
            });
        }
        self.deposits += amount;
        self.principal_supply += amount;
        self.yield_supply += amount;
        self.events.push(EventRecord { kind: EventKind::Deposit, time: self.clock, amount });
        Ok((amount, amount))
    }

    /// Burns `y_amount` of the yield token and credits each remaining emission
    /// slot with that notional.
    pub fn split_to_futures(
        &mut self,
        y_amount: f64,
        payment_times: &[f64],
    ) -> Result<(), TokenizerError> {
        if y_amount <= 0.0 {
            return Err(TokenizerError::NonPositiveAmount(y_amount));
        }
        if y_amount > self.yield_supply + 1e-12 {
            return Err(TokenizerError::Insufficient {
                requested: y_amount,
                available: self.yield_supply,
            });
        }
        let remaining = self.remaining_schedule();
        if payment_times.len() != remaining.len()
            || payment_times
                .iter()
                .zip(&remaining)
                .any(|(a, b)| (a - b).abs() > TIME_EPS)
        {
            return Err(TokenizerError::Schedule(format!(
                "expected remaining schedule {remaining:?}, got {payment_times:?}"
            )));
        }
        self.yield_supply -= y_amount;
        self.converted_notional += y_amount;
        for slot in &mut self.futures {
            if slot.time > self.clock + TIME_EPS {
                slot.notional += y_amount;
            }
        }
        self.events.push(EventRecord { kind: EventKind::Split, time: self.clock, amount: y_amount });
        Ok(())
    }

    /// Routes one yield emission pro-rata between live yield-token holders and
    /// holders of the future expiring at `at`, then advances the clock.
    pub fn accrue(&mut self, emission: f64, at: f64) -> Result<(), TokenizerError> {
        if at < self.clock - TIME_EPS {
            return Err(TokenizerError::ClockRegression { from: self.clock, to: at });
        }
        let slot_idx = self.futures.iter().position(|s| (s.time - at).abs() < TIME_EPS);
        if let Some(i) = slot_idx {
            if self.futures[i].paid {
                return Err(TokenizerError::DuplicateEmission(at));
            }
        }
        let future_notional = slot_idx.map(|i| self.futures[i].notional).unwrap_or(0.0);
        let total = self.yield_supply + future_notional;
        if emission > 0.0 && total > 0.0 {
            let per_unit = emission / total;
            self.yield_routed += per_unit * self.yield_supply;
            if let Some(i) = slot_idx {
                self.futures[i].realized = per_unit * future_notional;
            }
        } else if emission > 0.0 {
            // No holders of record; the emission stays with the contract.
            self.yield_routed += emission;
        }
        if let Some(i) = slot_idx {
            self.futures[i].paid = true;
        }
        self.total_emitted += emission;
        self.clock = at;
        self.events.push(EventRecord { kind: EventKind::Accrue, time: at, amount: emission });
        Ok(())
    }

    /// Burns principal tokens and releases an equal amount of the underlying.
    pub fn redeem(&mut self, p_amount: f64) -> Result<f64, TokenizerError> {
        if p_amount <= 0.0 {
            return Err(TokenizerError::NonPositiveAmount(p_amount));
        }
        if self.clock < self.maturity - TIME_EPS {
            return Err(TokenizerError::Lifecycle {
                clock: self.clock,
                maturity: self.maturity,
                what: "redeem before maturity".into(),
            });
        }
        if p_amount > self.principal_supply + 1e-12 {
            return Err(TokenizerError::Insufficient {
                requested: p_amount,
                available: self.principal_supply,
            });
        }
        self.principal_supply -= p_amount;
        self.deposits -= p_amount;
        self.events.push(EventRecord { kind: EventKind::Redeem, time: self.clock, amount: p_amount });
        Ok(p_amount)
    }

    /// Total yield routed to all holders (yield tokens plus paid futures).
    pub fn total_routed(&self) -> f64 {
        self.yield_routed + self.futures.iter().map(|s| s.realized).sum::<f64>()
    }

    pub fn event_log_csv(&self) -> String {
        let mut out = String::from("kind,time,amount\n");
        for e in &self.events {
            let kind = match e.kind {
                EventKind::Deposit => "deposit",
                EventKind::Split => "split",
                EventKind::Accrue => "accrue",
                EventKind::Redeem => "redeem",
            };
            let _ = writeln!(out, "{kind},{},{}", crate::pricing::fmt12(e.time), crate::pricing::fmt12(e.amount));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fresh() -> TokenizerState {
        TokenizerState::new(1.0, vec![0.25, 0.5, 0.75, 1.0]).unwrap()
    }

    #[test]
    fn deposit_mints_one_to_one() {
        let mut s = fresh();
        let (p, y) = s.deposit(5.0).unwrap();
        assert_eq!((p, y), (5.0, 5.0));
        assert_eq!(s.principal_supply, 5.0);
        assert_eq!(s.yield_supply, 5.0);
        assert_eq!(s.deposits, 5.0);
    }

    #[test]
    fn deposits_are_additive() {
        let mut a = fresh();
        a.deposit(2.0).unwrap();
        a.deposit(3.0).unwrap();
        let mut b = fresh();
        b.deposit(5.0).unwrap();
        assert_eq!(a.deposits, b.deposits);
        assert_eq!(a.principal_supply, b.principal_supply);
        assert_eq!(a.yield_supply, b.yield_supply);
    }

    #[test]
    fn zero_deposit_rejected() {
        let mut s = fresh();
        assert!(matches!(s.deposit(0.0), Err(TokenizerError::NonPositiveAmount(_))));
    }

    #[test]
    fn split_credits_every_remaining_emission() {
        let mut s = TokenizerState::new(1.0, vec![0.5, 1.0]).unwrap();
        s.deposit(2.0).unwrap();
        s.split_to_futures(1.0, &[0.5, 1.0]).unwrap();
        assert_eq!(s.yield_supply, 1.0);
        assert_eq!(s.converted_notional, 1.0);
        for slot in &s.futures {
            assert_eq!(slot.notional, 1.0);
        }
    }

    #[test]
    fn split_rejects_wrong_schedule() {
        let mut s = TokenizerState::new(1.0, vec![0.5, 1.0]).unwrap();
        s.deposit(1.0).unwrap();
        assert!(matches!(
            s.split_to_futures(1.0, &[0.4, 1.0]),
            Err(TokenizerError::Schedule(_))
        ));
        assert!(matches!(
            s.split_to_futures(0.0, &[0.5, 1.0]),
            Err(TokenizerError::NonPositiveAmount(_))
        ));
    }

    #[test]
    fn accrual_is_pro_rata_over_notional() {
        // 1 Y unsplit + future at t1 with notional 1; emission 0.06 splits evenly.
        let mut s = TokenizerState::new(1.0, vec![0.5, 1.0]).unwrap();
        s.deposit(2.0).unwrap();
        s.split_to_futures(1.0, &[0.5, 1.0]).unwrap();
        s.accrue(0.06, 0.5).unwrap();
        assert_relative_eq!(s.yield_routed, 0.03);
        assert_relative_eq!(s.futures[0].realized, 0.03);
        assert!(s.futures[0].paid);
    }

    #[test]
    fn zero_emission_only_advances_clock() {
        let mut s = fresh();
        s.deposit(1.0).unwrap();
        s.accrue(0.0, 0.25).unwrap();
        assert_eq!(s.clock, 0.25);
        assert_eq!(s.total_routed(), 0.0);
    }

    #[test]
    fn duplicate_emission_rejected() {
        let mut s = fresh();
        s.deposit(1.0).unwrap();
        s.accrue(0.01, 0.25).unwrap();
        assert!(matches!(s.accrue(0.01, 0.25), Err(TokenizerError::DuplicateEmission(_))));
    }

    #[test]
    fn full_replay_conserves_yield() {
        let mut s = fresh();
        s.deposit(3.0).unwrap();
        s.split_to_futures(1.0, &[0.25, 0.5, 0.75, 1.0]).unwrap();
        let emissions = [0.03, 0.05, 0.02, 0.04];
        for (e, t) in emissions.iter().zip([0.25, 0.5, 0.75, 1.0]) {
            s.accrue(*e, t).unwrap();
        }
        let emitted: f64 = emissions.iter().sum();
        assert_relative_eq!(s.total_routed(), emitted, epsilon = 1e-14);
        assert_relative_eq!(s.total_emitted, emitted);
    }

    #[test]
    fn split_neutrality() {
        // Splitting everything then replaying the schedule routes the same
        // totals to the (single) holder as holding the yield token outright.
        let schedule = [0.25, 0.5, 0.75, 1.0];
        let emissions = [0.03, 0.05, 0.02, 0.04];

        let mut hold = fresh();
        hold.deposit(1.0).unwrap();
        for (e, t) in emissions.iter().zip(schedule) {
            hold.accrue(*e, t).unwrap();
        }

        let mut split = fresh();
        split.deposit(1.0).unwrap();
        split.split_to_futures(1.0, &schedule).unwrap();
        for (e, t) in emissions.iter().zip(schedule) {
            split.accrue(*e, t).unwrap();
        }

        assert_relative_eq!(hold.total_routed(), split.total_routed(), epsilon = 1e-14);
        assert_relative_eq!(hold.yield_routed, split.futures.iter().map(|s| s.realized).sum::<f64>(), epsilon = 1e-14);
    }

    #[test]
    fn redeem_lifecycle() {
        let mut s = TokenizerState::new(1.0, vec![1.0]).unwrap();
        s.deposit(5.0).unwrap();
        assert!(matches!(s.redeem(5.0), Err(TokenizerError::Lifecycle { .. })));
        s.accrue(0.05, 1.0).unwrap();
        let out = s.redeem(2.0).unwrap();
        assert_eq!(out, 2.0);
        assert_eq!(s.principal_supply, 3.0);
        assert_eq!(s.deposits, 3.0);
        let rest = s.redeem(3.0).unwrap();
        assert_eq!(rest, 3.0);
        assert_eq!(s.principal_supply, 0.0);
        assert_eq!(s.deposits, 0.0);
    }

    #[test]
    fn invariant_principal_tracks_deposits() {
        let mut s = fresh();
        s.deposit(2.0).unwrap();
        s.deposit(1.5).unwrap();
        s.split_to_futures(0.5, &[0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(s.principal_supply, s.deposits);
        assert_relative_eq!(s.yield_supply + s.converted_notional, s.deposits);
    }

    #[test]
    fn event_log_replays() {
        let mut s = TokenizerState::new(1.0, vec![1.0]).unwrap();
        s.deposit(1.0).unwrap();
        s.accrue(0.05, 1.0).unwrap();
        s.redeem(1.0).unwrap();
        let csv = s.event_log_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("kind,time,amount"));
    }
}
