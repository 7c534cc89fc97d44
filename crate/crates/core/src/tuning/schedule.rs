use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One successive-halving round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub n_configs: usize,
    pub r_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub rounds: Vec<Round>,
}

impl Bracket {
    /// Initial (n, r) pair.
    pub fn start(&self) -> (usize, usize) {
        (self.rounds[0].n_configs, self.rounds[0].r_epochs)
    }

    /// Epochs spent if every trial trains from scratch at its round's budget.
    pub fn total_epochs(&self) -> usize {
        self.rounds.iter().map(|r| r.n_configs * r.r_epochs).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketSchedule {
    pub eta: usize,
    /// Maximum epochs per trial.
    pub max_epochs: usize,
    pub s_max: usize,
    /// Most exploratory bracket first.
    pub brackets: Vec<Bracket>,
}

impl BracketSchedule {
    pub fn budget_bound(&self) -> usize {
        (self.s_max + 1) * self.max_epochs
    }
}

/// Survivors of a round of `n` configurations.
pub fn survivors(n: usize, eta: usize) -> usize {
    (n / eta).max(1)
}

/// Builds the Hyperband bracket table for a maximum of `max_epochs` epochs
/// per trial and reduction factor `eta`.
///
/// `s_max = floor(log_eta R)`; bracket `s` starts
/// `ceil((s_max + 1) / (s + 1) * eta^s)` configurations at
/// `floor(R / eta^s)` epochs, keeping `floor(n / eta)` (at least one) per
/// round while the per-trial budget grows by `eta`.
pub fn make_schedule(max_epochs: usize, eta: usize) -> Result<BracketSchedule> {
    if eta < 2 {
        return Err(Error::validation("eta", "must be at least 2"));
    }
    if max_epochs < eta {
        return Err(Error::validation("max_epochs", format!("must be at least eta = {eta}")));
    }
    let mut s_max = 0;
    while eta.checked_pow(s_max as u32 + 1).is_some_and(|p| p <= max_epochs) {
        s_max += 1;
    }
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let eta_s = eta.pow(s as u32);
            // ceil((s_max + 1) * eta^s / (s + 1)) in integers
            let n = ((s_max + 1) * eta_s).div_ceil(s + 1);
            let mut n_i = n;
            let rounds = (0..=s)
                .map(|i| {
                    let round = Round {
                        n_configs: n_i,
                        r_epochs: max_epochs / eta.pow((s - i) as u32),
                    };
                    n_i = survivors(n_i, eta);
                    round
                })
                .collect();
            Bracket { s, rounds }
        })
        .collect();
    Ok(BracketSchedule {
        eta,
        max_epochs,
        s_max,
        brackets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Float evaluation of the bracket formula, independent of the integer
    /// arithmetic above.
    fn oracle(r: f64, eta: f64) -> Vec<(usize, usize)> {
        let s_max = (r.ln() / eta.ln() + 1e-9).floor() as i32;
        (0..=s_max)
            .rev()
            .map(|s| {
                let n = ((s_max + 1) as f64 / (s + 1) as f64 * eta.powi(s)).ceil() as usize;
                (n, (r * eta.powi(-s) + 1e-9).floor() as usize)
            })
            .collect()
    }

    #[test]
    fn r81_eta3_table() {
        let sched = make_schedule(81, 3).unwrap();
        let starts: Vec<_> = sched.brackets.iter().map(Bracket::start).collect();
        assert_eq!(starts, vec![(81, 1), (34, 3), (15, 9), (8, 27), (5, 81)]);
        assert_eq!(starts, oracle(81.0, 3.0));
        assert_eq!(sched.s_max, 4);
        let first: Vec<_> = sched.brackets[0]
            .rounds
            .iter()
            .map(|r| (r.n_configs, r.r_epochs))
            .collect();
        assert_eq!(first, vec![(81, 1), (27, 3), (9, 9), (3, 27), (1, 81)]);
        let second: Vec<_> = sched.brackets[1].rounds.iter().map(|r| r.n_configs).collect();
        assert_eq!(second, vec![34, 11, 3, 1]);
    }

    #[test]
    fn r_equal_to_eta_gives_two_brackets() {
        for eta in 2..8 {
            let sched = make_schedule(eta, eta).unwrap();
            let starts: Vec<_> = sched.brackets.iter().map(Bracket::start).collect();
            assert_eq!(starts, vec![(eta, 1), (2, eta)]);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(make_schedule(10, 1).is_err());
        assert!(make_schedule(2, 3).is_err());
        assert!(make_schedule(0, 2).is_err());
    }

    proptest! {
        #[test]
        fn budget_and_recursion_hold(r in 2usize..5000, eta in 2usize..12) {
            prop_assume!(r >= eta);
            let sched = make_schedule(r, eta).unwrap();
            prop_assert_eq!(sched.brackets.iter().map(Bracket::start).collect::<Vec<_>>(), oracle(r as f64, eta as f64));
            for b in &sched.brackets {
                prop_assert!(b.total_epochs() <= sched.budget_bound());
                prop_assert_eq!(b.rounds.len(), b.s + 1);
                prop_assert_eq!(b.rounds.last().unwrap().r_epochs, r);
                for w in b.rounds.windows(2) {
                    prop_assert_eq!(w[1].n_configs, survivors(w[0].n_configs, eta));
                    prop_assert!(w[1].r_epochs >= w[0].r_epochs);
                }
                prop_assert!(b.rounds.iter().all(|x| x.r_epochs >= 1 && x.r_epochs <= r));
            }
        }
    }
}
