//! Exponential backoff shared by the chat, scorer and professional-source clients.

use std::thread;
use std::time::Duration;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

/// Outcome of one failed attempt.
#[derive(Debug)]
pub enum Attempt<E> {
    Retry(E),
    Fatal(E),
}

#[derive(Debug)]
pub enum RetryError<E> {
    Exhausted { attempts: u32, last: E },
    Fatal { attempt: u32, error: E },
}

impl RetryPolicy {
    /// Same attempt budget, no sleeping between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            factor: 2.0,
        }
    }

    /// Delay slept after the `attempt`-th failure (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let exp = self.factor.powi(attempt.saturating_sub(1) as i32);
        self.base_delay.mul_f64(exp)
    }

    /// Runs `op` until it succeeds, fails fatally, or the budget runs out.
    /// Returns the value and the 1-based attempt that produced it.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, Attempt<E>>,
    ) -> Result<(T, u32), RetryError<E>> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok((v, attempt)),
                Err(Attempt::Fatal(error)) => return Err(RetryError::Fatal { attempt, error }),
                Err(Attempt::Retry(last)) => {
                    if attempt >= max {
                        return Err(RetryError::Exhausted {
                            attempts: attempt,
                            last,
                        });
                    }
                    log::debug!("attempt {attempt}/{max} failed, backing off");
                    let delay = self.delay_after(attempt);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_from_one_second() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_after(1), Duration::from_secs(1));
        assert_eq!(p.delay_after(2), Duration::from_secs(2));
        assert_eq!(p.delay_after(4), Duration::from_secs(8));
    }

    #[test]
    fn counts_attempts_until_success() {
        let p = RetryPolicy::immediate(5);
        let (v, attempt) = p
            .run(|n| {
                if n < 3 {
                    Err(Attempt::Retry("down"))
                } else {
                    Ok(n * 10)
                }
            })
            .unwrap();
        assert_eq!((v, attempt), (30, 3));
    }

    #[test]
    fn exhausts_after_max_attempts() {
        let mut calls = 0;
        let err = RetryPolicy::immediate(5)
            .run::<(), _>(|_| {
                calls += 1;
                Err(Attempt::Retry("down"))
            })
            .unwrap_err();
        assert!(matches!(err, RetryError::Exhausted { attempts: 5, .. }));
        assert_eq!(calls, 5);
    }

    #[test]
    fn fatal_stops_immediately() {
        let err = RetryPolicy::immediate(5)
            .run::<(), _>(|_| Err(Attempt::Fatal("bad request")))
            .unwrap_err();
        assert!(matches!(err, RetryError::Fatal { attempt: 1, .. }));
    }
}
