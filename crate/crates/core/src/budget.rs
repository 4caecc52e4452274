//! Efficiency arithmetic: cavity coupling β, the detection chain, and the
//! dot-to-first-lens collection efficiency inferred from count rates.

use crate::error::{Error, Result};
use crate::io::KvDocument;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beta {
    pub value: f64,
    /// The dot decays slower than the reference (β < 0).
    pub slower_than_reference: bool,
}

/// `β = 1 - τ_on / τ_off`.
pub fn beta_factor(tau_on_ps: f64, tau_off_ps: f64) -> Result<Beta> {
    if !(tau_on_ps > 0.0 && tau_off_ps > 0.0) {
        return Err(Error::invalid("lifetimes must be > 0"));
    }
    let value = 1.0 - tau_on_ps / tau_off_ps;
    if value < 0.0 {
        log::warn!("beta = {value:.4} < 0: on-resonance lifetime exceeds the reference");
    }
    Ok(Beta {
        value,
        slower_than_reference: value < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyChain {
    pub stages: Vec<(String, f64)>,
}

impl EfficiencyChain {
    pub fn new(stages: &[(&str, f64)]) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid("efficiency chain is empty"));
        }
        for (label, e) in stages {
            if !(0.0..=1.0).contains(e) {
                return Err(Error::invalid(format!(
                    "stage `{label}` efficiency {e} is outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            stages: stages.iter().map(|(l, e)| (l.to_string(), *e)).collect(),
        })
    }

    /// Optics, spectrometer, fiber coupling and detector of the measured
    /// setup.
    pub fn measured_setup() -> Self {
        Self::new(&[
            ("optics", 0.41),
            ("spectrometer", 0.42),
            ("fiber", 0.48),
            ("detector", 0.20),
        ])
        .expect("valid stages")
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut stages = self.stages.clone();
        stages.extend(other.stages.iter().cloned());
        Self { stages }
    }
}

pub fn chain_efficiency(c: &EfficiencyChain) -> f64 {
    c.stages.iter().map(|(_, e)| e).product()
}

/// `count_rate / (rep_rate · system_eff)`.
pub fn collection_efficiency(count_rate_hz: f64, rep_rate_hz: f64, system_eff: f64) -> Result<f64> {
    if !(count_rate_hz >= 0.0) {
        return Err(Error::invalid("count rate must be >= 0"));
    }
    if count_rate_hz == 0.0 {
        return Ok(0.0);
    }
    if !(system_eff > 0.0 && system_eff <= 1.0) {
        return Err(Error::invalid("system efficiency must be in (0, 1]"));
    }
    if !(rep_rate_hz > 0.0) {
        return Err(Error::invalid("repetition rate must be > 0"));
    }
    Ok(count_rate_hz / (rep_rate_hz * system_eff))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetInputs {
    pub tau_on_a_ps: f64,
    pub tau_on_b_ps: f64,
    pub tau_off_ps: f64,
    pub chain: EfficiencyChain,
    pub rep_rate_hz: f64,
    pub count_rate_a_hz: f64,
    pub count_rate_b_hz: f64,
}

impl Default for BudgetInputs {
    fn default() -> Self {
        Self {
            tau_on_a_ps: 1120.0,
            tau_on_b_ps: 1060.0,
            tau_off_ps: 3200.0,
            chain: EfficiencyChain::measured_setup(),
            rep_rate_hz: 5e6,
            count_rate_a_hz: 6000.0,
            count_rate_b_hz: 7800.0,
        }
    }
}

/// Full-precision budget; rounding is left to display.
pub fn budget_report(b: &BudgetInputs) -> Result<KvDocument> {
    let beta_a = beta_factor(b.tau_on_a_ps, b.tau_off_ps)?;
    let beta_b = beta_factor(b.tau_on_b_ps, b.tau_off_ps)?;
    let system = chain_efficiency(&b.chain);
    let eta_a = collection_efficiency(b.count_rate_a_hz, b.rep_rate_hz, system)?;
    let eta_b = collection_efficiency(b.count_rate_b_hz, b.rep_rate_hz, system)?;
    let mut d = KvDocument::new();
    d.section("coupling")
        .set("tau_off_ps", b.tau_off_ps)
        .set("tau_on_a_ps", b.tau_on_a_ps)
        .set("beta_a", beta_a.value)
        .set("tau_on_b_ps", b.tau_on_b_ps)
        .set("beta_b", beta_b.value);
    d.section("system");
    for (label, e) in &b.chain.stages {
        d.set(&format!("stage.{label}"), e);
    }
    d.set("system_efficiency", system);
    d.section("collection")
        .set("rep_rate_hz", b.rep_rate_hz)
        .set("count_rate_a_hz", b.count_rate_a_hz)
        .set("collection_a", eta_a)
        .set("count_rate_b_hz", b.count_rate_b_hz)
        .set("collection_b", eta_b);
    Ok(d)
}
