//! Resonance tuning: nitrogen deposition and laser evaporation for cavities,
//! local heating for dots, and a bisection controller that heats dot A onto
//! dot B.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{parse_kv, parse_pairs, write_atomic, KvDocument};
use crate::spectra::detuning_uev;

pub const BATH_TEMPERATURE_K: f64 = 4.0;
/// Highest calibrated temperature; heating beyond it is flagged.
pub const CALIBRATED_MAX_K: f64 = 25.0;

/// Shape-preserving piecewise-cubic (Fritsch–Carlson) interpolant of
/// non-decreasing anchors, extended linearly outside the anchor hull.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mapped {
    pub value: f64,
    pub extrapolated: bool,
}

impl MonotoneMap {
    pub fn new(anchors: &[(f64, f64)]) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::invalid("a calibration map needs at least 2 anchors"));
        }
        let xs: Vec<f64> = anchors.iter().map(|a| a.0).collect();
        let ys: Vec<f64> = anchors.iter().map(|a| a.1).collect();
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "calibration inputs must be strictly increasing",
            ));
        }
        if ys.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::invalid("calibration outputs must be non-decreasing"));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m[0] = d[0];
            m[1] = d[0];
        } else {
            for k in 1..n - 1 {
                if d[k - 1] > 0.0 && d[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
                }
            }
            m[0] = end_slope(h[0], h[1], d[0], d[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
        }
        Ok(Self { xs, ys, slopes: m })
    }

    pub fn anchors(&self) -> Vec<(f64, f64)> {
        self.xs
            .iter()
            .cloned()
            .zip(self.ys.iter().cloned())
            .collect()
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn eval(&self, x: f64) -> Mapped {
        let n = self.xs.len();
        if x < self.xs[0] {
            return Mapped {
                value: self.ys[0] + self.slopes[0] * (x - self.xs[0]),
                extrapolated: true,
            };
        }
        if x > self.xs[n - 1] {
            return Mapped {
                value: self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]),
                extrapolated: true,
            };
        }
        let k = self.xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
        if x == self.xs[k] {
            return Mapped {
                value: self.ys[k],
                extrapolated: false,
            };
        }
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * self.ys[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.ys[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1];
        Mapped {
            value,
            extrapolated: false,
        }
    }

    fn render(&self) -> String {
        self.anchors()
            .iter()
            .map(|(x, y)| format!("{x}:{y}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Three-point end derivative, limited to preserve monotonicity.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() || d0 == 0.0 {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaterCalibration {
    pub power_to_temp: MonotoneMap,
    pub temp_to_shift: MonotoneMap,
    pub background_a: MonotoneMap,
    pub background_b: MonotoneMap,
}

impl Default for HeaterCalibration {
    fn default() -> Self {
        let map = |a: &[(f64, f64)]| MonotoneMap::new(a).expect("valid default anchors");
        Self {
            power_to_temp: map(&[(0.0, 4.0), (1.25, 16.0)]),
            temp_to_shift: map(&[(4.0, 0.0), (16.0, 0.34), (25.0, 0.73)]),
            background_a: map(&[(0.0, 0.0), (1.25, 0.09)]),
            background_b: map(&[(0.0, 0.0), (1.25, 0.06)]),
        }
    }
}

impl HeaterCalibration {
    /// Calibrated heater power range.
    pub fn power_range_mw(&self) -> (f64, f64) {
        self.power_to_temp.domain()
    }

    pub fn shift_at_power(&self, power_mw: f64) -> Mapped {
        let t = self.power_to_temp.eval(power_mw);
        let s = self.temp_to_shift.eval(t.value);
        Mapped {
            value: s.value,
            extrapolated: t.extrapolated || s.extrapolated,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cal = Self::default();
        let mut seen = Vec::new();
        for e in parse_kv(text, "heater calibration")? {
            let key = e.key.strip_prefix("heater.").unwrap_or(&e.key);
            let anchors = parse_pairs(&e.value, "heater calibration")?;
            let map = MonotoneMap::new(&anchors).map_err(|err| {
                Error::format("heater calibration", format!("line {}: {err}", e.line))
            })?;
            match key {
                "power_to_temp" => cal.power_to_temp = map,
                "temp_to_shift" => cal.temp_to_shift = map,
                "background_a" => cal.background_a = map,
                "background_b" => cal.background_b = map,
                other => {
                    return Err(Error::format(
                        "heater calibration",
                        format!("line {}: unknown key `{other}`", e.line),
                    ))
                }
            }
            seen.push(key.to_string());
        }
        for required in ["power_to_temp", "temp_to_shift"] {
            if !seen.iter().any(|k| k == required) {
                return Err(Error::format(
                    "heater calibration",
                    format!("missing `{required}`"),
                ));
            }
        }
        Ok(cal)
    }

    pub fn to_kv(&self) -> KvDocument {
        let mut d = KvDocument::new();
        d.section("heater")
            .set("power_to_temp", self.power_to_temp.render())
            .set("temp_to_shift", self.temp_to_shift.render())
            .set("background_a", self.background_a.render())
            .set("background_b", self.background_b.render());
        d
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityState {
    pub id: String,
    pub base_wavelength_nm: f64,
    pub gas_shift_nm: f64,
}

impl CavityState {
    pub fn new(id: &str, base_wavelength_nm: f64) -> Self {
        Self {
            id: id.to_string(),
            base_wavelength_nm,
            gas_shift_nm: 0.0,
        }
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.base_wavelength_nm + self.gas_shift_nm
    }
}

pub fn deposit_gas(c: &CavityState, shift_nm: f64) -> Result<CavityState> {
    if !(shift_nm >= 0.0) {
        return Err(Error::invalid("deposited shift must be >= 0"));
    }
    let mut out = c.clone();
    out.gas_shift_nm += shift_nm;
    Ok(out)
}

/// Evaporation rate model: zero below the threshold, `base_rate` at the
/// threshold, rising linearly above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaporationKinetics {
    pub threshold_mw: f64,
    /// Time constant at the threshold power.
    pub tau_at_threshold_s: f64,
    /// Extra rate per mW above threshold, in 1/s.
    pub rate_slope_per_mw_s: f64,
}

impl Default for EvaporationKinetics {
    fn default() -> Self {
        let tau = 10.857;
        Self {
            threshold_mw: 5.0,
            tau_at_threshold_s: tau,
            rate_slope_per_mw_s: 1.0 / tau / 5.0,
        }
    }
}

impl EvaporationKinetics {
    /// Decay rate in 1/s; zero below threshold.
    pub fn rate_per_s(&self, power_mw: f64) -> f64 {
        if power_mw < self.threshold_mw {
            0.0
        } else {
            1.0 / self.tau_at_threshold_s
                + self.rate_slope_per_mw_s * (power_mw - self.threshold_mw)
        }
    }
}

pub fn evaporate_step(
    c: &CavityState,
    laser_power_mw: f64,
    dt_s: f64,
    kinetics: &EvaporationKinetics,
) -> Result<CavityState> {
    if !(laser_power_mw >= 0.0) || !(dt_s >= 0.0) {
        return Err(Error::invalid("laser power and time step must be >= 0"));
    }
    let rate = kinetics.rate_per_s(laser_power_mw);
    if rate == 0.0 {
        return Ok(c.clone());
    }
    let mut out = c.clone();
    out.gas_shift_nm = (c.gas_shift_nm * (-rate * dt_s).exp()).max(0.0);
    Ok(out)
}

/// All cavities on one chip. Deposition is global; evaporation is local to
/// the illuminated cavity.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    pub cavities: Vec<CavityState>,
    pub kinetics: EvaporationKinetics,
}

impl Chip {
    pub fn new(cavities: Vec<CavityState>) -> Self {
        Self {
            cavities,
            kinetics: EvaporationKinetics::default(),
        }
    }

    pub fn deposit(&mut self, shift_nm: f64) -> Result<()> {
        let next = self
            .cavities
            .iter()
            .map(|c| deposit_gas(c, shift_nm))
            .collect::<Result<Vec<_>>>()?;
        self.cavities = next;
        Ok(())
    }

    pub fn evaporate(&mut self, id: &str, power_mw: f64, dt_s: f64) -> Result<()> {
        let kinetics = self.kinetics;
        let c = self.cavity_mut(id)?;
        *c = evaporate_step(c, power_mw, dt_s, &kinetics)?;
        Ok(())
    }

    pub fn cavity(&self, id: &str) -> Option<&CavityState> {
        self.cavities.iter().find(|c| c.id == id)
    }

    fn cavity_mut(&mut self, id: &str) -> Result<&mut CavityState> {
        self.cavities
            .iter_mut()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("no cavity `{id}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DotThermalState {
    pub device_id: String,
    /// Emission wavelength at the bath temperature.
    pub base_wavelength_nm: f64,
    pub temperature_k: f64,
}

impl DotThermalState {
    pub fn new(device_id: &str, base_wavelength_nm: f64) -> Self {
        Self {
            device_id: device_id.to_string(),
            base_wavelength_nm,
            temperature_k: BATH_TEMPERATURE_K,
        }
    }

    pub fn wavelength_nm(&self, cal: &HeaterCalibration) -> f64 {
        self.base_wavelength_nm + cal.temp_to_shift.eval(self.temperature_k).value
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaterOutcome {
    pub state: DotThermalState,
    pub shift_nm: f64,
    /// The power or temperature fell outside the calibrated anchors.
    pub extrapolated: bool,
}

pub fn apply_heater(
    d: &DotThermalState,
    cal: &HeaterCalibration,
    power_mw: f64,
) -> Result<HeaterOutcome> {
    if !(power_mw >= 0.0) {
        return Err(Error::invalid("heater power must be >= 0"));
    }
    let t = cal.power_to_temp.eval(power_mw);
    let temperature = t.value.max(BATH_TEMPERATURE_K);
    let s = cal.temp_to_shift.eval(temperature);
    if temperature > CALIBRATED_MAX_K {
        log::warn!(
            "{} heated to {temperature:.1} K, above the {CALIBRATED_MAX_K} K calibration; linewidth broadening is not modeled",
            d.device_id
        );
    }
    let mut state = d.clone();
    state.temperature_k = temperature;
    Ok(HeaterOutcome {
        state,
        shift_nm: s.value,
        extrapolated: t.extrapolated || s.extrapolated,
    })
}

/// Dots on one chip; heating one leaves the rest untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalChip {
    pub dots: Vec<DotThermalState>,
}

impl ThermalChip {
    pub fn heat(
        &mut self,
        device_id: &str,
        cal: &HeaterCalibration,
        power_mw: f64,
    ) -> Result<HeaterOutcome> {
        let dot = self
            .dots
            .iter_mut()
            .find(|d| d.device_id == device_id)
            .ok_or_else(|| Error::invalid(format!("no dot `{device_id}`")))?;
        let out = apply_heater(dot, cal, power_mw)?;
        *dot = out.state.clone();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iter: usize,
    pub power_mw: f64,
    pub detuning_uev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub power_mw: f64,
    pub detuning_uev: f64,
    /// Bisection steps after the initial check.
    pub iterations: usize,
    /// Successively better operating points, starting at zero power.
    pub trace: Vec<TracePoint>,
}

impl MatchResult {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,power_mw,detuning_uev\n");
        for p in &self.trace {
            let _ = writeln!(out, "{},{},{}", p.iter, p.power_mw, p.detuning_uev);
        }
        out
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.trace_csv().as_bytes())
    }
}

/// Bisects dot A's heater power over the calibrated range until its line is
/// within `tol_uev` of dot B's.
pub fn match_resonance(
    da: &DotThermalState,
    db: &DotThermalState,
    cal: &HeaterCalibration,
    tol_uev: f64,
    max_iters: usize,
) -> Result<MatchResult> {
    if !(tol_uev > 0.0) {
        return Err(Error::invalid("tolerance must be > 0"));
    }
    let (p_lo, p_hi) = cal.power_range_mw();
    let target = db.wavelength_nm(cal);
    let lambda_a = |p: f64| da.base_wavelength_nm + cal.shift_at_power(p).value;
    let detuning = |p: f64| detuning_uev(lambda_a(p), target);
    // signed: negative while A is still bluer than B
    let signed = |p: f64| -> Result<f64> {
        let d = detuning(p)?;
        Ok(if lambda_a(p) < target { -d } else { d })
    };

    let d0 = signed(p_lo)?;
    let mut trace = vec![TracePoint {
        iter: 0,
        power_mw: p_lo,
        detuning_uev: d0.abs(),
    }];
    if d0.abs() <= tol_uev {
        return Ok(MatchResult {
            power_mw: p_lo,
            detuning_uev: d0.abs(),
            iterations: 0,
            trace,
        });
    }
    if d0 > 0.0 {
        return Err(Error::Infeasible(format!(
            "dot B ({target:.5} nm) is bluer than unheated dot A ({:.5} nm); heating only red-shifts A",
            lambda_a(p_lo)
        )));
    }
    let d_hi = signed(p_hi)?;
    if d_hi < -tol_uev {
        return Err(Error::Infeasible(format!(
            "dot B ({target:.5} nm) lies beyond dot A's tuning range (max {:.5} nm at {p_hi} mW)",
            lambda_a(p_hi)
        )));
    }

    let (mut lo, mut hi) = (p_lo, p_hi);
    let mut best = d0.abs();
    for iter in 1..=max_iters {
        let mid = 0.5 * (lo + hi);
        let d = signed(mid)?;
        if d.abs() < best {
            best = d.abs();
            trace.push(TracePoint {
                iter,
                power_mw: mid,
                detuning_uev: best,
            });
        }
        if d.abs() <= tol_uev {
            return Ok(MatchResult {
                power_mw: mid,
                detuning_uev: d.abs(),
                iterations: iter,
                trace,
            });
        }
        if d < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        detail: format!(
            "bracket [{lo:.6}, {hi:.6}] mW, best detuning {best:.3} μeV > {tol_uev} μeV"
        ),
    })
}

/// Purity penalty each dot suffers from heater-laser background at
/// `power_mw`, clamped to [0, 1].
pub fn heater_background(power_mw: f64, cal: &HeaterCalibration) -> (f64, f64) {
    let f = |m: &MonotoneMap| m.eval(power_mw.max(0.0)).value.clamp(0.0, 1.0);
    (f(&cal.background_a), f(&cal.background_b))
}
