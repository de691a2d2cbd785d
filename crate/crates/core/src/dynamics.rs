//! Telegraph dynamics of the TLS bath and the resulting dispersive shifts.
//!
//! Every TLS relaxes at a shared rate `gamma_down` and is excited at the
//! detailed-balance rate `gamma_down * exp(-h nu / kB T)`. Each time step
//! consumes exactly one uniform draw per TLS, in TLS index order, so a
//! trajectory is a pure function of its seed.

use rand::RngCore;
use rayon::prelude::*;

use crate::bath::{MechanicalMode, TlsBath};
use crate::error::{Error, Result};
use crate::seed::{child_seed, rng_from_seed, SimRng, Stage};
use crate::Scalar;

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

pub const DEFAULT_P_MAX: f64 = 0.05;
pub const DEFAULT_DT_REC: f64 = 250e-9;
pub const DEFAULT_MEMORY_BUDGET_BYTES: u64 = 1 << 30;

/// `h nu / (kB T)`.
pub fn boltzmann_exponent<T: Scalar>(nu: T, temperature: T) -> T {
    T::lit(PLANCK / BOLTZMANN) * nu / temperature
}

/// Detailed-balance excited-state probability `1 / (1 + exp(h nu / kB T))`.
pub fn steady_state_occupancy<T: Scalar>(nu: T, temperature: T) -> T {
    T::one() / (T::one() + boltzmann_exponent(nu, temperature).exp())
}

/// Per-TLS switching rates at one bath temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable<T> {
    /// Relaxation rate shared by all TLS, 1/s.
    pub gamma_down: T,
    /// Excitation rate of each TLS, 1/s.
    pub gamma_up: Vec<T>,
    pub temperature: T,
}

impl<T: Scalar> RateTable<T> {
    pub fn thermal(bath: &TlsBath<T>, tau_down: T, temperature: T) -> Result<Self> {
        if !(tau_down > T::zero()) || !tau_down.is_finite() {
            return Err(Error::config("rates.tau_down_s", "must be positive and finite"));
        }
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(Error::config("rates.temperature_k", "must be positive and finite"));
        }
        let gamma_down = tau_down.recip();
        let gamma_up = bath
            .tls
            .iter()
            .map(|t| gamma_down * (-boltzmann_exponent(t.nu, temperature)).exp())
            .collect();
        Ok(Self {
            gamma_down,
            gamma_up,
            temperature,
        })
    }

    pub fn max_rate(&self) -> T {
        self.gamma_up
            .iter()
            .copied()
            .fold(self.gamma_down, |a, b| a.max(b))
    }
}

/// Largest step for which every per-step flip probability stays at or below `p_max`.
pub fn choose_timestep<T: Scalar>(rates: &RateTable<T>, p_max: T) -> Result<T> {
    if !(p_max > T::zero() && p_max < T::one()) {
        return Err(Error::config("trace.p_max", "must lie in (0, 1)"));
    }
    Ok(p_max / rates.max_rate())
}

/// Instantaneous TLS configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BathState<T> {
    /// `true` for an excited TLS.
    pub excited: Vec<bool>,
    /// Elapsed time in s.
    pub t: T,
}

impl<T: Scalar> BathState<T> {
    pub fn ground(n: usize) -> Self {
        Self {
            excited: vec![false; n],
            t: T::zero(),
        }
    }

    pub fn excited_count(&self) -> usize {
        self.excited.iter().filter(|&&e| e).count()
    }
}

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

/// Maps a probability onto a `u64` threshold so that `P(u < threshold) = p`
/// for a uniform `u64` draw.
fn probability_threshold(p: f64) -> u64 {
    // `as` saturates: p >= 1 maps to u64::MAX
    (p * TWO_POW_64) as u64
}

/// Flip thresholds for one `(rates, dt)` pair.
#[derive(Debug, Clone)]
pub struct Stepper {
    down: u64,
    up: Vec<u64>,
}

impl Stepper {
    pub fn new<T: Scalar>(rates: &RateTable<T>, dt: T) -> Result<Self> {
        if !(dt >= T::zero()) {
            return Err(Error::Contract("time step must be non-negative".into()));
        }
        let p_down = (dt * rates.gamma_down).as_f64();
        if p_down > 1.0 || rates.gamma_up.iter().any(|&g| (dt * g).as_f64() > 1.0) {
            return Err(Error::Contract(
                "time step gives a flip probability above 1; use choose_timestep".into(),
            ));
        }
        Ok(Self {
            down: probability_threshold(p_down),
            up: rates
                .gamma_up
                .iter()
                .map(|&g| probability_threshold((dt * g).as_f64()))
                .collect(),
        })
    }

    #[inline]
    fn threshold(&self, i: usize, excited: bool) -> u64 {
        if excited {
            self.down
        } else {
            self.up[i]
        }
    }

    /// Advances `excited` by one step, one draw per TLS in index order.
    #[inline]
    pub fn step_flags(&self, excited: &mut [bool], rng: &mut impl RngCore) {
        for (i, e) in excited.iter_mut().enumerate() {
            let u = rng.next_u64();
            *e ^= u < self.threshold(i, *e);
        }
    }
}

/// One telegraph step of every TLS: an excited TLS relaxes with probability
/// `dt * gamma_down`, a ground-state TLS is excited with probability
/// `dt * gamma_up_i`.
pub fn step_bath<T: Scalar>(
    state: &mut BathState<T>,
    rates: &RateTable<T>,
    dt: T,
    rng: &mut impl RngCore,
) -> Result<()> {
    if state.excited.len() != rates.gamma_up.len() {
        return Err(Error::Contract("state and rate table sizes differ".into()));
    }
    Stepper::new(rates, dt)?.step_flags(&mut state.excited, rng);
    state.t += dt;
    Ok(())
}

/// Draws a state from the steady-state distribution, one draw per TLS.
pub fn sample_steady_state<T: Scalar>(rates: &RateTable<T>, rng: &mut impl RngCore) -> BathState<T> {
    let excited = rates
        .gamma_up
        .iter()
        .map(|&up| {
            let p = (up / (up + rates.gamma_down)).as_f64();
            rng.next_u64() < probability_threshold(p)
        })
        .collect();
    BathState {
        excited,
        t: T::zero(),
    }
}

/// Frequency shift contributed by one excited TLS: `g^2 / (nu_mode - nu_tls)`.
#[inline]
pub fn dispersive_weight<T: Scalar>(g: T, detuning: T) -> T {
    g * g / detuning
}

/// Signed sum of `g^2 / Delta` over the excited TLS, in index order.
pub fn dispersive_shift<T: Scalar>(
    state: &BathState<T>,
    bath: &TlsBath<T>,
    mode: &MechanicalMode<T>,
) -> Result<T> {
    let k = bath
        .mode_index(&mode.label)
        .ok_or_else(|| Error::Contract(format!("mode `{}` is not part of this bath", mode.label)))?;
    if state.excited.len() != bath.len() {
        return Err(Error::Contract("state and bath sizes differ".into()));
    }
    let mut shift = T::zero();
    for (tls, &e) in bath.tls.iter().zip(&state.excited) {
        if e {
            shift += dispersive_weight(tls.couplings[k], mode.nu - tls.nu);
        }
    }
    Ok(shift)
}

/// Per-TLS weights `g_i^2 / Delta_i` for one mode.
pub fn dispersive_weights<T: Scalar>(bath: &TlsBath<T>, mode: &MechanicalMode<T>) -> Result<Vec<T>> {
    let g = bath.couplings(&mode.label)?;
    Ok(bath
        .tls
        .iter()
        .zip(g)
        .map(|(t, g)| dispersive_weight(g, mode.nu - t.nu))
        .collect())
}

/// Uniformly sampled dispersive shift of one mode along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTrace<T> {
    pub mode: String,
    /// Sample interval in s.
    pub dt: T,
    /// Frequency shift in Hz; sample `j` is taken at `t = j * dt`.
    pub samples: Vec<T>,
    pub trajectory_id: u64,
    /// Seed of the trajectory's random stream.
    pub seed: u64,
}

impl<T: Scalar> ShiftTrace<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> T {
        self.dt * T::from_usize_lossy(self.samples.len())
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.samples.len()).map(|j| T::from_usize_lossy(j) * self.dt)
    }
}

/// Both (or all) mode traces of one trajectory, computed from one state sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTraces<T> {
    pub trajectory_id: u64,
    pub traces: Vec<ShiftTrace<T>>,
}

impl<T: Scalar> TrajectoryTraces<T> {
    pub fn trace(&self, mode: &str) -> Option<&ShiftTrace<T>> {
        self.traces.iter().find(|t| t.mode == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySettings<T> {
    /// Simulated time per trajectory, s.
    pub duration: T,
    /// Upper bound on any per-step flip probability.
    pub p_max: T,
    /// Recording interval, s; rounded to a whole number of simulation steps.
    pub dt_rec: T,
    pub memory_budget_bytes: u64,
}

impl<T: Scalar> TrajectorySettings<T> {
    pub fn new(duration: T) -> Self {
        Self {
            duration,
            p_max: T::lit(DEFAULT_P_MAX),
            dt_rec: T::lit(DEFAULT_DT_REC),
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET_BYTES,
        }
    }
}

/// Step and sampling geometry derived from the rates and settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan<T> {
    /// Simulation step, s.
    pub dt: T,
    /// Steps between recorded samples.
    pub stride: usize,
    pub n_samples: usize,
}

impl<T: Scalar> SamplingPlan<T> {
    pub fn new(rates: &RateTable<T>, settings: &TrajectorySettings<T>) -> Result<Self> {
        let dt = choose_timestep(rates, settings.p_max)?;
        if !(settings.duration >= T::lit(100.0) * dt) {
            return Err(Error::config(
                "trace.duration_s",
                format!("must be at least 100 simulation steps ({} s)", (T::lit(100.0) * dt).as_f64()),
            ));
        }
        if !(settings.dt_rec > T::zero()) {
            return Err(Error::config("trace.dt_rec_s", "must be positive"));
        }
        let stride = (settings.dt_rec / dt).round().to_usize().unwrap_or(1).max(1);
        let dt_trace = dt * T::from_usize_lossy(stride);
        let n_samples = (settings.duration / dt_trace).round().to_usize().unwrap_or(0).max(1);
        Ok(Self {
            dt,
            stride,
            n_samples,
        })
    }

    pub fn dt_trace(&self) -> T {
        self.dt * T::from_usize_lossy(self.stride)
    }
}

/// Seed of trajectory `trajectory_id`'s random stream.
pub fn trajectory_seed(master: u64, trajectory_id: u64) -> u64 {
    child_seed(master, Stage::Dynamics, trajectory_id, 0)
}

pub fn trajectory_rng(master: u64, trajectory_id: u64) -> SimRng {
    rng_from_seed(trajectory_seed(master, trajectory_id))
}

/// Runs `n_traj` independent trajectories of the bath and records the
/// dispersive shift of every mode in `modes`.
///
/// Each trajectory starts from a steady-state draw (one draw per TLS) and is
/// then stepped; sample `j` is the shift after `j * stride` steps. All modes
/// are evaluated on the same state sequence. Output is independent of the
/// rayon thread count.
pub fn simulate_trajectories<T: Scalar>(
    bath: &TlsBath<T>,
    modes: &[MechanicalMode<T>],
    rates: &RateTable<T>,
    settings: &TrajectorySettings<T>,
    n_traj: usize,
    seed: u64,
) -> Result<Vec<TrajectoryTraces<T>>> {
    if rates.gamma_up.len() != bath.len() {
        return Err(Error::Contract("rate table and bath sizes differ".into()));
    }
    if modes.is_empty() {
        return Err(Error::Contract("at least one mode is required".into()));
    }
    let plan = SamplingPlan::new(rates, settings)?;
    let required = (n_traj as u64)
        .saturating_mul(modes.len() as u64)
        .saturating_mul(plan.n_samples as u64)
        .saturating_mul(std::mem::size_of::<T>() as u64);
    if required > settings.memory_budget_bytes {
        return Err(Error::MemoryBudget {
            required,
            budget: settings.memory_budget_bytes,
        });
    }
    let weights = modes
        .iter()
        .map(|m| dispersive_weights(bath, m))
        .collect::<Result<Vec<_>>>()?;
    let stepper = Stepper::new(rates, plan.dt)?;

    let out = (0..n_traj as u64)
        .into_par_iter()
        .map(|id| {
            let seed = trajectory_seed(seed, id);
            let mut rng = rng_from_seed(seed);
            let samples = run_trajectory(rates, &stepper, &weights, &plan, &mut rng);
            TrajectoryTraces {
                trajectory_id: id,
                traces: modes
                    .iter()
                    .zip(samples)
                    .map(|(m, samples)| ShiftTrace {
                        mode: m.label.clone(),
                        dt: plan.dt_trace(),
                        samples,
                        trajectory_id: id,
                        seed,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(out)
}

fn run_trajectory<T: Scalar>(
    rates: &RateTable<T>,
    stepper: &Stepper,
    weights: &[Vec<T>],
    plan: &SamplingPlan<T>,
    rng: &mut SimRng,
) -> Vec<Vec<T>> {
    let state = sample_steady_state(rates, rng);
    let mut excited = state.excited;
    // Current flip threshold of each TLS; swapped between `down` and `up[i]` on every flip.
    let mut threshold: Vec<u64> = excited
        .iter()
        .enumerate()
        .map(|(i, &e)| stepper.threshold(i, e))
        .collect();
    let toggle: Vec<u64> = stepper.up.iter().map(|&up| up ^ stepper.down).collect();

    let n_modes = weights.len();
    // Mode weights interleaved per TLS so the shift sums can ride along the last step of each stride.
    let mut interleaved = Vec::with_capacity(n_modes * excited.len());
    for i in 0..excited.len() {
        interleaved.extend(weights.iter().map(|w| w[i]));
    }
    let mut out: Vec<Vec<T>> = weights
        .iter()
        .map(|_| Vec::with_capacity(plan.n_samples))
        .collect();
    let mut shift = vec![T::zero(); n_modes];

    for (w, &e) in interleaved.chunks_exact(n_modes).zip(&excited) {
        let s = if e { T::one() } else { T::zero() };
        for (acc, &wk) in shift.iter_mut().zip(w) {
            *acc += wk * s;
        }
    }
    for (trace, &v) in out.iter_mut().zip(&shift) {
        trace.push(v);
    }
    for _ in 1..plan.n_samples {
        for _ in 1..plan.stride {
            for ((thr, e), &tog) in threshold.iter_mut().zip(excited.iter_mut()).zip(&toggle) {
                let flip = rng.next_u64() < *thr;
                *thr ^= (flip as u64).wrapping_neg() & tog;
                *e ^= flip;
            }
        }
        shift.fill(T::zero());
        for (((thr, e), &tog), w) in threshold
            .iter_mut()
            .zip(excited.iter_mut())
            .zip(&toggle)
            .zip(interleaved.chunks_exact(n_modes))
        {
            let flip = rng.next_u64() < *thr;
            *thr ^= (flip as u64).wrapping_neg() & tog;
            *e ^= flip;
            let s = if *e { T::one() } else { T::zero() };
            for (acc, &wk) in shift.iter_mut().zip(w) {
                *acc += wk * s;
            }
        }
        for (trace, &v) in out.iter_mut().zip(&shift) {
            trace.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::{generate_bath, BathConfig, Tls};

    fn modes() -> Vec<MechanicalMode<f64>> {
        vec![
            MechanicalMode::new("A", 4.847e9, 100),
            MechanicalMode::new("B", 4.870e9, 105),
        ]
    }

    fn hand_bath(tls: Vec<(f64, f64, f64)>) -> TlsBath<f64> {
        let n = tls.len();
        TlsBath::from_parts(
            BathConfig::new(n, 0.5e9, 20e9, 1e5, 0),
            modes(),
            vec![0.0, 0.0],
            tls.into_iter()
                .map(|(nu, ga, gb)| Tls {
                    nu,
                    x: 0.5,
                    couplings: vec![ga, gb],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn occupancy_reference_values() {
        // h * 5 GHz / kB = 0.23996 K
        assert!((boltzmann_exponent(5e9f64, 1.0) - 0.239_962).abs() < 1e-6);
        let p: f64 = steady_state_occupancy(5e9, 1.0);
        assert!((p - 0.4403).abs() < 1e-4, "{p}");
        assert!(steady_state_occupancy(5e9f64, 1e-6) < 1e-12);
        assert_eq!(steady_state_occupancy(5e9, f64::INFINITY), 0.5);
        assert!((steady_state_occupancy(1.0f64, 1e6) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn timestep_from_fastest_rate() {
        let bath = hand_bath(vec![(1e9, 1e5, 1e5), (15e9, 1e5, 1e5)]);
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let dt = choose_timestep(&rates, 0.05).unwrap();
        assert!((dt - 50e-9).abs() < 1e-20);
        let dt2 = choose_timestep(&rates, 0.1).unwrap();
        assert!((dt2 - 2.0 * dt).abs() < 1e-20);
        // gamma_up -> gamma_down in the high-temperature limit; the bound is unchanged
        let hot = RateTable::thermal(&bath, 1e-6, 1e9).unwrap();
        assert!((choose_timestep(&hot, 0.05).unwrap() - dt).abs() < 1e-20);
        assert!(choose_timestep(&rates, 1.0).is_err());
    }

    #[test]
    fn up_rates_follow_detailed_balance() {
        let bath = hand_bath(vec![(1e9, 1e5, 1e5), (5e9, 1e5, 1e5), (15e9, 1e5, 1e5)]);
        let rates = RateTable::thermal(&bath, 1e-6, 0.5).unwrap();
        for (t, &up) in bath.tls.iter().zip(&rates.gamma_up) {
            let expected = 1e6 * (-PLANCK * t.nu / (BOLTZMANN * 0.5)).exp();
            assert!((up - expected).abs() / expected < 1e-12);
        }
    }

    #[test]
    fn null_step_leaves_state_unchanged() {
        let bath = hand_bath(vec![(1e9, 1e5, 1e5); 50]);
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let mut rng = rng_from_seed(1);
        let mut state = sample_steady_state(&rates, &mut rng);
        let before = state.clone();
        for _ in 0..100 {
            step_bath(&mut state, &rates, 0.0, &mut rng).unwrap();
        }
        assert_eq!(state.excited, before.excited);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let bath = hand_bath(vec![(1e9, 1e5, 1e5)]);
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let mut state = BathState::ground(1);
        let mut rng = rng_from_seed(1);
        assert!(step_bath(&mut state, &rates, 2e-6, &mut rng).is_err());
    }

    #[test]
    fn relaxation_time_matches_tau_down() {
        // gamma_up = 0 (T -> 0): an excited TLS relaxes after a geometric
        // number of steps with mean dt / p = tau_down.
        let bath = hand_bath(vec![(15e9, 1e5, 1e5)]);
        let rates = RateTable::thermal(&bath, 1e-6, 1e-4).unwrap();
        assert_eq!(rates.gamma_up[0], 0.0);
        let dt = choose_timestep(&rates, 0.05).unwrap();
        let stepper = Stepper::new(&rates, dt).unwrap();
        let mut rng = rng_from_seed(42);
        let n = 10_000;
        let mut total = 0.0;
        for _ in 0..n {
            let mut e = [true];
            let mut steps = 0u64;
            while e[0] {
                stepper.step_flags(&mut e, &mut rng);
                steps += 1;
            }
            total += steps as f64 * dt;
        }
        let mean = total / n as f64;
        assert!((mean - 1e-6).abs() / 1e-6 < 0.03, "mean first flip time {mean}");
    }

    #[test]
    fn dispersive_shift_examples() {
        let bath = hand_bath(vec![(3.847e9, 1e5, 0.0), (5.847e9, 1e5, 0.0)]);
        let a = &bath.modes[0];
        let mut state = BathState::ground(2);
        assert_eq!(dispersive_shift(&state, &bath, a).unwrap(), 0.0);
        state.excited[0] = true;
        // (1e5)^2 / 1e9 = 10 Hz
        assert!((dispersive_shift(&state, &bath, a).unwrap() - 10.0).abs() < 1e-9);
        state.excited[1] = true;
        assert!(dispersive_shift(&state, &bath, a).unwrap().abs() < 1e-9);
    }

    #[test]
    fn zero_coupling_bath_gives_zero_traces() {
        let bath = hand_bath(vec![(1e9, 0.0, 0.0), (6e9, 0.0, 0.0), (9e9, 0.0, 0.0)]);
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let settings = TrajectorySettings::new(20e-6);
        let out = simulate_trajectories(&bath, &bath.modes, &rates, &settings, 2, 3).unwrap();
        assert_eq!(out.len(), 2);
        for traj in &out {
            for tr in &traj.traces {
                assert!(tr.samples.iter().all(|&s| s == 0.0));
            }
        }
    }

    #[test]
    fn trace_length_follows_duration_and_stride() {
        let bath = hand_bath(vec![(1e9, 1e5, 1e5)]);
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let mut settings = TrajectorySettings::new(10e-3);
        settings.dt_rec = 50e-9;
        let plan = SamplingPlan::new(&rates, &settings).unwrap();
        assert_eq!(plan.stride, 1);
        assert_eq!(plan.n_samples, 200_000);
        settings.dt_rec = 250e-9;
        let plan = SamplingPlan::new(&rates, &settings).unwrap();
        assert_eq!(plan.stride, 5);
        assert_eq!(plan.n_samples, 40_000);
        assert!((plan.dt_trace() - 250e-9).abs() < 1e-18);
        settings.duration = 1e-6;
        assert!(SamplingPlan::new(&rates, &settings).is_err());
    }

    #[test]
    fn memory_budget_is_enforced() {
        let bath = hand_bath(vec![(1e9, 1e5, 1e5)]);
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let mut settings = TrajectorySettings::new(1e-3);
        settings.memory_budget_bytes = 1000;
        let err = simulate_trajectories(&bath, &bath.modes, &rates, &settings, 10, 0).unwrap_err();
        assert!(matches!(err, Error::MemoryBudget { .. }));
        assert!(err.to_string().contains("dt_rec"));
    }

    #[test]
    fn identical_modes_give_identical_traces() {
        let bath = generate_bath(&BathConfig::new(300, 0.5e9, 20e9, 1e5, 4), &modes()).unwrap();
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let a = bath.modes[0].clone();
        let out = simulate_trajectories(
            &bath,
            &[a.clone(), a],
            &rates,
            &TrajectorySettings::new(50e-6),
            2,
            11,
        )
        .unwrap();
        for traj in &out {
            let x: Vec<u64> = traj.traces[0].samples.iter().map(|s| s.to_bits()).collect();
            let y: Vec<u64> = traj.traces[1].samples.iter().map(|s| s.to_bits()).collect();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn trajectories_do_not_depend_on_thread_count() {
        let bath = generate_bath(&BathConfig::new(200, 0.5e9, 20e9, 1e5, 4), &modes()).unwrap();
        let rates = RateTable::thermal(&bath, 1e-6, 1.0).unwrap();
        let settings = TrajectorySettings::new(20e-6);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_trajectories(&bath, &bath.modes, &rates, &settings, 4, 8).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn f32_simulation_runs() {
        let cfg = BathConfig::<f32>::new(100, 0.5e9, 20e9, 1e5, 1);
        let m = vec![
            MechanicalMode::new("A", 4.847e9f32, 100),
            MechanicalMode::new("B", 4.870e9f32, 105),
        ];
        let bath = generate_bath(&cfg, &m).unwrap();
        let rates = RateTable::thermal(&bath, 1e-6f32, 1.0).unwrap();
        let out = simulate_trajectories(&bath, &m, &rates, &TrajectorySettings::new(20e-6f32), 1, 1)
            .unwrap();
        assert!(out[0].traces[0].samples.iter().all(|s| s.is_finite()));
    }
}
