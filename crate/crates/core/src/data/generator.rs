use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::Archive;
use crate::error::{Error, Result};

/// Settings of the synthetic storm generator. Intensities are in mm/h,
/// lengths in pixels, durations in steps.
///
/// The domain is periodic. Rain arrives in spells separated by fully dry
/// gaps; during a spell a stratiform deck covers most of the grid and
/// convective cells are born, advect, grow or decay, and die. Everything
/// moves with one shared, slowly turning velocity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StormParams {
    /// Mean advection in pixels per step, `[dx, dy]`.
    pub mean_velocity: [f64; 2],
    /// Amplitude of the sinusoidal velocity wobble.
    pub velocity_amplitude: f64,
    /// Period of the velocity wobble.
    pub velocity_period: f64,
    /// Spell length range for rainy and dry spells.
    pub wet_spell: [f64; 2],
    pub dry_spell: [f64; 2],
    /// Steps over which a spell fades in and out.
    pub ramp_steps: f64,
    /// Median stratiform level and its log-sd across spells.
    pub stratiform_rate: f64,
    pub stratiform_log_sd: f64,
    /// Fraction of the stratiform level present everywhere during a spell.
    pub stratiform_floor: f64,
    pub stratiform_blobs: usize,
    pub blob_sigma: [f64; 2],
    /// Expected convective cell births per rainy step.
    pub cell_birth_rate: f64,
    pub cell_lifetime: [f64; 2],
    pub cell_sigma: [f64; 2],
    /// Largest ratio of major to minor axis.
    pub cell_anisotropy: f64,
    /// Log-normal peak intensity: median and log-sd.
    pub cell_peak_median: f64,
    pub cell_peak_log_sd: f64,
    /// Per-step sd of the random walk in each cell's log intensity.
    pub cell_growth_sd: f64,
    /// Log-sd of multiplicative per-pixel noise.
    pub pixel_noise: f64,
    /// Rates below this are reported as exactly zero.
    pub detection_floor: f64,
}

impl Default for StormParams {
    fn default() -> Self {
        Self {
            mean_velocity: [0.7, -0.4],
            velocity_amplitude: 0.5,
            velocity_period: 240.0,
            wet_spell: [80.0, 200.0],
            dry_spell: [50.0, 130.0],
            ramp_steps: 6.0,
            stratiform_rate: 1.5,
            stratiform_log_sd: 0.3,
            stratiform_floor: 0.3,
            stratiform_blobs: 4,
            blob_sigma: [5.0, 10.0],
            cell_birth_rate: 0.3,
            cell_lifetime: [15.0, 45.0],
            cell_sigma: [1.5, 3.5],
            cell_anisotropy: 2.5,
            cell_peak_median: 5.0,
            cell_peak_log_sd: 0.7,
            cell_growth_sd: 0.03,
            pixel_noise: 0.2,
            detection_floor: 0.06,
        }
    }
}

impl StormParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("wet_spell", self.wet_spell),
            ("dry_spell", self.dry_spell),
            ("blob_sigma", self.blob_sigma),
            ("cell_lifetime", self.cell_lifetime),
            ("cell_sigma", self.cell_sigma),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::config(format!("{name} must be a positive range, got [{lo}, {hi}]")));
            }
        }
        let nonneg = [
            ("velocity_amplitude", self.velocity_amplitude),
            ("ramp_steps", self.ramp_steps),
            ("stratiform_rate", self.stratiform_rate),
            ("stratiform_log_sd", self.stratiform_log_sd),
            ("stratiform_floor", self.stratiform_floor),
            ("cell_birth_rate", self.cell_birth_rate),
            ("cell_peak_log_sd", self.cell_peak_log_sd),
            ("cell_growth_sd", self.cell_growth_sd),
            ("pixel_noise", self.pixel_noise),
            ("detection_floor", self.detection_floor),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.velocity_period > 0.0 && self.cell_peak_median > 0.0 && self.cell_anisotropy >= 1.0) {
            return Err(Error::config("velocity_period and cell_peak_median must be positive, cell_anisotropy >= 1"));
        }
        if self.mean_velocity.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("mean_velocity must be finite"));
        }
        Ok(())
    }

    /// Shared advection velocity applied between step `t` and `t + 1`.
    pub fn velocity_at(&self, t: usize, phase: [f64; 2]) -> [f64; 2] {
        let arg = 2.0 * PI * t as f64 / self.velocity_period;
        [
            self.mean_velocity[0] + self.velocity_amplitude * (arg + phase[0]).sin(),
            self.mean_velocity[1] + self.velocity_amplitude * (arg / 1.3 + phase[1]).cos(),
        ]
    }
}

fn velocity_phase(seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)]
}

/// Displacement in pixels between frames `t` and `t + 1` of the archive
/// generated from `seed`.
pub fn advection_velocity(seed: u64, t: usize, params: &StormParams) -> [f64; 2] {
    params.velocity_at(t, velocity_phase(seed))
}

/// An anisotropic Gaussian on the periodic grid.
#[derive(Clone, Debug)]
struct Blob {
    x: f64,
    y: f64,
    // Inverse covariance entries.
    a: f64,
    b: f64,
    c: f64,
    amplitude: f64,
}

impl Blob {
    fn new(x: f64, y: f64, sigma_major: f64, sigma_minor: f64, angle: f64, amplitude: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (i1, i2) = (1.0 / (sigma_major * sigma_major), 1.0 / (sigma_minor * sigma_minor));
        Self {
            x,
            y,
            a: c * c * i1 + s * s * i2,
            b: c * s * (i1 - i2),
            c: s * s * i1 + c * c * i2,
            amplitude,
        }
    }

    fn add_to(&self, field: &mut [f64], h: usize, w: usize, scale: f64) {
        let amp = self.amplitude * scale;
        if amp <= 0.0 {
            return;
        }
        for i in 0..h {
            let dy = wrap(i as f64 - self.y, h as f64);
            for j in 0..w {
                let dx = wrap(j as f64 - self.x, w as f64);
                let q = self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy;
                if q < 40.0 {
                    field[i * w + j] += amp * (-0.5 * q).exp();
                }
            }
        }
    }
}

fn wrap(d: f64, len: f64) -> f64 {
    let mut d = d % len;
    if d >= len / 2.0 {
        d -= len;
    } else if d < -len / 2.0 {
        d += len;
    }
    d
}

struct Cell {
    blob: Blob,
    age: f64,
    lifetime: f64,
    log_growth: f64,
}

impl Cell {
    /// Smooth rise and fall over the lifetime times accumulated growth.
    fn envelope(&self) -> f64 {
        let s = (PI * (self.age + 0.5) / self.lifetime).sin().max(0.0);
        s * self.log_growth.exp()
    }
}

struct Spell {
    start: usize,
    end: usize,
    level: f64,
}

fn spells(rng: &mut ChaCha8Rng, n_frames: usize, p: &StormParams) -> Result<Vec<Spell>> {
    let level_dist = LogNormal::new(p.stratiform_rate.max(f64::MIN_POSITIVE).ln(), p.stratiform_log_sd)
        .map_err(|e| Error::config(e.to_string()))?;
    let mut out = Vec::new();
    // Start with a partial dry gap so the archive does not begin mid-spell.
    let mut t = rng.gen_range(0.0..p.dry_spell[1]).round() as usize;
    while t < n_frames {
        let len = rng.gen_range(p.wet_spell[0]..=p.wet_spell[1]).round() as usize;
        out.push(Spell { start: t, end: t + len, level: level_dist.sample(rng) });
        t += len + rng.gen_range(p.dry_spell[0]..=p.dry_spell[1]).round() as usize;
    }
    Ok(out)
}

fn spell_weight(spells: &[Spell], t: usize, ramp: f64) -> (f64, Option<usize>) {
    for (k, s) in spells.iter().enumerate() {
        if t >= s.start && t < s.end {
            let from_start = (t - s.start) as f64 + 1.0;
            let to_end = (s.end - t) as f64;
            let r = if ramp > 0.0 { (from_start.min(to_end) / ramp).min(1.0) } else { 1.0 };
            return (r * r, Some(k));
        }
    }
    (0.0, None)
}

/// Draws a frame archive in mm per step. The same seed and settings always
/// give the same bytes.
pub fn generate_archive(seed: u64, n_frames: usize, h: usize, w: usize, steps_per_hour: u32, params: &StormParams) -> Result<Archive> {
    if n_frames == 0 || h == 0 || w == 0 || steps_per_hour == 0 {
        return Err(Error::config(format!(
            "archive dimensions must be positive, got {n_frames} frames of {h}x{w} at {steps_per_hour} steps/h"
        )));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spells = spells(&mut rng, n_frames, params)?;
    let phase = velocity_phase(seed);
    let peak = LogNormal::new(params.cell_peak_median.ln(), params.cell_peak_log_sd).map_err(|e| Error::config(e.to_string()))?;
    let growth = Normal::new(0.0, params.cell_growth_sd).map_err(|e| Error::config(e.to_string()))?;
    let births = (params.cell_birth_rate > 0.0)
        .then(|| Poisson::new(params.cell_birth_rate))
        .transpose()
        .map_err(|e| Error::config(e.to_string()))?;
    let noise = Normal::new(0.0, params.pixel_noise).map_err(|e| Error::config(e.to_string()))?;
    let (hf, wf) = (h as f64, w as f64);

    let mut blobs: Vec<Blob> = Vec::new();
    let mut cells: Vec<Cell> = Vec::new();
    let mut current_spell = None;
    let mut field = vec![0.0f64; h * w];
    let mut values = Vec::with_capacity(n_frames * h * w);
    let per_step = 1.0 / steps_per_hour as f64;

    for t in 0..n_frames {
        let (weight, spell) = spell_weight(&spells, t, params.ramp_steps);
        if spell != current_spell {
            current_spell = spell;
            blobs.clear();
            if spell.is_some() {
                for _ in 0..params.stratiform_blobs {
                    let major = rng.gen_range(params.blob_sigma[0]..=params.blob_sigma[1]);
                    let minor = major / rng.gen_range(1.0..=1.8);
                    blobs.push(Blob::new(
                        rng.gen_range(0.0..wf),
                        rng.gen_range(0.0..hf),
                        major,
                        minor,
                        rng.gen_range(0.0..PI),
                        rng.gen_range(0.4..1.0),
                    ));
                }
            }
        }

        field.fill(0.0);
        if let Some(k) = spell {
            let level = spells[k].level * weight;
            field.iter_mut().for_each(|v| *v = level * params.stratiform_floor);
            for b in &blobs {
                b.add_to(&mut field, h, w, level);
            }
        }
        for c in &cells {
            c.blob.add_to(&mut field, h, w, c.envelope());
        }
        for v in field.iter_mut() {
            let mut rate = *v;
            if rate > 0.0 && params.pixel_noise > 0.0 {
                rate *= noise.sample(&mut rng).exp();
            }
            if rate < params.detection_floor {
                rate = 0.0;
            }
            values.push((rate * per_step) as f32);
        }

        // Advance to t + 1.
        let [vx, vy] = params.velocity_at(t, phase);
        for b in blobs.iter_mut() {
            b.x = (b.x + vx).rem_euclid(wf);
            b.y = (b.y + vy).rem_euclid(hf);
        }
        for c in cells.iter_mut() {
            c.blob.x = (c.blob.x + vx).rem_euclid(wf);
            c.blob.y = (c.blob.y + vy).rem_euclid(hf);
            c.age += 1.0;
            c.log_growth += growth.sample(&mut rng);
        }
        cells.retain(|c| c.age < c.lifetime);
        if weight > 0.5 {
            let births = births.as_ref().map_or(0, |d| d.sample(&mut rng) as usize);
            for _ in 0..births {
                let major = rng.gen_range(params.cell_sigma[0]..=params.cell_sigma[1]);
                let minor = major / rng.gen_range(1.0..=params.cell_anisotropy);
                cells.push(Cell {
                    blob: Blob::new(
                        rng.gen_range(0.0..wf),
                        rng.gen_range(0.0..hf),
                        major,
                        minor,
                        rng.gen_range(0.0..PI),
                        peak.sample(&mut rng),
                    ),
                    age: 0.0,
                    lifetime: rng.gen_range(params.cell_lifetime[0]..=params.cell_lifetime[1]),
                    log_growth: 0.0,
                });
            }
        }
    }
    Archive::new(n_frames, h, w, steps_per_hour, values)
}
