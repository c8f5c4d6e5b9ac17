//! Transmitter placement and CSI synthesis.
//!
//! Two propagation models are provided: a free-space line-of-sight model for a
//! uniform linear array, and a quenched scatterer-ray model in which every
//! path bounces off exactly one of a fixed set of point scatterers.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Carrier frequency of the default scenario, Hz.
pub const DEFAULT_CARRIER_HZ: f64 = 2.0e9;

/// Number of points in the default letter-shaped curve.
pub const DEFAULT_CURVE_POINTS: usize = 234;

/// RNG stream reserved for location sampling; noise uses stream `n` for location `n`.
const LOCATION_STREAM: u64 = u64::MAX;

/// Uniform linear array laid out along the x-axis, first element at `bs_position`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayGeometry {
    pub num_antennas: usize,
    /// Element spacing, meters.
    pub antenna_spacing: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
    pub bs_position: [f64; 3],
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        let wavelength = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ;
        Self {
            num_antennas: 32,
            antenna_spacing: wavelength / 2.0,
            wavelength,
            bs_position: [0.0, 0.0, 10.0],
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.num_antennas < 2 {
            return Err(Error::InvalidScenario(format!(
                "array needs at least 2 antennas, got {}",
                self.num_antennas
            )));
        }
        if !(self.antenna_spacing > 0.0 && self.antenna_spacing.is_finite()) {
            return Err(Error::InvalidScenario("antenna_spacing must be positive".into()));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidScenario("wavelength must be positive".into()));
        }
        Ok(())
    }

    /// Position of antenna `b` (zero-based).
    pub fn antenna_position(&self, b: usize) -> [f64; 3] {
        let [x, y, z] = self.bs_position;
        [x + b as f64 * self.antenna_spacing, y, z]
    }
}

/// Axis-aligned rectangle on the ground plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Area {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn x_max(&self) -> f64 {
        self.x_min + self.width
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.height
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x_min + 0.5 * self.width, self.y_min + 0.5 * self.height]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max() && p[1] >= self.y_min && p[1] <= self.y_max()
    }

    /// The same rectangle scaled about its center.
    pub fn scaled(&self, factor: f64) -> Area {
        let [cx, cy] = self.center();
        let (w, h) = (self.width * factor, self.height * factor);
        Area {
            x_min: cx - 0.5 * w,
            y_min: cy - 0.5 * h,
            width: w,
            height: h,
        }
    }
}

impl Default for Area {
    fn default() -> Self {
        Area {
            x_min: -500.0,
            y_min: 225.0,
            width: 1000.0,
            height: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelModel {
    VanillaLos,
    ScattererNlos {
        num_scatterers: usize,
        scatterer_seed: u64,
        /// Exponent `e` of the per-ray attenuation `a(d) = d^-e`.
        #[serde(default = "default_ray_exponent")]
        ray_exponent: f64,
    },
}

fn default_ray_exponent() -> f64 {
    1.0
}

impl ChannelModel {
    pub fn scatterer_nlos(num_scatterers: usize, scatterer_seed: u64) -> Self {
        ChannelModel::ScattererNlos {
            num_scatterers,
            scatterer_seed,
            ray_exponent: default_ray_exponent(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ChannelModel::VanillaLos => "v-los",
            ChannelModel::ScattererNlos { .. } => "s-nlos",
        }
    }
}

/// Everything needed to reproduce a synthetic measurement campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub array: ArrayGeometry,
    pub area: Area,
    pub num_locations: usize,
    pub snapshots_per_location: usize,
    /// Average SNR in dB; `inf` disables noise.
    pub snr_db: f64,
    pub path_loss_exponent: f64,
    /// Contiguous curve placed before the random locations.
    pub curve_points: Vec<[f64; 2]>,
    /// Largest allowed gap between consecutive curve points, meters.
    pub max_curve_spacing: f64,
    pub rng_seed: u64,
    pub model: ChannelModel,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        let area = Area::default();
        Self {
            array: ArrayGeometry::default(),
            area,
            num_locations: 2048,
            snapshots_per_location: 10,
            snr_db: 0.0,
            path_loss_exponent: 2.0,
            curve_points: vip_curve(&area, DEFAULT_CURVE_POINTS),
            max_curve_spacing: 25.0,
            rng_seed: 1,
            model: ChannelModel::VanillaLos,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.array.validate()?;
        let a = &self.area;
        if !(a.width > 0.0 && a.height > 0.0 && a.width.is_finite() && a.height.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "area is degenerate ({} x {} m)",
                a.width, a.height
            )));
        }
        if self.num_locations == 0 {
            return Err(Error::InvalidScenario("num_locations must be positive".into()));
        }
        if self.snapshots_per_location == 0 {
            return Err(Error::InvalidScenario("snapshots_per_location must be positive".into()));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidScenario("snr_db must be a number or +inf".into()));
        }
        if !(self.path_loss_exponent > 0.0 && self.path_loss_exponent.is_finite()) {
            return Err(Error::InvalidScenario("path_loss_exponent must be positive".into()));
        }
        if self.curve_points.len() >= self.num_locations {
            return Err(Error::InvalidScenario(format!(
                "{} curve points leave no room among {} locations",
                self.curve_points.len(),
                self.num_locations
            )));
        }
        for (i, p) in self.curve_points.iter().enumerate() {
            if !a.contains(*p) {
                return Err(Error::InvalidScenario(format!("curve point {i} lies outside the area")));
            }
        }
        for (i, w) in self.curve_points.windows(2).enumerate() {
            let gap = dist2(w[0], w[1]);
            if gap > self.max_curve_spacing {
                return Err(Error::InvalidScenario(format!(
                    "curve points {i} and {} are {gap:.2} m apart (bound {} m)",
                    i + 1,
                    self.max_curve_spacing
                )));
            }
        }
        if let ChannelModel::ScattererNlos {
            num_scatterers,
            ray_exponent,
            ..
        } = self.model
        {
            if num_scatterers == 0 {
                return Err(Error::InvalidScenario("need at least one scatterer".into()));
            }
            if !(ray_exponent >= 0.0 && ray_exponent.is_finite()) {
                return Err(Error::InvalidScenario("ray_exponent must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Number of CSI entries per snapshot (narrowband: one per antenna).
    pub fn csi_len(&self) -> usize {
        self.array.num_antennas
    }
}

/// Ground-truth transmitter positions, one row per location.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPointSet {
    pub positions: Array2<f64>,
}

impl SpatialPointSet {
    pub fn new(positions: Array2<f64>) -> Self {
        Self { positions }
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.nrows() == 0
    }

    pub fn point(&self, n: usize) -> [f64; 2] {
        [self.positions[(n, 0)], self.positions[(n, 1)]]
    }

    /// Median distance from each point to its nearest neighbor.
    pub fn median_nearest_neighbor_spacing(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let mut nearest: Vec<f64> = (0..n)
            .map(|i| {
                let p = self.point(i);
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| dist2(p, self.point(j)))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nearest.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            nearest[n / 2]
        } else {
            0.5 * (nearest[n / 2 - 1] + nearest[n / 2])
        }
    }
}

/// Quenched scatterer environment shared by every location of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    pub positions: Vec<[f64; 2]>,
    pub phase_shifts: Vec<f64>,
    pub ray_exponent: f64,
}

impl ScattererField {
    /// Draws `count` scatterers uniformly over `region` with i.i.d. uniform phases.
    pub fn sample(region: &Area, count: usize, seed: u64, ray_exponent: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidScenario("need at least one scatterer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut positions = Vec::with_capacity(count);
        let mut phase_shifts = Vec::with_capacity(count);
        for _ in 0..count {
            let x = region.x_min + region.width * rng.random::<f64>();
            let y = region.y_min + region.height * rng.random::<f64>();
            positions.push([x, y]);
            phase_shifts.push(2.0 * PI * rng.random::<f64>());
        }
        Ok(Self {
            positions,
            phase_shifts,
            ray_exponent,
        })
    }

    /// Scatterers over a rectangle 1.5x the UE area with the same center.
    pub fn for_scenario(spec: &ScenarioSpec) -> Result<Option<Self>> {
        match spec.model {
            ChannelModel::VanillaLos => Ok(None),
            ChannelModel::ScattererNlos {
                num_scatterers,
                scatterer_seed,
                ray_exponent,
            } => Self::sample(&spec.area.scaled(1.5), num_scatterers, scatterer_seed, ray_exponent).map(Some),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn attenuation(&self, d: f64) -> f64 {
        d.powf(-self.ray_exponent)
    }
}

/// Noisy CSI snapshots with the positions they were taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiDataset {
    /// `N x T x M` snapshots.
    pub snapshots: Array3<Complex64>,
    pub positions: SpatialPointSet,
    pub spec: ScenarioSpec,
}

impl CsiDataset {
    pub fn num_locations(&self) -> usize {
        self.snapshots.dim().0
    }

    pub fn num_snapshots(&self) -> usize {
        self.snapshots.dim().1
    }

    pub fn csi_len(&self) -> usize {
        self.snapshots.dim().2
    }

    pub fn validate(&self) -> Result<()> {
        let (n, _, _) = self.snapshots.dim();
        if n != self.positions.len() {
            return Err(Error::Contract(format!(
                "{} snapshot stacks but {} positions",
                n,
                self.positions.len()
            )));
        }
        if let Some(idx) = self
            .snapshots
            .iter()
            .position(|h| !(h.re.is_finite() && h.im.is_finite()))
        {
            let (_, t, m) = self.snapshots.dim();
            return Err(Error::Contract(format!("non-finite CSI at location {}", idx / (t * m))));
        }
        Ok(())
    }
}

/// Places the curve points first, then fills the remaining locations uniformly.
pub fn sample_locations(spec: &ScenarioSpec) -> Result<SpatialPointSet> {
    spec.validate()?;
    let n = spec.num_locations;
    let area = spec.area;
    let mut positions = Array2::zeros((n, 2));
    for (i, p) in spec.curve_points.iter().enumerate() {
        positions[(i, 0)] = p[0];
        positions[(i, 1)] = p[1];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(LOCATION_STREAM);
    for i in spec.curve_points.len()..n {
        positions[(i, 0)] = area.x_min + area.width * rng.random::<f64>();
        positions[(i, 1)] = area.y_min + area.height * rng.random::<f64>();
    }
    Ok(SpatialPointSet { positions })
}

/// Free-space LoS CSI of a ground-level transmitter at `x`:
/// `h_b = d^-rho * exp(-j 2pi/lambda * dr * b * cos(phi))`, `b = 0..B`.
///
/// `phi` is the angle between the array axis and the direction to the
/// transmitter, so `h_0` is always real and positive.
pub fn vanilla_los_csi(x: [f64; 2], geom: &ArrayGeometry, path_loss_exponent: f64) -> Result<Array1<Complex64>> {
    let [bx, by, bz] = geom.bs_position;
    let delta = [x[0] - bx, x[1] - by, -bz];
    let d = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    if d == 0.0 {
        return Err(Error::SingularGeometry("transmitter coincides with the array".into()));
    }
    let cos_phi = delta[0] / d;
    let gain = d.powf(-path_loss_exponent);
    let k = 2.0 * PI / geom.wavelength * geom.antenna_spacing * cos_phi;
    Ok(Array1::from_shape_fn(geom.num_antennas, |b| {
        Complex64::from_polar(gain, -k * b as f64)
    }))
}

/// Single-bounce scatterer CSI:
/// `h_r = sum_s a(d_ts) a(d_sr) exp(j (2pi/lambda (d_ts + d_sr) + phi_s))`.
pub fn scatterer_nlos_csi(x: [f64; 2], field: &ScattererField, geom: &ArrayGeometry) -> Result<Array1<Complex64>> {
    let k = 2.0 * PI / geom.wavelength;
    let antennas: Vec<[f64; 3]> = (0..geom.num_antennas).map(|b| geom.antenna_position(b)).collect();
    let mut h = Array1::<Complex64>::zeros(geom.num_antennas);
    for (s, (sp, phase)) in field.positions.iter().zip(&field.phase_shifts).enumerate() {
        let d_ts = dist2(x, *sp);
        if d_ts == 0.0 {
            return Err(Error::SingularGeometry(format!(
                "transmitter coincides with scatterer {s}"
            )));
        }
        let a_ts = field.attenuation(d_ts);
        for (hr, ant) in h.iter_mut().zip(&antennas) {
            let d_sr = dist3([sp[0], sp[1], 0.0], *ant);
            *hr += Complex64::from_polar(a_ts * field.attenuation(d_sr), k * (d_ts + d_sr) + phase);
        }
    }
    Ok(h)
}

/// Noiseless model CSI for every location, `N x M`.
pub fn model_csi(spec: &ScenarioSpec, positions: &SpatialPointSet) -> Result<Array2<Complex64>> {
    let field = ScattererField::for_scenario(spec)?;
    let m = spec.csi_len();
    let mut out = Array2::zeros((positions.len(), m));
    for (n, mut row) in out.outer_iter_mut().enumerate() {
        let x = positions.point(n);
        let h = match &field {
            None => vanilla_los_csi(x, &spec.array, spec.path_loss_exponent)?,
            Some(f) => scatterer_nlos_csi(x, f, &spec.array)?,
        };
        row.assign(&h);
    }
    Ok(out)
}

/// Per-entry complex noise variance that puts the campaign-average SNR at `snr_db`.
pub fn noise_variance(clean: &Array2<Complex64>, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY || clean.is_empty() {
        return 0.0;
    }
    let mean_power = clean.iter().map(|h| h.norm_sqr()).sum::<f64>() / clean.nrows() as f64;
    mean_power / (clean.ncols() as f64 * 10f64.powf(snr_db / 10.0))
}

/// Generates locations, model CSI and `T` noisy snapshots per location.
pub fn synthesize_dataset(spec: &ScenarioSpec) -> Result<CsiDataset> {
    let positions = sample_locations(spec)?;
    let clean = model_csi(spec, &positions)?;
    let variance = noise_variance(&clean, spec.snr_db);
    let (n, m) = clean.dim();
    let t = spec.snapshots_per_location;
    let mut snapshots = Array3::zeros((n, t, m));
    let std = (0.5 * variance).sqrt();
    for (loc, mut stack) in snapshots.outer_iter_mut().enumerate() {
        let h = clean.row(loc);
        let mut rng = noise_rng(spec.rng_seed, loc);
        for mut snap in stack.outer_iter_mut() {
            for (out, &hv) in snap.iter_mut().zip(h.iter()) {
                *out = if variance > 0.0 {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    hv + Complex64::new(std * re, std * im)
                } else {
                    hv
                };
            }
        }
    }
    let dataset = CsiDataset {
        snapshots,
        positions,
        spec: spec.clone(),
    };
    dataset.validate()?;
    Ok(dataset)
}

fn noise_rng(seed: u64, location: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(location as u64);
    rng
}

/// Resamples a polyline at `count` points equally spaced in arc length.
pub fn resample_polyline(vertices: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    if count == 0 || vertices.is_empty() {
        return Vec::new();
    }
    if count == 1 || vertices.len() == 1 {
        return vec![vertices[0]; count.min(1)];
    }
    let seg: Vec<f64> = vertices.windows(2).map(|w| dist2(w[0], w[1])).collect();
    let total: f64 = seg.iter().sum();
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    let mut start = 0.0;
    for i in 0..count {
        let s = total * i as f64 / (count - 1) as f64;
        while k + 1 < seg.len() && start + seg[k] < s {
            start += seg[k];
            k += 1;
        }
        let u = if seg[k] > 0.0 {
            ((s - start) / seg[k]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (a, b) = (vertices[k], vertices[k + 1]);
        out.push([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]);
    }
    out
}

/// The letters "VIP" drawn as one continuous stroke centered in `area`.
pub fn vip_curve(area: &Area, count: usize) -> Vec<[f64; 2]> {
    // glyph box is 320 x 200 m before scaling
    let glyph: [[f64; 2]; 13] = [
        [0.0, 200.0],
        [60.0, 0.0],
        [120.0, 200.0],
        [160.0, 200.0],
        [160.0, 0.0],
        [200.0, 0.0],
        [200.0, 200.0],
        [280.0, 200.0],
        [310.0, 185.0],
        [320.0, 150.0],
        [310.0, 115.0],
        [280.0, 100.0],
        [200.0, 100.0],
    ];
    let scale = (0.6 * area.width / 320.0).min(0.6 * area.height / 200.0);
    let [cx, cy] = area.center();
    let placed: Vec<[f64; 2]> = glyph
        .iter()
        .map(|p| [cx + scale * (p[0] - 160.0), cy + scale * (p[1] - 100.0)])
        .collect();
    resample_polyline(&placed, count)
}

pub(crate) fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
