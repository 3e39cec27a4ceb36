//! Run configuration: a single JSON document covering grid, model, loss,
//! evaluation, optimizer and synthesis settings.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, GridSpec, RegionOfInterest};

/// Which parts of the fusion graph are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    /// Radar backbone and head only.
    #[serde(rename = "R")]
    RadarOnly,
    /// Cross-attention with a uniform, frozen elevation lift.
    #[serde(rename = "R+C")]
    RadarCamera,
    /// Cross-attention with the learned elevation weighting.
    #[serde(rename = "R+C+W")]
    RadarCameraWeighted,
    /// As `R+C+W` with the alternate vision backend.
    #[serde(rename = "R+C*+W")]
    RadarAltCameraWeighted,
}

impl AblationMode {
    pub fn uses_camera(self) -> bool {
        self != AblationMode::RadarOnly
    }

    pub fn learned_lift(self) -> bool {
        matches!(
            self,
            AblationMode::RadarCameraWeighted | AblationMode::RadarAltCameraWeighted
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::RadarOnly => "R",
            AblationMode::RadarCamera => "R+C",
            AblationMode::RadarCameraWeighted => "R+C+W",
            AblationMode::RadarAltCameraWeighted => "R+C*+W",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R" => Ok(AblationMode::RadarOnly),
            "R+C" => Ok(AblationMode::RadarCamera),
            "R+C+W" => Ok(AblationMode::RadarCameraWeighted),
            "R+C*+W" => Ok(AblationMode::RadarAltCameraWeighted),
            other => Err(Error::Config(format!(
                "unknown ablation mode '{other}' (expected R, R+C, R+C+W or R+C*+W)"
            ))),
        }
    }
}

/// Raw radar tensor dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarShape {
    pub n_range_raw: usize,
    pub n_azimuth_raw: usize,
    pub n_doppler: usize,
    pub n_elevation_raw: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Output channel count C; each encoder produces C/2.
    pub channels: usize,
    /// Stride-2 stages in each encoder stem.
    pub stem_stages: usize,
    pub trunk_blocks: usize,
}

impl BackboneConfig {
    pub fn downsample(&self) -> usize {
        1 << self.stem_stages
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionConfig {
    /// Registered backend name used by the camera modes.
    pub backend: String,
    /// Backend substituted in `R+C*+W`.
    pub alt_backend: String,
    /// Weight file for the `external` backend.
    #[serde(default)]
    pub external_path: Option<PathBuf>,
    pub patch_size: usize,
    /// Patch feature width C_vit.
    pub channels: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftConfig {
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformAttnConfig {
    pub n_points: usize,
    pub n_heads: usize,
    /// Bound on offsets, as a fraction of the image extent.
    pub offset_scale: f64,
    pub n_layers: usize,
}

impl DeformAttnConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.n_points == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::Config("attention counts must be >= 1".into()));
        }
        if !(self.offset_scale > 0.0 && self.offset_scale <= 1.0) {
            return Err(Error::Config("offset_scale must lie in (0, 1]".into()));
        }
        if channels % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "{channels} channels do not split into {} heads",
                self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    PerChannel,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub gate: GateKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Target Gaussian width, in bins.
    pub sigma: f64,
    pub score_threshold: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_focal: f64,
    pub w_gwd: f64,
    pub w_l1: f64,
    pub gwd_tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_focal: 1.0,
            w_gwd: 2.0,
            w_l1: 0.25,
            gwd_tau: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_focal, self.w_gwd, self.w_l1];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) || ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative with at least one positive".into(),
            ));
        }
        if !(self.gwd_tau > 0.0) {
            return Err(Error::Config("gwd_tau must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation_points: usize,
    pub roi: RegionOfInterest,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.3,
            interpolation_points: 40,
            roi: RegionOfInterest::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config("iou_threshold must lie in (0, 1)".into()));
        }
        if self.interpolation_points < 2 {
            return Err(Error::Config("interpolation_points must be >= 2".into()));
        }
        self.roi.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Hard cap on optimizer steps; the cosine schedule spans the capped run.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    None,
    Partial,
    Heavy,
    Full,
}

impl OcclusionMode {
    /// Fraction of the image area overwritten with noise.
    pub fn area_fraction(self) -> f64 {
        match self {
            OcclusionMode::None => 0.0,
            OcclusionMode::Partial => 0.25,
            OcclusionMode::Heavy => 0.75,
            OcclusionMode::Full => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSpec {
    pub tag: String,
    pub weight: f64,
    pub occlusion: OcclusionMode,
}

/// Ego-frame box from which object centers are drawn; must lie inside the ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRegion {
    pub x_bounds_m: (f64, f64),
    pub y_bounds_m: (f64, f64),
    pub ground_z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub min_objects: usize,
    pub max_objects: usize,
    pub condition_mix: Vec<ConditionSpec>,
    /// When false, radar blobs carry no class-dependent shape or power.
    pub class_in_radar: bool,
    pub placement: PlacementRegion,
    /// Minimum Chebyshev distance between object centers, in feature bins.
    pub min_separation_bins: f64,
    pub noise_floor: f64,
}

/// BEV overlay raster size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotConfig {
    pub width_px: u32,
    pub height_px: u32,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            width_px: 320,
            height_px: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub ablation_mode: AblationMode,
    /// Data-loading workers; 0 is the deterministic reference path.
    #[serde(default)]
    pub workers: usize,
    pub grid: GridSpec,
    pub radar: RadarShape,
    pub camera: CameraModel,
    pub backbone: BackboneConfig,
    pub vision: VisionConfig,
    pub lift: LiftConfig,
    pub attention: DeformAttnConfig,
    pub fusion: FusionConfig,
    pub head: HeadConfig,
    pub loss: LossWeights,
    pub eval: EvalConfig,
    pub optimizer: OptimizerConfig,
    pub synth: SynthConfig,
    #[serde(default)]
    pub plot: PlotConfig,
}

impl RunConfig {
    /// Desk-scale profile: 32x16 BEV grid, C=32, E=4, 160x256 images.
    pub fn desk() -> Self {
        RunConfig {
            seed: 7,
            ablation_mode: AblationMode::RadarCameraWeighted,
            workers: 0,
            grid: GridSpec {
                n_range: 32,
                n_azimuth: 16,
                n_elevation: 4,
                range_bounds_m: (0.0, 72.0),
                azimuth_bounds_rad: (-0.6, 0.6),
                elevation_bounds_m: (-2.0, 6.0),
            },
            radar: RadarShape {
                n_range_raw: 64,
                n_azimuth_raw: 32,
                n_doppler: 16,
                n_elevation_raw: 8,
            },
            camera: CameraModel::forward_facing(160.0, 160.0, 128.0, 80.0, [0.0, 0.0, 0.3], (160, 256)),
            backbone: BackboneConfig {
                channels: 32,
                stem_stages: 1,
                trunk_blocks: 4,
            },
            vision: VisionConfig {
                backend: "stub".into(),
                alt_backend: "external".into(),
                external_path: None,
                patch_size: 16,
                channels: 64,
                seed: 1234,
            },
            lift: LiftConfig { hidden: 64 },
            attention: DeformAttnConfig {
                n_points: 4,
                n_heads: 1,
                offset_scale: 0.1,
                n_layers: 1,
            },
            fusion: FusionConfig {
                gate: GateKind::PerChannel,
            },
            head: HeadConfig {
                sigma: 0.75,
                score_threshold: 0.3,
                top_k: 50,
            },
            loss: LossWeights::default(),
            eval: EvalConfig::default(),
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                min_learning_rate: 1e-4,
                weight_decay: 0.01,
                batch_size: 6,
                epochs: 80,
                max_steps: None,
            },
            synth: SynthConfig {
                min_objects: 1,
                max_objects: 4,
                condition_mix: vec![ConditionSpec {
                    tag: "clear".into(),
                    weight: 1.0,
                    occlusion: OcclusionMode::None,
                }],
                class_in_radar: true,
                placement: PlacementRegion {
                    x_bounds_m: (8.0, 68.0),
                    y_bounds_m: (-5.5, 5.5),
                    ground_z_m: -1.0,
                },
                min_separation_bins: 3.0,
                noise_floor: 0.1,
            },
            plot: PlotConfig::default(),
        }
    }

    /// Full-size profile: 256x112 BEV grid, C=128, E=10, 720x1280 images.
    /// Shape-checked, not trained.
    pub fn paper_scale() -> Self {
        let mut cfg = RunConfig::desk();
        cfg.grid.n_range = 256;
        cfg.grid.n_azimuth = 112;
        cfg.grid.n_elevation = 10;
        cfg.radar = RadarShape {
            n_range_raw: 512,
            n_azimuth_raw: 224,
            n_doppler: 64,
            n_elevation_raw: 16,
        };
        cfg.camera = CameraModel::forward_facing(720.0, 720.0, 640.0, 360.0, [0.0, 0.0, 0.3], (720, 1280));
        cfg.backbone.channels = 128;
        cfg.vision.channels = 384;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        apply_env_overrides(&mut value, std::env::vars())?;
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.camera.validate()?;
        self.loss.validate()?;
        self.eval.validate()?;
        self.attention.validate(self.backbone.channels)?;
        let ds = self.backbone.downsample();
        if self.radar.n_range_raw != self.grid.n_range * ds
            || self.radar.n_azimuth_raw != self.grid.n_azimuth * ds
        {
            return Err(Error::Config(format!(
                "raw radar grid {}x{} must equal the feature grid {}x{} times the stem downsample {ds}",
                self.radar.n_range_raw, self.radar.n_azimuth_raw, self.grid.n_range, self.grid.n_azimuth
            )));
        }
        if self.radar.n_doppler == 0 || self.radar.n_elevation_raw == 0 {
            return Err(Error::Config("radar Doppler/elevation bins must be >= 1".into()));
        }
        if self.backbone.channels < 2 || self.backbone.channels % 2 != 0 {
            return Err(Error::Config("backbone channels must be even and >= 2".into()));
        }
        let (h, w) = self.camera.image_size;
        let p = self.vision.patch_size;
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} is not divisible by the patch size {p}"
            )));
        }
        if !(self.head.sigma > 0.0) {
            return Err(Error::Config("head.sigma must be positive".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || o.min_learning_rate < 0.0 || o.batch_size == 0 {
            return Err(Error::Config(
                "optimizer needs learning_rate > 0, min_learning_rate >= 0, batch_size >= 1".into(),
            ));
        }
        let s = &self.synth;
        if s.min_objects > s.max_objects {
            return Err(Error::Config("synth.min_objects exceeds max_objects".into()));
        }
        if s.condition_mix.is_empty()
            || s.condition_mix.iter().any(|c| !(c.weight >= 0.0))
            || s.condition_mix.iter().all(|c| c.weight == 0.0)
        {
            return Err(Error::Config("synth.condition_mix needs a positive weight".into()));
        }
        let roi = &self.eval.roi;
        let pl = &s.placement;
        if pl.x_bounds_m.0 < roi.x_bounds_m.0
            || pl.x_bounds_m.1 > roi.x_bounds_m.1
            || pl.y_bounds_m.0 < roi.y_bounds_m.0
            || pl.y_bounds_m.1 > roi.y_bounds_m.1
            || !(pl.x_bounds_m.0 < pl.x_bounds_m.1 && pl.y_bounds_m.0 < pl.y_bounds_m.1)
        {
            return Err(Error::Config("synth.placement must be a non-empty box inside the ROI".into()));
        }
        Ok(())
    }

    /// Vision backend name for the configured ablation mode.
    pub fn active_vision_backend(&self) -> &str {
        match self.ablation_mode {
            AblationMode::RadarAltCameraWeighted => &self.vision.alt_backend,
            _ => &self.vision.backend,
        }
    }
}

/// Applies `RADE_<KEY>=value` overrides to top-level scalar fields.
///
/// Only keys that already hold a scalar are replaced; the value is parsed as
/// JSON when the existing field is a number or boolean, and taken verbatim
/// otherwise.
pub fn apply_env_overrides<I>(doc: &mut Value, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let Some(obj) = doc.as_object_mut() else {
        return Err(Error::Config("config root must be a JSON object".into()));
    };
    for (name, raw) in vars {
        let Some(key) = name.strip_prefix("RADE_") else {
            continue;
        };
        let key = key.to_ascii_lowercase();
        let Some(slot) = obj.get_mut(&key) else {
            continue;
        };
        *slot = match slot {
            Value::Number(_) | Value::Bool(_) => serde_json::from_str(&raw).map_err(|e| {
                Error::Config(format!("environment override {name}={raw}: {e}"))
            })?,
            Value::String(_) | Value::Null => Value::String(raw),
            _ => continue,
        };
    }
    Ok(())
}
