//! End-to-end case processing: threshold, component denoising, rib labeling
//! and centerline extraction, plus batch evaluation against reference cases.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::centerline::{
    extract_all, load_centerlines, save_centerlines, CenterlineConfig, CenterlineSet, Polyline,
    DEFAULT_PENALTY_EXPONENT, DEFAULT_PENALTY_SCALE, DEFAULT_RESAMPLE_POINTS, DEFAULT_SMOOTH_WINDOW,
};
use crate::diagnostics::Warning;
use crate::error::{Error, Result};
use crate::labeling::{oracle_labeler, Labeler, MorphologicalLabeler};
use crate::metrics::{evaluate_case, MetricsReport, DEFAULT_TAU_MM};
use crate::morphology::{ccd, DEFAULT_CCD_MIN_VOXELS};
use crate::nifti;
use crate::volume::{threshold_hu, BinaryMask, LabelVolume, Volume, DEFAULT_HU_THRESHOLD};

pub const MASK_FILE: &str = "mask.nii.gz";
pub const LABELS_FILE: &str = "labels.nii.gz";
pub const CENTERLINES_FILE: &str = "centerlines.txt";
pub const REPORT_FILE: &str = "report.txt";
pub const TIMINGS_FILE: &str = "timings.txt";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LabelerChoice {
    #[default]
    Morphological,
    /// Replays a stored label volume.
    Oracle(PathBuf),
}

impl std::str::FromStr for LabelerChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "morphological" {
            Ok(LabelerChoice::Morphological)
        } else if let Some(path) = s.strip_prefix("oracle:") {
            if path.is_empty() {
                return Err(Error::Parse("labeler oracle: needs a path".into()));
            }
            Ok(LabelerChoice::Oracle(PathBuf::from(path)))
        } else {
            Err(Error::Parse(format!(
                "labeler must be `morphological` or `oracle:<path>`, got {s:?}"
            )))
        }
    }
}

impl std::fmt::Display for LabelerChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelerChoice::Morphological => write!(f, "morphological"),
            LabelerChoice::Oracle(p) => write!(f, "oracle:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub hu_threshold: f64,
    pub ccd_min_voxels: usize,
    pub labeler: LabelerChoice,
    pub penalty_scale: f64,
    pub penalty_exponent: f64,
    pub smooth_window: usize,
    pub resample_n: usize,
    pub tau_mm: f64,
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hu_threshold: DEFAULT_HU_THRESHOLD,
            ccd_min_voxels: DEFAULT_CCD_MIN_VOXELS,
            labeler: LabelerChoice::Morphological,
            penalty_scale: DEFAULT_PENALTY_SCALE,
            penalty_exponent: DEFAULT_PENALTY_EXPONENT,
            smooth_window: DEFAULT_SMOOTH_WINDOW,
            resample_n: DEFAULT_RESAMPLE_POINTS,
            tau_mm: DEFAULT_TAU_MM,
            seed: 0,
            threads: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

impl PipelineConfig {
    pub fn centerline(&self) -> CenterlineConfig {
        CenterlineConfig {
            penalty_scale: self.penalty_scale,
            penalty_exponent: self.penalty_exponent,
            smooth_window: self.smooth_window,
            resample_points: self.resample_n,
        }
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, v)) = line.split_once('=') else {
                return Err(Error::Parse(format!("line {}: expected key=value, got {raw:?}", n + 1)));
            };
            self.set(key.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "hu_threshold" => self.hu_threshold = parse_value(key, v)?,
            "ccd_min_voxels" => self.ccd_min_voxels = parse_value(key, v)?,
            "labeler" => self.labeler = v.parse()?,
            "penalty_scale" => self.penalty_scale = parse_value(key, v)?,
            "penalty_exponent" => self.penalty_exponent = parse_value(key, v)?,
            "smooth_window" => self.smooth_window = parse_value(key, v)?,
            "resample_n" => self.resample_n = parse_value(key, v)?,
            "tau_mm" => self.tau_mm = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "threads" => self.threads = parse_value(key, v)?,
            _ => return Err(Error::Parse(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.hu_threshold.is_finite() {
            return bad(format!("hu_threshold must be finite, got {}", self.hu_threshold));
        }
        if !(self.penalty_scale >= 0.0) || !(self.penalty_exponent >= 0.0) {
            return bad("penalty scale and exponent must be non-negative".into());
        }
        if self.smooth_window < 3 || self.smooth_window.is_multiple_of(2) {
            return bad(format!("smooth_window must be odd and >= 3, got {}", self.smooth_window));
        }
        if self.resample_n < 2 {
            return bad(format!("resample_n must be >= 2, got {}", self.resample_n));
        }
        if !(self.tau_mm > 0.0) {
            return bad(format!("tau_mm must be positive, got {}", self.tau_mm));
        }
        Ok(())
    }

    pub fn to_config(&self) -> String {
        format!(
            "hu_threshold={}\nccd_min_voxels={}\nlabeler={}\npenalty_scale={}\npenalty_exponent={}\n\
             smooth_window={}\nresample_n={}\ntau_mm={}\nseed={}\nthreads={}\n",
            self.hu_threshold,
            self.ccd_min_voxels,
            self.labeler,
            self.penalty_scale,
            self.penalty_exponent,
            self.smooth_window,
            self.resample_n,
            self.tau_mm,
            self.seed,
            self.threads
        )
    }

    pub fn build_labeler(&self) -> Result<Box<dyn Labeler>> {
        Ok(match &self.labeler {
            LabelerChoice::Morphological => Box::new(MorphologicalLabeler::default()),
            LabelerChoice::Oracle(path) => Box::new(oracle_labeler(path)?),
        })
    }
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub foreground_voxels: usize,
    pub mask: BinaryMask,
    pub labels: LabelVolume,
    pub ribs_left: usize,
    pub ribs_right: usize,
    pub centerlines: CenterlineSet,
    pub warnings: Vec<Warning>,
    pub timings: Vec<(&'static str, Duration)>,
}

impl CaseOutput {
    pub fn partial_failure(&self) -> bool {
        self.warnings.iter().any(Warning::is_partial_failure)
    }

    /// Process exit status: 2 when any rib-level failure was reported.
    pub fn exit_code(&self) -> i32 {
        if self.partial_failure() {
            2
        } else {
            0
        }
    }

    /// Deterministic summary; timings are kept out so reruns compare equal.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let status = if self.partial_failure() { "partial" } else { "ok" };
        let labels: Vec<String> = self.labels.present_labels().iter().map(u8::to_string).collect();
        let _ = writeln!(s, "status={status}");
        let _ = writeln!(s, "foreground_voxels={}", self.foreground_voxels);
        let _ = writeln!(s, "ccd_voxels={}", self.mask.count());
        let _ = writeln!(s, "ribs_left={}", self.ribs_left);
        let _ = writeln!(s, "ribs_right={}", self.ribs_right);
        let _ = writeln!(s, "labels={}", labels.join(","));
        let _ = writeln!(s, "centerlines={}", self.centerlines.lines.len());
        let _ = writeln!(s, "warnings={}", self.warnings.len());
        for w in &self.warnings {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn timings_text(&self) -> String {
        let mut s = String::new();
        for (stage, d) in &self.timings {
            let _ = writeln!(s, "{stage}_seconds={:.3}", d.as_secs_f64());
        }
        let total: Duration = self.timings.iter().map(|(_, d)| *d).sum();
        let _ = writeln!(s, "total_seconds={:.3}", total.as_secs_f64());
        s
    }

    /// Writes all artifacts into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path, cfg: &PipelineConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        nifti::save_volume(&Volume::from_mask(&self.mask), dir.join(MASK_FILE))?;
        nifti::save_volume(&Volume::from_labels(&self.labels), dir.join(LABELS_FILE))?;
        save_centerlines(&self.centerlines.lines, dir.join(CENTERLINES_FILE))?;
        write_text(&dir.join(REPORT_FILE), &self.report())?;
        write_text(&dir.join(TIMINGS_FILE), &self.timings_text())?;
        write_text(&dir.join(CONFIG_FILE), &cfg.to_config())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every stage on an HU volume. Rib-level problems become warnings;
/// only whole-case failures are errors.
pub fn run_pipeline(volume: &Volume, cfg: &PipelineConfig) -> Result<CaseOutput> {
    cfg.validate()?;
    let labeler = cfg.build_labeler()?;
    let mut timings = Vec::new();

    let t = Instant::now();
    let thresholded = threshold_hu(volume, cfg.hu_threshold)?;
    timings.push(("threshold", t.elapsed()));

    let t = Instant::now();
    let mask = ccd(&thresholded, cfg.ccd_min_voxels, None);
    timings.push(("ccd", t.elapsed()));
    if !mask.any() {
        return Err(Error::EmptyMask);
    }

    let t = Instant::now();
    let labeled = labeler.label(&mask)?;
    timings.push(("label", t.elapsed()));

    let t = Instant::now();
    let centerlines = extract_all(&labeled.labels, &cfg.centerline());
    timings.push(("centerline", t.elapsed()));

    let mut warnings = labeled.warnings;
    warnings.extend(centerlines.warnings.iter().cloned());
    Ok(CaseOutput {
        foreground_voxels: thresholded.count(),
        mask,
        labels: labeled.labels,
        ribs_left: labeled.left,
        ribs_right: labeled.right,
        centerlines,
        warnings,
        timings,
    })
}

/// Per-case evaluation results and the cross-case means.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub cases: BTreeMap<String, MetricsReport>,
    /// Reference cases without a usable prediction.
    pub skipped: Vec<String>,
}

fn load_case(dir: &Path) -> Result<(LabelVolume, BTreeMap<u8, Polyline>)> {
    let labels = LabelVolume::from_volume(&nifti::load_volume(dir.join(LABELS_FILE))?)?;
    let lines = load_centerlines(dir.join(CENTERLINES_FILE))?;
    Ok((labels, lines))
}

/// Scores every case directory under `gt_dir` against the same-named
/// directory under `pred_dir`. Each case directory holds `labels.nii.gz` and
/// `centerlines.txt`. Cases missing on the prediction side are skipped.
pub fn run_eval(pred_dir: &Path, gt_dir: &Path, tau: f64) -> Result<EvalSummary> {
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)
        .map_err(|e| Error::io(gt_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut summary = EvalSummary {
        cases: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for name in names {
        let pred_case = pred_dir.join(&name);
        if !pred_case.join(LABELS_FILE).is_file() || !pred_case.join(CENTERLINES_FILE).is_file() {
            summary.skipped.push(name);
            continue;
        }
        let (gt_labels, gt_lines) = load_case(&gt_dir.join(&name))?;
        let (pred_labels, pred_lines) = load_case(&pred_case)?;
        let report = evaluate_case(&pred_labels, &gt_labels, &pred_lines, &gt_lines, tau)?;
        summary.cases.insert(name, report);
    }
    Ok(summary)
}

impl EvalSummary {
    fn mean(&self, f: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.cases.values().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// `key=value` means over scored cases.
    pub fn to_key_value(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "cases={}", self.cases.len());
        let _ = writeln!(s, "skipped={}", self.skipped.join(","));
        let rows: [(&str, Box<dyn Fn(&MetricsReport) -> Option<f64>>); 9] = [
            ("dice_avg", Box::new(|r| r.dice_avg)),
            ("dice_min", Box::new(|r| r.dice_min)),
            ("acc_all", Box::new(|r| r.accuracy.all)),
            ("acc_first", Box::new(|r| r.accuracy.first)),
            ("acc_intermediate", Box::new(|r| r.accuracy.intermediate)),
            ("acc_twelfth", Box::new(|r| r.accuracy.twelfth)),
            ("llcd_avg", Box::new(|r| r.llcd_avg)),
            ("lscd_avg", Box::new(|r| r.lscd_avg)),
            ("nld_avg", Box::new(|r| r.nld_avg)),
        ];
        for (key, f) in rows.iter() {
            let _ = writeln!(s, "{key}={}", fmt(self.mean(f)));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_overrides() {
        let mut cfg = PipelineConfig {
            hu_threshold: 150.5,
            labeler: LabelerChoice::Oracle("/tmp/x.nii".into()),
            threads: 8,
            ..PipelineConfig::default()
        };
        let mut back = PipelineConfig::default();
        back.apply(&cfg.to_config()).unwrap();
        assert_eq!(back, cfg);
        cfg.apply("# comment\nsmooth_window = 5\n\n").unwrap();
        assert_eq!(cfg.smooth_window, 5);
        assert!(cfg.apply("bogus=1").is_err());
        assert!(cfg.apply("tau_mm").is_err());
        assert!("oracle:".parse::<LabelerChoice>().is_err());
        cfg.smooth_window = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn spine_only_volume_is_fatal() {
        let g = crate::volume::Geometry::isotropic([48, 48, 64]).unwrap();
        let hu: Vec<i16> = (0..g.len())
            .map(|i| {
                let [x, y, _] = g.coords(i);
                let (dx, dy) = (x as f64 - 23.5, y as f64 - 30.0);
                if dx * dx + dy * dy <= 25.0 {
                    400
                } else {
                    -1000
                }
            })
            .collect();
        let v = Volume::from_hu(g, hu).unwrap();
        assert!(matches!(
            run_pipeline(&v, &PipelineConfig::default()),
            Err(Error::NoRibsRemain)
        ));
    }
}
