use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use gyromix_core::compensator::{apply_correction, fit_correction, PatchCorrection};
use gyromix_core::eval::{
    geometry_distance, identity_distance, AnnotationPair, EvalReport, PairScore,
};
use gyromix_core::flo::{load_flo, save_flo};
use gyromix_core::geometry::{homography_array_to_flow, FlowField, HomographyArray};
use gyromix_core::gyro::{gyro_homography_array, parse_frame_stamps, parse_gyro_log};
use gyromix_core::io::{read_homography_array, write_homography_array};
use gyromix_core::mixtures::{
    estimate_mixture, mixture_homography_array, parse_correspondences, MixtureParams,
};
use gyromix_core::synth::{
    export_training_pairs, simulate_sequence, Manifest, ManifestPair, OisModel, OmegaProfile,
    SynthConfig,
};
use gyromix_core::RsCameraModel;
use log::info;
use rayon::prelude::*;

use crate::args::{
    CompensateArgs, EvalArgs, FitArgs, FlowSource, GtflowArgs, GyroflowArgs, OisChoice, OmegaKind,
    SynthArgs,
};

pub type Error = Box<dyn std::error::Error + Send + Sync>;
pub type Result<T> = std::result::Result<T, Error>;

fn cli_err(msg: String) -> Error {
    format!("cli: {msg}").into()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| cli_err(format!("cannot read {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| cli_err(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| cli_err(format!("cannot write {}: {e}", path.display())))
}

fn load_camera(path: &Path) -> Result<RsCameraModel> {
    Ok(RsCameraModel::parse_config(&read_text(path)?)?)
}

fn pair_key(a: usize, b: usize) -> String {
    format!("{a:04}_{b:04}")
}

/// A manifest and the directory its relative paths start from.
struct Loaded {
    manifest: Manifest,
    dir: PathBuf,
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        let manifest = Manifest::from_json(&read_text(path)?)
            .map_err(|e| cli_err(format!("bad manifest {}: {e}", path.display())))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, dir })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn optional(&self, pair: &ManifestPair, rel: &Option<String>, what: &str) -> Result<PathBuf> {
        rel.as_deref().map(|r| self.path(r)).ok_or_else(|| {
            cli_err(format!(
                "manifest pair {} lists no {what}",
                pair_key(pair.a, pair.b)
            ))
        })
    }

    fn selected(&self, holdout_every: usize, held_out: bool) -> Vec<(usize, &ManifestPair)> {
        self.manifest
            .pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                holdout_every == 0 || (i % holdout_every == holdout_every - 1) == held_out
            })
            .collect()
    }
}

pub fn synth(a: &SynthArgs, training: bool) -> Result<()> {
    let frames = a.frames.unwrap_or(if training { 201 } else { 2 });
    let mut camera = match &a.camera {
        Some(p) => load_camera(p)?,
        None => RsCameraModel::default_synthetic(),
    };
    if let Some(t_s) = a.t_s {
        camera.timing.t_s = t_s;
    }
    if let Some(n) = a.n_patches {
        camera.timing.n_patches = n;
    }
    camera.validate()?;

    let mut cfg = SynthConfig::new(a.seed, frames);
    cfg.camera = camera;
    cfg.trajectory.omega = match a.omega {
        OmegaKind::Constant => OmegaProfile::Constant {
            omega: a.omega_amplitude.0,
        },
        OmegaKind::Sinusoid => match cfg.trajectory.omega {
            OmegaProfile::Sinusoid { phase, .. } => OmegaProfile::Sinusoid {
                offset: [0.0; 3],
                amplitude: a.omega_amplitude.0,
                freq_hz: a.omega_freq.0,
                phase,
            },
            ref other => other.clone(),
        },
        OmegaKind::RandomWalk => OmegaProfile::RandomWalk {
            sigma: a.walk_sigma,
            tau: a.walk_tau,
            seed: a.seed,
        },
    };
    cfg.trajectory.velocity = match a.velocity {
        Some(v) => v.0,
        None => [0.02 * a.z_min / camera.timing.t_f, 0.0, 0.0],
    };
    cfg.ois = match a.ois {
        OisChoice::None => OisModel::disabled(),
        OisChoice::Drift => OisModel::drift(a.ois_offset.0, a.ois_rate.0, a.ois_smax),
        OisChoice::Shake => OisModel::shake(a.ois_gain, a.ois_cutoff, a.ois_smax),
    };
    cfg.scene.n_points = a.points;
    cfg.scene.n_annotations = a.annotations;
    cfg.scene.z_min = a.z_min;
    cfg.scene.z_max = a.z_max;
    cfg.gyro_rate_hz = a.gyro_rate;
    cfg.gyro_noise_std = a.gyro_noise;
    cfg.gyro_bias = a.gyro_bias.0;

    info!(
        "synth: {frames} frames, seed {}, ois {:?}",
        a.seed, cfg.ois.kind
    );
    let bundle = simulate_sequence(&cfg)?;
    create_dir(&a.out)?;
    let manifest = export_training_pairs(&bundle, &a.out)?;
    info!("synth: wrote {} pairs", manifest.pairs.len());
    println!(
        "{}",
        a.out.join(gyromix_core::synth::MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn gyroflow(a: &GyroflowArgs) -> Result<()> {
    let camera = load_camera(&a.camera)?;
    let open = |p: &Path| {
        fs::File::open(p)
            .map(BufReader::new)
            .map_err(|e| cli_err(format!("cannot open {}: {e}", p.display())))
    };
    let samples = parse_gyro_log(open(&a.gyro)?)?;
    let frames = parse_frame_stamps(open(&a.frames)?)?;
    if frames.len() < 2 {
        return Err(cli_err(format!(
            "{} lists fewer than 2 frames",
            a.frames.display()
        )));
    }
    create_dir(&a.out)?;
    frames.par_windows(2).try_for_each(|w| -> Result<()> {
        let key = format!("{:04}_{:04}", w[0].frame_index, w[1].frame_index);
        let arr = gyro_homography_array(&samples, &w[0], &w[1], &camera)?;
        let flow = homography_array_to_flow(&arr, camera.width, camera.height)?;
        save_flo(&flow, a.out.join(format!("{key}.gyro.flo")))?;
        if a.homographies {
            write_homography_array(&arr, &a.out.join(format!("{key}.gyro.h.json")))?;
        }
        Ok(())
    })?;
    info!("gyroflow: wrote {} flows", frames.len() - 1);
    Ok(())
}

pub fn gtflow(a: &GtflowArgs) -> Result<()> {
    let camera = load_camera(&a.camera)?;
    let sigma = a.sigma.resolve(camera.height);
    let params = MixtureParams::new(a.n_patches, camera.height)
        .with_sigma(sigma)
        .with_lambda(a.lambda)
        .with_smoothness(a.smoothness)
        .with_normalization(!a.no_normalize);
    info!(
        "gtflow: n_patches={} sigma={} ({sigma} px) lambda={} smoothness={} normalize={}",
        a.n_patches, a.sigma, a.lambda, a.smoothness, !a.no_normalize
    );
    let jobs: Vec<(String, PathBuf)> = match &a.manifest {
        Some(m) => {
            let loaded = Loaded::open(m)?;
            loaded
                .manifest
                .pairs
                .iter()
                .map(|p| (pair_key(p.a, p.b), loaded.path(&p.corrs)))
                .collect()
        }
        None => a
            .corrs
            .iter()
            .map(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("pair");
                let stem = name
                    .strip_suffix(".csv")
                    .unwrap_or(name)
                    .trim_end_matches(".corrs");
                (stem.to_string(), p.clone())
            })
            .collect(),
    };
    create_dir(&a.out)?;
    jobs.par_iter().try_for_each(|(key, path)| -> Result<()> {
        let cs = parse_correspondences(&read_text(path)?)
            .map_err(|e| format!("{e} (in {})", path.display()))?;
        let fm = estimate_mixture(&cs, &params).map_err(|e| format!("{e} (pair {key})"))?;
        let arr = mixture_homography_array(&fm, &cs, &camera.intrinsics)
            .map_err(|e| format!("{e} (pair {key})"))?;
        let flow = homography_array_to_flow(&arr, camera.width, camera.height)?;
        save_flo(&flow, a.out.join(format!("{key}.mix.flo")))?;
        write_homography_array(&arr, &a.out.join(format!("{key}.mix.h.json")))?;
        Ok(())
    })?;
    info!("gtflow: wrote {} flows", jobs.len());
    Ok(())
}

fn homography_pairs(
    loaded: &Loaded,
    pairs: &[(usize, &ManifestPair)],
) -> Result<Vec<(HomographyArray, HomographyArray)>> {
    pairs
        .par_iter()
        .map(|(_, p)| {
            let g = read_homography_array(&loaded.optional(
                p,
                &p.gyro_homographies,
                "gyro homographies",
            )?)?;
            let t = read_homography_array(&loaded.optional(
                p,
                &p.gt_homographies,
                "target homographies",
            )?)?;
            Ok((g, t))
        })
        .collect()
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let loaded = Loaded::open(&a.manifest)?;
    let pairs = loaded.selected(a.holdout_every, false);
    let data = homography_pairs(&loaded, &pairs)?;
    let cam = &loaded.manifest.camera;
    let corr = fit_correction(&data, cam.width, cam.height)?;
    info!(
        "fit: {} training pairs, bias ({}, {})",
        data.len(),
        corr.bias().x,
        corr.bias().y
    );
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    corr.save(&a.out)?;
    Ok(())
}

pub fn compensate(a: &CompensateArgs) -> Result<()> {
    let loaded = Loaded::open(&a.manifest)?;
    let corr = PatchCorrection::load(&a.correction)?;
    let cam = loaded.manifest.camera;
    create_dir(&a.out)?;
    loaded
        .manifest
        .pairs
        .par_iter()
        .try_for_each(|p| -> Result<()> {
            let g = read_homography_array(&loaded.optional(
                p,
                &p.gyro_homographies,
                "gyro homographies",
            )?)?;
            let flow = apply_correction(&corr, &g, cam.width, cam.height)?;
            save_flo(
                &flow,
                a.out.join(format!("{}.comp.flo", pair_key(p.a, p.b))),
            )?;
            Ok(())
        })?;
    info!("compensate: wrote {} flows", loaded.manifest.pairs.len());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let loaded = Loaded::open(&a.manifest)?;
    let cam = loaded.manifest.camera;
    let pairs = loaded.selected(a.holdout_every, true);
    let method = a.method.clone().unwrap_or_else(|| match a.source {
        FlowSource::Files => format!("files:{}", a.suffix),
        FlowSource::Zero => "identity".into(),
        FlowSource::Gyro => "gyro".into(),
        FlowSource::Gt => "gt".into(),
        FlowSource::Full => "full".into(),
    });
    let scores = pairs
        .par_iter()
        .map(|(_, p)| -> Result<PairScore> {
            let key = pair_key(p.a, p.b);
            let ann = AnnotationPair::load(&loaded.optional(p, &p.annotations, "annotations")?)?;
            let flow = match a.source {
                FlowSource::Zero => FlowField::zeros(cam.width, cam.height),
                FlowSource::Gyro => load_flo(loaded.path(&p.gyro_flow))?,
                FlowSource::Gt => load_flo(loaded.path(&p.gt_flow))?,
                FlowSource::Full => load_flo(loaded.path(&p.full_flow))?,
                FlowSource::Files => {
                    let dir = a
                        .flows
                        .as_ref()
                        .ok_or_else(|| cli_err("--flows is required".into()))?;
                    load_flo(dir.join(format!("{key}{}", a.suffix)))?
                }
            };
            let raw = geometry_distance(&flow, &ann).map_err(|e| format!("{e} (pair {key})"))?;
            Ok(PairScore::new(
                key,
                ann.category,
                raw,
                identity_distance(&ann),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_scores(method, scores)?;
    print!("{}", report.to_text());
    if let Some(out) = &a.out {
        write_text(out, &report.to_json())?;
    }
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    Ok(())
}
