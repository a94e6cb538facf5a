use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use sfm_core::dataset::{load_csv, prepare, Prepared};
use sfm_core::estimators::{greenwood_bands, km, SurvivalCurve};
use sfm_core::metrics::{evaluate_detailed, Evaluation};
use sfm_core::model::{Checkpoint, LogNormalModel, SfmModel};
use sfm_core::synth::generate;
use sfm_core::train::{train, History, TrainConfig};

use crate::config::{ModelKind, RunConfig};
use crate::error::CliError;
use crate::svg::{Plot, Series};

const BAND_ALPHA: f64 = 0.05;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// Sidecar file that records the generating oracle next to a simulated CSV.
pub fn oracle_sidecar(data: &Path) -> PathBuf {
    data.with_extension("oracle.json")
}

fn load_prepared(cfg: &RunConfig) -> Result<Prepared, CliError> {
    require(&cfg.paths.data, "data file")?;
    let raw = load_csv(&cfg.paths.data, &cfg.schema()?)?;
    Ok(prepare(&raw, &cfg.split)?)
}

fn load_checkpoint(cfg: &RunConfig, prepared: &Prepared) -> Result<Checkpoint, CliError> {
    let path = cfg.checkpoint_path();
    require(&path, "checkpoint")?;
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.input_dim() != prepared.test.width() {
        return Err(CliError::Model(format!(
            "checkpoint expects {} features, data has {}",
            ckpt.input_dim(),
            prepared.test.width()
        )));
    }
    Ok(ckpt)
}

fn evaluation(cfg: &RunConfig) -> Result<Evaluation, CliError> {
    let prepared = load_prepared(cfg)?;
    let ckpt = load_checkpoint(cfg, &prepared)?;
    Ok(evaluate_detailed(ckpt.sampler(), &prepared.test, cfg.eval.draws, cfg.seed)?)
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let (ds, spec) = generate(cfg.simulate.n, &cfg.oracle_spec())?;
    let mut w = create(&cfg.paths.data)?;
    ds.write_csv(&mut w)?;
    w.flush()?;
    let sidecar = oracle_sidecar(&cfg.paths.data);
    write_text(&sidecar, &(serde_json::to_string_pretty(&spec)? + "\n"))?;
    println!(
        "wrote {} rows ({:.1}% events) to {}",
        ds.len(),
        100.0 * ds.event_fraction(),
        cfg.paths.data.display()
    );
    Ok(())
}

fn history_csv(history: &History, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    history.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn train_model(cfg: &RunConfig) -> Result<(), CliError> {
    let prepared = load_prepared(cfg)?;
    let d = prepared.train.width();
    let tc: &TrainConfig = &cfg.train;
    let (ckpt, history, best) = match cfg.model {
        ModelKind::Sfm => {
            let model = SfmModel::init(cfg.sfm.clone(), d, cfg.seed)?;
            let out = train(model, &prepared.train, &prepared.valid, &cfg.loss, tc)?;
            (Checkpoint::Sfm(out.model), out.history, out.best_epoch)
        }
        ModelKind::Lognormal => {
            let model = LogNormalModel::init(cfg.sfm.clone(), d, cfg.seed)?;
            let out = train(model, &prepared.train, &prepared.valid, &cfg.loss, tc)?;
            (Checkpoint::Lognormal(out.model), out.history, out.best_epoch)
        }
    };
    let path = cfg.checkpoint_path();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    ckpt.save(&path)?;
    history_csv(&history, &cfg.paths.out_dir.join("history.csv"))?;
    info!("best epoch {best:?} of {}", history.records.len());
    println!(
        "trained {:?} for {} epochs; checkpoint {}",
        cfg.model,
        history.records.len(),
        path.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let report = evaluation(cfg)?.report;
    let path = cfg.paths.out_dir.join("eval_report.json");
    write_text(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!(
        "c_index {:.4} calibration_slope {:.4} mean_cov {:.4} coverage95 {:.4}",
        report.c_index, report.calibration_slope, report.mean_cov, report.coverage95
    );
    Ok(())
}

fn curve_csv(curve: &SurvivalCurve, path: &Path) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "time,survival,lower,upper")?;
    for (i, (t, s)) in curve.grid.iter().zip(&curve.survival).enumerate() {
        match &curve.bands {
            Some(b) => writeln!(w, "{t},{s},{},{}", b.lower[i], b.upper[i])?,
            None => writeln!(w, "{t},{s},,")?,
        }
    }
    w.flush()?;
    Ok(())
}

fn steps(curve: &SurvivalCurve) -> Vec<(f64, f64)> {
    std::iter::once((0.0, 1.0))
        .chain(curve.grid.iter().copied().zip(curve.survival.iter().copied()))
        .collect()
}

/// KM (with bands) and, when a model is available, DKM on the test split.
/// Without a checkpoint the KM curve covers every row of the data file.
pub fn curves(cfg: &RunConfig, svg: bool) -> Result<(), CliError> {
    let with_model = cfg.paths.checkpoint.is_some() || cfg.checkpoint_path().is_file();
    let (km_curve, dkm_curve) = if with_model {
        let ev = evaluation(cfg)?;
        (ev.km, Some(ev.dkm))
    } else {
        require(&cfg.paths.data, "data file")?;
        let raw = load_csv(&cfg.paths.data, &cfg.schema()?)?;
        (km(&raw.t, &raw.y)?, None)
    };
    let km_curve = greenwood_bands(&km_curve, BAND_ALPHA)?;
    let out = &cfg.paths.out_dir;
    curve_csv(&km_curve, &out.join("km.csv"))?;
    if let Some(d) = &dkm_curve {
        curve_csv(d, &out.join("dkm.csv"))?;
    }
    if svg {
        let mut series = vec![Series {
            label: "KM",
            points: steps(&km_curve),
            step: true,
            dashed: false,
        }];
        if let Some(b) = &km_curve.bands {
            for (label, band) in [("KM 95% band", &b.lower), ("", &b.upper)] {
                let mut pts = vec![(0.0, 1.0)];
                pts.extend(km_curve.grid.iter().copied().zip(band.iter().copied()));
                series.push(Series {
                    label,
                    points: pts,
                    step: true,
                    dashed: true,
                });
            }
        }
        if let Some(d) = &dkm_curve {
            series.push(Series {
                label: "DKM",
                points: steps(d),
                step: true,
                dashed: false,
            });
        }
        let plot = Plot {
            title: "Survival curves",
            x_label: "time",
            y_label: "survival",
            x_max: km_curve.grid.last().copied().unwrap_or(1.0),
            series,
        };
        write_text(&out.join("curves.svg"), &plot.render())?;
    }
    println!(
        "wrote {} curve{} to {}",
        if with_model { "KM and DKM" } else { "KM" },
        if with_model { "s" } else { "" },
        out.display()
    );
    Ok(())
}

pub fn calibration(cfg: &RunConfig, svg: bool) -> Result<(), CliError> {
    let report = evaluation(cfg)?.report;
    let out = &cfg.paths.out_dir;
    let mut w = create(&out.join("calibration.csv"))?;
    writeln!(w, "km_cdf,dkm_cdf")?;
    for (x, y) in &report.calibration_points {
        writeln!(w, "{x},{y}")?;
    }
    w.flush()?;
    if svg {
        let plot = Plot {
            title: "Calibration",
            x_label: "1 - S_KM",
            y_label: "1 - S_DKM",
            x_max: 1.0,
            series: vec![
                Series {
                    label: "model",
                    points: report.calibration_points.clone(),
                    step: false,
                    dashed: false,
                },
                Series {
                    label: "unit slope",
                    points: vec![(0.0, 0.0), (1.0, 1.0)],
                    step: false,
                    dashed: true,
                },
            ],
        };
        write_text(&out.join("calibration.svg"), &plot.render())?;
    }
    println!("calibration_slope {}", report.calibration_slope);
    Ok(())
}
