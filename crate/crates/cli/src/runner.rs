//! Mode dispatch: load a validated config, run the requested pipeline, write
//! the artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use aniso_tik_core::denoise::{denoise, snr_db};
use aniso_tik_core::fwi::continuation_driver;
use aniso_tik_core::helmholtz::synthesize_data;
use aniso_tik_core::synth::{
    add_noise_to_snr, slowness_squared_to_velocity, synth_model, velocity_to_slowness_squared,
};
use aniso_tik_core::{grid::ScalarField2D, io, CoreError};

use crate::config::{Mode, ModelUnits, RunConfig};
use crate::error::CliError;
use crate::selftest;

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Loads, validates, and runs a config file.
pub fn run_file(config_path: &Path, overrides: &Overrides) -> Result<(), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Core(CoreError::io(config_path, e)))?;
    let base_dir = config_path.parent().map(Path::to_path_buf);
    let cfg = RunConfig::parse(&text, base_dir.as_deref())?;
    run(&cfg, base_dir.as_deref(), overrides)
}

pub fn run(cfg: &RunConfig, base_dir: Option<&Path>, overrides: &Overrides) -> Result<(), CliError> {
    let seed = overrides.seed.unwrap_or(cfg.seed);
    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| {
            cfg.out_dir
                .as_ref()
                .map(|d| RunConfig::resolve_path(base_dir, d))
        })
        .unwrap_or_else(|| PathBuf::from("."));
    if !out_dir.exists() {
        fs::create_dir_all(&out_dir).map_err(|e| CliError::Core(CoreError::io(&out_dir, e)))?;
    }
    let resolve = |p: &Path| RunConfig::resolve_path(base_dir, p);

    match cfg.mode {
        Mode::Selftest => selftest::run_all(),
        Mode::Synth => {
            let s = cfg.synth.as_ref().expect("validated");
            let spec = s.to_core()?;
            let clean = synth_model(&spec)?;
            io::write_agf1_real(out_dir.join(&s.out), &clean)?;
            println!("synth: wrote {}", out_dir.join(&s.out).display());
            if let (Some(snr), Some(noisy_path)) = (s.noise_snr_db, &s.out_noisy) {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let noisy = add_noise_to_snr(&clean, snr, &mut rng);
                io::write_agf1_real(out_dir.join(noisy_path), &noisy)?;
                println!(
                    "synth: wrote {} at {snr} dB input SNR (seed {seed})",
                    out_dir.join(noisy_path).display()
                );
            }
            Ok(())
        }
        Mode::Forward => {
            let f = cfg.forward.as_ref().expect("validated");
            let pml = f.pml.to_core()?;
            let model = read_model(&resolve(&f.model_true), f.model_units)?;
            let padded = pad_slowness(&model, pml.npml);
            let acq_file = io::read_acquisition(resolve(&f.acquisition))?;
            let acq = acq_file.to_grid(padded.grid(), &pml)?;
            let table = synthesize_data(&padded, &acq, &pml, f.f_peak_hz)?;
            io::write_adt1(out_dir.join(&f.out_data), &table)?;
            println!(
                "forward: wrote {} ({} freq x {} src x {} rec)",
                out_dir.join(&f.out_data).display(),
                table.n_freq,
                table.n_src,
                table.n_rec
            );
            Ok(())
        }
        Mode::Denoise => {
            let d = cfg.denoise.as_ref().expect("validated");
            let core_cfg = d.to_core()?;
            let input = io::read_agf1_real(resolve(&d.input))?;
            let (m, p, mut report) = denoise(&input, &core_cfg)?;
            if let Some(ref_path) = &d.reference {
                let reference = io::read_agf1_real(resolve(ref_path))?;
                if reference.grid() != input.grid() {
                    return Err(CliError::config(format!(
                        "denoise.reference grid {:?} does not match input {:?}",
                        reference.grid(),
                        input.grid()
                    )));
                }
                report.snr_db = snr_db(&reference, &m);
            }
            io::write_agf1_real(out_dir.join("denoised.agf"), &m)?;
            io::write_agf1_real(out_dir.join("theta.agf"), p.theta())?;
            io::write_agf1_real(out_dir.join("sigma.agf"), p.sigma())?;
            io::write_report_csv(
                out_dir.join("report.csv"),
                &[
                    ("snr_db", report.snr_db),
                    ("reg_value_final", report.reg_value_final),
                    ("alpha_used", report.alpha_used),
                    ("residual_norm", report.residual_norm),
                    ("iterations_run", report.iterations_run as f64),
                ],
            )?;
            println!(
                "denoise: alpha {:.6e}, residual {:.6e}, penalty {:.6e}, snr {} dB -> {}",
                report.alpha_used,
                report.residual_norm,
                report.reg_value_final,
                report.snr_db,
                out_dir.join("denoised.agf").display()
            );
            Ok(())
        }
        Mode::Fwi => {
            let f = cfg.fwi.as_ref().expect("validated");
            let core_cfg = f.to_core()?;
            let pad = core_cfg.pml.npml;
            let m0 = pad_slowness(&read_model(&resolve(&f.model_init), f.model_units)?, pad);
            let m_true = match &f.model_true {
                Some(p) => Some(pad_slowness(&read_model(&resolve(p), f.model_units)?, pad)),
                None => None,
            };
            let acq_file = io::read_acquisition(resolve(&f.acquisition))?;
            let acq = acq_file.to_grid(m0.grid(), &core_cfg.pml)?;
            let data = io::read_adt1(resolve(&f.data))?;

            let (m_final, state) = continuation_driver(
                &m0,
                &acq,
                &data,
                &core_cfg,
                m_true.as_ref(),
                |cycle, s| {
                    let snapshot = s.m.crop(pad)?;
                    io::write_agf1_real(out_dir.join(format!("m_cycle{cycle}.agf")), &snapshot)
                },
            )?;

            let m_phys = m_final.crop(pad)?;
            io::write_agf1_real(out_dir.join("m_final.agf"), &m_phys)?;
            io::write_agf1_real(
                out_dir.join("v_final.agf"),
                &slowness_squared_to_velocity(&m_phys)?,
            )?;
            io::write_agf1_real(out_dir.join("theta.agf"), &state.p.theta().crop(pad)?)?;
            io::write_agf1_real(out_dir.join("sigma.agf"), &state.p.sigma().crop(pad)?)?;
            io::write_history_csv(out_dir.join("history.csv"), &state.history)?;
            let last = state.history.last().expect("at least one iteration");
            println!(
                "fwi: {} iterations, final relative error {:.4}%, wrote {}",
                state.history.len(),
                last.relative_error,
                out_dir.join("m_final.agf").display()
            );
            Ok(())
        }
    }
}

fn read_model(path: &Path, units: ModelUnits) -> Result<ScalarField2D, CliError> {
    let raw = io::read_agf1_real(path)?;
    match units {
        ModelUnits::Velocity => Ok(velocity_to_slowness_squared(&raw)?),
        ModelUnits::SlownessSquared => Ok(raw),
    }
}

fn pad_slowness(m: &ScalarField2D, pad: usize) -> ScalarField2D {
    m.pad_edge(pad)
}
