//! Monte Carlo drivers for every figure and the end-to-end pipeline.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use super::config::{ExperimentConfig, ExperimentId, Variant};
use super::metrics::{matched_errors_deg, nmse_db, strong_lobes, MetricSeries, Reduce};
use super::runner::{run_trials, trial_rng};
use crate::array::{dl_channel, generate_scene, generate_scene_with_pinned, radar_channel, NoiseConfig, Scene};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::stage1::{fmt_f64, run_stage1, AngleGrid, Stage1Config, Stage1Report};
use crate::stage2::{
    beampattern, design_hybrid, dl_se, dl_se_hybrid, fd_zf_precoder, h_tilde, precoder_pattern, zf_pair,
    HybridVariant,
};
use crate::stage3::{simulate_pri, simulate_pri_from_belief, write_pri_csv, DriftModel, FramePlan, PriConfig, PriOutcome};

/// Pinned angles keep other targets at least this far away.
const PINNED_GAP_DEG: f64 = 2.0;

const STREAM_SCENE: u8 = 0;
const STREAM_RUN: u8 = 1;
const STREAM_DRIFT: u8 = 2;

/// Results of one experiment: curves, raw tables and scalar summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub id: ExperimentId,
    pub series: Vec<MetricSeries>,
    /// `(file name, CSV contents)`.
    pub tables: Vec<(String, String)>,
    pub summary: Vec<(String, f64)>,
}

impl ExperimentOutput {
    pub fn summary_value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    pub fn series_named(&self, metric: &str) -> Option<&MetricSeries> {
        self.series.iter().find(|s| s.metric_name == metric)
    }

    pub fn table(&self, name: &str) -> Option<&str> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Writes every table into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, body) in &self.tables {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            paths.push(p);
        }
        Ok(paths)
    }
}

fn header(cfg: &ExperimentConfig) -> Vec<String> {
    vec![
        format!("experiment={} seed={} trials={}", cfg.experiment_id, cfg.seed, cfg.trials),
        format!("snr_db = 10 log10(P / sigma^2) on every link, P = {}, rho = P", cfg.power),
    ]
}

fn noise(cfg: &ExperimentConfig, snr_db: f64) -> NoiseConfig {
    NoiseConfig::from_snr_db(snr_db, cfg.power)
}

fn stage1_config(cfg: &ExperimentConfig, snr_db: f64, t_slots: usize) -> Stage1Config {
    Stage1Config {
        t_slots,
        power: cfg.power,
        noise: noise(cfg, snr_db),
        grid: AngleGrid::new(-90.0, 90.0, cfg.search_step_deg),
    }
}

/// Draws the trial's scene with `k` targets.
pub fn draw_scene(cfg: &ExperimentConfig, k: usize, trial: usize) -> Result<Scene> {
    let p = cfg.scene_params;
    let mut rng = trial_rng(cfg.seed, trial, STREAM_SCENE);
    for _ in 0..MAX_SCENE_DRAWS {
        let scene = if cfg.pinned_angles_deg.is_empty() {
            generate_scene(k, p.l, p.grid_slices, &mut rng)?
        } else {
            generate_scene_with_pinned(k, p.l, p.grid_slices, &cfg.pinned_angles_deg, PINNED_GAP_DEG, &mut rng)?
        };
        if min_gap(&scene.target_angles_deg) >= cfg.min_separation_deg {
            return Ok(scene);
        }
    }
    Err(Error::InvalidConfig(format!(
        "no scene with {k} targets {} deg apart in {MAX_SCENE_DRAWS} draws",
        cfg.min_separation_deg
    )))
}

const MAX_SCENE_DRAWS: usize = 10_000;

fn min_gap(angles: &[f64]) -> f64 {
    let mut a = angles.to_vec();
    a.sort_by(f64::total_cmp);
    a.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn pri_config(cfg: &ExperimentConfig, plan: FramePlan, snr_db: f64, delta_max: f64) -> PriConfig {
    PriConfig {
        plan,
        noise: noise(cfg, snr_db),
        power: cfg.power,
        delta_max,
        grid_step: cfg.track_step_deg,
        sync_len: cfg.sync_len,
        variant: HybridVariant::HbfOpt,
    }
}

fn hybrid(v: Variant) -> Option<HybridVariant> {
    match v {
        Variant::FdZf => None,
        Variant::HbfOpt => Some(HybridVariant::HbfOpt),
        Variant::HbfNull => Some(HybridVariant::HbfNull),
    }
}

/// Builds a series from `results[trial][point][label]` and rejects sweep
/// points where more than half of the trials failed.
fn build_series(
    cfg: &ExperimentConfig,
    metric: &str,
    x_name: &str,
    xs: Vec<f64>,
    labels: &[String],
    results: &[Vec<Vec<Option<f64>>>],
    reduce: Reduce,
) -> Result<MetricSeries> {
    let mut series = MetricSeries::new(metric, x_name, xs);
    for (li, label) in labels.iter().enumerate() {
        let samples: Vec<Vec<Option<f64>>> = (0..series.x_values.len())
            .map(|p| results.iter().map(|trial| trial[p][li]).collect())
            .collect();
        series.push(label, &samples, reduce);
    }
    for v in &series.variants {
        for s in &v.stats {
            if 2 * s.failures > s.count + s.failures {
                return Err(Error::TooManyFailures {
                    experiment: format!("{} {}", cfg.experiment_id, v.name),
                    failed: s.failures,
                    total: s.count + s.failures,
                });
            }
        }
    }
    Ok(series)
}

/// Runs one figure experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.experiment_id {
        ExperimentId::Fig4 | ExperimentId::Fig5 => target_search_figure(cfg),
        ExperimentId::Fig6 => nmse_figure(cfg),
        ExperimentId::Fig7 => dl_se_vs_snr(cfg),
        ExperimentId::Fig8 => beampattern_figure(cfg),
        ExperimentId::Fig9 => dl_se_vs_k(cfg),
        ExperimentId::Fig10 => ul_se_vs_snr(cfg),
        ExperimentId::Fig11 => ul_se_vs_overlap(cfg),
        ExperimentId::Fig12 => tracking_realization(cfg),
        ExperimentId::Fig13 => tracking_rmse(cfg),
        ExperimentId::Pipeline => Err(Error::InvalidConfig("use run_pipeline for the pipeline experiment".into())),
    }
}

// ---------------------------------------------------------------- target search

/// Per-target comparison of a target search run with its scene.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedEstimate {
    pub true_angle_deg: f64,
    pub est_angle_deg: f64,
    pub true_gain: Complex64,
    pub est_gain: Complex64,
}

fn sorted_pairs(t_angles: &[f64], t_gains: &[Complex64], e_angles: &[f64], e_gains: &[Complex64]) -> Vec<MatchedEstimate> {
    let order = |a: &[f64]| {
        let mut idx: Vec<usize> = (0..a.len()).collect();
        idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
        idx
    };
    order(t_angles)
        .into_iter()
        .zip(order(e_angles))
        .map(|(t, e)| MatchedEstimate {
            true_angle_deg: t_angles[t],
            est_angle_deg: e_angles[e],
            true_gain: t_gains[t],
            est_gain: e_gains[e],
        })
        .collect()
}

/// BS-side and UE-side estimates matched to the truth by sorted angle.
pub fn match_stage1(scene: &Scene, rep: &Stage1Report) -> (Vec<MatchedEstimate>, Vec<MatchedEstimate>) {
    (
        sorted_pairs(&scene.target_angles_deg, &scene.target_gains, &rep.bs_angles_deg, &rep.bs_gains),
        sorted_pairs(&scene.ue_aoas_deg, &scene.comm_gains, &rep.ue_angles_deg, &rep.comm_gains),
    )
}

fn target_search_figure(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let snr = cfg.snr_grid_db[0];
    let k = cfg.scene_params.k;
    let runs = run_trials(cfg.trials, |t| -> Result<(Scene, Result<Stage1Report>)> {
        let scene = draw_scene(cfg, k, t)?;
        let rep = run_stage1(&scene, &cfg.arrays, &stage1_config(cfg, snr, cfg.pilot_length), &mut trial_rng(cfg.seed, t, STREAM_RUN));
        Ok((scene, rep))
    });

    let tag = cfg.experiment_id.tag();
    let mut table = String::new();
    for c in header(cfg) {
        let _ = writeln!(table, "# {c}");
    }
    table.push_str("trial,side,index,true_angle_deg,est_angle_deg,err_deg,true_gain_re,true_gain_im,est_gain_re,est_gain_im\n");
    let mut results = Vec::with_capacity(cfg.trials);
    let mut spectrum_csv = None;
    for (t, run) in runs.into_iter().enumerate() {
        let (scene, rep) = run?;
        let Ok(rep) = rep else {
            results.push(vec![vec![None, None, Some(0.0)]]);
            continue;
        };
        let (bs, ue) = match_stage1(&scene, &rep);
        for (side, rows) in [("bs", &bs), ("ue", &ue)] {
            for (i, m) in rows.iter().enumerate() {
                let _ = writeln!(
                    table,
                    "{t},{side},{i},{},{},{},{},{},{},{}",
                    fmt_f64(m.true_angle_deg),
                    fmt_f64(m.est_angle_deg),
                    fmt_f64(m.est_angle_deg - m.true_angle_deg),
                    fmt_f64(m.true_gain.re),
                    fmt_f64(m.true_gain.im),
                    fmt_f64(m.est_gain.re),
                    fmt_f64(m.est_gain.im)
                );
            }
        }
        let mean_abs = |r: &[MatchedEstimate]| r.iter().map(|m| (m.est_angle_deg - m.true_angle_deg).abs()).sum::<f64>() / r.len() as f64;
        let resolved = bs.iter().all(|m| (m.est_angle_deg - m.true_angle_deg).abs() <= 1.0);
        results.push(vec![vec![Some(mean_abs(&bs)), Some(mean_abs(&ue)), Some(if resolved { 1.0 } else { 0.0 })]]);
        if spectrum_csv.is_none() {
            let mut buf = Vec::new();
            rep.spectrum.write_csv(&mut buf)?;
            let mut s = header(cfg).iter().map(|c| format!("# {c}\n")).collect::<String>();
            s.push_str(&String::from_utf8_lossy(&buf));
            spectrum_csv = Some(s);
        }
    }
    let labels = ["bs_abs_err_deg".to_string(), "ue_abs_err_deg".to_string(), "resolved".to_string()];
    // failed runs count as unresolved, so the third label never has failures
    let series = build_series(cfg, "abs_err_deg", "snr_db", vec![snr], &labels, &results, Reduce::Mean)?;
    let resolved = series.variants[2].stats[0].mean;
    let failures = series.variants[0].stats[0].failures as f64;
    let mut tables = vec![(format!("{tag}.csv"), table), (format!("{tag}_summary.csv"), series.to_csv(&header(cfg)))];
    if let Some(s) = spectrum_csv {
        tables.push((format!("{tag}_spectrum.csv"), s));
    }
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        summary: vec![("resolved_rate".into(), resolved), ("failed_trials".into(), failures)],
        series: vec![series],
        tables,
    })
}

// ---------------------------------------------------------------- NMSE

/// Radar and comm channel NMSE in dB for one target search run.
pub fn stage1_nmse(scene: &Scene, rep: &Stage1Report, cfg: &ExperimentConfig) -> Result<(f64, f64)> {
    let radar = nmse_db(&rep.radar_channel(&cfg.arrays), &radar_channel(scene, &cfg.arrays))?;
    let comm = nmse_db(&rep.comm_channel(&cfg.arrays), &dl_channel(scene, &cfg.arrays))?;
    Ok((radar, comm))
}

fn nmse_point(cfg: &ExperimentConfig, scene: &Scene, snr: f64, t_slots: usize, trial: usize) -> Vec<Option<f64>> {
    let rep = run_stage1(scene, &cfg.arrays, &stage1_config(cfg, snr, t_slots), &mut trial_rng(cfg.seed, trial, STREAM_RUN));
    match rep.and_then(|r| stage1_nmse(scene, &r, cfg)) {
        Ok((r, c)) => vec![Some(r), Some(c)],
        Err(_) => vec![None, None],
    }
}

fn nmse_figure(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k = cfg.scene_params.k;
    let runs = run_trials(cfg.trials, |t| -> Result<(Vec<Vec<Option<f64>>>, Vec<Vec<Option<f64>>>)> {
        let scene = draw_scene(cfg, k, t)?;
        let by_snr = cfg.snr_grid_db.iter().map(|&s| nmse_point(cfg, &scene, s, cfg.pilot_length, t)).collect();
        let by_t = cfg.pilot_length_grid.iter().map(|&n| nmse_point(cfg, &scene, cfg.fixed_snr_db, n, t)).collect();
        Ok((by_snr, by_t))
    });
    let (by_snr, by_t): (Vec<_>, Vec<_>) = runs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    let labels = ["radar".to_string(), "comm".to_string()];
    let snr = build_series(cfg, "nmse_db", "snr_db", cfg.snr_grid_db.clone(), &labels, &by_snr, Reduce::Mean)?;
    let xs_t = cfg.pilot_length_grid.iter().map(|&n| n as f64).collect();
    let pilot = build_series(cfg, "nmse_db", "t_slots", xs_t, &labels, &by_t, Reduce::Mean)?;
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![
            ("fig6.csv".into(), snr.to_csv(&header(cfg))),
            ("fig6_pilot.csv".into(), pilot.to_csv(&header(cfg))),
        ],
        series: vec![snr, pilot],
        summary: Vec::new(),
    })
}

// ---------------------------------------------------------------- DL spectral efficiency

fn dl_labels(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out: Vec<String> = cfg.variant_set.iter().map(|v| format!("{}_perfect", v.tag())).collect();
    out.extend(cfg.variant_set.iter().map(|v| format!("{}_estimated", v.tag())));
    out
}

/// DL SE of every variant when the BS and UE believe `belief` and the true
/// channel is that of `scene`. `belief` lists comm paths first.
pub fn dl_se_for_belief(
    cfg: &ExperimentConfig,
    scene: &Scene,
    belief: &Scene,
    sigma2: f64,
) -> Result<Vec<f64>> {
    let a = &cfg.arrays;
    let h = dl_channel(scene, a);
    let ht = h_tilde(&belief.comm_gains, belief.comm_aods_deg(), a.n_tx, a.spacing);
    let zf = zf_pair(&ht, &a.rx_matrix(&belief.ue_aoas_deg))?;
    cfg.variant_set
        .iter()
        .map(|&v| {
            let rep = match hybrid(v) {
                None => {
                    let f = fd_zf_precoder(&zf.f_bs, cfg.power);
                    dl_se(&h, &zf.w_ue, &f, &CMatrix::zeros(a.n_tx, 0), cfg.power, sigma2)?
                }
                Some(hv) => {
                    let (bf, _) = design_hybrid(&belief.target_angles_deg, &belief.comm_gains, a.n_tx, a.spacing, hv, cfg.power)?;
                    dl_se_hybrid(&h, &zf.w_ue, &bf, cfg.power, sigma2)?
                }
            };
            Ok(rep.se_bits_per_hz)
        })
        .collect()
}

fn dl_point(cfg: &ExperimentConfig, scene: &Scene, snr: f64, trial: usize) -> Vec<Option<f64>> {
    let sigma2 = noise(cfg, snr).sigma2_dl;
    let n = cfg.variant_set.len();
    let mut out: Vec<Option<f64>> = match dl_se_for_belief(cfg, scene, scene, sigma2) {
        Ok(v) => v.into_iter().map(Some).collect(),
        Err(_) => vec![None; n],
    };
    let est = run_stage1(scene, &cfg.arrays, &stage1_config(cfg, snr, cfg.pilot_length), &mut trial_rng(cfg.seed, trial, STREAM_RUN))
        .and_then(|r| dl_se_for_belief(cfg, scene, &r.estimated_scene(), sigma2));
    match est {
        Ok(v) => out.extend(v.into_iter().map(Some)),
        Err(_) => out.extend(std::iter::repeat_n(None, n)),
    }
    out
}

fn dl_se_vs_snr(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k = cfg.scene_params.k;
    let runs = run_trials(cfg.trials, |t| -> Result<Vec<Vec<Option<f64>>>> {
        let scene = draw_scene(cfg, k, t)?;
        Ok(cfg.snr_grid_db.iter().map(|&s| dl_point(cfg, &scene, s, t)).collect())
    });
    let results = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let series = build_series(cfg, "se_bits_hz", "snr_db", cfg.snr_grid_db.clone(), &dl_labels(cfg), &results, Reduce::Mean)?;
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![("fig7.csv".into(), series.to_csv(&header(cfg)))],
        series: vec![series],
        summary: Vec::new(),
    })
}

fn dl_se_vs_k(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k_max = cfg.k_grid.iter().copied().max().unwrap_or(cfg.scene_params.k);
    let runs = run_trials(cfg.trials, |t| -> Result<Vec<Vec<Option<f64>>>> {
        // nested scenes: every K reuses the first K targets of one draw
        let full = draw_scene(cfg, k_max, t)?;
        cfg.k_grid
            .iter()
            .map(|&k| Ok(dl_point(cfg, &full.truncated(k)?, cfg.fixed_snr_db, t)))
            .collect()
    });
    let results = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let xs = cfg.k_grid.iter().map(|&k| k as f64).collect();
    let series = build_series(cfg, "se_bits_hz", "k_targets", xs, &dl_labels(cfg), &results, Reduce::Mean)?;
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![("fig9.csv".into(), series.to_csv(&header(cfg)))],
        series: vec![series],
        summary: Vec::new(),
    })
}

/// Beampatterns of the DFRC hybrid design and of the FD-ZF precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct BeampatternData {
    pub scene: Scene,
    pub angles_deg: Vec<f64>,
    pub dfrc: Vec<f64>,
    pub zf: Vec<f64>,
}

/// Perfect-CSI patterns for trial 0's scene.
pub fn beampatterns(cfg: &ExperimentConfig) -> Result<BeampatternData> {
    let a = &cfg.arrays;
    let scene = draw_scene(cfg, cfg.scene_params.k, 0)?;
    let grid = AngleGrid::new(-90.0, 90.0, cfg.search_step_deg);
    let variant = cfg.variant_set.iter().find_map(|&v| hybrid(v)).unwrap_or(HybridVariant::HbfOpt);
    let (bf, f_bs) = design_hybrid(&scene.target_angles_deg, &scene.comm_gains, a.n_tx, a.spacing, variant, cfg.power)?;
    Ok(BeampatternData {
        angles_deg: grid.points(),
        dfrc: beampattern(&bf.f_rf, cfg.power, &grid, a.spacing),
        zf: precoder_pattern(&fd_zf_precoder(&f_bs, cfg.power), &grid, a.spacing),
        scene,
    })
}

fn beampattern_figure(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let d = beampatterns(cfg)?;
    let mut table = header(cfg).iter().map(|c| format!("# {c}\n")).collect::<String>();
    table.push_str("angle_deg,variant,d_linear,d_db\n");
    for (name, pat) in [("dfrc", &d.dfrc), ("fd_zf", &d.zf)] {
        for (a, v) in d.angles_deg.iter().zip(pat.iter()) {
            let _ = writeln!(table, "{},{name},{},{}", fmt_f64(*a), fmt_f64(*v), fmt_f64(10.0 * v.log10()));
        }
    }
    let lobes = strong_lobes(&d.angles_deg, &d.dfrc, 3.0);
    let zf_lobes = strong_lobes(&d.angles_deg, &d.zf, 3.0);
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![("fig8.csv".into(), table)],
        series: Vec::new(),
        summary: vec![("dfrc_strong_lobes".into(), lobes.len() as f64), ("zf_strong_lobes".into(), zf_lobes.len() as f64)],
    })
}

// ---------------------------------------------------------------- tracking PRI

fn pri_trial(
    cfg: &ExperimentConfig,
    scene: &Scene,
    plan: FramePlan,
    snr: f64,
    delta_max: f64,
    trial: usize,
) -> Result<PriOutcome> {
    let drift = DriftModel::sample(scene.k(), scene.l(), delta_max, &mut trial_rng(cfg.seed, trial, STREAM_DRIFT));
    simulate_pri(scene, &cfg.arrays, &drift, &pri_config(cfg, plan, snr, delta_max), &mut trial_rng(cfg.seed, trial, STREAM_RUN))
}

fn ul_pair(out: Result<PriOutcome>) -> Vec<Option<f64>> {
    match out {
        Ok(o) => vec![Some(o.sic.ul_se), Some(o.no_sic.ul_se)],
        Err(_) => vec![None, None],
    }
}

fn ul_se_vs_snr(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k = cfg.scene_params.k;
    let runs = run_trials(cfg.trials, |t| -> Result<Vec<Vec<Option<f64>>>> {
        let scene = draw_scene(cfg, k, t)?;
        Ok(cfg.snr_grid_db.iter().map(|&s| ul_pair(pri_trial(cfg, &scene, cfg.frame, s, cfg.delta_max_deg, t))).collect())
    });
    let results = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let labels = ["sic".to_string(), "no_sic".to_string()];
    let series = build_series(cfg, "se_bits_hz", "snr_db", cfg.snr_grid_db.clone(), &labels, &results, Reduce::Mean)?;
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![("fig10.csv".into(), series.to_csv(&header(cfg)))],
        series: vec![series],
        summary: Vec::new(),
    })
}

/// Frame with the configured lengths and `ratio * T_c` overlapping slots.
pub fn plan_for_ratio(cfg: &ExperimentConfig, ratio: f64) -> Result<FramePlan> {
    let plan = FramePlan { guard: cfg.frame.guard, ..FramePlan::with_ratio(cfg.frame.t_radar, cfg.frame.t_ul, ratio)? };
    plan.validate()?;
    Ok(plan)
}

fn ul_se_vs_overlap(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k = cfg.scene_params.k;
    let plans = cfg.overlap_ratio_grid.iter().map(|&r| plan_for_ratio(cfg, r)).collect::<Result<Vec<_>>>()?;
    let runs = run_trials(cfg.trials, |t| -> Result<Vec<Vec<Option<f64>>>> {
        let scene = draw_scene(cfg, k, t)?;
        Ok(plans.iter().map(|&p| ul_pair(pri_trial(cfg, &scene, p, cfg.fixed_snr_db, cfg.delta_max_deg, t))).collect())
    });
    let results = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let labels = ["sic".to_string(), "no_sic".to_string()];
    let series =
        build_series(cfg, "se_bits_hz", "overlap_ratio", cfg.overlap_ratio_grid.clone(), &labels, &results, Reduce::Mean)?;
    let summary = cfg
        .overlap_ratio_grid
        .iter()
        .zip(series.variants[0].stats.iter().zip(&series.variants[1].stats))
        .map(|(r, (a, b))| (format!("sic_gain@{r}"), a.mean - b.mean))
        .collect();
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![("fig11.csv".into(), series.to_csv(&header(cfg)))],
        series: vec![series],
        summary,
    })
}

fn sq_errors(tracked: &[f64], truth: &[f64]) -> Vec<Option<f64>> {
    tracked.iter().zip(truth).map(|(a, b)| Some((a - b).powi(2))).collect()
}

fn tracking_realization(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k = cfg.scene_params.k;
    let l = cfg.scene_params.l;
    let runs = run_trials(cfg.trials, |t| -> Result<Option<PriOutcome>> {
        let scene = draw_scene(cfg, k, t)?;
        Ok(pri_trial(cfg, &scene, cfg.frame, cfg.fixed_snr_db, cfg.delta_max_deg, t).ok())
    });
    let outcomes = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let rows: Vec<(usize, &[f64], &crate::stage3::Stage3Report)> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(t, o)| o.as_ref().map(|o| (t, o.truth.target_angles_deg.as_slice(), &o.sic)))
        .collect();
    let mut buf = header(cfg).iter().map(|c| format!("# {c}\n")).collect::<String>().into_bytes();
    write_pri_csv(&mut buf, &rows)?;
    let bs_table = String::from_utf8_lossy(&buf).into_owned();

    let mut ue_table = header(cfg).iter().map(|c| format!("# {c}\n")).collect::<String>();
    ue_table.push_str("pri_index,path_index,true_angle,tracked_angle,err_deg\n");
    for (t, o) in outcomes.iter().enumerate() {
        let Some(o) = o else { continue };
        for (i, (tr, e)) in o.truth.ue_aoas_deg.iter().zip(&o.ue_tracked.angles_deg).enumerate() {
            let _ = writeln!(ue_table, "{t},{i},{},{},{}", fmt_f64(*tr), fmt_f64(*e), fmt_f64(e - tr));
        }
    }

    // per-target RMSE over the trials
    let bs: Vec<Vec<Vec<Option<f64>>>> = outcomes
        .iter()
        .map(|o| match o {
            Some(o) => sq_errors(&o.sic.tracked_angles, &o.truth.target_angles_deg).into_iter().map(|e| vec![e]).collect(),
            None => vec![vec![None]; k],
        })
        .collect();
    let ue: Vec<Vec<Vec<Option<f64>>>> = outcomes
        .iter()
        .map(|o| match o {
            Some(o) => sq_errors(&o.ue_tracked.angles_deg, &o.truth.ue_aoas_deg).into_iter().map(|e| vec![e]).collect(),
            None => vec![vec![None]; l],
        })
        .collect();
    let bs_series =
        build_series(cfg, "rmse_deg", "target_index", (0..k).map(|i| i as f64).collect(), &["bs".into()], &bs, Reduce::RootMean)?;
    let ue_series =
        build_series(cfg, "rmse_deg", "path_index", (0..l).map(|i| i as f64).collect(), &["ue".into()], &ue, Reduce::RootMean)?;
    let worst = bs_series.variants[0].stats.iter().map(|s| s.mean).fold(0.0, f64::max);
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![
            ("fig12.csv".into(), bs_table),
            ("fig12_ue.csv".into(), ue_table),
            ("fig12_rmse.csv".into(), bs_series.to_csv(&header(cfg))),
            ("fig12_rmse_ue.csv".into(), ue_series.to_csv(&header(cfg))),
        ],
        series: vec![bs_series, ue_series],
        summary: vec![("max_target_rmse_deg".into(), worst)],
    })
}

fn mean_sq(tracked: &[f64], truth: &[f64]) -> f64 {
    tracked.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64
}

fn tracking_rmse(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let k = cfg.scene_params.k;
    let runs = run_trials(cfg.trials, |t| -> Result<Vec<Vec<Option<f64>>>> {
        let scene = draw_scene(cfg, k, t)?;
        Ok(cfg
            .snr_grid_db
            .iter()
            .map(|&s| {
                let mut bs = Vec::new();
                let mut ue = Vec::new();
                for &d in &cfg.delta_max_grid {
                    match pri_trial(cfg, &scene, cfg.frame, s, d, t) {
                        Ok(o) => {
                            bs.push(Some(mean_sq(&o.sic.tracked_angles, &o.truth.target_angles_deg)));
                            ue.push(Some(mean_sq(&o.ue_tracked.angles_deg, &o.truth.ue_aoas_deg)));
                        }
                        Err(_) => {
                            bs.push(None);
                            ue.push(None);
                        }
                    }
                }
                bs.extend(ue);
                bs
            })
            .collect())
    });
    let results = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut labels: Vec<String> = cfg.delta_max_grid.iter().map(|d| format!("bs_dmax{d}")).collect();
    labels.extend(cfg.delta_max_grid.iter().map(|d| format!("ue_dmax{d}")));
    let series = build_series(cfg, "rmse_deg", "snr_db", cfg.snr_grid_db.clone(), &labels, &results, Reduce::RootMean)?;
    Ok(ExperimentOutput {
        id: cfg.experiment_id,
        tables: vec![("fig13.csv".into(), series.to_csv(&header(cfg)))],
        series: vec![series],
        summary: Vec::new(),
    })
}

// ---------------------------------------------------------------- pipeline

/// Reorders `truth` so that target `i` corresponds to `belief` target `i`.
///
/// Comm paths are paired through their UE angles, the remaining targets by
/// sorted angle.
pub fn align_truth(truth: &Scene, belief: &Scene) -> Scene {
    let l = truth.l();
    let mut free: Vec<usize> = (0..l).collect();
    let mut comm = Vec::with_capacity(l);
    for &phi in &belief.ue_aoas_deg {
        let pos = (0..free.len())
            .min_by(|&a, &b| (truth.ue_aoas_deg[free[a]] - phi).abs().total_cmp(&(truth.ue_aoas_deg[free[b]] - phi).abs()))
            .expect("as many truth paths as believed ones");
        comm.push(free.remove(pos));
    }
    let by_angle = |s: &Scene, idx: Vec<usize>| {
        let mut idx = idx;
        idx.sort_by(|&a, &b| s.target_angles_deg[a].total_cmp(&s.target_angles_deg[b]));
        idx
    };
    let truth_rest = by_angle(truth, (l..truth.k()).collect());
    let belief_rest = by_angle(belief, (belief.l()..belief.k()).collect());
    let mut order = comm.clone();
    order.extend(vec![0; truth_rest.len()]);
    for (b, t) in belief_rest.iter().zip(&truth_rest) {
        order[*b] = *t;
    }
    Scene {
        target_angles_deg: order.iter().map(|&i| truth.target_angles_deg[i]).collect(),
        target_gains: order.iter().map(|&i| truth.target_gains[i]).collect(),
        comm_path_count: l,
        ue_aoas_deg: comm.iter().map(|&i| truth.ue_aoas_deg[i]).collect(),
        comm_gains: comm.iter().map(|&i| truth.comm_gains[i]).collect(),
    }
}

/// End-to-end run: target search, DL design, one tracking PRI.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub snr_db: f64,
    pub scene: Scene,
    pub stage1: Stage1Report,
    pub bs_matches: Vec<MatchedEstimate>,
    pub ue_matches: Vec<MatchedEstimate>,
    pub radar_nmse_db: f64,
    pub comm_nmse_db: f64,
    /// `(variant, perfect CSI SE, estimated CSI SE)`.
    pub dl_se: Vec<(Variant, f64, f64)>,
    pub pri: PriOutcome,
}

/// Runs the three stages on trial 0's scene at the first grid SNR.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let snr = cfg.snr_grid_db[0];
    let scene = draw_scene(cfg, cfg.scene_params.k, 0)?;
    let stage1 = run_stage1(&scene, &cfg.arrays, &stage1_config(cfg, snr, cfg.pilot_length), &mut trial_rng(cfg.seed, 0, STREAM_RUN))?;
    let (bs_matches, ue_matches) = match_stage1(&scene, &stage1);
    let (radar_nmse_db, comm_nmse_db) = stage1_nmse(&scene, &stage1, cfg)?;
    let sigma2 = noise(cfg, snr).sigma2_dl;
    let belief = stage1.estimated_scene();
    let perfect = dl_se_for_belief(cfg, &scene, &scene, sigma2)?;
    let estimated = dl_se_for_belief(cfg, &scene, &belief, sigma2)?;
    let dl_se = cfg.variant_set.iter().copied().zip(perfect).zip(estimated).map(|((v, p), e)| (v, p, e)).collect();

    let aligned = align_truth(&scene, &belief);
    let drift = DriftModel::sample(scene.k(), scene.l(), cfg.delta_max_deg, &mut trial_rng(cfg.seed, 0, STREAM_DRIFT));
    let pri = simulate_pri_from_belief(
        &aligned,
        &belief,
        &cfg.arrays,
        &drift,
        &pri_config(cfg, cfg.frame, snr, cfg.delta_max_deg),
        &mut trial_rng(cfg.seed, 0, STREAM_DRIFT + 1),
    )?;
    Ok(PipelineReport { snr_db: snr, scene, stage1, bs_matches, ue_matches, radar_nmse_db, comm_nmse_db, dl_se, pri })
}

impl fmt::Display for PipelineReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SNR {:.1} dB, K = {}, L = {}", self.snr_db, self.scene.k(), self.scene.l())?;
        writeln!(f, "\ntarget search (BS side)")?;
        writeln!(f, "  {:>10} {:>10} {:>8} {:>10}", "true", "estimate", "error", "|gain err|")?;
        for m in &self.bs_matches {
            writeln!(
                f,
                "  {:>10.3} {:>10.3} {:>8.3} {:>10.4}",
                m.true_angle_deg,
                m.est_angle_deg,
                m.est_angle_deg - m.true_angle_deg,
                (m.est_gain - m.true_gain).norm()
            )?;
        }
        writeln!(f, "target search (UE side)")?;
        for m in &self.ue_matches {
            writeln!(
                f,
                "  {:>10.3} {:>10.3} {:>8.3} {:>10.4}",
                m.true_angle_deg,
                m.est_angle_deg,
                m.est_angle_deg - m.true_angle_deg,
                (m.est_gain - m.true_gain).norm()
            )?;
        }
        writeln!(f, "  radar channel NMSE {:.2} dB, comm channel NMSE {:.2} dB", self.radar_nmse_db, self.comm_nmse_db)?;
        writeln!(f, "\nDL spectral efficiency (bits/s/Hz)")?;
        for (v, p, e) in &self.dl_se {
            writeln!(f, "  {:<9} perfect {:>7.3}  estimated {:>7.3}", v.tag(), p, e)?;
        }
        let pri = &self.pri;
        writeln!(f, "\ntracking PRI")?;
        // sorted matching: a comm path misidentified in the search stage
        // would otherwise show up as a huge per-index error
        let worst = matched_errors_deg(&pri.sic.tracked_angles, &pri.truth.target_angles_deg)
            .iter()
            .map(|e| e.abs())
            .fold(0.0, f64::max);
        writeln!(f, "  worst BS tracking error {worst:.3} deg, flagged targets {}", pri.sic.tracking_flags.iter().filter(|&&x| x).count())?;
        let ue = matched_errors_deg(&pri.ue_tracked.angles_deg, &pri.truth.ue_aoas_deg);
        writeln!(f, "  worst UE tracking error {:.3} deg", ue.iter().map(|e| e.abs()).fold(0.0, f64::max))?;
        writeln!(
            f,
            "  UL SE with SIC {:.3}, without {:.3} bits/s/Hz (cancelled: {})",
            pri.sic.ul_se, pri.no_sic.ul_se, pri.sic.cancelled
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: ExperimentId, trials: usize) -> ExperimentConfig {
        ExperimentConfig { trials, seed: 7, ..ExperimentConfig::for_experiment(id) }
    }

    #[test]
    fn every_figure_runs_with_few_trials() {
        for id in ExperimentId::FIGURES {
            let mut cfg = small(id, 2);
            cfg.snr_grid_db.truncate(2);
            cfg.overlap_ratio_grid.truncate(2);
            cfg.k_grid.truncate(2);
            let out = run_experiment(&cfg).unwrap_or_else(|e| panic!("{id}: {e}"));
            assert!(!out.tables.is_empty(), "{id}");
            for (_, body) in &out.tables {
                assert!(body.starts_with("# experiment="), "{id}");
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = ExperimentConfig { snr_grid_db: vec![10.0], ..small(ExperimentId::Fig7, 3) };
        assert_eq!(run_experiment(&cfg).unwrap(), run_experiment(&cfg).unwrap());
    }

    #[test]
    fn align_truth_undoes_a_permutation() {
        let cfg = ExperimentConfig::default();
        let truth = draw_scene(&cfg, 8, 3).unwrap();
        // belief: comm paths reversed, radar targets reversed
        let mut order: Vec<usize> = (0..4).rev().collect();
        order.extend((4..8).rev());
        let belief = Scene {
            target_angles_deg: order.iter().map(|&i| truth.target_angles_deg[i] + 0.05).collect(),
            target_gains: order.iter().map(|&i| truth.target_gains[i]).collect(),
            comm_path_count: 4,
            ue_aoas_deg: (0..4).rev().map(|i| truth.ue_aoas_deg[i] - 0.05).collect(),
            comm_gains: (0..4).rev().map(|i| truth.comm_gains[i]).collect(),
        };
        let aligned = align_truth(&truth, &belief);
        for (a, b) in aligned.target_angles_deg.iter().zip(&belief.target_angles_deg) {
            assert!((a - b).abs() < 0.051);
        }
        assert_eq!(aligned.comm_gains, belief.comm_gains);
    }

    #[test]
    fn pipeline_reports_all_stages() {
        let rep = run_pipeline(&ExperimentConfig::default()).unwrap();
        assert_eq!(rep.bs_matches.len(), 8);
        assert_eq!(rep.dl_se.len(), 3);
        let text = rep.to_string();
        assert!(text.contains("tracking PRI"));
    }
}
