use onebit_core::harness::{
    median_by_m, parse_results, results_to_csv, spearman, CSV_HEADER,
};
use onebit_core::{fit_scaling, flip_robustness_report, run_grid, CellResult, DecoderKind, ExperimentGrid, FlipMetric};

fn small_grid() -> ExperimentGrid {
    ExperimentGrid {
        n: 40,
        hidden: vec![20],
        m_values: vec![40, 80],
        trials: 3,
        ls_restarts: 2,
        ls_steps: 100,
        base_seed: 5,
        ..ExperimentGrid::default()
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let g = small_grid();
    let a = results_to_csv(&run_grid(&g).unwrap());
    let b = results_to_csv(&run_grid(&g).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.lines().next(), Some(CSV_HEADER));
    assert_eq!(a.lines().count(), 1 + 2 * 3 * 3);
    let other = results_to_csv(&run_grid(&ExperimentGrid { base_seed: 6, ..g }).unwrap());
    assert_ne!(a, other);
}

#[test]
fn csv_round_trips_exactly() {
    let rows = run_grid(&small_grid()).unwrap();
    assert_eq!(parse_results(&results_to_csv(&rows)).unwrap(), rows);
}

#[test]
fn ls_only_grid_has_no_baseline_rows() {
    let rows = run_grid(&ExperimentGrid { decoders: vec![DecoderKind::Ls], ..small_grid() }).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.decoder == DecoderKind::Ls));
}

#[test]
fn exact_power_law_fits_exactly() {
    let rows: Vec<CellResult> = [100usize, 200, 400, 800]
        .iter()
        .flat_map(|&m| {
            (0..3).map(move |trial| CellResult {
                m,
                decoder: DecoderKind::Ls,
                trial,
                seed: 0,
                l2_err: (m as f64).powf(-0.5),
                cosine: 1.0,
                per_pixel: 0.0,
                runtime_s: 0.0,
                converged: true,
            })
        })
        .collect();
    let fit = fit_scaling(&rows, DecoderKind::Ls).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    let flat: Vec<CellResult> = rows.iter().map(|r| CellResult { l2_err: 0.3, ..r.clone() }).collect();
    assert!(fit_scaling(&flat, DecoderKind::Ls).unwrap().slope.abs() < 1e-12);
    let report = flip_robustness_report(&rows, &rows, FlipMetric::L2).unwrap();
    assert!(report.rows.iter().all(|r| r.ratio == 1.0));
}

#[test]
fn median_ls_error_decreases_over_the_default_grid() {
    let g = ExperimentGrid { decoders: vec![DecoderKind::Ls], ..ExperimentGrid::default() };
    let rows = run_grid(&g).unwrap();
    assert_eq!(rows.len(), g.m_values.len() * g.trials);
    let med = median_by_m(&rows, DecoderKind::Ls);
    let (ms, errs): (Vec<f64>, Vec<f64>) = med.iter().map(|&(m, e)| (m as f64, e)).unzip();
    let rho = spearman(&ms, &errs);
    assert!(rho <= -0.8, "spearman {rho}, medians {med:?}");
}
