//! Frozen NSW search results, recorded from a verified run and cross-checked
//! against an independent exhaustive search.

mod common;

use polopt::cate::estimate_cate;
use polopt::search::{build_grid, scenario_menu, search_multivariate, SelectionVar};
use polopt::welfare::optimal_assignment;
use polopt::{
    Constraints, GridSource, Objective, PolicyDataset, ThresholdGrid, ThresholdSearchResult,
};

fn tau(ds: &PolicyDataset) -> Vec<f64> {
    estimate_cate(ds, &common::nsw_model()).unwrap().tau
}

fn search(ds: &PolicyDataset, tau: &[f64], vars: &[&str]) -> ThresholdSearchResult {
    let sel: Vec<SelectionVar> = vars
        .iter()
        .map(|v| SelectionVar::from_dataset(ds, v).unwrap())
        .collect();
    let grids: Vec<ThresholdGrid> = vars
        .iter()
        .map(|v| build_grid(ds, v, &GridSource::ObservedUnique).unwrap())
        .collect();
    let refs: Vec<&ThresholdGrid> = grids.iter().collect();
    search_multivariate(
        tau,
        &optimal_assignment(tau),
        &sel,
        &refs,
        Objective::AverageWelfare,
        &Constraints::none(),
    )
    .unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8
}

#[test]
fn univariate_optima() {
    let ds = common::nsw();
    let tau = tau(&ds);
    for (var, c, avg, n, angle) in [
        ("age", 27.0, 2.783047401, 149, false),
        ("re74", 27.8643594, 3.485915628, 1, false),
        ("education", 15.0, 3.365584863, 2, false),
    ] {
        let res = search(&ds, &tau, &[var]);
        let b = res.best.unwrap();
        assert_eq!(b.c[0], c, "{var}");
        assert!(
            close(b.report.avg_welfare.unwrap(), avg),
            "{var}: {:?}",
            b.report.avg_welfare
        );
        assert_eq!(b.report.n_treated, n, "{var}");
        assert_eq!(res.angle_solution, angle, "{var}");
    }
}

#[test]
fn bivariate_optimum() {
    let ds = common::nsw();
    let tau = tau(&ds);
    let res = search(&ds, &tau, &["age", "re75"]);
    let b = res.best.unwrap();
    assert_eq!(b.c[0], 30.0);
    assert_eq!(b.c[1], 10.9413496);
    assert!(close(b.report.avg_welfare.unwrap(), 3.995319516));
    assert_eq!(b.report.n_treated, 4);
    assert_eq!(res.curve.len(), 34 * 155);
}

#[test]
fn education_menu_at_age_optimum() {
    let ds = common::nsw();
    let tau = tau(&ds);
    let grid = build_grid(&ds, "education", &GridSource::ObservedUnique).unwrap();
    let rows = scenario_menu(
        &tau,
        &optimal_assignment(&tau),
        (SelectionVar::from_dataset(&ds, "age").unwrap(), 27.0),
        SelectionVar::from_dataset(&ds, "education").unwrap(),
        &grid,
        Objective::AverageWelfare,
    )
    .unwrap();
    assert_eq!(rows.len(), grid.len());
    let top = rows
        .iter()
        .max_by(|a, b| {
            a.report
                .avg_welfare
                .partial_cmp(&b.report.avg_welfare)
                .unwrap()
        })
        .unwrap();
    assert_eq!(top.c[0], 15.0);
    assert!(close(top.report.avg_welfare.unwrap(), 3.918747196));
    assert_eq!(top.report.n_treated, 1);
}
