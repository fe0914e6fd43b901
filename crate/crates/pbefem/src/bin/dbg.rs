use pbefem::amr::*;
use pbefem::preset;
use std::time::Instant;

fn main() {
    let sweeps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let p = preset::by_name("example1_2d").unwrap();
    let cp = p.campaign_problem().unwrap();
    let config = CampaignConfig { stop_elements: 8000, ref_sweeps: sweeps, ..p.default_config.clone() };
    let t0 = Instant::now();
    let result = run_campaign(&cp, &config).unwrap();
    println!("campaign({sweeps} ref sweeps): {:?}  ref elements {:?}  ref defect {:.2e}", t0.elapsed(), result.reference_elements, result.reference_div_defect.unwrap());
    println!("lvl   elts   2M2        CEN2       2DFp      2DFd      IcenLow  IcenUp  idres    psres    dfres    newton_r  defect");
    for l in &result.levels {
        let r = l.report.as_ref().unwrap();
        let ids = l.identities.as_ref().unwrap();
        let cen2 = r.cen() * r.cen();
        println!(
            "{:3} {:6} {:.4e} {:.4e} {:.3e} {:.3e}  {:.5}  {:.4}  {:.1e}  {:.1e}  {:.1e}  {:.1e}  {:.1e}",
            l.level, l.elements, 2.0 * l.majorant.total_m2, cen2,
            2.0 * r.df_primal, 2.0 * r.df_dual,
            r.i_cen_low.unwrap_or(f64::NAN), r.i_cen_up.unwrap_or(f64::NAN),
            ids.error_identity_rel, ids.prager_synge_rel, ids.df_relation_rel,
            l.newton_residual, l.max_div_defect.unwrap_or(f64::NAN),
        );
    }
}
