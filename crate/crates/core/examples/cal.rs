use dyson_core::density::*;
use dyson_core::model::*;
use dyson_core::shape::*;
use dyson_core::solver::*;
use std::time::Instant;

fn main() {
    let opts = SolveOptions::default();
    for &alpha in &[0.2, 0.23] {
        let t0 = Instant::now();
        let spec = build_two_component(0.1, alpha, 20).unwrap();
        let prof = scan(&spec, (-4.0, 4.0), 1601, &opts).unwrap();
        let bs = band_structure(&spec, &prof, &opts).unwrap();
        let tau0g = bs.minima.iter().find(|m| m.0 > 0.0).unwrap().0;
        let rep = classify(&spec, &prof, &bs, tau0g, &opts).unwrap();
        println!(
            "alpha={} tau0={:.8} kind={:?} sigma={:.5} psi={:.5} Gamma={:.5} rho0={:.3e} [{:.1?}]",
            alpha, rep.tau0, rep.kind, rep.params.sigma, rep.params.psi,
            rep.params.gamma_big, rep.params.rho0, t0.elapsed()
        );
        if alpha == 0.2 {
            // cusp coefficient check over |omega| in [1e-4, 1e-3]
            let mut worst: f64 = 0.0;
            for k in 0..8 {
                let om = 1e-4 * (10f64.powf(k as f64 / 7.0));
                for sgn in [-1.0, 1.0] {
                    let r = density_at(&spec, rep.tau0 + sgn * om, &opts).unwrap();
                    let pred = predict_density(&rep, sgn * om);
                    let ratio = (r - pred).abs() / om.cbrt();
                    worst = worst.max(ratio);
                    if k % 3 == 0 && sgn > 0.0 {
                        println!("  om={:.2e} rho={:.6e} pred={:.6e} err/|om|^1/3={:.3}", om, r, pred, ratio);
                    }
                }
            }
            println!("  cusp worst err/|om|^(1/3) = {:.4} (gate 0.3)", worst);
        } else {
            // internal minimum shape ratio over rho0^3 <= |omega| <= 10 rho0^3
            let rho0 = rep.params.rho0;
            let rt = rep.rho_tilde;
            println!("  rho0={:.5} rho_tilde={:.5} window=[{:.2e},{:.2e}]", rho0, rt, rho0.powi(3), 10.0*rho0.powi(3));
            let (mut lo, mut hi): (f64, f64) = (f64::INFINITY, 0.0);
            for k in 0..10 {
                let om = rho0.powi(3) * (1.0 + 9.0 * k as f64 / 9.0);
                for sgn in [-1.0, 1.0] {
                    let r = density_at(&spec, rep.tau0 + sgn * om, &opts).unwrap();
                    let pred = rep.params.gamma_big.cbrt() * rt * psi_min(sgn * om / rt.powi(3));
                    let ratio = (r - rho0) / pred;
                    lo = lo.min(ratio); hi = hi.max(ratio);
                }
            }
            println!("  min-shape ratio range = [{:.3}, {:.3}] (gate [0.7,1.3])", lo, hi);
        }
    }
}
