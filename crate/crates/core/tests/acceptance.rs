//! End-to-end acceptance run. Criteria execute in parallel; one line per
//! criterion is printed in order and the process fails if any is red.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use polarlab::conformal::{
    canonical_lift, conformal_gcr_residuals, conformal_invariants, dictionary_defects, embed, lift_catalog,
    lifted_seed, transform_field, willmore, ConformalFrame, ConformalInvariants,
};
use polarlab::gridcalc::{GridSpec, Scheme};
use polarlab::isometric::isometric_invariants;
use polarlab::polar::{
    conf_equiv_indicator, dual_lift, from_coords, moduli_sample, polar_metric, polar_transform, product_polar_seed,
    sphere_section_coords, verify_polar, ModuliOptions, PolarSurface,
};
use polarlab::pseudolinalg::random_isometry;
use polarlab::surfaces::{clifford_torus, homogeneous_torus, plane, product_surface, sphere, Curve, SurfaceDef};
use polarlab::tolerances::Tolerances;
use polarlab::transforms::{
    darboux_construct, darboux_verify, permute_darboux, permute_spectral, spectral_transform,
};
use polarlab::C64;

type Outcome = (bool, String);

fn tol() -> Tolerances {
    Tolerances::default()
}

fn lift(def: &SurfaceDef, n: usize) -> (ConformalFrame, ConformalInvariants) {
    lift_catalog(def, &def.grid(n, n).unwrap(), &tol()).unwrap()
}

fn ellipse_product() -> SurfaceDef {
    product_surface(Curve::circle(1.0).unwrap(), Curve::ellipse(1.0, 0.9).unwrap()).unwrap()
}

fn twisted_product(eps: f64) -> SurfaceDef {
    product_surface(Curve::circle(1.0).unwrap(), Curve::twisted(eps).unwrap()).unwrap()
}

/// The catalog polar used for each surface.
fn catalog_polars<'a>(name: &str, def: &SurfaceDef, frame: &'a ConformalFrame, inv: &'a ConformalInvariants, t: &Tolerances) -> Vec<PolarSurface<'a>> {
    match name {
        "clifford" => vec![from_coords(frame, inv, sphere_section_coords(frame).unwrap(), 1.0, t).unwrap()],
        "product" => [0.0, 0.3]
            .iter()
            .map(|&th| {
                // coordinates of the closed-form seed in the marched basis
                let seed = product_polar_seed(def, frame, th).unwrap();
                let b = frame.y.spec().base_index();
                let sig = frame.y.sig();
                let sc: Vec<C64> = seed.iter().map(|&v| v.into()).collect();
                let x: Vec<f64> =
                    frame.normal_basis.iter().zip(&frame.signs).map(|(f, e)| sig.dot(&sc, f.at(b)).re * e).collect();
                let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                from_coords(frame, inv, x.iter().map(|a| a / n).collect(), 1.0, t).unwrap()
            })
            .collect(),
        "twisted" => {
            // the two best-conditioned of eight sampled seeds
            let (s, _) = moduli_sample(frame, inv, 1.0, 8, &ModuliOptions::default(), t).unwrap();
            let spread = |ps: &PolarSurface| {
                let pk = ps.psi_kappa();
                let a: Vec<f64> = ps.points().iter().map(|&p| pk.val(p).norm()).collect();
                a.iter().cloned().fold(f64::INFINITY, f64::min) / max(&a)
            };
            let mut ranked: Vec<(f64, PolarSurface)> = s.into_iter().map(|ps| (spread(&ps), ps)).collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
            ranked.into_iter().take(2).map(|r| r.1).collect()
        }
        "homogeneous" => {
            let (s, rep) = moduli_sample(frame, inv, 0.0, 6, &ModuliOptions::default(), t).unwrap();
            let mut out = Vec::new();
            for k in 0..2 {
                let i = rep.classes.iter().position(|c| *c == Some(k)).unwrap();
                out.push(s[i].clone());
            }
            out
        }
        _ => unreachable!(),
    }
}

fn polar_catalog() -> Vec<(&'static str, SurfaceDef)> {
    vec![
        ("clifford", clifford_torus()),
        ("product", ellipse_product()),
        ("twisted", twisted_product(0.1)),
        ("homogeneous", homogeneous_torus(2.0).unwrap()),
    ]
}

/// Identity-suite residuals: first form, conditions (i)/(ii), duality,
/// minimal section, real `Ω^ψ`.
fn identity_suite(ps: &PolarSurface, t: &Tolerances) -> [f64; 6] {
    let r = verify_polar(ps);
    let dl = dual_lift(ps, t).unwrap();
    [r.first_form, r.condition_i, r.span, dl.duality, dl.minimal, r.omega_imag]
}

fn max(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

fn willmore_baseline() -> Outcome {
    let start = Instant::now();
    let (frame, inv) = lift(&clifford_torus(), 64);
    let w = willmore(&frame, &inv).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = (w - 2.0 * PI * PI).abs();
    (err < 1e-5 && secs < 5.0, format!("|W - 2π²| = {err:.2e}, {secs:.2} s"))
}

fn willmore_polar_invariance() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (name, def) in [("clifford", clifford_torus()), ("homogeneous", homogeneous_torus(2.0).unwrap())] {
        let (frame, inv) = lift(&def, 64);
        let w = willmore(&frame, &inv).unwrap();
        for ps in catalog_polars(name, &def, &frame, &inv, &tol()) {
            let wp = polar_metric(&ps, &tol()).unwrap().willmore_pipeline.unwrap();
            worst = worst.max((wp - w).abs());
            lines.push(format!("{name} W={w:.8} W(ψ)={wp:.8}"));
        }
    }
    (worst < 1e-4, format!("max |ΔW| = {worst:.2e}; {}", lines.join(", ")))
}

fn polar_identity_suite() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut per = Vec::new();
    for (name, def) in polar_catalog() {
        let (frame, inv) = lift(&def, 64);
        for ps in catalog_polars(name, &def, &frame, &inv, &tol()) {
            let r = identity_suite(&ps, &tol());
            per.push(format!("{name} {}", r.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>().join("/")));
            worst = worst.max(max(&r));
        }
    }
    // Decay is measured with the 4th-order stencil: on periodic axes the
    // default spectral scheme sits at roundoff already at 64².
    let loose = Tolerances { holonomy_tol: 1e-3, conf_tol: 1e-1, ..tol() };
    let mut ratios = Vec::new();
    for (name, def) in [("product", ellipse_product()), ("twisted", twisted_product(0.1))] {
        let mut res = Vec::new();
        for n in [64, 128] {
            let spec = def.grid_with(n, n, Scheme::Compact4).unwrap();
            let (frame, inv) = lift_catalog(&def, &spec, &loose).unwrap();
            let r: f64 = catalog_polars(name, &def, &frame, &inv, &loose)
                .iter()
                .map(|ps| max(&identity_suite(ps, &loose)))
                .fold(0.0, f64::max);
            res.push(r);
        }
        ratios.push((name, res[0] / res[1]));
    }
    let min_ratio = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    (
        worst < 1e-5 && min_ratio >= 3.5,
        format!("max residual {worst:.2e} at 64² ({}); refinement ratios {ratios:.1?}", per.join(", ")),
    )
}

fn polar_metric_formula() -> Outcome {
    let mut worst: f64 = 0.0;
    for (name, def) in [("clifford", clifford_torus()), ("product", ellipse_product())] {
        let (frame, inv) = lift(&def, 64);
        for ps in catalog_polars(name, &def, &frame, &inv, &tol()) {
            worst = worst.max(polar_metric(&ps, &tol()).unwrap().discrepancy);
        }
    }
    (worst < 1e-5, format!("max |g^ψ formula - pipeline| = {worst:.2e}"))
}

fn moduli_structure() -> Outcome {
    let (frame, inv) = lift(&homogeneous_torus(2.0).unwrap(), 64);
    let (_, null) = moduli_sample(&frame, &inv, 0.0, 8, &ModuliOptions::default(), &tol()).unwrap();
    let (frame, inv) = lift(&twisted_product(0.1), 64);
    let (_, full) = moduli_sample(&frame, &inv, 1.0, 6, &ModuliOptions::default(), &tol()).unwrap();
    let (frame, inv) = lift(&twisted_product(0.0), 64);
    let opts = ModuliOptions { require_full: false, ..Default::default() };
    let (_, cliff) = moduli_sample(&frame, &inv, 1.0, 6, &opts, &tol()).unwrap();
    let ok = null.class_count == 2
        && full.full
        && full.class_count == 6
        && full.min_pairwise_ff > 1e-6
        && !cliff.full
        && cliff.class_count == 1;
    (
        ok,
        format!(
            "n=4 r=1 c=0: {} classes; n=5 r=0 c=1: {} of 6 classes, min pairwise {:.2e}; Clifford: {} class",
            null.class_count, full.class_count, full.min_pairwise_ff, cliff.class_count
        ),
    )
}

fn conformal_equivalence_indicator() -> Outcome {
    let def = ellipse_product();
    let mut grids = Vec::new();
    for n in [64, 128] {
        grids.push(lift(&def, n));
    }
    let defects: Vec<_> = grids
        .iter()
        .map(|(frame, inv)| {
            let p0 = polar_transform(frame, inv, &product_polar_seed(&def, frame, 0.0).unwrap(), 1.0, &tol()).unwrap();
            let p1 =
                polar_transform(frame, inv, &product_polar_seed(&def, frame, PI / 2.0).unwrap(), 1.0, &tol()).unwrap();
            let same = conf_equiv_indicator(&p0, &p0).unwrap();
            let diff = conf_equiv_indicator(&p0, &p1).unwrap();
            (diff, same.f.sup_interior())
        })
        .collect();
    // FD error of F_z̄ on the coarse grid, from the nodes shared with the fine one
    let coarse: &GridSpec = grids[0].0.y.spec();
    let fine: &GridSpec = grids[1].0.y.spec();
    let fz0 = defects[0].0.f.d_zbar();
    let fz1 = defects[1].0.f.d_zbar();
    let mut noise: f64 = 0.0;
    for p in 0..coarse.len() {
        let (i, j) = coarse.coords(p);
        noise = noise.max((fz0.val(p) - fz1.val(fine.index(2 * i, 2 * j))).norm());
    }
    let defect = defects[0].0.defect;
    let self_f = defects[0].1;
    (
        defect > 100.0 * noise && self_f == 0.0,
        format!("defect {defect:.2e}, noise floor {noise:.2e}, F(ψ,ψ) = {self_f:.1e}"),
    )
}

fn spectral_permutability() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, def, n) in [("clifford", clifford_torus(), 64), ("product", ellipse_product(), 128)] {
        let (frame, inv) = lift(&def, n);
        let ps = catalog_polars(name, &def, &frame, &inv, &tol()).pop().unwrap();
        for ct in [0.0, 0.3] {
            let st = spectral_transform(&frame, &inv, ct, None, &tol()).unwrap();
            let dg = permute_spectral(&frame, &inv, &ps, &st, &tol()).unwrap();
            worst = worst.max(dg.composite());
            parts.push(format!("{name}@{n} c̃={ct}: {:.2e}", dg.composite()));
        }
    }
    (worst < 1e-4, parts.join(", "))
}

fn darboux_suite() -> Outcome {
    let (frame, inv) = lift(&clifford_torus(), 128);
    let b = frame.y.spec().base_index();
    let theta = -inv.s.val(b).re - 4.0 * inv.g.val(b).re - 0.5;
    let xi0: Vec<f64> = (0..frame.y.sig().dim())
        .map(|i| 2.0 * inv.kappa.at(b)[i].re + 0.05 * frame.normal_basis[1].at(b)[i].re)
        .collect();
    let dt = darboux_construct(&frame, &inv, theta, C64::new(1.0, 0.0), &xi0, &tol()).unwrap();
    let r = darboux_verify(&frame, &inv, &dt);
    let ps = &catalog_polars("clifford", &clifford_torus(), &frame, &inv, &tol())[0];
    let dg = permute_darboux(&frame, &inv, ps, &dt, &tol()).unwrap();
    let ok = r.theta_std < 1e-5
        && r.span < 1e-5
        && r.congruence < 1e-5
        && r.isothermic < 1e-5
        && dg.composite() < 1e-4
        && dg.length < 1e-6;
    (
        ok,
        format!(
            "θ std {:.2e}, span {:.2e}, congruence {:.2e}, isothermic {:.2e}; diagram {:.2e}, |<ψ*,ψ*> - c| {:.2e}",
            r.theta_std,
            r.span,
            r.congruence,
            r.isothermic,
            dg.composite(),
            dg.length
        ),
    )
}

fn dictionary_and_integrability() -> Outcome {
    let t = tol();
    let surfaces = vec![
        plane(4).unwrap(),
        sphere(1.0).unwrap(),
        clifford_torus(),
        ellipse_product(),
        twisted_product(0.1),
        homogeneous_torus(2.0).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    let mut per = Vec::new();
    for def in surfaces {
        let spec = def.grid(64, 64).unwrap();
        let (frame, inv) = lift_catalog(&def, &spec, &t).unwrap();
        let mut m = conformal_gcr_residuals(&frame, &inv).max();
        if let Some(c) = def.curvature() {
            let x = def.sample(&spec);
            let iso = isometric_invariants(&x, c, None, &t).unwrap();
            m = m.max(iso.gcr_residuals().max());
            let seeded = canonical_lift(&embed(&x, c, &t).unwrap(), Some(&lifted_seed(&iso)), &t).unwrap();
            let sinv = conformal_invariants(&seeded);
            m = m.max(dictionary_defects(&iso, &seeded, &sinv).unwrap().max());
        }
        let motion = random_isometry(frame.y.sig(), 0.5, 11);
        let moved = canonical_lift(&transform_field(&motion, &frame.y).unwrap(), None, &t).unwrap();
        let minv = conformal_invariants(&moved);
        for p in frame.points() {
            m = m.max((inv.g.val(p) - minv.g.val(p)).norm());
        }
        if let (Ok(w), Ok(wm)) = (willmore(&frame, &inv), willmore(&moved, &minv)) {
            m = m.max((w - wm).abs());
        }
        worst = worst.max(m);
        per.push(format!("{} {m:.1e}", def.name));
    }
    (worst < 1e-5, per.join(", "))
}

fn main() {
    let start = Instant::now();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("Willmore baseline", willmore_baseline),
        ("Willmore polar invariance", willmore_polar_invariance),
        ("polar identity suite", polar_identity_suite),
        ("polar metric formula", polar_metric_formula),
        ("moduli structure", moduli_structure),
        ("conformal-equivalence indicator", conformal_equivalence_indicator),
        ("spectral permutability", spectral_permutability),
        ("Darboux suite", darboux_suite),
        ("dictionary and integrability", dictionary_and_integrability),
    ];
    let results: Vec<(Outcome, Duration)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| {
                s.spawn(move || {
                    let t0 = Instant::now();
                    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
                        let msg = e
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_default();
                        (false, format!("panicked: {msg}"))
                    });
                    (r, t0.elapsed())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let total = start.elapsed();
    let mut failed = 0;
    for (k, ((name, _), ((mut ok, mut detail), dt))) in criteria.iter().zip(results).enumerate() {
        if k == 8 {
            ok &= total.as_secs_f64() < 120.0;
            detail = format!("{detail}; suite {:.1} s", total.as_secs_f64());
        }
        println!(
            "criterion {} {}: {name} [{:.1} s] {detail}",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64()
        );
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
