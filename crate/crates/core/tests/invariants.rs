use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use proptest::prelude::*;

use fibersphere::coupled_mode::{self, wrap_phase, CavityParams};
use fibersphere::photon_sim::{CountingMode, DetectorModel};
use fibersphere::polarization::{self, JonesField, StokesVector};
use fibersphere::tomography::{self, CountSet, DensityMatrix, MleConfig};

fn cavity(gamma: f64, rho_l: f64, kappa: f64) -> CavityParams {
    CavityParams {
        gamma,
        rho_l,
        kappa,
        fsr_hz: 1.5e12,
        f_res_hz: 3.84e14,
        t_all: 1.0,
        theta_offset_rad: 0.0,
    }
}

fn params() -> impl Strategy<Value = CavityParams> {
    (0.0..0.3f64, 1e-7..1e-2f64, 1e-4..1.5f64).prop_map(|(g, r, k)| cavity(g, r, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transmittance_respects_energy_bound(p in params(), f in -7.5e11..7.5e11f64) {
        let t = coupled_mode::transmission(&p, f).unwrap().transmittance;
        prop_assert!(t >= 0.0);
        prop_assert!(t <= 1.0 - p.gamma + 1e-12, "{t}");
    }

    #[test]
    fn transmittance_is_even_in_detuning(p in params(), f in 0.0..7.5e11f64) {
        let a = coupled_mode::transmission(&p, f).unwrap();
        let b = coupled_mode::transmission(&p, -f).unwrap();
        prop_assert!((a.transmittance - b.transmittance).abs() <= 1e-12 * a.transmittance.max(1e-300) + 1e-15);
        prop_assert!(wrap_phase(a.phase_rad + b.phase_rad).abs() < 1e-9);
    }

    #[test]
    fn critical_coupling_nulls_the_resonance(gamma in 0.0..0.3f64, a in 1e-8..0.5f64) {
        let a = a + 1.0 - (1.0 - gamma).sqrt();
        let p = cavity(gamma, 1.0, 1.0).with_deficits(a, a).unwrap();
        let t = coupled_mode::transmission(&p, 0.0).unwrap().transmittance;
        prop_assert!(t < 1e-20, "{t}");
    }

    #[test]
    fn extracted_phase_ignores_global_phase(
        angle in 0.1..1.47f64,
        rel in -PI..PI,
        global in -PI..PI,
        offset in -1.0..1.0f64,
    ) {
        let field = JonesField::linear(angle, rel, 3.84e14);
        let rotated = JonesField::new(
            field.a_x * Complex64::from_polar(1.0, global),
            field.a_y * Complex64::from_polar(1.0, global),
            field.frequency_hz,
        );
        let x = field.a_x.arg();
        let y = field.a_y.arg();
        let s1 = polarization::stokes_from_field(&field);
        let s2 = polarization::stokes_from_field(&rotated);
        let p1 = polarization::extract_phase(&s1, x, y, offset).unwrap();
        let p2 = polarization::extract_phase(&s2, x + global, y + global, offset).unwrap();
        prop_assert!(wrap_phase(p1 - p2).abs() < 1e-9);
        prop_assert!(wrap_phase(p1 + offset).abs() < 1e-9);
    }

    #[test]
    fn normalized_stokes_is_scale_free(
        i in prop::array::uniform6(0.01..1e6f64),
        eta in 1e-3..1.0f64,
    ) {
        let s = StokesVector::from_intensities(i);
        let scaled = StokesVector::from_intensities(i.map(|v| eta * v));
        for (a, b) in s.normalized().iter().zip(scaled.normalized()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn purity_stays_in_qubit_bounds(
        dir in prop::array::uniform3(-1.0..1.0f64),
        len in 0.0..1.0f64,
    ) {
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        let rho = DensityMatrix::from_bloch(dir.map(|v| v / n * len));
        let p = rho.purity();
        prop_assert!((0.5 - 1e-12..=1.0 + 1e-12).contains(&p));
        prop_assert!(rho.is_physical(tomography::PHYSICAL_TOL));
    }

    #[test]
    fn phase_residual_survives_full_turns(a in -PI..PI, b in -PI..PI, k in -5i32..5) {
        let plain = wrap_phase(a - b);
        let turned = wrap_phase(a + k as f64 * TAU - b);
        prop_assert!((plain - turned).abs() < 1e-9);
        prop_assert!(plain.abs() <= PI + 1e-12);
    }

    #[test]
    fn kappa_range_is_closed(k in 0.0..=FRAC_PI_2) {
        let p = cavity(0.0, 1e-4, k);
        prop_assert!(p.validate().is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mle_output_is_always_physical(
        counts in prop::array::uniform6(0u32..400),
        dark in prop::bool::ANY,
    ) {
        let detector = DetectorModel {
            bin_time_s: 1e-3,
            dark_rate_hz: if dark { 2000.0 } else { 0.0 },
            efficiency: 0.5,
        };
        let set = CountSet::single(&counts.map(u64::from), CountingMode::Sequential);
        let cfg = MleConfig { max_generations: 120, ..MleConfig::default() };
        match tomography::mle_reconstruct(&set, &detector, &cfg) {
            Ok(r) => {
                prop_assert!(r.rho.is_physical(tomography::PHYSICAL_TOL));
                prop_assert!((r.rho.trace().re - 1.0).abs() < 1e-12);
            }
            Err(e) => prop_assert!(e.to_string().contains("signal"), "{e}"),
        }
    }
}
