use rmtssl::dataset::{estimate_tau, ClassLayout};
use rmtssl::gmm::{builtin_model, BuiltinModel};
use rmtssl::kernel::KernelConfig;
use rmtssl::propagation::{build_system, classify, metrics, normalize};
use rmtssl::{Real, Result};

fn accuracy<T: Real>(model: BuiltinModel, layout: &ClassLayout, kernel: &KernelConfig, alpha: f64) -> Result<f64> {
    let split = builtin_model::<T>(model, 256)?.sample(layout, 4)?;
    let kernel = kernel.resolve(estimate_tau(&split)?)?;
    let scores = build_system(&split, &kernel)?.scores(T::lit(alpha))?;
    Ok(metrics(&classify(normalize(&scores).view()), &layout.unlabelled_truth(), layout.k())?.accuracy)
}

#[test]
fn single_precision_tracks_double() {
    let two = ClassLayout::two_class(512, 32, 16).unwrap();
    let three = ClassLayout::balanced(3, 12, 150).unwrap();
    for (model, layout, kernel) in [
        (BuiltinModel::TwoMeans, &two, KernelConfig::Gaussian { sigma2: 1.0 }),
        (BuiltinModel::Concentric, &two, KernelConfig::Quadratic { f0: 1.0, f1: 0.0, f2: 1.0 }),
        (BuiltinModel::ThreeClass, &three, KernelConfig::Gaussian { sigma2: 1.0 }),
    ] {
        let single = accuracy::<f32>(model, layout, &kernel, -1.0).unwrap();
        let double = accuracy::<f64>(model, layout, &kernel, -1.0).unwrap();
        assert!(double > 0.6, "{model}: {double}");
        assert!((single - double).abs() <= 0.03, "{model}: f32 {single} vs f64 {double}");
    }
}
