#![allow(dead_code)]

use icode_lab::fields::VectorFieldModel;

pub fn params(model: &VectorFieldModel) -> Vec<f64> {
    model
        .nets()
        .into_iter()
        .flat_map(|n| n.param_slices().flat_map(|s| s.to_vec()).collect::<Vec<_>>())
        .collect()
}

pub fn set_params(model: &mut VectorFieldModel, values: &[f64]) {
    let mut it = values.iter();
    for net in model.nets_mut() {
        for s in net.param_slices_mut() {
            for p in s {
                *p = *it.next().expect("enough values");
            }
        }
    }
    assert!(it.next().is_none());
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
