use super::*;
use crate::cohort::synth::{gen_synthetic_cohort, plant_clone, SynthConfig};
use crate::cohort::{position_target, ZScore, ZScoreParams, FEATURE_NAMES, N_FEATURES};
use crate::regressors::{Fitted, Hyper, LinearModel};
use crate::voxelgeom::{center_of_mass, DEFAULT_FILL_HU};

fn identity_params() -> ZScoreParams {
    ZScoreParams {
        columns: (0..N_FEATURES).collect(),
        names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        features: vec![ZScore::IDENTITY; N_FEATURES],
        target: ZScore::IDENTITY,
    }
}

fn linear(task: Task, intercept: f64, coef: Vec<f64>) -> RegressionModel {
    RegressionModel {
        kind: ModelKind::Lasso,
        task,
        hyper: Hyper::None,
        params: identity_params(),
        fitted: Fitted::Linear(LinearModel { intercept, coef }),
    }
}

/// Retrieval scores `-Σ|Δfeature|`; positions are the given constants.
fn oracle(offsets: impl Fn(Oar, Axis) -> f64) -> ModelBundle {
    let models = Task::ALL
        .iter()
        .map(|&t| match t.as_position() {
            Some((oar, axis)) => linear(t, offsets(oar, axis), vec![0.0; N_FEATURES]),
            None => linear(t, 0.0, vec![-1.0; N_FEATURES]),
        })
        .collect();
    ModelBundle::new(models).unwrap()
}

fn cohort() -> Cohort {
    gen_synthetic_cohort(&SynthConfig::small(6, 21).noiseless()).unwrap()
}

#[test]
fn planted_clone_is_retrieved_everywhere() {
    let c = cohort();
    let test = c.get(PatientId(2)).unwrap();
    let clone = plant_clone(&c, PatientId(2), PatientId(100)).unwrap();
    let mut db = c.others(PatientId(2));
    db.push(&clone);
    let b = oracle(|_, _| 0.0);
    assert_eq!(select_receiver(&b, &test.features, &db).unwrap().0, PatientId(100));
    for oar in Oar::ALL {
        assert_eq!(select_donor(&b, oar, &test.features, &db).unwrap().0, PatientId(100));
    }
    let single = [db[0]];
    assert_eq!(select_receiver(&b, &test.features, &single).unwrap().0, db[0].id);
}

#[test]
fn ties_go_to_the_smaller_id() {
    let s = [(PatientId(5), 1.0), (PatientId(3), 1.0), (PatientId(4), 0.5), (PatientId(7), f64::NAN)];
    assert_eq!(argmax_by_id(s), Some((PatientId(3), 1.0)));
    assert_eq!(argmax_by_id([]), None);
}

#[test]
fn zero_offsets_land_on_the_receiver_l2() {
    let c = cohort();
    let b = oracle(|_, _| 0.0);
    let r = c.get(PatientId(3)).unwrap();
    for oar in Oar::ALL {
        assert_eq!(predict_oar_pose(&b, oar, &c.get(PatientId(1)).unwrap().features, r), r.l2_center);
    }
    for rec in c.records() {
        assert!(predict_oar_pose(&b, Oar::Liver, &rec.features, r).is_finite());
    }
}

#[test]
fn oracle_assembly_reproduces_the_test_anatomy() {
    let c = cohort();
    let test = c.get(PatientId(4)).unwrap();
    let clone = plant_clone(&c, PatientId(4), PatientId(50)).unwrap();
    let mut db = c.others(PatientId(4));
    db.push(&clone);
    let truth = |oar, axis| position_target(test, oar, axis).unwrap();
    let b = oracle(truth);
    let ph = assemble(&b, Some(test.id), &test.features, &db, DEFAULT_FILL_HU).unwrap();
    assert_eq!(ph.plan.receiver, PatientId(50));
    assert!(!ph.aic_applied);
    let half = 0.5 * clone.ct.geometry().spacing[0] + 1e-9;
    for oar in Oar::ALL {
        let com = center_of_mass(ph.oar(oar)).unwrap();
        let want = clone.l2_center + Point3::from_array(Axis::ALL.map(|a| truth(oar, a)));
        for a in 0..3 {
            assert!((com.axis(a) - want.axis(a)).abs() <= half, "{oar:?} axis {a}");
        }
    }
    let again = assemble(&b, Some(test.id), &test.features, &db, DEFAULT_FILL_HU).unwrap();
    assert_eq!(ph, again);
}

#[test]
fn resection_and_transplant_only_touch_organ_voxels() {
    let c = cohort();
    let test = c.get(PatientId(1)).unwrap();
    let db = c.others(PatientId(1));
    let b = oracle(|oar, axis| if oar == Oar::Liver { [20.0, 5.0, -30.0][axis.index()] } else { [-25.0, 10.0, -10.0][axis.index()] });
    let ph = assemble(&b, Some(test.id), &test.features, &db, DEFAULT_FILL_HU).unwrap();
    let rec = c.get(ph.plan.receiver).unwrap();
    let n = ph.ct.values().len();
    for i in 0..n {
        let new_organ = ph.liver.get_index(i) || ph.spleen.get_index(i);
        let old_organ = rec.liver.get_index(i) || rec.spleen.get_index(i);
        if !new_organ && !old_organ {
            assert_eq!(ph.ct.values()[i], rec.ct.values()[i]);
        }
        if old_organ && !new_organ {
            assert_eq!(ph.ct.values()[i], DEFAULT_FILL_HU);
        }
    }
    assert!(!ph.liver.is_empty() && !ph.spleen.is_empty());
}

#[test]
fn database_guards() {
    let c = cohort();
    let test = c.get(PatientId(1)).unwrap();
    let b = oracle(|_, _| 0.0);
    let all: Vec<&PatientRecord> = c.records().iter().collect();
    assert!(matches!(plan(&b, Some(test.id), &test.features, &all), Err(PipelineError::TestInDatabase(PatientId(1)))));
    assert!(matches!(plan(&b, Some(test.id), &test.features, &[]), Err(PipelineError::EmptyDatabase)));
    let mut models = b.models.clone();
    models.swap(0, 1);
    assert!(matches!(ModelBundle::new(models), Err(PipelineError::IncompleteBundle(_))));
}

#[test]
fn trained_bundles_cover_all_tasks_without_leakage() {
    let c = cohort();
    let tables = CohortTables::compute(&c, 5.0).unwrap();
    let held = PatientId(3);
    let ds = tables.without_patient(held);
    for d in &ds {
        assert!(d.provenance.iter().all(|p| !p.involves(held)));
        assert_eq!(d.len(), if d.task.is_pairwise() { 10 } else { 5 });
    }
    let settings = FitSettings::default();
    let b = train_bundle(&ds, ModelKind::Lasso, &settings, 1).unwrap();
    assert_eq!(b.models.iter().map(|m| m.task).collect::<Vec<_>>(), Task::ALL);
    assert_eq!(b, train_bundle(&ds, ModelKind::Lasso, &settings, 1).unwrap());
    let json = serde_json::to_string(&b).unwrap();
    assert_eq!(serde_json::from_str::<ModelBundle>(&json).unwrap(), b);
}

#[test]
fn phantom_files_are_written() {
    let c = cohort();
    let test = c.get(PatientId(1)).unwrap();
    let db = c.others(PatientId(1));
    let ph = assemble(&oracle(|_, _| 0.0), Some(test.id), &test.features, &db, DEFAULT_FILL_HU).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let prov = PhantomProvenance::new(&ph, vec!["oracle".into()], 7);
    write_phantom(dir.path(), &ph, &prov).unwrap();
    for f in &prov.files {
        crate::voxelgeom::vph1::validate(&dir.path().join(f)).unwrap();
    }
    let back: PhantomProvenance = serde_json::from_str(&std::fs::read_to_string(dir.path().join(PHANTOM_PROVENANCE)).unwrap()).unwrap();
    assert_eq!(back, prov);
    let ct = crate::voxelgeom::vph1::read_grid(&dir.path().join("ct.json")).unwrap();
    assert_eq!(ct, ph.ct);
}
