mod common;

use std::path::Path;

use affground::data::{PartMapping, Split};
use affground::model::Checkpoint;
use affground::pipeline;
use common::Workspace;

#[test]
fn part_mapping_examples() {
    let text = "knife\thold\thandle of the knife\nbottle\topen\tcap of the bottle\ndrum\tbeat\tthe drumhead of the drum\n";
    let m = PartMapping::parse(text, Path::new("mapping.tsv")).unwrap();
    assert_eq!(m.lookup("knife", "hold").unwrap(), "handle of the knife");
    assert_eq!(m.lookup("bottle", "open").unwrap(), "cap of the bottle");
    assert_eq!(m.lookup("drum", "beat").unwrap(), "the drumhead of the drum");
    assert!(m.lookup("knife", "open").is_err());
}

fn trained_tensors(extra: &[&str]) -> Checkpoint {
    let ws = Workspace::new(&[&["train.epochs=1"][..], extra].concat());
    let cfg = ws.config();
    pipeline::run_fixture(&cfg).unwrap();
    pipeline::run_gen_labels(&cfg).unwrap();
    pipeline::run_pair(&cfg).unwrap();
    pipeline::run_train::<f64>(&cfg).unwrap();
    Checkpoint::load(&pipeline::work_dir(&cfg).checkpoint(0)).unwrap()
}

#[test]
fn zero_weights_match_disabled_terms() {
    // pairs are still loaded in both runs so the draw sequence is shared
    let zero = trained_tensors(&["train.lambda1=0.0", "train.lambda2=0.0"]);
    let off = trained_tensors(&["train.use_align=false", "train.use_exo_cls=false", "train.use_reason=false"]);
    assert_eq!(zero.tensors, off.tensors);
}

#[test]
fn refined_labels_take_precedence() {
    let ws = Workspace::new(&["refine.epochs=1", "refine.scope=[\"hold/knife\"]"]);
    let cfg = ws.config();
    pipeline::run_fixture(&cfg).unwrap();
    pipeline::run_gen_labels(&cfg).unwrap();
    pipeline::run_pair(&cfg).unwrap();
    let summary = pipeline::run_refine::<f64>(&cfg).unwrap().unwrap();
    assert_eq!(summary.refined, cfg.fixture.ego_per_class);
    let index = pipeline::load_split(&cfg, Split::Train).unwrap();
    let labels = pipeline::training_labels(&cfg, &index).unwrap();
    assert_eq!(labels.len(), index.ego().count());
    for s in index.ego() {
        let refined = labels[&s.id].provenance.refined_segments.is_some() || labels[&s.id].provenance.refine_fallback.is_some();
        assert_eq!(refined, s.class_pair() == ("knife", "hold"), "{}", s.id);
    }
}

#[test]
fn empty_scope_does_nothing() {
    let ws = Workspace::new(&["refine.scope=[]"]);
    let cfg = ws.config();
    pipeline::run_fixture(&cfg).unwrap();
    assert!(pipeline::run_refine::<f64>(&cfg).unwrap().is_none());
}
