use std::time::Instant;

use osv_core::emulator::Emulator;
use osv_core::harness::synth::directory_example_library;
use osv_core::protomodel::{build_model_detailed, BuildOptions};

fn build() -> osv_core::protomodel::ModelBuild {
    build_model_detailed(&directory_example_library(), &BuildOptions::new(2), None).unwrap()
}

#[test]
fn clusters_split_search_from_add() {
    let b = build();
    let mut groups: Vec<Vec<u64>> = b.clusters.clusters.iter().map(|c| c.members.clone()).collect();
    groups.sort();
    assert_eq!(groups, vec![vec![1, 13, 275, 490, 2273], vec![24, 2487, 3106]]);
}

#[test]
fn prototype_shapes() {
    let b = build();
    let search = b.model.nodes.iter().find(|n| n.centroid.request.starts_with(b"{id:") && n.prototype.to_string().contains(",op:S,"));
    let search = search.expect("search node");
    let runs: Vec<Vec<u8>> = search.prototype.literal_runs();
    assert_eq!(runs, vec![b"{id:".to_vec(), b",op:S,sn:".to_vec(), b"}".to_vec()], "{}", search.prototype);
    let add = b.model.nodes.iter().find(|n| n.cluster_id != search.cluster_id).unwrap();
    assert!(add.prototype.to_string().contains(",op:A,sn:"), "{}", add.prototype);
    println!("search prototype {}\nadd prototype {}", search.prototype, add.prototype);
}

#[test]
fn durand_add_gets_add_response() {
    let started = Instant::now();
    let b = build();
    let add_id = b.model.nodes.iter().find(|n| n.centroid.index == 24).expect("add centroid is 24").cluster_id;
    let em = Emulator::new(b.model).unwrap();
    let out = em.respond(b"{id:37,op:A,sn:Durand}").unwrap();
    assert_eq!(out.outcome.chosen, add_id);
    let d = |id| out.outcome.distances.iter().find(|(c, _)| *c == id).unwrap().1;
    let search_id = 1 - add_id;
    println!("d_rel add {:.4} search {:.4}", d(add_id), d(search_id));
    assert!(d(add_id) < d(search_id));
    assert_eq!(String::from_utf8(out.response).unwrap(), "{id:37,op:AddRsp,result:Ok}");
    assert!(started.elapsed().as_secs_f64() < 1.0);
}
