use std::collections::HashSet;

use proptest::prelude::*;
use relgraph_core::embedding::HashedBagOfTokens;
use relgraph_core::extractor::{Triplet, TripletSource};
use relgraph_core::graph::{build_graph, GraphMode, GraphOptions, NodeKind, BELONG_TO};
use relgraph_core::text::normalize_key;

const WORDS: [&str; 10] = ["Alba", "Brio", "Cato", "Dune", "Echo", "Faro", "Gala", "Hoya", "Iris", "Jade"];

fn build_input() -> impl Strategy<Value = (String, Vec<String>, Vec<Triplet>, usize, GraphMode)> {
    let sentence = prop::collection::vec(0..WORDS.len(), 1..5)
        .prop_map(|ws| ws.iter().map(|&w| WORDS[w]).collect::<Vec<_>>().join(" ") + ".");
    (
        sentence.clone(),
        prop::collection::vec(sentence, 0..5),
        prop::collection::vec((0..WORDS.len(), 0..WORDS.len(), 0..3usize, 0..6usize), 0..12),
        0..20usize,
        prop_oneof![Just(GraphMode::Full), Just(GraphMode::NoEre), Just(GraphMode::FullyConnected)],
    )
        .prop_map(|(claim, evidence, raw, extra, mode)| {
            let triplets = raw
                .into_iter()
                .filter(|(h, t, _, _)| h != t)
                .map(|(h, t, r, src)| {
                    let source = if src == 0 || src > evidence.len() {
                        TripletSource::Claim
                    } else {
                        TripletSource::Evidence(src - 1)
                    };
                    Triplet::new(WORDS[h], ["owns", "likes", "met"][r], WORDS[t]).unwrap().with_source(source)
                })
                .collect();
            let n_max = 1 + evidence.len() + extra;
            (claim, evidence, triplets, n_max, mode)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn construction_invariants((claim, evidence, triplets, n_max, mode) in build_input()) {
        let embed = HashedBagOfTokens::new(8, 1).unwrap();
        let options = GraphOptions { n_max, mode };
        let g = build_graph(&claim, &evidence, &triplets, &embed, options).unwrap();
        let again = build_graph(&claim, &evidence, &triplets, &embed, options).unwrap();
        prop_assert_eq!(&g, &again);

        prop_assert_eq!(g.len(), n_max);
        prop_assert_eq!(g.count(NodeKind::Claim), 1);
        prop_assert_eq!(g.evidence_nodes().len(), evidence.len());

        let distinct: HashSet<String> = triplets
            .iter()
            .flat_map(|t| [normalize_key(t.head()), normalize_key(t.tail())])
            .collect();
        let entities: Vec<String> = g
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Entity)
            .map(|n| normalize_key(&n.text))
            .collect();
        let unique: HashSet<&String> = entities.iter().collect();
        prop_assert_eq!(unique.len(), entities.len());
        prop_assert_eq!(entities.len(), distinct.len().min(n_max - 1 - evidence.len()));
        prop_assert_eq!(g.count(NodeKind::Pad), n_max - 1 - evidence.len() - entities.len());

        for (i, node) in g.nodes().iter().enumerate() {
            if node.kind == NodeKind::Pad {
                prop_assert!(g.neighbors(i).is_empty());
                prop_assert!(node.features.iter().all(|x| *x == 0.0));
            }
        }
        let kind = |i: usize| g.nodes()[i].kind;
        for e in g.edges() {
            match mode {
                GraphMode::FullyConnected => prop_assert_eq!(e.relation.as_str(), ""),
                _ if e.relation == BELONG_TO => {
                    prop_assert_eq!(kind(e.source), NodeKind::Entity);
                    prop_assert!(matches!(kind(e.target), NodeKind::Claim | NodeKind::Evidence(_)));
                }
                GraphMode::Full => {
                    prop_assert_eq!(kind(e.source), NodeKind::Entity);
                    prop_assert_eq!(kind(e.target), NodeKind::Entity);
                }
                GraphMode::NoEre => prop_assert!(false, "relation edge in no-ere mode"),
            }
        }
        if mode != GraphMode::FullyConnected {
            for (i, node) in g.nodes().iter().enumerate() {
                if node.kind == NodeKind::Entity {
                    prop_assert!(g.neighbors(i).iter().any(|&(_, e)| g.edges()[e].relation == BELONG_TO));
                }
            }
        }
    }
}
