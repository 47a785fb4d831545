use std::net::Ipv4Addr;

use firm::engine::EngineReport;
use firm::registry::{parse_registry, DeploymentId, DeploymentStatus, Entry, Registry, RegistryError};
use proptest::prelude::*;

const WEATHER: &str = include_str!("../fixtures/weather.conf");

fn weather() -> Registry {
    parse_registry(WEATHER).unwrap()
}

#[test]
fn weather_listing_counts() {
    let r = weather();
    assert_eq!(r.entries().count(), 2);
    let ic = r.service("instance_count").unwrap();
    let counts: Vec<usize> = ic.implementations.iter().map(|i| i.deployments.len()).collect();
    assert_eq!(counts, vec![26, 3, 25]);
    assert_eq!(ic.total_deployments(), 54);

    let w = r.composition("weather").unwrap();
    assert_eq!(w.entry_point, Ipv4Addr::new(192, 168, 0, 164));
    let orders: Vec<u32> = w.members.iter().map(|m| m.order).collect();
    assert_eq!(orders, vec![1, 2, 3]);
    let adder = w.members.iter().find(|m| m.service == "adder").unwrap();
    assert!(!adder.serialized);
}

#[test]
fn listing_keeps_unresolved_members_until_checked() {
    let r = weather();
    assert!(matches!(
        r.check_references(),
        Err(RegistryError::UnresolvedMember { .. })
    ));
}

#[test]
fn empty_document_is_empty_registry() {
    let r = parse_registry("services { }").unwrap();
    assert_eq!(r.entries().count(), 0);
}

#[test]
fn syntax_errors_carry_position() {
    let err = parse_registry("services {\n  service s {\n    impl i { d 10.0.0.1 }\n").unwrap_err();
    match err {
        RegistryError::Syntax { line, .. } => assert!(line >= 3, "line {line}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn structural_errors() {
    let dup = "services { service a { impl i { d 10.0.0.1; } } service a { impl i { d 10.0.0.2; } } }";
    assert_eq!(parse_registry(dup).unwrap_err(), RegistryError::DuplicateService("a".into()));

    let no_entry =
        "services { service a { impl i { d 10.0.0.1; } } service w { type composition; services { a { order 1; } } } }";
    assert_eq!(parse_registry(no_entry).unwrap_err(), RegistryError::MissingEntryPoint("w".into()));

    let no_deploy = "services { service a { impl i { } } }";
    assert!(matches!(parse_registry(no_deploy).unwrap_err(), RegistryError::NoDeployments { .. }));
}

#[test]
fn lookup_skips_blacklisted_implementation() {
    let mut r = weather();
    assert_eq!(r.lookup_endpoints("instance_count").unwrap().len(), 54);
    let ids: Vec<DeploymentId> = r
        .service("instance_count")
        .unwrap()
        .deployment_ids()
        .filter(|id| id.implementation == "mapreduce")
        .collect();
    assert_eq!(ids.len(), 25);
    for id in &ids {
        r.set_status(id, DeploymentStatus::Blacklisted).unwrap();
    }
    let left = r.lookup_endpoints("instance_count").unwrap();
    assert_eq!(left.len(), 29);
    assert!(left.iter().all(|(imp, _)| imp.name != "mapreduce"));
    assert_eq!(
        r.lookup_endpoints("frobnicate").unwrap_err(),
        RegistryError::UnknownService("frobnicate".into())
    );
}

fn bound_registry(totals: &[usize]) -> Registry {
    let mut text = String::from("services {\n");
    let mut octet = 1u32;
    for (i, &n) in totals.iter().enumerate() {
        text.push_str(&format!("service s{i} {{ impl i {{\n"));
        for j in 0..n {
            text.push_str(&format!("d{j} 10.0.{}.{};\n", octet / 250, octet % 250));
            octet += 1;
        }
        text.push_str("} }\n");
    }
    text.push_str("service c { type composition; entry_point 10.9.9.9;\nservices {\n");
    for i in 0..totals.len() {
        text.push_str(&format!("s{i} {{ order {}; }}\n", i + 1));
    }
    text.push_str("} } }\n");
    parse_registry(&text).unwrap()
}

#[test]
fn bound_examples() {
    assert_eq!(bound_registry(&[54, 10, 10]).alternative_path_bound("c").unwrap(), 10);
    assert_eq!(bound_registry(&[1]).alternative_path_bound("c").unwrap(), 1);
    assert_eq!(bound_registry(&[54, 4, 2]).alternative_path_bound("c").unwrap(), 2);
    assert_eq!(
        bound_registry(&[3]).alternative_path_bound("nope").unwrap_err(),
        RegistryError::UnknownComposition("nope".into())
    );
}

#[test]
fn bound_rejects_unresolved_member() {
    assert!(weather().alternative_path_bound("weather").is_err());
}

fn report(alias: &str, mean: f64, over: bool) -> EngineReport {
    EngineReport {
        deployment: DeploymentId::new("instance_count", "axis2", alias),
        mean_service_time: mean,
        in_flight: 1,
        over_threshold: over,
    }
}

fn axis2_order(r: &Registry) -> Vec<String> {
    r.service("instance_count").unwrap().implementations[0]
        .deployments
        .iter()
        .map(|d| d.alias.clone())
        .collect()
}

#[test]
fn slow_report_moves_deployment_last() {
    let mut r = weather();
    r.update_registry(&[report("axa", 500.0, true)]).unwrap();
    let order = axis2_order(&r);
    assert_eq!(order.last().unwrap(), "axa");
    assert_eq!(order[0], "axb");
    let id = DeploymentId::new("instance_count", "axis2", "axa");
    assert_eq!(r.deployment(&id).unwrap().status, DeploymentStatus::Demoted);

    r.update_registry(&[report("axa", 0.0, false)]).unwrap();
    assert_eq!(r.deployment(&id).unwrap().status, DeploymentStatus::Active);
}

#[test]
fn empty_report_is_identity() {
    let mut r = weather();
    let before = r.clone();
    r.update_registry(&[]).unwrap();
    assert_eq!(r, before);
}

#[test]
fn unknown_alias_leaves_registry_untouched() {
    let mut r = weather();
    let before = r.clone();
    let err = r
        .update_registry(&[report("axb", 50.0, true), report("zzz", 1.0, false)])
        .unwrap_err();
    assert!(matches!(err, RegistryError::UnknownDeployment(_)));
    assert_eq!(r, before);
}

#[derive(Debug, Clone)]
struct GenService {
    impls: Vec<(String, Vec<u8>)>,
    description: Option<String>,
}

fn gen_service() -> impl Strategy<Value = GenService> {
    (
        prop::collection::vec(("[a-z]{1,6}", prop::collection::vec(1u8..=250, 1..5)), 1..4),
        prop::option::of("[a-z ]{1,12}"),
    )
        .prop_map(|(impls, description)| GenService { impls, description })
}

fn render(services: &[GenService], members: &[(usize, u32, bool)]) -> String {
    let mut text = String::from("services {\n");
    for (si, s) in services.iter().enumerate() {
        text.push_str(&format!("service svc{si} {{\n type simple;\n"));
        if let Some(d) = &s.description {
            text.push_str(&format!(" description {{{d}}};\n"));
        }
        for (ii, (name, hosts)) in s.impls.iter().enumerate() {
            text.push_str(&format!(" impl {name}{ii} {{\n"));
            for (di, h) in hosts.iter().enumerate() {
                text.push_str(&format!("  d{di} 10.{si}.{ii}.{h};\n"));
            }
            text.push_str(" }\n");
        }
        text.push_str("}\n");
    }
    if !members.is_empty() {
        text.push_str("service comp {\n type composition;\n entry_point 192.168.0.1;\n services {\n");
        let mut seen = std::collections::HashSet::new();
        for (svc, order, serialized) in members {
            let svc = svc % services.len();
            if seen.insert(svc) {
                text.push_str(&format!("  svc{svc} {{ order {order}; serialized {serialized}; }}\n"));
            }
        }
        text.push_str(" }\n}\n");
    }
    text.push_str("}\n");
    text
}

proptest! {
    #[test]
    fn canonical_round_trip(
        services in prop::collection::vec(gen_service(), 1..5),
        members in prop::collection::vec((0usize..8, 1u32..5, any::<bool>()), 0..4),
    ) {
        let text = render(&services, &members);
        let parsed = parse_registry(&text).unwrap();
        let canonical = parsed.to_canonical_string();
        let reparsed = parse_registry(&canonical).unwrap();
        prop_assert_eq!(&reparsed, &parsed);
        prop_assert_eq!(reparsed.to_canonical_string(), canonical);
    }

    #[test]
    fn lookup_never_returns_blacklisted(mask in prop::collection::vec(any::<bool>(), 54)) {
        let mut r = weather();
        let ids: Vec<DeploymentId> = r.service("instance_count").unwrap().deployment_ids().collect();
        for (id, &b) in ids.iter().zip(&mask) {
            if b {
                r.set_status(id, DeploymentStatus::Blacklisted).unwrap();
            }
        }
        let found = r.lookup_endpoints("instance_count").unwrap();
        prop_assert_eq!(found.len(), mask.iter().filter(|b| !**b).count());
        prop_assert!(found.iter().all(|(_, d)| d.status != DeploymentStatus::Blacklisted));
    }

    #[test]
    fn bound_is_min_of_totals(totals in prop::collection::vec(1usize..12, 1..5)) {
        let r = bound_registry(&totals);
        let b = r.alternative_path_bound("c").unwrap();
        prop_assert_eq!(b, *totals.iter().min().unwrap());
        for e in r.entries() {
            if let Entry::Service(s) = e {
                prop_assert!(b <= s.total_deployments());
            }
        }
    }

    #[test]
    fn updates_permute_within_implementation(
        picks in prop::collection::vec((0usize..26, 0.0f64..100.0, any::<bool>()), 0..10),
    ) {
        let mut r = weather();
        let before = axis2_order(&r);
        let reports: Vec<EngineReport> = picks
            .iter()
            .map(|(i, mean, over)| report(&before[*i], *mean, *over))
            .collect();
        r.update_registry(&reports).unwrap();
        let mut after = axis2_order(&r);
        after.sort();
        let mut sorted = before.clone();
        sorted.sort();
        prop_assert_eq!(after, sorted);
        prop_assert_eq!(r.service("instance_count").unwrap().total_deployments(), 54);
    }
}
