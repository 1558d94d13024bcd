use std::collections::BTreeMap;

use cablesift::analytics::{self, format_percent, PercentStyle};
use cablesift::corpus::{Cable, CableKind, ClassificationLevel};

fn tagged(id: &str, tags: &[&str], secret: bool, kind: CableKind) -> Cable {
    let level = if secret { ClassificationLevel::Secret } else { ClassificationLevel::Confidential };
    let mut c = Cable::metadata(id, Some(level), kind);
    c.tags = tags.iter().map(|t| t.to_string()).collect();
    c
}

/// `n` cables tagged with `country`, the first `marked` also carrying SHUM
/// and the first `secret` classified secret.
fn country_block(country: &str, n: usize, marked: usize, secret: usize) -> Vec<Cable> {
    (0..n)
        .map(|i| {
            let tags: Vec<&str> = if i < marked { vec![country, "SHUM"] } else { vec![country] };
            tagged(&format!("{country}{i}"), &tags, i < secret, CableKind::Full)
        })
        .collect()
}

fn pct(p: Option<f64>) -> String {
    format_percent(p.unwrap(), PercentStyle::TwoDecimals)
}

#[test]
fn regional_cotag_and_secrecy_shares() {
    let mut cables = country_block("AR", 6000, 360, 100);
    cables.extend(country_block("CI", 4000, 236, 126));
    cables.extend(country_block("EG", 5000, 40, 741));
    cables.extend(country_block("IS", 5000, 45, 741));
    let regions = analytics::default_regions();
    let groups = analytics::region_groups(&regions);
    let latin = &groups["Latin America"];
    let mideast = &groups["Middle East"];
    assert_eq!(pct(analytics::cotag_share(&cables, "SHUM", latin).pooled.percent), "5.96%");
    assert_eq!(pct(analytics::cotag_share(&cables, "SHUM", mideast).pooled.percent), "0.85%");

    let shares = analytics::secret_share_by_country_group(&cables, &groups);
    let by: BTreeMap<_, _> = shares.iter().map(|g| (g.group.as_str(), pct(g.percent_secret))).collect();
    assert_eq!(by["Middle East"], "14.82%");
    assert_eq!(by["Latin America"], "2.26%");
}

#[test]
fn release_kind_shares() {
    let block = |kind, n: usize, secret: usize| -> Vec<Cable> {
        (0..n).map(|i| tagged(&format!("{kind:?}{i}"), &[], i < secret, kind)).collect()
    };
    let mut cables = block(CableKind::Withdrawn, 1000, 52);
    cables.extend(block(CableKind::Full, 1000, 53));
    cables.extend(block(CableKind::PReel, 1000, 26));
    let shares = analytics::secrecy_share_by_kind(&cables);
    let get = |k| format!("{:.1}", shares.iter().find(|s| s.kind == k).unwrap().percent_secret.unwrap());
    assert_eq!(get(CableKind::Withdrawn), "5.2");
    assert_eq!(get(CableKind::Full), "5.3");
    assert_eq!(get(CableKind::PReel), "2.6");
    assert!(shares.iter().find(|s| s.kind == CableKind::PReelWithdrawn).unwrap().percent_secret.is_none());
}
