use cablesift::corpus::select_trainable;
use cablesift::eval::{cross_validate, PipelineConfig, Scenario};
use cablesift::features::{default_field_configs, Field};
use cablesift::models::{ClassifierKind, ClassifierSpec, EnsembleConfig, Voting};
use cablesift::syntheticgen::{generate, SynthSpec};

#[test]
fn field_signal_strength_ordering() {
    let spec = SynthSpec { n_docs: 4000, ..SynthSpec::default() };
    let (cables, _) = select_trainable(&generate(&spec).unwrap());
    let order = [Field::Body, Field::Subject, Field::Concepts, Field::Tags, Field::Office, Field::SenderRecipient];
    let aucs: Vec<f64> = order
        .iter()
        .map(|&f| {
            let mut config = PipelineConfig::with_seed(8);
            config.k = 3;
            config.fields = default_field_configs().into_iter().filter(|c| c.field == f).collect();
            config.ensemble = EnsembleConfig {
                members: vec![ClassifierSpec::new(ClassifierKind::MultinomialNb, 1)],
                weights: vec![1.0],
                threshold: 0.5,
                voting: Voting::Soft,
            };
            cross_validate(&cables, Scenario::UVsCs, &config).unwrap().pooled.roc_auc
        })
        .collect();
    for (w, f) in aucs.windows(2).zip(order.windows(2)) {
        assert!(w[0] > w[1], "{:?} {:.3} should beat {:?} {:.3}", f[0], w[0], f[1], w[1]);
    }
    assert!(aucs[5] > 0.55, "weakest field still carries signal: {aucs:?}");
}
